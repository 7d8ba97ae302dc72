#pragma once

#include <string_view>

#include <Eigen/Dense>

namespace dmr {

/// Fixed-dimension embedding. Entries must be finite.
using DenseVector = Eigen::VectorXd;

/// Throws an embedding error naming `what` if any entry is NaN or Inf.
void require_finite(const DenseVector& v, std::string_view what);

}  // namespace dmr
