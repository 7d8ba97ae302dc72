#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dmr/vector.hpp"

namespace dmr {

struct SimilarityConfig {
  double temperature = 0.01;

  void validate() const;
};

/// cos(e_q, e_p) / τ. Throws a degenerate-input error on zero vectors and an
/// embedding error on dimension mismatch.
double sim(const DenseVector& e_q, const DenseVector& e_p, const SimilarityConfig& cfg);

/// Query/positive vectors aligned by index, optionally with per-query hard
/// negatives. Vectors are raw (unnormalized) encoder outputs; the losses
/// normalize internally and return gradients w.r.t. the raw inputs.
struct MiniBatch {
  std::vector<DenseVector> queries;
  std::vector<DenseVector> positives;
  std::vector<std::vector<DenseVector>> negatives;  // empty, or one list per query
};

struct LossReport {
  double loss = 0.0;  // mean of per_example
  std::vector<double> per_example;
  std::vector<DenseVector> grad_queries;
  std::vector<DenseVector> grad_positives;
  std::vector<std::vector<DenseVector>> grad_negatives;
};

/// In-batch InfoNCE. Per example i:
///   −log( exp(s(q_i,p_i)) / Σ_j exp(s(q_i,p_j)) ),
/// the sum running over every positive in the batch including p_i.
/// Requires batch size >= 2.
LossReport infonce_inbatch(const MiniBatch& batch, const SimilarityConfig& cfg);

/// Hard-negative InfoNCE for one query:
///   −log( exp(s(q,p⁺)) / (exp(s(q,p⁺)) + Σ_{p⁻∈H} exp(s(q,p⁻))) ).
/// grad_queries/grad_positives hold one vector; grad_negatives one list.
LossReport infonce_hardneg(const DenseVector& query, const DenseVector& positive,
                           std::span<const DenseVector> negatives, const SimilarityConfig& cfg);

/// Mean of infonce_hardneg over the batch. With `include_inbatch`, the
/// other queries' positives join each denominator (off by default).
LossReport infonce_hardneg_batch(const MiniBatch& batch, const SimilarityConfig& cfg,
                                 bool include_inbatch = false);

enum class GradCheckOp { inbatch, hardneg, mlm };

GradCheckOp parse_grad_check_op(std::string_view name);
std::string_view grad_check_name(GradCheckOp op);

struct GradCheckOptions {
  std::size_t coordinates = 50;
  double step = 1e-4;
  bool degenerate = false;  // identical vectors everywhere (objective ops only)
};

/// Max over sampled coordinates of |analytic − central FD| / max(|analytic|, 1e-8)
/// on a small seeded instance.
double grad_check(GradCheckOp op, std::uint64_t instance_seed, const GradCheckOptions& opts = {});

}  // namespace dmr
