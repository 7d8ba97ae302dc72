#pragma once

#include <memory>

#include "dmr/embedder.hpp"
#include "dmr/encoder.hpp"

namespace dmr {

/// Mean-pooled final hidden states of the toy encoder. Holds its own
/// snapshot of the checkpoint, so later training never changes its output.
class TrainableEmbedder final : public TextEmbedder {
 public:
  explicit TrainableEmbedder(Checkpoint snapshot, bool normalize = true,
                             std::size_t max_tokens = 512,
                             InstructionTable instructions = InstructionTable());

  std::size_t dim() const override { return static_cast<std::size_t>(ckpt_.config.dim); }
  std::string name() const override { return "trainable"; }
  const Checkpoint& checkpoint() const noexcept { return ckpt_; }

  /// Token ids actually fed to the encoder (truncated to max_seq_len).
  std::vector<int> token_ids(std::span<const std::string> tokens) const;

 protected:
  DenseVector encode(std::span<const std::string> tokens) const override;

 private:
  Checkpoint ckpt_;
};

/// Mean over rows: the pooled sequence representation.
DenseVector mean_pool(const Mat& hidden);

}  // namespace dmr
