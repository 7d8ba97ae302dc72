#include "dmr/trainable_embedder.hpp"

#include <algorithm>

namespace dmr {

TrainableEmbedder::TrainableEmbedder(Checkpoint snapshot, bool normalize, std::size_t max_tokens,
                                     InstructionTable instructions)
    : TextEmbedder(std::min<std::size_t>(max_tokens, static_cast<std::size_t>(snapshot.config.max_seq_len)),
                   normalize, std::move(instructions)),
      ckpt_(std::move(snapshot)) {
  ckpt_.config.validate();
}

std::vector<int> TrainableEmbedder::token_ids(std::span<const std::string> tokens) const {
  const auto limit = static_cast<std::size_t>(ckpt_.config.max_seq_len);
  auto ids = ckpt_.vocab.encode(tokens.first(std::min(tokens.size(), limit)));
  if (ids.empty()) ids.push_back(Vocabulary::kPad);
  return ids;
}

DenseVector TrainableEmbedder::encode(std::span<const std::string> tokens) const {
  return mean_pool(forward(token_ids(tokens), ckpt_.config, ckpt_.params));
}

DenseVector mean_pool(const Mat& hidden) {
  return hidden.colwise().mean().transpose();
}

}  // namespace dmr
