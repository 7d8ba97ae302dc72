#pragma once

// A small pre-LayerNorm self-attention encoder with hand-written backward
// passes. The attention mask is switchable between causal and bidirectional;
// training objectives (MLM here, contrastive in pipeline) drive the same
// tape-based backward pass.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace dmr {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

enum class MaskMode { causal, bidirectional };

std::string_view mask_mode_name(MaskMode mode);
MaskMode parse_mask_mode(std::string_view name);

struct EncoderConfig {
  int vocab_size = 0;
  int dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 0;  // 0 means 4 * dim
  int max_seq_len = 128;
  MaskMode mask_mode = MaskMode::bidirectional;

  int ffn() const noexcept { return ffn_dim > 0 ? ffn_dim : 4 * dim; }
  int head_dim() const noexcept { return dim / n_heads; }
  /// Throws a config error unless dim % n_heads == 0 and max_seq_len <= 512.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct MLMConfig {
  double mask_rate = 0.15;
  double replace_mask_frac = 0.8;
  double replace_random_frac = 0.1;
  double keep_frac = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Corpus vocabulary with hash-bucket fallback for unseen words.
/// Ids: [0, 3) specials, then words, then buckets.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kFirstWord = 3;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> words, std::size_t hash_buckets);

  /// Most frequent tokens with count >= min_count, ties by token, capped at max_words.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_words,
                          std::size_t min_count = 1, std::size_t hash_buckets = 64);

  int size() const noexcept {
    return kFirstWord + static_cast<int>(words_.size() + hash_buckets_);
  }
  int id(std::string_view token) const;
  std::vector<int> encode(std::span<const std::string> tokens) const;
  const std::vector<std::string>& words() const noexcept { return words_; }
  std::size_t hash_buckets() const noexcept { return hash_buckets_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.hash_buckets_ == b.hash_buckets_;
  }

 private:
  std::vector<std::string> words_;
  std::size_t hash_buckets_ = 0;
  std::unordered_map<std::string, int> index_;
};

/// Flat parameter vector with named views. Gradients use the same type.
class ModelParams {
 public:
  struct Layer {
    MatMap ln1_gain, ln1_bias;  // 1 x D
    MatMap wq, wk, wv, wo;      // D x D
    MatMap ln2_gain, ln2_bias;  // 1 x D
    MatMap w1;                  // D x F
    MatMap b1;                  // 1 x F
    MatMap w2;                  // F x D
    MatMap b2;                  // 1 x D
  };

  ModelParams() = default;
  explicit ModelParams(const EncoderConfig& config);  // all zeros

  std::size_t size() const noexcept { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  MatMap token_embedding();
  MatMap position_embedding();
  Layer layer(int l);
  MatMap final_gain();
  MatMap final_bias();
  MatMap head_weight();  // D x V
  MatMap head_bias();    // 1 x V

  // Read-only access goes through the same offsets.
  ConstMatMap token_embedding() const;
  ConstMatMap position_embedding() const;
  ConstMatMap view(std::size_t offset, int rows, int cols) const;
  const EncoderConfig& config() const noexcept { return config_; }

  bool all_finite() const;
  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.values_ == b.values_;
  }

  std::size_t layer_offset(int l) const;
  std::size_t final_offset() const;

 private:
  MatMap map(std::size_t offset, int rows, int cols);

  EncoderConfig config_;
  std::vector<double> values_;
};

ModelParams init_params(const EncoderConfig& config, std::uint64_t seed);

/// Activations retained by forward_tape for the backward pass.
struct LayerTape {
  Mat x_in, ln1_xhat, z1, q, k, v, ctx, h, ln2_xhat, z2, pre, act;
  Eigen::VectorXd ln1_rstd, ln2_rstd;
  std::vector<Mat> attn;  // per head, S x S
};

struct ForwardTape {
  std::vector<int> tokens;
  std::vector<LayerTape> layers;
  Mat x_last, lnf_xhat;
  Eigen::VectorXd lnf_rstd;
  Mat out;  // S x D final hidden states
};

/// Final hidden states (seq_len x dim). Under causal masking row i depends
/// only on tokens[0..i]. Throws an input error on out-of-vocabulary ids or
/// sequences longer than max_seq_len.
Mat forward(std::span<const int> tokens, const EncoderConfig& config, const ModelParams& params);
ForwardTape forward_tape(std::span<const int> tokens, const EncoderConfig& config,
                         const ModelParams& params);

/// Accumulates dLoss/dParams into `grad` given dLoss/d(out).
void backward(const ForwardTape& tape, const Mat& d_out, const EncoderConfig& config,
              const ModelParams& params, ModelParams& grad);

struct MLMResult {
  double loss = 0.0;  // mean cross-entropy over masked positions
  std::vector<double> gradient;
  std::size_t masked = 0;
};

/// Masked-token cross-entropy. Masking is drawn per sequence from
/// (mlm.seed, sequence content), so the loss does not depend on batch order.
MLMResult mlm_loss(const std::vector<std::vector<int>>& batch, const MLMConfig& mlm,
                   const EncoderConfig& config, const ModelParams& params);

/// Flips the mask to bidirectional. Parameters are not touched. Already
/// bidirectional configs come back unchanged with a logged warning.
EncoderConfig adapt_bidirectional(const EncoderConfig& config);

/// Everything needed to resume or embed with a model.
struct Checkpoint {
  EncoderConfig config;
  ModelParams params;
  Vocabulary vocab;
  std::uint64_t step = 0;
};

/// Versioned little-endian binary: magic, version, config, step, vocabulary,
/// then the raw parameter doubles. Round trips are bit-exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dmr
