#include "dmr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include <spdlog/spdlog.h>

#include "dmr/error.hpp"
#include "dmr/text.hpp"

namespace dmr {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

std::size_t layer_size(const EncoderConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.dim);
  const std::size_t f = static_cast<std::size_t>(c.ffn());
  return 4 * d + 4 * d * d + d * f + f + f * d + d;
}

std::size_t total_size(const EncoderConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.dim);
  const std::size_t v = static_cast<std::size_t>(c.vocab_size);
  const std::size_t l = static_cast<std::size_t>(c.max_seq_len);
  return v * d + l * d + static_cast<std::size_t>(c.n_layers) * layer_size(c) + 2 * d + d * v + v;
}

// Row-wise LayerNorm; keeps x̂ and 1/σ for the backward pass.
Mat layer_norm(const Mat& x, const Eigen::Ref<const Eigen::RowVectorXd>& gain,
               const Eigen::Ref<const Eigen::RowVectorXd>& bias, Mat& xhat, Eigen::VectorXd& rstd) {
  const auto n = x.rows();
  const double d = static_cast<double>(x.cols());
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mu).matrix();
    const double var = centered.squaredNorm() / d;
    rstd[i] = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = centered * rstd[i];
  }
  Mat y = xhat.array().rowwise() * gain.array();
  y.rowwise() += bias;
  return y;
}

Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& rstd,
                        const Eigen::Ref<const Eigen::RowVectorXd>& gain, MatMap dgain, MatMap dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const double d = static_cast<double>(dy.cols());
  Mat dxhat = dy.array().rowwise() * gain.array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).sum() / d;
    const double m2 = dxhat.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = rstd[i] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

ConstMatMap cview(const ModelParams& p, std::size_t offset, int rows, int cols) {
  return p.view(offset, rows, cols);
}

struct LayerOffsets {
  std::size_t ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
};

LayerOffsets layer_offsets(const EncoderConfig& c, std::size_t base) {
  const std::size_t d = static_cast<std::size_t>(c.dim);
  const std::size_t f = static_cast<std::size_t>(c.ffn());
  LayerOffsets o{};
  std::size_t at = base;
  auto take = [&](std::size_t n) {
    const std::size_t here = at;
    at += n;
    return here;
  };
  o.ln1_gain = take(d);
  o.ln1_bias = take(d);
  o.wq = take(d * d);
  o.wk = take(d * d);
  o.wv = take(d * d);
  o.wo = take(d * d);
  o.ln2_gain = take(d);
  o.ln2_bias = take(d);
  o.w1 = take(d * f);
  o.b1 = take(f);
  o.w2 = take(f * d);
  o.b2 = take(d);
  return o;
}

void check_tokens(std::span<const int> tokens, const EncoderConfig& config) {
  if (tokens.empty()) fail(ErrorKind::input, "empty token sequence");
  if (static_cast<int>(tokens.size()) > config.max_seq_len)
    fail(ErrorKind::input, "sequence length " + std::to_string(tokens.size()) +
                               " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  for (int t : tokens)
    if (t < 0 || t >= config.vocab_size)
      fail(ErrorKind::input, "token id " + std::to_string(t) + " out of vocabulary");
}

}  // namespace

std::string_view mask_mode_name(MaskMode mode) {
  return mode == MaskMode::causal ? "causal" : "bidirectional";
}

MaskMode parse_mask_mode(std::string_view name) {
  if (name == "causal") return MaskMode::causal;
  if (name == "bidirectional") return MaskMode::bidirectional;
  fail(ErrorKind::config, "unknown mask mode '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  if (vocab_size <= Vocabulary::kFirstWord) fail(ErrorKind::config, "vocab_size too small");
  if (dim <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq_len <= 0 || ffn_dim < 0)
    fail(ErrorKind::config, "encoder sizes must be positive");
  if (dim % n_heads != 0) fail(ErrorKind::config, "dim must be divisible by n_heads");
  if (max_seq_len > 512) fail(ErrorKind::config, "max_seq_len must be <= 512");
}

void MLMConfig::validate() const {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) fail(ErrorKind::config, "mask_rate must be in (0,1)");
  if (replace_mask_frac < 0 || replace_random_frac < 0 || keep_frac < 0)
    fail(ErrorKind::config, "MLM fractions must be non-negative");
  if (std::abs(replace_mask_frac + replace_random_frac + keep_frac - 1.0) > 1e-12)
    fail(ErrorKind::config, "MLM replacement fractions must sum to 1");
}

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words, std::size_t hash_buckets)
    : words_(std::move(words)), hash_buckets_(hash_buckets) {
  for (std::size_t i = 0; i < words_.size(); ++i)
    index_.emplace(words_[i], kFirstWord + static_cast<int>(i));
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_words,
                             std::size_t min_count, std::size_t hash_buckets) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& tok : tokenize(text)) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [tok, n] : ranked) {
    if (words.size() >= max_words || n < min_count) break;
    words.push_back(tok);
  }
  return Vocabulary(std::move(words), hash_buckets);
}

int Vocabulary::id(std::string_view token) const {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  if (hash_buckets_ == 0) return kUnk;
  return kFirstWord + static_cast<int>(words_.size() + fnv1a64(token) % hash_buckets_);
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

// ---------------------------------------------------------------- parameters

ModelParams::ModelParams(const EncoderConfig& config)
    : config_(config), values_(total_size(config), 0.0) {}

MatMap ModelParams::map(std::size_t offset, int rows, int cols) {
  return MatMap(values_.data() + offset, rows, cols);
}

ConstMatMap ModelParams::view(std::size_t offset, int rows, int cols) const {
  return ConstMatMap(values_.data() + offset, rows, cols);
}

std::size_t ModelParams::layer_offset(int l) const {
  const auto& c = config_;
  return static_cast<std::size_t>(c.vocab_size + c.max_seq_len) * static_cast<std::size_t>(c.dim) +
         static_cast<std::size_t>(l) * layer_size(c);
}

std::size_t ModelParams::final_offset() const { return layer_offset(config_.n_layers); }

MatMap ModelParams::token_embedding() { return map(0, config_.vocab_size, config_.dim); }

MatMap ModelParams::position_embedding() {
  return map(static_cast<std::size_t>(config_.vocab_size) * config_.dim, config_.max_seq_len,
             config_.dim);
}

ConstMatMap ModelParams::token_embedding() const { return view(0, config_.vocab_size, config_.dim); }

ConstMatMap ModelParams::position_embedding() const {
  return view(static_cast<std::size_t>(config_.vocab_size) * config_.dim, config_.max_seq_len,
              config_.dim);
}

ModelParams::Layer ModelParams::layer(int l) {
  const int d = config_.dim;
  const int f = config_.ffn();
  const auto o = layer_offsets(config_, layer_offset(l));
  return Layer{map(o.ln1_gain, 1, d), map(o.ln1_bias, 1, d), map(o.wq, d, d), map(o.wk, d, d),
               map(o.wv, d, d),       map(o.wo, d, d),       map(o.ln2_gain, 1, d),
               map(o.ln2_bias, 1, d), map(o.w1, d, f),       map(o.b1, 1, f),
               map(o.w2, f, d),       map(o.b2, 1, d)};
}

MatMap ModelParams::final_gain() { return map(final_offset(), 1, config_.dim); }
MatMap ModelParams::final_bias() { return map(final_offset() + config_.dim, 1, config_.dim); }
MatMap ModelParams::head_weight() {
  return map(final_offset() + 2 * static_cast<std::size_t>(config_.dim), config_.dim, config_.vocab_size);
}
MatMap ModelParams::head_bias() {
  return map(final_offset() + 2 * static_cast<std::size_t>(config_.dim) +
                 static_cast<std::size_t>(config_.dim) * config_.vocab_size,
             1, config_.vocab_size);
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

ModelParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p(config);
  std::mt19937_64 rng(seed);
  auto fill = [&](MatMap m, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  const double d = config.dim;
  fill(p.token_embedding(), 1.0);
  fill(p.position_embedding(), 0.1);
  for (int l = 0; l < config.n_layers; ++l) {
    auto layer = p.layer(l);
    layer.ln1_gain.setOnes();
    layer.ln2_gain.setOnes();
    fill(layer.wq, 1.0 / std::sqrt(d));
    fill(layer.wk, 1.0 / std::sqrt(d));
    fill(layer.wv, 1.0 / std::sqrt(d));
    fill(layer.wo, 0.5 / std::sqrt(d));
    fill(layer.w1, 1.0 / std::sqrt(d));
    fill(layer.w2, 0.5 / std::sqrt(static_cast<double>(config.ffn())));
  }
  p.final_gain().setOnes();
  fill(p.head_weight(), 0.1 / std::sqrt(d));
  return p;
}

// ------------------------------------------------------------------- forward

ForwardTape forward_tape(std::span<const int> tokens, const EncoderConfig& config,
                         const ModelParams& params) {
  check_tokens(tokens, config);
  const int s = static_cast<int>(tokens.size());
  const int d = config.dim;
  const int f = config.ffn();
  const int nh = config.n_heads;
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = config.mask_mode == MaskMode::causal;

  ForwardTape tape;
  tape.tokens.assign(tokens.begin(), tokens.end());

  const auto tok = params.token_embedding();
  const auto pos = params.position_embedding();
  Mat x(s, d);
  for (int i = 0; i < s; ++i) x.row(i) = tok.row(tokens[i]) + pos.row(i);

  tape.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    auto& lt = tape.layers[static_cast<std::size_t>(l)];
    const auto o = layer_offsets(config, params.layer_offset(l));
    const auto wq = cview(params, o.wq, d, d);
    const auto wk = cview(params, o.wk, d, d);
    const auto wv = cview(params, o.wv, d, d);
    const auto wo = cview(params, o.wo, d, d);
    const auto w1 = cview(params, o.w1, d, f);
    const auto w2 = cview(params, o.w2, f, d);

    lt.x_in = x;
    lt.z1 = layer_norm(x, cview(params, o.ln1_gain, 1, d).row(0), cview(params, o.ln1_bias, 1, d).row(0),
                       lt.ln1_xhat, lt.ln1_rstd);
    lt.q = lt.z1 * wq;
    lt.k = lt.z1 * wk;
    lt.v = lt.z1 * wv;
    lt.ctx = Mat::Zero(s, d);
    lt.attn.resize(static_cast<std::size_t>(nh));
    for (int h = 0; h < nh; ++h) {
      const auto qh = lt.q.middleCols(h * dh, dh);
      const auto kh = lt.k.middleCols(h * dh, dh);
      Mat a = Mat::Zero(s, s);
      for (int i = 0; i < s; ++i) {
        const int last = causal ? i : s - 1;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= last; ++j) {
          a(i, j) = qh.row(i).dot(kh.row(j)) * scale;
          mx = std::max(mx, a(i, j));
        }
        double z = 0.0;
        for (int j = 0; j <= last; ++j) {
          a(i, j) = std::exp(a(i, j) - mx);
          z += a(i, j);
        }
        for (int j = 0; j <= last; ++j) a(i, j) /= z;
      }
      lt.ctx.middleCols(h * dh, dh) = a * lt.v.middleCols(h * dh, dh);
      lt.attn[static_cast<std::size_t>(h)] = std::move(a);
    }
    lt.h = x + lt.ctx * wo;
    lt.z2 = layer_norm(lt.h, cview(params, o.ln2_gain, 1, d).row(0), cview(params, o.ln2_bias, 1, d).row(0),
                       lt.ln2_xhat, lt.ln2_rstd);
    lt.pre = lt.z2 * w1;
    lt.pre.rowwise() += cview(params, o.b1, 1, f).row(0);
    lt.act = lt.pre.unaryExpr([](double v) { return gelu(v); });
    x = lt.h + lt.act * w2;
    x.rowwise() += cview(params, o.b2, 1, d).row(0);
  }
  tape.x_last = x;
  const std::size_t fo = params.final_offset();
  tape.out = layer_norm(x, cview(params, fo, 1, d).row(0), cview(params, fo + d, 1, d).row(0),
                        tape.lnf_xhat, tape.lnf_rstd);
  return tape;
}

Mat forward(std::span<const int> tokens, const EncoderConfig& config, const ModelParams& params) {
  return forward_tape(tokens, config, params).out;
}

void backward(const ForwardTape& tape, const Mat& d_out, const EncoderConfig& config,
              const ModelParams& params, ModelParams& grad) {
  const int s = static_cast<int>(tape.tokens.size());
  const int d = config.dim;
  const int f = config.ffn();
  const int nh = config.n_heads;
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const std::size_t fo = params.final_offset();
  Mat dx = layer_norm_backward(d_out, tape.lnf_xhat, tape.lnf_rstd, cview(params, fo, 1, d).row(0),
                               grad.final_gain(), grad.final_bias());

  for (int l = config.n_layers - 1; l >= 0; --l) {
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];
    const auto o = layer_offsets(config, params.layer_offset(l));
    auto g = grad.layer(l);
    const auto wq = cview(params, o.wq, d, d);
    const auto wk = cview(params, o.wk, d, d);
    const auto wv = cview(params, o.wv, d, d);
    const auto wo = cview(params, o.wo, d, d);
    const auto w1 = cview(params, o.w1, d, f);
    const auto w2 = cview(params, o.w2, f, d);

    // Feed-forward block: y = h + gelu(LN2(h) W1 + b1) W2 + b2.
    g.b2 += dx.colwise().sum();
    g.w2.noalias() += lt.act.transpose() * dx;
    Mat dpre = dx * w2.transpose();
    dpre.array() *= lt.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    g.b1 += dpre.colwise().sum();
    g.w1.noalias() += lt.z2.transpose() * dpre;
    const Mat dz2 = dpre * w1.transpose();
    Mat dh_total = dx + layer_norm_backward(dz2, lt.ln2_xhat, lt.ln2_rstd,
                                            cview(params, o.ln2_gain, 1, d).row(0), g.ln2_gain, g.ln2_bias);

    // Attention block: h = x + ctx Wo.
    g.wo.noalias() += lt.ctx.transpose() * dh_total;
    const Mat dctx = dh_total * wo.transpose();
    Mat dq = Mat::Zero(s, d), dk = Mat::Zero(s, d), dv = Mat::Zero(s, d);
    for (int h = 0; h < nh; ++h) {
      const Mat& a = lt.attn[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      const Mat da = dctx_h * lt.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() += a.transpose() * dctx_h;
      Mat ds = a.array() * (da.array().colwise() - (da.array() * a.array()).rowwise().sum());
      ds *= scale;
      dq.middleCols(h * dh, dh).noalias() += ds * lt.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() += ds.transpose() * lt.q.middleCols(h * dh, dh);
    }
    g.wq.noalias() += lt.z1.transpose() * dq;
    g.wk.noalias() += lt.z1.transpose() * dk;
    g.wv.noalias() += lt.z1.transpose() * dv;
    const Mat dz1 = dq * wq.transpose() + dk * wk.transpose() + dv * wv.transpose();
    dx = dh_total + layer_norm_backward(dz1, lt.ln1_xhat, lt.ln1_rstd,
                                        cview(params, o.ln1_gain, 1, d).row(0), g.ln1_gain, g.ln1_bias);
  }

  auto dtok = grad.token_embedding();
  auto dpos = grad.position_embedding();
  for (int i = 0; i < s; ++i) {
    dtok.row(tape.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    dpos.row(i) += dx.row(i);
  }
}

// ----------------------------------------------------------------------- MLM

namespace {

struct MaskedSequence {
  std::vector<int> input;
  std::vector<int> positions;  // masked positions
};

MaskedSequence draw_mask(const std::vector<int>& seq, const MLMConfig& mlm, int vocab_size,
                         std::uint64_t attempt) {
  std::uint64_t h = mlm.seed * 0x9e3779b97f4a7c15ULL + attempt;
  for (int t : seq) h = mix64(h ^ static_cast<std::uint64_t>(t));
  std::mt19937_64 rng(h);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> random_tok(Vocabulary::kFirstWord, vocab_size - 1);
  MaskedSequence m{seq, {}};
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (unit(rng) >= mlm.mask_rate) continue;
    m.positions.push_back(static_cast<int>(i));
    const double r = unit(rng);
    if (r < mlm.replace_mask_frac)
      m.input[i] = Vocabulary::kMask;
    else if (r < mlm.replace_mask_frac + mlm.replace_random_frac)
      m.input[i] = random_tok(rng);
  }
  return m;
}

}  // namespace

MLMResult mlm_loss(const std::vector<std::vector<int>>& batch, const MLMConfig& mlm,
                   const EncoderConfig& config, const ModelParams& params) {
  mlm.validate();
  if (batch.empty()) fail(ErrorKind::config, "empty MLM batch");

  std::vector<MaskedSequence> masked;
  std::size_t total = 0;
  for (std::uint64_t attempt = 0; total == 0; ++attempt) {
    masked.clear();
    for (const auto& seq : batch) {
      check_tokens(seq, config);
      masked.push_back(draw_mask(seq, mlm, config.vocab_size, attempt));
      total += masked.back().positions.size();
    }
    if (attempt > 10000 && total == 0) {
      masked.front().positions.push_back(0);
      masked.front().input[0] = Vocabulary::kMask;
      total = 1;
    }
  }

  ModelParams grad(config);
  const int d = config.dim;
  const int v = config.vocab_size;
  const std::size_t fo = params.final_offset();
  const auto head_w = cview(params, fo + 2 * static_cast<std::size_t>(d), d, v);
  const auto head_b = cview(params, fo + 2 * static_cast<std::size_t>(d) + static_cast<std::size_t>(d) * v, 1, v);
  auto g_head_w = grad.head_weight();
  auto g_head_b = grad.head_bias();
  const double inv_total = 1.0 / static_cast<double>(total);

  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& m = masked[b];
    if (m.positions.empty()) continue;
    const auto tape = forward_tape(m.input, config, params);
    Mat d_out = Mat::Zero(tape.out.rows(), d);
    for (int pos : m.positions) {
      Eigen::RowVectorXd logits = tape.out.row(pos) * head_w + head_b.row(0);
      const double mx = logits.maxCoeff();
      Eigen::RowVectorXd p = (logits.array() - mx).exp().matrix();
      const double z = p.sum();
      const int label = batch[b][static_cast<std::size_t>(pos)];
      loss += -(logits[label] - mx) + std::log(z);
      p /= z;
      p[label] -= 1.0;
      p *= inv_total;
      g_head_w.noalias() += tape.out.row(pos).transpose() * p;
      g_head_b += p;
      d_out.row(pos) = p * head_w.transpose();
    }
    backward(tape, d_out, config, params, grad);
  }
  return MLMResult{loss * inv_total, std::move(grad.values()), total};
}

EncoderConfig adapt_bidirectional(const EncoderConfig& config) {
  if (config.mask_mode == MaskMode::bidirectional) {
    spdlog::warn("encoder already bidirectional; adaptation is a no-op");
    return config;
  }
  EncoderConfig out = config;
  out.mask_mode = MaskMode::bidirectional;
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'D', 'M', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::data, "truncated checkpoint " + path.string());
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::data, "cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    const auto& c = ckpt.config;
    for (int v : {c.vocab_size, c.dim, c.n_layers, c.n_heads, c.ffn_dim, c.max_seq_len})
      put<std::int32_t>(out, v);
    put<std::uint8_t>(out, c.mask_mode == MaskMode::causal ? 0 : 1);
    put<std::uint64_t>(out, ckpt.step);
    put<std::uint64_t>(out, ckpt.vocab.hash_buckets());
    put<std::uint64_t>(out, ckpt.vocab.words().size());
    for (const auto& w : ckpt.vocab.words()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(w.size()));
      out.write(w.data(), static_cast<std::streamsize>(w.size()));
    }
    const auto& values = ckpt.params.values();
    put<std::uint64_t>(out, values.size());
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) fail(ErrorKind::data, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorKind::data, path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion)
    fail(ErrorKind::data, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.vocab_size = get<std::int32_t>(in, path);
  c.dim = get<std::int32_t>(in, path);
  c.n_layers = get<std::int32_t>(in, path);
  c.n_heads = get<std::int32_t>(in, path);
  c.ffn_dim = get<std::int32_t>(in, path);
  c.max_seq_len = get<std::int32_t>(in, path);
  c.mask_mode = get<std::uint8_t>(in, path) == 0 ? MaskMode::causal : MaskMode::bidirectional;
  c.validate();
  ckpt.step = get<std::uint64_t>(in, path);
  const auto buckets = get<std::uint64_t>(in, path);
  const auto n_words = get<std::uint64_t>(in, path);
  std::vector<std::string> words;
  words.reserve(n_words);
  for (std::uint64_t i = 0; i < n_words; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string w(len, '\0');
    in.read(w.data(), len);
    words.push_back(std::move(w));
  }
  ckpt.vocab = Vocabulary(std::move(words), buckets);
  ckpt.params = ModelParams(c);
  const auto n = get<std::uint64_t>(in, path);
  if (n != ckpt.params.size()) fail(ErrorKind::data, "checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(ckpt.params.values().data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) fail(ErrorKind::data, "truncated checkpoint " + path.string());
  if (ckpt.vocab.size() != c.vocab_size) fail(ErrorKind::data, "checkpoint vocabulary size mismatch");
  return ckpt;
}

}  // namespace dmr
