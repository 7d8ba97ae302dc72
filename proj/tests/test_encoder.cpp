#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dmr/encoder.hpp"
#include "dmr/error.hpp"

using namespace dmr;

namespace {

EncoderConfig small_config(MaskMode mode) {
  EncoderConfig c;
  c.vocab_size = 30;
  c.dim = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.ffn_dim = 24;
  c.max_seq_len = 12;
  c.mask_mode = mode;
  return c;
}

std::vector<int> random_tokens(std::mt19937_64& rng, int n, int vocab) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto& x : t) x = Vocabulary::kFirstWord + static_cast<int>(rng() % (vocab - Vocabulary::kFirstWord));
  return t;
}

}  // namespace

TEST_CASE("vocabulary orders by frequency then token and hashes unseen words") {
  const std::vector<std::string> texts = {"b a c a", "b d a"};
  const auto v = Vocabulary::build(texts, 3, 1, 4);
  CHECK(v.words() == std::vector<std::string>{"a", "b", "c"});
  CHECK(v.id("a") == Vocabulary::kFirstWord);
  const int unseen = v.id("zebra");
  CHECK(unseen >= Vocabulary::kFirstWord + 3);
  CHECK(unseen < v.size());
  CHECK(Vocabulary::build(texts, 3, 1, 0).id("zebra") == Vocabulary::kUnk);
}

TEST_CASE("causal rows ignore later tokens exactly") {
  std::mt19937_64 rng(1);
  const auto cfg = small_config(MaskMode::causal);
  const auto params = init_params(cfg, 7);
  const auto toks = random_tokens(rng, 10, cfg.vocab_size);
  const Mat base = forward(toks, cfg, params);
  for (std::size_t j = 0; j < toks.size(); ++j) {
    auto changed = toks;
    changed[j] = changed[j] == 5 ? 6 : 5;
    const Mat out = forward(changed, cfg, params);
    for (std::size_t i = 0; i < j; ++i) CHECK((out.row(i) - base.row(i)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((out.row(j) - base.row(j)).norm() > 0.0);
  }
}

TEST_CASE("bidirectional adaptation lets earlier rows see later tokens") {
  std::mt19937_64 rng(2);
  const auto causal = small_config(MaskMode::causal);
  const auto bidi = adapt_bidirectional(causal);
  CHECK(bidi.mask_mode == MaskMode::bidirectional);
  CHECK(adapt_bidirectional(bidi) == bidi);
  const auto params = init_params(causal, 3);
  auto toks = random_tokens(rng, 8, causal.vocab_size);
  const Mat base = forward(toks, bidi, params);
  toks[7] = toks[7] == 5 ? 6 : 5;
  CHECK((forward(toks, bidi, params).row(0) - base.row(0)).norm() > 0.0);
}

TEST_CASE("backward matches central differences of a linear read-out") {
  std::mt19937_64 rng(3);
  for (auto mode : {MaskMode::causal, MaskMode::bidirectional}) {
    const auto cfg = small_config(mode);
    auto params = init_params(cfg, 11);
    const auto toks = random_tokens(rng, 7, cfg.vocab_size);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat w(7, cfg.dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
    auto objective = [&](const ModelParams& p) { return forward(toks, cfg, p).cwiseProduct(w).sum(); };

    ModelParams grad(cfg);
    backward(forward_tape(toks, cfg, params), w, cfg, params, grad);
    std::uniform_int_distribution<std::size_t> coord(0, params.size() - 1);
    const double h = 1e-5;
    int checked = 0;
    for (int s = 0; s < 200 && checked < 40; ++s) {
      const auto c = coord(rng);
      const double orig = params[c];
      params[c] = orig + h;
      const double up = objective(params);
      params[c] = orig - h;
      const double down = objective(params);
      params[c] = orig;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd) < 1e-6 && std::abs(grad[c]) < 1e-6) continue;
      ++checked;
      CHECK(grad[c] == doctest::Approx(fd).epsilon(1e-5));
    }
    CHECK(checked > 10);
  }
}

TEST_CASE("MLM loss does not depend on batch order") {
  std::mt19937_64 rng(4);
  const auto cfg = small_config(MaskMode::bidirectional);
  const auto params = init_params(cfg, 5);
  std::vector<std::vector<int>> batch = {random_tokens(rng, 9, 30), random_tokens(rng, 6, 30), random_tokens(rng, 11, 30)};
  MLMConfig mlm;
  mlm.seed = 9;
  const auto a = mlm_loss(batch, mlm, cfg, params);
  std::swap(batch[0], batch[2]);
  const auto b = mlm_loss(batch, mlm, cfg, params);
  CHECK(a.masked == b.masked);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  CHECK(a.masked > 0);
}

TEST_CASE("untrained MLM loss is near log(vocab)") {
  std::mt19937_64 rng(6);
  const auto cfg = small_config(MaskMode::bidirectional);
  const auto params = init_params(cfg, 1);
  std::vector<std::vector<int>> batch;
  for (int i = 0; i < 20; ++i) batch.push_back(random_tokens(rng, 12, 30));
  const double loss = mlm_loss(batch, MLMConfig{}, cfg, params).loss;
  CHECK(std::abs(loss - std::log(30.0)) < 1.0);
}

TEST_CASE("forward rejects bad ids and overlong sequences") {
  const auto cfg = small_config(MaskMode::causal);
  const auto params = init_params(cfg, 1);
  try {
    forward(std::vector<int>{3, 99}, cfg, params);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::input);
  }
  CHECK_THROWS_AS(forward(std::vector<int>(13, 3), cfg, params), Error);
  auto bad = cfg;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  Checkpoint c;
  c.config = small_config(MaskMode::causal);
  c.params = init_params(c.config, 42);
  c.vocab = Vocabulary({"alpha", "beta"}, 25);
  c.config.vocab_size = c.vocab.size();
  c.params = init_params(c.config, 42);
  c.step = 123;
  const auto path = std::filesystem::temp_directory_path() / "dmr_test.ckpt";
  save_checkpoint(path, c);
  const auto back = load_checkpoint(path);
  CHECK(back.config == c.config);
  CHECK(back.vocab == c.vocab);
  CHECK(back.step == 123);
  CHECK(back.params == c.params);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  {
    std::ofstream junk(path, std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}
