#include "dmr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "dmr/encoder.hpp"
#include "dmr/error.hpp"

namespace dmr {

void require_finite(const DenseVector& v, std::string_view what) {
  if (!v.allFinite()) fail(ErrorKind::embedding, "non-finite entry in " + std::string(what));
}

void SimilarityConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    fail(ErrorKind::config, "temperature must be positive");
}

double sim(const DenseVector& e_q, const DenseVector& e_p, const SimilarityConfig& cfg) {
  if (e_q.size() != e_p.size())
    fail(ErrorKind::embedding, "dimension mismatch: " + std::to_string(e_q.size()) + " vs " +
                                   std::to_string(e_p.size()));
  const double nq = e_q.norm();
  const double np = e_p.norm();
  if (nq == 0.0 || np == 0.0) fail(ErrorKind::degenerate, "similarity of a zero vector");
  return e_q.dot(e_p) / (nq * np) / cfg.temperature;
}

namespace {

struct Unit {
  DenseVector hat;
  double norm = 0.0;
};

Unit unit(const DenseVector& v) {
  const double n = v.norm();
  if (n == 0.0) fail(ErrorKind::degenerate, "zero vector in contrastive loss");
  return {v / n, n};
}

// Softmax cross-entropy of the query against `cands` with the target at
// index 0. Accumulates `scale`-weighted gradients into gq and gc[j].
double softmax_ce(const Unit& q, const std::vector<const Unit*>& cands, double tau, double scale,
                  DenseVector& gq, const std::vector<DenseVector*>& gc) {
  const std::size_t m = cands.size();
  std::vector<double> cos(m), logits(m);
  for (std::size_t j = 0; j < m; ++j) {
    cos[j] = q.hat.dot(cands[j]->hat);
    logits[j] = cos[j] / tau;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double loss = -(logits[0] - mx) + std::log(z);

  for (std::size_t j = 0; j < m; ++j) {
    const double p = std::exp(logits[j] - mx) / z;
    const double dlogit = scale * (p - (j == 0 ? 1.0 : 0.0));
    if (dlogit == 0.0) continue;
    const double g = dlogit / tau;
    gq.noalias() += (g / q.norm) * (cands[j]->hat - cos[j] * q.hat);
    gc[j]->noalias() += (g / cands[j]->norm) * (q.hat - cos[j] * cands[j]->hat);
  }
  return loss;
}

void check_dims(const MiniBatch& batch) {
  if (batch.queries.size() != batch.positives.size())
    fail(ErrorKind::config, "queries and positives must align");
  if (!batch.negatives.empty() && batch.negatives.size() != batch.queries.size())
    fail(ErrorKind::config, "negatives must be empty or one list per query");
  if (batch.queries.empty()) return;
  const auto d = batch.queries.front().size();
  auto check = [&](const DenseVector& v) {
    if (v.size() != d) fail(ErrorKind::embedding, "dimension mismatch in batch");
  };
  for (const auto& v : batch.queries) check(v);
  for (const auto& v : batch.positives) check(v);
  for (const auto& list : batch.negatives)
    for (const auto& v : list) check(v);
}

LossReport zero_report(const MiniBatch& batch) {
  LossReport r;
  const auto d = batch.queries.empty() ? 0 : batch.queries.front().size();
  r.grad_queries.assign(batch.queries.size(), DenseVector::Zero(d));
  r.grad_positives.assign(batch.positives.size(), DenseVector::Zero(d));
  r.grad_negatives.resize(batch.negatives.size());
  for (std::size_t i = 0; i < batch.negatives.size(); ++i)
    r.grad_negatives[i].assign(batch.negatives[i].size(), DenseVector::Zero(d));
  return r;
}

}  // namespace

LossReport infonce_inbatch(const MiniBatch& batch, const SimilarityConfig& cfg) {
  cfg.validate();
  check_dims(batch);
  const std::size_t b = batch.queries.size();
  if (b < 2) fail(ErrorKind::config, "in-batch InfoNCE needs batch size >= 2");

  std::vector<Unit> qs, ps;
  for (const auto& v : batch.queries) qs.push_back(unit(v));
  for (const auto& v : batch.positives) ps.push_back(unit(v));

  LossReport r = zero_report(batch);
  r.grad_negatives.clear();
  const double scale = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<const Unit*> cands{&ps[i]};
    std::vector<DenseVector*> grads{&r.grad_positives[i]};
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      cands.push_back(&ps[j]);
      grads.push_back(&r.grad_positives[j]);
    }
    r.per_example.push_back(softmax_ce(qs[i], cands, cfg.temperature, scale, r.grad_queries[i], grads));
  }
  double total = 0.0;
  for (double l : r.per_example) total += l;
  r.loss = total / static_cast<double>(b);
  return r;
}

LossReport infonce_hardneg(const DenseVector& query, const DenseVector& positive,
                           std::span<const DenseVector> negatives, const SimilarityConfig& cfg) {
  MiniBatch batch;
  batch.queries.push_back(query);
  batch.positives.push_back(positive);
  batch.negatives.emplace_back(negatives.begin(), negatives.end());
  return infonce_hardneg_batch(batch, cfg, false);
}

LossReport infonce_hardneg_batch(const MiniBatch& batch, const SimilarityConfig& cfg,
                                 bool include_inbatch) {
  cfg.validate();
  check_dims(batch);
  const std::size_t b = batch.queries.size();
  if (b == 0) fail(ErrorKind::config, "empty batch");
  if (batch.negatives.size() != b) fail(ErrorKind::config, "hard-negative loss needs negatives");

  std::vector<Unit> qs, ps;
  std::vector<std::vector<Unit>> ns(b);
  for (const auto& v : batch.queries) qs.push_back(unit(v));
  for (const auto& v : batch.positives) ps.push_back(unit(v));
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.negatives[i].empty())
      fail(ErrorKind::config, "hard-negative set H is empty for example " + std::to_string(i));
    for (const auto& v : batch.negatives[i]) ns[i].push_back(unit(v));
  }

  LossReport r = zero_report(batch);
  const double scale = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<const Unit*> cands{&ps[i]};
    std::vector<DenseVector*> grads{&r.grad_positives[i]};
    for (std::size_t k = 0; k < ns[i].size(); ++k) {
      cands.push_back(&ns[i][k]);
      grads.push_back(&r.grad_negatives[i][k]);
    }
    if (include_inbatch) {
      for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        cands.push_back(&ps[j]);
        grads.push_back(&r.grad_positives[j]);
      }
    }
    r.per_example.push_back(softmax_ce(qs[i], cands, cfg.temperature, scale, r.grad_queries[i], grads));
  }
  double total = 0.0;
  for (double l : r.per_example) total += l;
  r.loss = total / static_cast<double>(b);
  return r;
}

GradCheckOp parse_grad_check_op(std::string_view name) {
  if (name == "inbatch") return GradCheckOp::inbatch;
  if (name == "hardneg") return GradCheckOp::hardneg;
  if (name == "mlm") return GradCheckOp::mlm;
  fail(ErrorKind::usage, "unknown gradcheck op '" + std::string(name) + "'");
}

std::string_view grad_check_name(GradCheckOp op) {
  switch (op) {
    case GradCheckOp::inbatch: return "inbatch";
    case GradCheckOp::hardneg: return "hardneg";
    case GradCheckOp::mlm: return "mlm";
  }
  return "?";
}

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
}

// Flattens every vector of a batch so coordinates can be addressed uniformly.
struct BatchCoords {
  std::vector<DenseVector*> vecs;
  std::size_t dim = 0;

  explicit BatchCoords(MiniBatch& b) {
    for (auto& v : b.queries) vecs.push_back(&v);
    for (auto& v : b.positives) vecs.push_back(&v);
    for (auto& list : b.negatives)
      for (auto& v : list) vecs.push_back(&v);
    dim = vecs.empty() ? 0 : static_cast<std::size_t>(vecs.front()->size());
  }
  std::size_t size() const { return vecs.size() * dim; }
  double& at(std::size_t c) { return (*vecs[c / dim])[static_cast<Eigen::Index>(c % dim)]; }
};

std::vector<double> flatten_grads(const LossReport& r) {
  std::vector<double> out;
  auto push = [&](const DenseVector& v) { out.insert(out.end(), v.data(), v.data() + v.size()); };
  for (const auto& v : r.grad_queries) push(v);
  for (const auto& v : r.grad_positives) push(v);
  for (const auto& list : r.grad_negatives)
    for (const auto& v : list) push(v);
  return out;
}

double check_objective(GradCheckOp op, std::uint64_t seed, const GradCheckOptions& opts) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim_dist(4, 32), batch_dist(2, 8), neg_dist(1, 6);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int dim = dim_dist(rng);
  const int b = batch_dist(rng);
  // Moderate temperature keeps the softmax away from saturation so the
  // finite-difference truncation error stays far below the tolerance.
  SimilarityConfig cfg{0.5};

  auto random_vec = [&] {
    DenseVector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    return v;
  };
  const DenseVector shared = random_vec();
  auto make = [&] { return opts.degenerate ? shared : random_vec(); };

  MiniBatch batch;
  for (int i = 0; i < b; ++i) {
    batch.queries.push_back(make());
    batch.positives.push_back(make());
  }
  if (op == GradCheckOp::hardneg) {
    for (int i = 0; i < b; ++i) {
      std::vector<DenseVector> negs;
      const int n = neg_dist(rng);
      for (int k = 0; k < n; ++k) negs.push_back(make());
      batch.negatives.push_back(std::move(negs));
    }
  }

  auto eval = [&](const MiniBatch& mb) {
    return op == GradCheckOp::inbatch ? infonce_inbatch(mb, cfg) : infonce_hardneg_batch(mb, cfg);
  };
  const auto analytic = flatten_grads(eval(batch));
  BatchCoords coords(batch);
  std::uniform_int_distribution<std::size_t> coord_dist(0, coords.size() - 1);

  double worst = 0.0;
  for (std::size_t s = 0; s < opts.coordinates; ++s) {
    const std::size_t c = coord_dist(rng);
    const double orig = coords.at(c);
    coords.at(c) = orig + opts.step;
    const double up = eval(batch).loss;
    coords.at(c) = orig - opts.step;
    const double down = eval(batch).loss;
    coords.at(c) = orig;
    worst = std::max(worst, relative_error(analytic[c], (up - down) / (2.0 * opts.step)));
  }
  return worst;
}

double check_mlm(std::uint64_t seed, const GradCheckOptions& opts) {
  std::mt19937_64 rng(seed);
  EncoderConfig config;
  config.vocab_size = 24;
  config.dim = 16;
  config.n_layers = 2;
  config.n_heads = 2;
  config.ffn_dim = 32;
  config.max_seq_len = 12;
  config.mask_mode = MaskMode::bidirectional;
  ModelParams params = init_params(config, seed);

  std::uniform_int_distribution<int> len_dist(3, 10);
  std::uniform_int_distribution<int> tok_dist(Vocabulary::kFirstWord, config.vocab_size - 1);
  std::vector<std::vector<int>> batch(3);
  for (auto& seq : batch) {
    seq.resize(static_cast<std::size_t>(len_dist(rng)));
    for (auto& t : seq) t = tok_dist(rng);
  }
  MLMConfig mlm;
  mlm.mask_rate = 0.3;
  mlm.seed = seed;

  const auto analytic = mlm_loss(batch, mlm, config, params).gradient;
  std::uniform_int_distribution<std::size_t> coord_dist(0, params.size() - 1);
  double worst = 0.0;
  for (std::size_t s = 0; s < opts.coordinates; ++s) {
    const std::size_t c = coord_dist(rng);
    const double orig = params[c];
    params[c] = orig + opts.step;
    const double up = mlm_loss(batch, mlm, config, params).loss;
    params[c] = orig - opts.step;
    const double down = mlm_loss(batch, mlm, config, params).loss;
    params[c] = orig;
    worst = std::max(worst, relative_error(analytic[c], (up - down) / (2.0 * opts.step)));
  }
  return worst;
}

}  // namespace

double grad_check(GradCheckOp op, std::uint64_t instance_seed, const GradCheckOptions& opts) {
  if (op == GradCheckOp::mlm) return check_mlm(instance_seed, opts);
  return check_objective(op, instance_seed, opts);
}

}  // namespace dmr
