#include "dmr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/parallel.hpp"
#include "dmr/text.hpp"
#include "dmr/trainable_embedder.hpp"

namespace dmr {

// ------------------------------------------------------------------ config

void TrainRunConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    fail(ErrorKind::config, "learning_rate must be a finite non-negative number");
  if (batch_size == 0) fail(ErrorKind::config, "batch_size must be >= 1");
  if (!(tau > 0.0)) fail(ErrorKind::config, "tau must be positive");
  if (epochs == 0) fail(ErrorKind::config, "epochs must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::config, "momentum must be in [0, 1)");
  if (grad_chunks == 0) fail(ErrorKind::config, "grad_chunks must be >= 1");
  mlm.validate();
}

nlohmann::json to_json(const CurriculumStage& s) {
  return {{"alpha", s.alpha},
          {"dataset_path", s.dataset_path.string()},
          {"epochs", s.epochs},
          {"stage_index", s.stage_index}};
}

nlohmann::json to_json(const TrainRunConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) stages.push_back(to_json(s));
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"tau", c.tau},
          {"stage1_enabled", c.stage1_enabled},
          {"epochs", c.epochs},
          {"momentum", c.momentum},
          {"use_instructions", c.use_instructions},
          {"inbatch_with_hardneg", c.inbatch_with_hardneg},
          {"grad_chunks", c.grad_chunks},
          {"stage1_epochs", c.stage1_epochs},
          {"mlm",
           {{"mask_rate", c.mlm.mask_rate},
            {"replace_mask_frac", c.mlm.replace_mask_frac},
            {"replace_random_frac", c.mlm.replace_random_frac},
            {"keep_frac", c.mlm.keep_frac},
            {"seed", c.mlm.seed}}},
          {"stages", stages}};
}

TrainRunConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::config, "run config must be a JSON object");
  TrainRunConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "eval_every") c.eval_every = v.get<std::size_t>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "stage1_enabled") c.stage1_enabled = v.get<bool>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "use_instructions") c.use_instructions = v.get<bool>();
      else if (key == "inbatch_with_hardneg") c.inbatch_with_hardneg = v.get<bool>();
      else if (key == "grad_chunks") c.grad_chunks = v.get<std::size_t>();
      else if (key == "stage1_epochs") c.stage1_epochs = v.get<std::size_t>();
      else if (key == "mlm") {
        c.mlm.mask_rate = v.value("mask_rate", c.mlm.mask_rate);
        c.mlm.replace_mask_frac = v.value("replace_mask_frac", c.mlm.replace_mask_frac);
        c.mlm.replace_random_frac = v.value("replace_random_frac", c.mlm.replace_random_frac);
        c.mlm.keep_frac = v.value("keep_frac", c.mlm.keep_frac);
        c.mlm.seed = v.value("seed", c.mlm.seed);
      } else if (key == "stages") {
        for (const auto& s : v) {
          CurriculumStage st;
          st.alpha = s.at("alpha").get<double>();
          st.dataset_path = s.at("dataset_path").get<std::string>();
          st.epochs = s.value("epochs", std::size_t{1});
          st.stage_index = s.value("stage_index", static_cast<int>(c.stages.size()) + 1);
          c.stages.push_back(std::move(st));
        }
      } else {
        fail(ErrorKind::config, "unknown run config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- registry

const CheckpointRegistry::Entry* CheckpointRegistry::find(int stage_index) const {
  auto it = entries_.find(stage_index);
  return it == entries_.end() ? nullptr : &it->second;
}

nlohmann::json CheckpointRegistry::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [idx, e] : entries_)
    out.push_back({{"stage_index", idx}, {"path", e.path.string()}, {"val_ndcg10", e.val_ndcg10}, {"step", e.step}});
  return out;
}

void CheckpointRegistry::save(const std::filesystem::path& path) const {
  write_text_atomic(path, to_json().dump(2) + "\n");
}

CheckpointRegistry CheckpointRegistry::load(const std::filesystem::path& path) {
  CheckpointRegistry r;
  try {
    for (const auto& e : nlohmann::json::parse(read_text(path)))
      r.record(e.at("stage_index").get<int>(),
               Entry{e.at("path").get<std::string>(), e.at("val_ndcg10").get<double>(),
                     e.at("step").get<std::uint64_t>()});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return r;
}

nlohmann::json to_json(const MetricRecord& r) {
  nlohmann::json j = {{"stage", r.stage}, {"step", r.step}, {"loss", nullptr}, {"val_ndcg10", nullptr}};
  if (r.loss) j["loss"] = *r.loss;
  if (r.val_ndcg10) j["val_ndcg10"] = *r.val_ndcg10;
  return j;
}

// ------------------------------------------------------------------ models

double validate_checkpoint(const Checkpoint& ckpt, const ValidationSet& val, bool with_instruction,
                           const SimilarityConfig& similarity) {
  const TrainableEmbedder embedder(ckpt, true, static_cast<std::size_t>(ckpt.config.max_seq_len));
  EvalOptions opts;
  opts.k = val.k;
  opts.with_instruction = with_instruction;
  opts.similarity = similarity;
  return evaluate_model(embedder, val.target, opts).mean;
}

Checkpoint init_model(std::span<const std::string> texts, EncoderConfig config,
                      std::size_t max_words, std::size_t hash_buckets, std::uint64_t seed) {
  Checkpoint c;
  c.vocab = Vocabulary::build(texts, max_words, 1, hash_buckets);
  config.vocab_size = c.vocab.size();
  config.validate();
  c.config = config;
  c.params = init_params(config, seed);
  return c;
}

namespace {

std::vector<int> ids_from_tokens(const Checkpoint& ckpt, std::vector<std::string> tokens) {
  const auto limit = static_cast<std::size_t>(ckpt.config.max_seq_len);
  if (tokens.size() > limit) tokens.resize(limit);
  auto ids = ckpt.vocab.encode(tokens);
  if (ids.empty()) ids.push_back(Vocabulary::kPad);
  return ids;
}

}  // namespace

std::vector<int> text_token_ids(const Checkpoint& ckpt, std::string_view text) {
  return ids_from_tokens(ckpt, tokenize(text));
}

std::vector<int> query_token_ids(const Checkpoint& ckpt, const Query& q,
                                 const InstructionTable* instructions) {
  std::vector<std::string> tokens;
  if (instructions) tokens = tokenize(instructions->get(q.intent));
  auto body = tokenize(q.text);
  tokens.insert(tokens.end(), body.begin(), body.end());
  return ids_from_tokens(ckpt, std::move(tokens));
}

// ----------------------------------------------------------------- trainer

namespace {

/// Seeded Fisher-Yates on mt19937_64, whose output is fixed by the standard.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

class Optimizer {
 public:
  Optimizer(std::size_t n, double lr, double momentum)
      : lr_(lr), momentum_(momentum), velocity_(momentum > 0.0 ? n : 0, 0.0) {}

  void step(ModelParams& params, const std::vector<double>& grad) {
    auto& p = params.values();
    if (momentum_ > 0.0) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        velocity_[i] = momentum_ * velocity_[i] + grad[i];
        p[i] -= lr_ * velocity_[i];
      }
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * grad[i];
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<double> velocity_;
};

/// Forward through the encoder for a set of sequences, hand the pooled
/// vectors to `loss_fn`, and backpropagate the returned vector gradients.
/// The parameter gradient is reduced over a fixed chunk partition.
using PooledLoss = std::function<double(const std::vector<DenseVector>&, std::vector<DenseVector>&)>;

double contrastive_step(Checkpoint& model, Optimizer& opt,
                        const std::vector<const std::vector<int>*>& seqs, const PooledLoss& loss_fn,
                        std::size_t grad_chunks) {
  const std::size_t n = seqs.size();
  std::vector<ForwardTape> tapes(n);
  std::vector<DenseVector> pooled(n);
  parallel_for(n, [&](std::size_t i) {
    tapes[i] = forward_tape(*seqs[i], model.config, model.params);
    pooled[i] = mean_pool(tapes[i].out);
  });

  std::vector<DenseVector> grads(n);
  const double loss = loss_fn(pooled, grads);

  const std::size_t chunks = std::min(grad_chunks, n);
  std::vector<ModelParams> partial(chunks, ModelParams(model.config));
  parallel_chunks(n, chunks, [&](std::size_t c, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto rows = tapes[i].out.rows();
      Mat d_out = grads[i].transpose().replicate(rows, 1) / static_cast<double>(rows);
      backward(tapes[i], d_out, model.config, model.params, partial[c]);
    }
  });
  auto& total = partial[0].values();
  for (std::size_t c = 1; c < chunks; ++c) {
    const auto& v = partial[c].values();
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += v[i];
  }
  opt.step(model.params, total);
  ++model.step;
  if (!model.params.all_finite()) fail(ErrorKind::degenerate, "training diverged (non-finite parameters)");
  return loss;
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch,
                                                              std::size_t min_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    if (e - b >= min_size) out.push_back({b, e});
  }
  return out;
}

/// Shared epoch/evaluation loop; `run_batch(order, begin, end)` performs one update.
StageResult train_loop(const Checkpoint& start, std::size_t n_items, std::size_t epochs,
                       const TrainRunConfig& cfg, std::size_t min_batch, const std::string& label,
                       const std::function<double()>& validate_fn, Checkpoint& model,
                       const std::function<double(const std::vector<std::size_t>&, std::size_t,
                                                  std::size_t)>& run_batch,
                       const MetricSink& sink) {
  StageResult r;
  const auto ranges = batch_ranges(n_items, cfg.batch_size, min_batch);
  if (ranges.empty()) fail(ErrorKind::config, label + ": not enough examples for one batch");
  if (cfg.eval_every > ranges.size())
    fail(ErrorKind::config, "eval_every exceeds steps per epoch (" + std::to_string(ranges.size()) + ")");

  auto evaluate = [&](std::uint64_t step) {
    const double v = validate_fn();
    r.val_history.push_back({step, v});
    if (sink) sink({label, step, std::nullopt, v});
    if (r.val_history.size() == 1 || v > r.best_val) {
      r.best_val = v;
      r.best_step = step;
      r.best = model;
    }
  };

  model = start;
  evaluate(0);
  r.initial_val = r.best_val;

  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto order = permutation(n_items, mix64(cfg.seed ^ mix64(fnv1a64(label) + epoch)));
    for (const auto& [b, e] : ranges) {
      const double loss = run_batch(order, b, e);
      ++step;
      r.losses.push_back(loss);
      if (sink) sink({label, step, loss, std::nullopt});
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) evaluate(step);
    }
    if (cfg.eval_every == 0) evaluate(step);
  }
  if (r.val_history.back().first != step) evaluate(step);
  r.last = model;
  return r;
}

}  // namespace

// ----------------------------------------------------------------- stage 1

Stage1Result run_stage1(const Checkpoint& model, const std::vector<std::vector<int>>& sequences,
                        const TrainRunConfig& cfg, const MetricSink& sink) {
  cfg.validate();
  Stage1Result r;
  if (model.config.mask_mode == MaskMode::bidirectional) {
    spdlog::info("stage 1 skipped: model already uses bidirectional attention");
    r.checkpoint = model;
    r.skipped = true;
    return r;
  }
  std::vector<std::vector<int>> data;
  for (const auto& s : sequences) {
    if (s.empty()) continue;
    auto t = s;
    if (t.size() > static_cast<std::size_t>(model.config.max_seq_len))
      t.resize(static_cast<std::size_t>(model.config.max_seq_len));
    data.push_back(std::move(t));
  }
  if (data.empty()) fail(ErrorKind::config, "stage 1 needs non-empty MLM data");

  r.checkpoint = model;
  r.checkpoint.config = adapt_bidirectional(model.config);
  auto& ckpt = r.checkpoint;

  const std::vector<std::vector<int>> probe(data.begin(), data.begin() + std::min(cfg.batch_size, data.size()));
  r.initial_loss = mlm_loss(probe, cfg.mlm, ckpt.config, ckpt.params).loss;

  Optimizer opt(ckpt.params.size(), cfg.learning_rate, cfg.momentum);
  const auto ranges = batch_ranges(data.size(), cfg.batch_size, 1);
  for (std::size_t epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
    const auto order = permutation(data.size(), mix64(cfg.seed ^ mix64(0x5157 + epoch)));
    for (const auto& [b, e] : ranges) {
      std::vector<std::vector<int>> batch;
      for (std::size_t i = b; i < e; ++i) batch.push_back(data[order[i]]);
      MLMConfig mlm = cfg.mlm;
      mlm.seed = mix64(cfg.mlm.seed ^ mix64(cfg.seed + r.steps + 1));
      const auto res = mlm_loss(batch, mlm, ckpt.config, ckpt.params);
      opt.step(ckpt.params, res.gradient);
      ++ckpt.step;
      ++r.steps;
      r.losses.push_back(res.loss);
      if (sink) sink({"stage1", r.steps, res.loss, std::nullopt});
    }
  }
  if (!ckpt.params.all_finite()) fail(ErrorKind::degenerate, "stage 1 diverged (non-finite parameters)");
  r.final_loss = mlm_loss(probe, cfg.mlm, ckpt.config, ckpt.params).loss;
  return r;
}

// --------------------------------------------------------------- pretrain

StageResult run_pretrain(const Checkpoint& model, const std::vector<QueryPassagePair>& pairs,
                         const TrainRunConfig& cfg, const ValidationSet& val, const MetricSink& sink) {
  cfg.validate();
  if (cfg.batch_size < 2) fail(ErrorKind::config, "in-batch pre-training needs batch_size >= 2");
  if (pairs.empty()) fail(ErrorKind::config, "pre-training needs at least one pair");

  std::vector<std::vector<int>> q_ids(pairs.size()), p_ids(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    q_ids[i] = query_token_ids(model, pairs[i].query, nullptr);
    p_ids[i] = text_token_ids(model, pairs[i].positive.text);
  });

  const auto similarity = cfg.similarity();
  Checkpoint current;
  Optimizer opt(model.params.size(), cfg.learning_rate, cfg.momentum);
  auto run_batch = [&](const std::vector<std::size_t>& order, std::size_t b, std::size_t e) {
    const std::size_t n = e - b;
    std::vector<const std::vector<int>*> seqs;
    for (std::size_t i = b; i < e; ++i) seqs.push_back(&q_ids[order[i]]);
    for (std::size_t i = b; i < e; ++i) seqs.push_back(&p_ids[order[i]]);
    return contrastive_step(current, opt, seqs,
        [&](const std::vector<DenseVector>& v, std::vector<DenseVector>& g) {
          MiniBatch mb;
          mb.queries.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n));
          mb.positives.assign(v.begin() + static_cast<std::ptrdiff_t>(n), v.end());
          auto rep = infonce_inbatch(mb, similarity);
          for (std::size_t i = 0; i < n; ++i) {
            g[i] = std::move(rep.grad_queries[i]);
            g[n + i] = std::move(rep.grad_positives[i]);
          }
          return rep.loss;
        },
        cfg.grad_chunks);
  };
  auto validate_fn = [&] { return validate_checkpoint(current, val, false, similarity); };
  return train_loop(model, pairs.size(), cfg.epochs, cfg, 2, "pretrain", validate_fn, current,
                    run_batch, sink);
}

// --------------------------------------------------------------- finetune

StageResult run_finetune(const Checkpoint& model, const std::vector<TrainingTriplet>& triplets,
                         const TrainRunConfig& cfg, const ValidationSet& val, std::size_t epochs,
                         const std::string& stage_label, const MetricSink& sink) {
  cfg.validate();
  if (epochs == 0) fail(ErrorKind::config, "epochs must be >= 1");
  if (triplets.empty()) fail(ErrorKind::config, stage_label + ": no training triplets");
  if (cfg.inbatch_with_hardneg && cfg.batch_size < 2)
    fail(ErrorKind::config, "in-batch negatives need batch_size >= 2");

  const InstructionTable instructions;
  const InstructionTable* instr = cfg.use_instructions ? &instructions : nullptr;
  std::vector<std::vector<int>> q_ids(triplets.size()), p_ids(triplets.size());
  std::vector<std::vector<std::vector<int>>> n_ids(triplets.size());
  parallel_for(triplets.size(), [&](std::size_t i) {
    const auto& t = triplets[i];
    if (t.negatives.empty())
      fail(ErrorKind::data, "triplet for query '" + t.query.id + "' has no negatives");
    q_ids[i] = query_token_ids(model, t.query, instr);
    p_ids[i] = text_token_ids(model, t.positive.text);
    for (const auto& neg : t.negatives) n_ids[i].push_back(text_token_ids(model, neg.text));
  });

  const auto similarity = cfg.similarity();
  Checkpoint current;
  Optimizer opt(model.params.size(), cfg.learning_rate, cfg.momentum);
  auto run_batch = [&](const std::vector<std::size_t>& order, std::size_t b, std::size_t e) {
    const std::size_t n = e - b;
    std::vector<const std::vector<int>*> seqs;
    for (std::size_t i = b; i < e; ++i) seqs.push_back(&q_ids[order[i]]);
    for (std::size_t i = b; i < e; ++i) seqs.push_back(&p_ids[order[i]]);
    for (std::size_t i = b; i < e; ++i)
      for (const auto& s : n_ids[order[i]]) seqs.push_back(&s);
    return contrastive_step(current, opt, seqs,
        [&](const std::vector<DenseVector>& v, std::vector<DenseVector>& g) {
          MiniBatch mb;
          std::size_t at = 0;
          for (std::size_t i = 0; i < n; ++i) mb.queries.push_back(v[at++]);
          for (std::size_t i = 0; i < n; ++i) mb.positives.push_back(v[at++]);
          for (std::size_t i = b; i < e; ++i) {
            mb.negatives.emplace_back();
            for (std::size_t k = 0; k < n_ids[order[i]].size(); ++k) mb.negatives.back().push_back(v[at++]);
          }
          auto rep = infonce_hardneg_batch(mb, similarity, cfg.inbatch_with_hardneg);
          at = 0;
          for (std::size_t i = 0; i < n; ++i) g[at++] = std::move(rep.grad_queries[i]);
          for (std::size_t i = 0; i < n; ++i) g[at++] = std::move(rep.grad_positives[i]);
          for (std::size_t i = 0; i < n; ++i)
            for (auto& gn : rep.grad_negatives[i]) g[at++] = std::move(gn);
          return rep.loss;
        },
        cfg.grad_chunks);
  };
  auto validate_fn = [&] { return validate_checkpoint(current, val, cfg.use_instructions, similarity); };
  return train_loop(model, triplets.size(), epochs, cfg, cfg.inbatch_with_hardneg ? 2 : 1, stage_label,
                    validate_fn, current, run_batch, sink);
}

CurriculumResult run_finetune_curriculum(const Checkpoint& model_pt,
                                         const std::vector<CurriculumData>& stages,
                                         const TrainRunConfig& cfg, const ValidationSet& val,
                                         const std::optional<std::filesystem::path>& out_dir,
                                         const MetricSink& sink) {
  if (stages.empty()) fail(ErrorKind::config, "curriculum needs at least one stage");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s].stage;
    if (std::abs(stages[s].file_alpha - st.alpha) > 1e-12)
      fail(ErrorKind::config, "stage " + std::to_string(st.stage_index) + ": dataset alpha " +
                                  alpha_label(stages[s].file_alpha) + " does not match schedule alpha " +
                                  alpha_label(st.alpha));
    if (s > 0) {
      const auto& prev = stages[s - 1].stage;
      if (st.stage_index <= prev.stage_index)
        fail(ErrorKind::config, "stage indices must be strictly increasing");
      if (st.alpha < prev.alpha) fail(ErrorKind::config, "alpha schedule must be non-decreasing");
    }
  }

  CurriculumResult out;
  Checkpoint current = model_pt;
  for (const auto& data : stages) {
    const auto& st = data.stage;
    auto r = run_finetune(current, data.triplets, cfg, val, st.epochs,
                          "finetune-" + std::to_string(st.stage_index), sink);
    CheckpointRegistry::Entry entry{{}, r.best_val, r.best_step};
    if (out_dir) {
      entry.path = *out_dir / ("stage" + std::to_string(st.stage_index) + "-best.ckpt");
      save_checkpoint(entry.path, r.best);
    }
    out.registry.record(st.stage_index, entry);
    spdlog::info("stage {} (alpha={}): best val NDCG@10 {:.4f} at step {}", st.stage_index,
                 alpha_label(st.alpha), r.best_val, r.best_step);
    current = r.best;
    out.stages.push_back(std::move(r));
  }
  out.final_checkpoint = std::move(current);
  return out;
}

}  // namespace dmr
