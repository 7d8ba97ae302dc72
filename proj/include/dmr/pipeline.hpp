#pragma once

// Training orchestration: optional bidirectional adaptation + MLM, in-batch
// contrastive pre-training, and progressive hard-negative fine-tuning with
// best-validation checkpoint chaining between stages.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmr/corpus.hpp"
#include "dmr/encoder.hpp"
#include "dmr/eval.hpp"
#include "dmr/refine.hpp"

namespace dmr {

struct CurriculumStage {
  double alpha = 0.85;
  std::filesystem::path dataset_path;
  std::size_t epochs = 1;
  int stage_index = 0;
};

struct TrainRunConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // steps; 0 = end of every epoch
  double tau = 0.01;
  bool stage1_enabled = true;
  std::size_t epochs = 1;      // pre-training epochs
  double momentum = 0.0;       // 0 = plain SGD
  bool use_instructions = true;
  bool inbatch_with_hardneg = false;
  std::size_t grad_chunks = 8;  // fixed partition for the gradient reduction
  std::size_t stage1_epochs = 2;
  MLMConfig mlm{};
  std::vector<CurriculumStage> stages;

  void validate() const;
  SimilarityConfig similarity() const { return SimilarityConfig{tau}; }
};

nlohmann::json to_json(const CurriculumStage& s);
nlohmann::json to_json(const TrainRunConfig& c);
/// Unknown keys are a config error so typos do not silently fall back.
TrainRunConfig train_config_from_json(const nlohmann::json& j);

/// Best validation checkpoint per stage.
class CheckpointRegistry {
 public:
  struct Entry {
    std::filesystem::path path;
    double val_ndcg10 = 0.0;
    std::uint64_t step = 0;
  };

  void record(int stage_index, Entry entry) { entries_[stage_index] = std::move(entry); }
  const Entry* find(int stage_index) const;
  const std::map<int, Entry>& entries() const noexcept { return entries_; }

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
  static CheckpointRegistry load(const std::filesystem::path& path);

 private:
  std::map<int, Entry> entries_;
};

/// One metric-log record; missing loss or metric serialize as null.
struct MetricRecord {
  std::string stage;
  std::uint64_t step = 0;
  std::optional<double> loss;
  std::optional<double> val_ndcg10;
};

nlohmann::json to_json(const MetricRecord& r);
using MetricSink = std::function<void(const MetricRecord&)>;

/// Validation target plus the query convention used to embed it.
struct ValidationSet {
  EvalTarget target;
  std::size_t k = 10;
};

/// Unweighted mean NDCG@k over intents for a parameter snapshot.
double validate_checkpoint(const Checkpoint& ckpt, const ValidationSet& val, bool with_instruction,
                           const SimilarityConfig& similarity);

/// Fresh model: vocabulary from `texts`, seeded parameter init.
Checkpoint init_model(std::span<const std::string> texts, EncoderConfig config,
                      std::size_t max_words, std::size_t hash_buckets, std::uint64_t seed);

/// Token ids as the trainable embedder would feed them (optional
/// instruction prefix, truncation to max_seq_len, PAD for empty input).
std::vector<int> text_token_ids(const Checkpoint& ckpt, std::string_view text);
std::vector<int> query_token_ids(const Checkpoint& ckpt, const Query& q,
                                 const InstructionTable* instructions);

struct Stage1Result {
  Checkpoint checkpoint;
  bool skipped = false;
  double initial_loss = 0.0;  // probe batch before training
  double final_loss = 0.0;    // same probe batch after training
  std::vector<double> losses;
  std::uint64_t steps = 0;
};

/// Adapts a causal model to bidirectional attention and trains MLM on
/// `sequences`. A bidirectional model is passed through untouched.
Stage1Result run_stage1(const Checkpoint& model, const std::vector<std::vector<int>>& sequences,
                        const TrainRunConfig& cfg, const MetricSink& sink = {});

struct StageResult {
  Checkpoint best;             // max validation, earliest step on ties
  double best_val = 0.0;
  std::uint64_t best_step = 0;
  double initial_val = 0.0;    // validation at step 0
  std::vector<double> losses;  // per step
  std::vector<std::pair<std::uint64_t, double>> val_history;
  Checkpoint last;
};

/// In-batch InfoNCE over (query, positive) pairs. Queries carry no instruction.
StageResult run_pretrain(const Checkpoint& model, const std::vector<QueryPassagePair>& pairs,
                         const TrainRunConfig& cfg, const ValidationSet& val,
                         const MetricSink& sink = {});

/// Hard-negative InfoNCE over triplets, queries instruction-prefixed when
/// cfg.use_instructions. `epochs` overrides cfg.epochs.
StageResult run_finetune(const Checkpoint& model, const std::vector<TrainingTriplet>& triplets,
                         const TrainRunConfig& cfg, const ValidationSet& val, std::size_t epochs,
                         const std::string& stage_label, const MetricSink& sink = {});

struct CurriculumResult {
  Checkpoint final_checkpoint;
  std::vector<StageResult> stages;
  CheckpointRegistry registry;
};

/// Loaded curriculum stage: its schedule entry and triplets.
struct CurriculumData {
  CurriculumStage stage;
  std::vector<TrainingTriplet> triplets;
  double file_alpha = 0.0;
};

/// Each stage starts from the previous stage's best checkpoint. A dataset
/// whose α differs from its stage's α is a config error, as is a stage order
/// that is not strictly increasing or an α schedule that decreases.
/// When `out_dir` is set, every stage's best is written as
/// `stage<index>-best.ckpt` and recorded in the registry.
CurriculumResult run_finetune_curriculum(const Checkpoint& model_pt,
                                         const std::vector<CurriculumData>& stages,
                                         const TrainRunConfig& cfg, const ValidationSet& val,
                                         const std::optional<std::filesystem::path>& out_dir = {},
                                         const MetricSink& sink = {});

}  // namespace dmr
