#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biembed/data.hpp"
#include "biembed/encoder.hpp"
#include "biembed/evalkit.hpp"
#include "biembed/optim.hpp"

namespace biembed {

// Hyperparameters of one contrastive training stage.
struct StageConfig {
  std::string name = "stage1";
  PairKind kind = PairKind::kTranslation;
  std::string dataset_path;       // pair TSV
  std::string eval_dataset_path;  // entailment stages: optional separate pairing source
  std::size_t batch_size = 32;
  std::size_t n_batches = 2000;
  double lr = 1e-3;
  double weight_decay = 0.005;
  MnrlConfig mnrl;
  std::size_t eval_every = 500;
  std::size_t n_holdout = 256;    // translation validation pairs
  std::size_t n_eval_pos = 1000;  // entailment labeled pairings
  std::size_t n_eval_neg = 1000;
  std::size_t warmup_steps = 0;
  std::uint64_t seed = 0;  // derived from the regimen seed at resolve time

  void validate() const;
};

struct RegimenConfig {
  EncoderConfig encoder;  // vocab_size is filled in after the vocab is known
  StageConfig stage1;
  StageConfig stage2;
  bool skip_stage1 = false;  // ablation: stage 2 starts from freshly initialized params
  std::filesystem::path out_dir;
  std::string vocab_path;  // load instead of building when set
  std::size_t vocab_min_freq = 1;
  std::uint64_t seed = 0;

  void validate() const;
  // Fans the root seed out into encoder and stage seeds (stable labels).
  void resolve_seeds();
};

// Mirrors the published two-stage hyperparameters: 32x120000 at lr 1e-5 then
// 16x16000 at lr 1e-4, weight decay 0.005, encoder width 512.
RegimenConfig paper_preset();
// Scaled to minutes of CPU time.
RegimenConfig desk_preset();
RegimenConfig preset_by_name(std::string_view name);

struct MetricEntry {
  std::string stage;
  std::size_t batch;
  std::string metric;
  double value;
  double seconds;  // wall-clock since stage start
};

class MetricTrace {
 public:
  // Batch indices must be strictly increasing per (stage, metric) series and
  // values must be finite.
  void append(std::string stage, std::size_t batch, std::string metric, double value,
              double seconds);
  const std::vector<MetricEntry>& entries() const { return entries_; }
  std::string to_csv() const;  // "stage,batch,metric,value,seconds"

 private:
  std::vector<MetricEntry> entries_;
};

struct TranslationValidation {
  double mean_cos_true = 0.0;     // mean cosine over matching pairs
  double mean_cos_random = 0.0;   // mean cosine over all non-matching pairs
  double retrieval_acc_ab = 0.0;  // argmax retrieval A -> B
  double retrieval_acc_ba = 0.0;  // argmax retrieval B -> A
};

TranslationValidation validate_translation(const SentenceEncoder& encoder,
                                           const PairDataset& val_pairs);

// Point-biserial Pearson r between predicted cosines and the 0/1 labels.
// Propagates the undefined-correlation error when predictions have zero
// variance; run_stage records kPearsonUndefined in the trace instead.
double validate_pearson(const SentenceEncoder& encoder, const LabeledPairings& pairings);

// Trace sentinel for an undefined correlation (outside [-1,1] by design).
inline constexpr double kPearsonUndefined = -2.0;

struct ValidationSpec {
  PairDataset translation_pairs;  // used when the stage kind is translation
  LabeledPairings pairings;       // used when the stage kind is entailment
};

struct StageSummary {
  std::string name;
  bool skipped = false;
  std::size_t n_steps = 0;
  std::string metric_name;
  double final_metric = 0.0;
  double best_metric = 0.0;
  std::size_t best_batch = 0;
  double wall_seconds = 0.0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  std::size_t batch_collisions = 0;
};

// One stage: per batch encode both sides, MNRL loss, backward, Adam step;
// validation every eval_every batches (and at batch 0 and the last batch)
// with best-metric and final checkpointing. A non-finite loss aborts with the
// last good checkpoint left on disk.
StageSummary run_stage(EncoderParams& params, const StageConfig& cfg, const Vocab& vocab,
                       const PairDataset& train, const ValidationSpec& val,
                       const std::filesystem::path& out_dir, MetricTrace& trace);

// Pre-loaded datasets; paths in the config are ignored when this is used.
struct RegimenDatasets {
  PairDataset stage1_data;
  PairDataset stage2_data;
  PairDataset stage2_eval_source;  // optional; empty -> holdout of stage2_data
};

struct RegimenResult {
  StageSummary stage1;
  StageSummary stage2;
  std::string report_json;
  std::filesystem::path report_path;
  std::filesystem::path trace_path;
  std::filesystem::path vocab_path;
};

RegimenResult run_regimen(const RegimenConfig& cfg);
RegimenResult run_regimen(const RegimenConfig& cfg, const RegimenDatasets& datasets);

}  // namespace biembed
