#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biembed/rng.hpp"

namespace biembed {

enum class PairKind { kTranslation, kEntailment, kCaption };

std::string_view pair_kind_name(PairKind k);
PairKind pair_kind_from_name(std::string_view name);

struct SentencePair {
  std::string a;
  std::string b;
};

struct PairDataset {
  std::vector<SentencePair> pairs;
  PairKind kind = PairKind::kTranslation;
  std::string source;
  std::size_t malformed_lines = 0;  // counted during TSV ingestion

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct LabeledPairing {
  std::string a;
  std::string b;
  double label;  // 1.0 proper match, 0.0 random pairing
};

struct LabeledPairings {
  std::vector<LabeledPairing> items;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct TsvOptions {
  // Fraction of malformed lines tolerated before ingestion fails.
  double max_malformed_fraction = 0.01;
};

// UTF-8 TSV, two columns `A<TAB>B` per line, optional third `label` column.
// When a line carries a label, it is kept only if the label is "entailment".
// Malformed lines are counted; exceeding the threshold is an error.
PairDataset load_pairs_tsv(const std::filesystem::path& path, PairKind kind,
                           const TsvOptions& options = {});

// Writes `A<TAB>B` lines; entailment datasets get a third column "entailment".
void write_pairs_tsv(const PairDataset& ds, const std::filesystem::path& path);

// Seeded uniform holdout without replacement. Both halves preserve the
// original relative order; train and val are disjoint and cover ds.
std::pair<PairDataset, PairDataset> split_validation(const PairDataset& ds,
                                                     std::size_t n_holdout, std::uint64_t seed);

// n_pos true pairs labeled 1.0 plus n_neg cross pairings (A of pair i with B
// of pair j, i != j) labeled 0.0.
LabeledPairings make_eval_pairings(const PairDataset& ds, std::size_t n_pos, std::size_t n_neg,
                                   std::uint64_t seed);

struct SynthConfig {
  std::size_t vocab_a = 200;  // source-language token inventory
  std::size_t vocab_b = 200;  // target-language token inventory (>= vocab_a)
  std::size_t len_min = 4;
  std::size_t len_max = 8;
  std::size_t n_translation = 5000;
  std::size_t n_entailment = 400;
  std::size_t n_eval = 1200;
  double edit_rate = 0.35;  // fraction of tokens deleted/replaced per paraphrase
  // Optional latent concept classes. 0 keeps plain uniform sentences. With
  // n_classes > 0 the source vocabulary is partitioned into n_classes concept
  // classes, each sentence draws most tokens (class_mix) from one class, and
  // paraphrase replacements substitute a token of the same class. Same-class
  // structure is what distinguishes semantic similarity from plain lexical
  // overlap in the generated evaluation pairs.
  std::size_t n_classes = 0;
  double class_mix = 0.85;
  // Edit rate for the eval (caption) pairs and the L1 paraphrase pairs;
  // 0 means use edit_rate. Keeping the entailment rate low and the eval rate
  // high creates the train/eval domain gap that makes the evaluation probe
  // synonym structure instead of plain token overlap.
  double eval_edit_rate = 0.0;
  // Optional source-language paraphrase pairs, the desk-scale stand-in for a
  // base model that already embeds the source language well. Emitted as a
  // fourth dataset; callers decide whether to mix them into stage-1 training.
  std::size_t n_l1_entailment = 0;
  std::uint64_t seed = 0;

  void validate() const;
  double resolved_eval_edit_rate() const { return eval_edit_rate > 0.0 ? eval_edit_rate : edit_rate; }
};

struct SynthCorpora {
  PairDataset translation;    // (L1 sentence, token-wise bijective relabeling in L2)
  PairDataset entailment;     // (L2 sentence, paraphrase)
  PairDataset eval;           // (paraphrase of source, other paraphrase of same source)
  PairDataset l1_entailment;  // (L1 sentence, paraphrase); empty unless configured
};

// Synthetic bilingual corpora with ground truth by construction: translations
// are a fixed seeded token bijection, paraphrases delete/replace edit_rate of
// tokens then shuffle within windows of 2.
SynthCorpora synth_bilingual(const SynthConfig& cfg);

// The token bijection used by synth_bilingual for a given config (for tests).
std::vector<std::size_t> synth_token_bijection(const SynthConfig& cfg);

// Deterministic shuffled batches: epoch order is a seeded shuffle reseeded
// with seed+epoch, leftovers shorter than batch_size are dropped at epoch
// end, and exactly n_batches batches are emitted. Duplicate A-side texts
// within a batch are resampled away (they would act as false negatives in
// contrastive training); collisions() counts how often that happened.
class BatchIter {
 public:
  BatchIter(const PairDataset& ds, std::size_t batch_size, std::size_t n_batches,
            std::uint64_t seed);

  std::optional<std::vector<SentencePair>> next();

  std::size_t emitted() const { return emitted_; }
  std::size_t collisions() const { return collisions_; }

 private:
  void start_epoch(std::uint64_t epoch);

  const PairDataset* ds_;
  std::size_t batch_size_;
  std::size_t n_batches_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_ = 0;
  SplitMix64 rng_;
  std::size_t emitted_ = 0;
  std::size_t collisions_ = 0;
};

}  // namespace biembed
