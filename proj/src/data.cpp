#include "biembed/data.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "biembed/util.hpp"

namespace biembed {

std::string_view pair_kind_name(PairKind k) {
  switch (k) {
    case PairKind::kTranslation: return "translation";
    case PairKind::kEntailment: return "entailment";
    case PairKind::kCaption: return "caption";
  }
  throw std::logic_error("pair_kind_name: unknown value");
}

PairKind pair_kind_from_name(std::string_view name) {
  if (name == "translation") return PairKind::kTranslation;
  if (name == "entailment") return PairKind::kEntailment;
  if (name == "caption") return PairKind::kCaption;
  throw std::invalid_argument("unknown pair kind: " + std::string(name));
}

namespace {
std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}
}  // namespace

PairDataset load_pairs_tsv(const std::filesystem::path& path, PairKind kind,
                           const TsvOptions& options) {
  PairDataset ds;
  ds.kind = kind;
  ds.source = path.string();
  std::size_t considered = 0;
  for (const std::string& line : split_lines(read_text_file(path))) {
    if (line.empty()) continue;
    ++considered;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(start));
        break;
      }
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (cols.size() < 2 || cols.size() > 3) {
      ++ds.malformed_lines;
      continue;
    }
    const std::string a = trimmed(cols[0]);
    const std::string b = trimmed(cols[1]);
    if (a.empty() || b.empty()) {
      ++ds.malformed_lines;
      continue;
    }
    if (cols.size() == 3 && trimmed(cols[2]) != "entailment") continue;
    ds.pairs.push_back(SentencePair{a, b});
  }
  if (considered == 0) {
    throw std::runtime_error("load_pairs_tsv: " + path.string() + " contains no data lines");
  }
  const double fraction =
      static_cast<double>(ds.malformed_lines) / static_cast<double>(considered);
  if (fraction > options.max_malformed_fraction) {
    throw std::runtime_error(
        "load_pairs_tsv: " + path.string() + " has " + std::to_string(ds.malformed_lines) +
        " malformed of " + std::to_string(considered) + " lines (" +
        std::to_string(fraction * 100.0) + "%, allowed " +
        std::to_string(options.max_malformed_fraction * 100.0) + "%)");
  }
  return ds;
}

void write_pairs_tsv(const PairDataset& ds, const std::filesystem::path& path) {
  std::string out;
  const bool labeled = ds.kind == PairKind::kEntailment;
  for (const SentencePair& p : ds.pairs) {
    out += p.a;
    out += '\t';
    out += p.b;
    if (labeled) out += "\tentailment";
    out += '\n';
  }
  atomic_write_file(path, out);
}

std::pair<PairDataset, PairDataset> split_validation(const PairDataset& ds,
                                                     std::size_t n_holdout,
                                                     std::uint64_t seed) {
  if (n_holdout >= ds.size()) {
    throw std::invalid_argument("split_validation: holdout " + std::to_string(n_holdout) +
                                " >= dataset size " + std::to_string(ds.size()));
  }
  std::vector<std::size_t> pool(ds.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  SplitMix64 rng(seed);
  // Partial Fisher-Yates: the first n_holdout entries become the holdout.
  for (std::size_t i = 0; i < n_holdout; ++i) {
    const std::size_t j = i + rng.next_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  std::set<std::size_t> val_idx(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  PairDataset train, val;
  train.kind = val.kind = ds.kind;
  train.source = ds.source + "#train";
  val.source = ds.source + "#val";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (val_idx.count(i) ? val : train).pairs.push_back(ds.pairs[i]);
  }
  return {std::move(train), std::move(val)};
}

LabeledPairings make_eval_pairings(const PairDataset& ds, std::size_t n_pos, std::size_t n_neg,
                                   std::uint64_t seed) {
  if (ds.size() < n_pos) {
    throw std::invalid_argument("make_eval_pairings: need " + std::to_string(n_pos) +
                                " positives but dataset has " + std::to_string(ds.size()));
  }
  if (n_neg > 0 && ds.size() < 2) {
    throw std::invalid_argument("make_eval_pairings: need at least 2 pairs for negatives");
  }
  SplitMix64 rng(seed);
  std::vector<std::size_t> pool(ds.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < n_pos; ++i) {
    const std::size_t j = i + rng.next_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_pos));

  LabeledPairings out;
  out.n_pos = n_pos;
  out.n_neg = n_neg;
  out.items.reserve(n_pos + n_neg);
  for (std::size_t i = 0; i < n_pos; ++i) {
    const SentencePair& p = ds.pairs[pool[i]];
    out.items.push_back(LabeledPairing{p.a, p.b, 1.0});
  }
  for (std::size_t k = 0; k < n_neg; ++k) {
    const std::size_t i = rng.next_index(ds.size());
    std::size_t j = rng.next_index(ds.size());
    while (j == i) j = rng.next_index(ds.size());
    out.items.push_back(LabeledPairing{ds.pairs[i].a, ds.pairs[j].b, 0.0});
  }
  return out;
}

// --- synthetic corpora ------------------------------------------------------

void SynthConfig::validate() const {
  if (vocab_a == 0 || vocab_b == 0) {
    throw std::invalid_argument("SynthConfig: vocab sizes must be positive");
  }
  if (vocab_b < vocab_a) {
    throw std::invalid_argument("SynthConfig: vocab_b must be >= vocab_a for a bijection");
  }
  if (len_min == 0 || len_max < len_min) {
    throw std::invalid_argument("SynthConfig: invalid sentence length range");
  }
  if (n_translation == 0 || n_entailment == 0 || n_eval == 0) {
    throw std::invalid_argument("SynthConfig: corpus sizes must be positive");
  }
  if (!(edit_rate > 0.0 && edit_rate < 1.0)) {
    throw std::invalid_argument("SynthConfig: edit_rate must be in (0,1)");
  }
  if (n_classes > vocab_a) {
    throw std::invalid_argument("SynthConfig: n_classes cannot exceed vocab_a");
  }
  if (n_classes > 0 && !(class_mix > 0.0 && class_mix <= 1.0)) {
    throw std::invalid_argument("SynthConfig: class_mix must be in (0,1]");
  }
  if (eval_edit_rate != 0.0 && !(eval_edit_rate > 0.0 && eval_edit_rate < 1.0)) {
    throw std::invalid_argument("SynthConfig: eval_edit_rate must be in (0,1) or 0 to inherit");
  }
}

namespace {

std::string src_token(std::size_t i) { return "src" + std::to_string(i); }
std::string tgt_token(std::size_t i) { return "tgt" + std::to_string(i); }

std::string join_tokens(const std::vector<std::size_t>& ids,
                        const std::function<std::string(std::size_t)>& name) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += name(ids[i]);
  }
  return out;
}

// Shared generator state for one synth run: the bijection plus the optional
// concept-class partition carried from the source vocabulary onto its image.
struct SynthWorld {
  const SynthConfig& cfg;
  std::vector<std::size_t> bijection;                       // src -> tgt
  std::vector<std::vector<std::size_t>> src_class_members;  // per class
  std::vector<std::vector<std::size_t>> tgt_class_members;
  std::vector<std::size_t> tgt_class_of;  // indexed by tgt token id

  explicit SynthWorld(const SynthConfig& config)
      : cfg(config), bijection(synth_token_bijection(config)) {
    if (cfg.n_classes == 0) return;
    src_class_members.resize(cfg.n_classes);
    tgt_class_members.resize(cfg.n_classes);
    tgt_class_of.assign(cfg.vocab_b, SIZE_MAX);
    for (std::size_t i = 0; i < cfg.vocab_a; ++i) {
      const std::size_t c = i * cfg.n_classes / cfg.vocab_a;
      src_class_members[c].push_back(i);
      tgt_class_members[c].push_back(bijection[i]);
      tgt_class_of[bijection[i]] = c;
    }
  }

  // Sentence over the source vocabulary (or its image when tgt is set):
  // uniform tokens, or a topic mixture when classes are enabled.
  std::vector<std::size_t> sentence(SplitMix64& rng, bool tgt) const {
    const std::size_t len = cfg.len_min + rng.next_index(cfg.len_max - cfg.len_min + 1);
    std::vector<std::size_t> toks(len);
    if (cfg.n_classes == 0) {
      for (std::size_t& t : toks) {
        t = tgt ? rng.next_index(cfg.vocab_b) : rng.next_index(cfg.vocab_a);
      }
      return toks;
    }
    const auto& members = tgt ? tgt_class_members : src_class_members;
    const std::size_t topic = rng.next_index(cfg.n_classes);
    for (std::size_t& t : toks) {
      if (rng.next_double() < cfg.class_mix) {
        t = members[topic][rng.next_index(members[topic].size())];
      } else if (tgt) {
        // off-topic draws stay inside the bijection image so every token has
        // a class
        t = bijection[rng.next_index(cfg.vocab_a)];
      } else {
        t = rng.next_index(cfg.vocab_a);
      }
    }
    return toks;
  }

  std::size_t replacement_for(SplitMix64& rng, std::size_t tok, bool tgt) const {
    if (cfg.n_classes == 0) {
      return tgt ? rng.next_index(cfg.vocab_b) : rng.next_index(cfg.vocab_a);
    }
    const std::size_t cls = tgt ? tgt_class_of[tok] : tok * cfg.n_classes / cfg.vocab_a;
    const auto& members = tgt ? tgt_class_members[cls] : src_class_members[cls];
    return members[rng.next_index(members.size())];
  }

  // Deletes or replaces round(rate * len) tokens, then shuffles within
  // adjacent windows of 2. Replacements are same-class when classes are
  // enabled. At least one token always survives.
  std::vector<std::size_t> paraphrase(SplitMix64& rng, const std::vector<std::size_t>& toks,
                                      double rate, bool tgt) const {
    const auto n_edits =
        static_cast<std::size_t>(std::llround(rate * static_cast<double>(toks.size())));
    std::vector<std::size_t> positions(toks.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    for (std::size_t i = 0; i < n_edits && i < positions.size(); ++i) {
      const std::size_t j = i + rng.next_index(positions.size() - i);
      std::swap(positions[i], positions[j]);
    }
    std::vector<std::size_t> chosen(
        positions.begin(),
        positions.begin() + static_cast<std::ptrdiff_t>(std::min(n_edits, positions.size())));
    std::sort(chosen.begin(), chosen.end());

    std::vector<bool> deleted(toks.size(), false);
    std::vector<std::size_t> out = toks;
    std::size_t alive = toks.size();
    for (std::size_t p : chosen) {
      if (rng.next_below(2) == 0 && alive > 1) {
        deleted[p] = true;
        --alive;
      } else {
        out[p] = replacement_for(rng, toks[p], tgt);
      }
    }
    std::vector<std::size_t> kept;
    kept.reserve(alive);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!deleted[i]) kept.push_back(out[i]);
    }
    for (std::size_t i = 0; i + 1 < kept.size(); i += 2) {
      if (rng.next_below(2) == 0) std::swap(kept[i], kept[i + 1]);
    }
    return kept;
  }
};

}  // namespace

std::vector<std::size_t> synth_token_bijection(const SynthConfig& cfg) {
  cfg.validate();
  SplitMix64 rng(derive_seed(cfg.seed, "synth-bijection"));
  std::vector<std::size_t> targets(cfg.vocab_b);
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  rng.shuffle(targets);
  targets.resize(cfg.vocab_a);
  return targets;
}

SynthCorpora synth_bilingual(const SynthConfig& cfg) {
  cfg.validate();
  const SynthWorld world(cfg);

  SynthCorpora out;
  out.translation.kind = PairKind::kTranslation;
  out.translation.source = "synthetic";
  out.entailment.kind = PairKind::kEntailment;
  out.entailment.source = "synthetic";
  out.eval.kind = PairKind::kCaption;
  out.eval.source = "synthetic";

  out.l1_entailment.kind = PairKind::kEntailment;
  out.l1_entailment.source = "synthetic";

  const double eval_rate = cfg.resolved_eval_edit_rate();
  SplitMix64 rng(derive_seed(cfg.seed, "synth-corpora"));
  for (std::size_t n = 0; n < cfg.n_translation; ++n) {
    const std::vector<std::size_t> a = world.sentence(rng, false);
    std::vector<std::size_t> b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = world.bijection[a[i]];
    out.translation.pairs.push_back(
        SentencePair{join_tokens(a, src_token), join_tokens(b, tgt_token)});
  }
  for (std::size_t n = 0; n < cfg.n_entailment; ++n) {
    const std::vector<std::size_t> base = world.sentence(rng, true);
    out.entailment.pairs.push_back(
        SentencePair{join_tokens(base, tgt_token),
                     join_tokens(world.paraphrase(rng, base, cfg.edit_rate, true), tgt_token)});
  }
  for (std::size_t n = 0; n < cfg.n_eval; ++n) {
    const std::vector<std::size_t> base = world.sentence(rng, true);
    const std::vector<std::size_t> first = world.paraphrase(rng, base, eval_rate, true);
    const std::vector<std::size_t> second = world.paraphrase(rng, base, eval_rate, true);
    out.eval.pairs.push_back(
        SentencePair{join_tokens(first, tgt_token), join_tokens(second, tgt_token)});
  }
  for (std::size_t n = 0; n < cfg.n_l1_entailment; ++n) {
    const std::vector<std::size_t> base = world.sentence(rng, false);
    out.l1_entailment.pairs.push_back(
        SentencePair{join_tokens(base, src_token),
                     join_tokens(world.paraphrase(rng, base, eval_rate, false), src_token)});
  }
  return out;
}

// --- batching -----------------------------------------------------------------

BatchIter::BatchIter(const PairDataset& ds, std::size_t batch_size, std::size_t n_batches,
                     std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), n_batches_(n_batches), seed_(seed), rng_(seed) {
  if (batch_size == 0) throw std::invalid_argument("BatchIter: batch_size must be positive");
  if (batch_size > ds.size()) {
    throw std::invalid_argument("BatchIter: batch_size " + std::to_string(batch_size) +
                                " exceeds dataset size " + std::to_string(ds.size()));
  }
  order_.resize(ds.size());
  start_epoch(0);
}

void BatchIter::start_epoch(std::uint64_t epoch) {
  epoch_ = epoch;
  rng_ = SplitMix64(seed_ + epoch);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(order_);
  pos_ = 0;
}

std::optional<std::vector<SentencePair>> BatchIter::next() {
  if (emitted_ >= n_batches_) return std::nullopt;
  // Leftovers shorter than a full batch are dropped at epoch end.
  if (order_.size() - pos_ < batch_size_) start_epoch(epoch_ + 1);

  std::vector<SentencePair> batch;
  batch.reserve(batch_size_);
  std::unordered_set<std::string> seen_a;
  seen_a.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    std::size_t idx = order_[pos_++];
    std::size_t attempts = 0;
    while (seen_a.count(ds_->pairs[idx].a)) {
      ++collisions_;
      if (++attempts > 10000) {
        throw std::runtime_error(
            "BatchIter: cannot assemble a batch of " + std::to_string(batch_size_) +
            " unique A-side sentences; dataset has too many duplicates");
      }
      idx = rng_.next_index(ds_->size());
    }
    seen_a.insert(ds_->pairs[idx].a);
    batch.push_back(ds_->pairs[idx]);
  }
  ++emitted_;
  return batch;
}

}  // namespace biembed
