#include "biembed/regimen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include "biembed/json_io.hpp"
#include "biembed/rng.hpp"

namespace biembed {

// --- config -------------------------------------------------------------------

void StageConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("StageConfig: name must be set");
  if (batch_size == 0) throw std::invalid_argument("StageConfig: batch_size must be >= 1");
  if (n_batches == 0) throw std::invalid_argument("StageConfig: n_batches must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("StageConfig: lr must be non-negative");
  if (weight_decay < 0.0) throw std::invalid_argument("StageConfig: weight_decay must be >= 0");
  if (eval_every == 0) throw std::invalid_argument("StageConfig: eval_every must be >= 1");
  mnrl.validate();
  if (kind == PairKind::kTranslation && n_holdout == 0) {
    throw std::invalid_argument("StageConfig: translation stage needs n_holdout > 0");
  }
  if (kind == PairKind::kEntailment && (n_eval_pos == 0 || n_eval_neg == 0)) {
    throw std::invalid_argument("StageConfig: entailment stage needs labeled pairing counts");
  }
}

void RegimenConfig::validate() const {
  stage1.validate();
  stage2.validate();
  if (stage1.kind != PairKind::kTranslation) {
    throw std::invalid_argument("RegimenConfig: stage1 must train on translation pairs");
  }
  if (stage2.kind != PairKind::kEntailment) {
    throw std::invalid_argument("RegimenConfig: stage2 must train on entailment pairs");
  }
  if (out_dir.empty()) throw std::invalid_argument("RegimenConfig: out_dir must be set");
}

void RegimenConfig::resolve_seeds() {
  encoder.seed = derive_seed(seed, "encoder-init");
  stage1.seed = derive_seed(seed, "stage1");
  stage2.seed = derive_seed(seed, "stage2");
}

RegimenConfig paper_preset() {
  RegimenConfig cfg;
  cfg.encoder.d_model = 512;
  cfg.encoder.n_layers = 2;
  cfg.encoder.n_heads = 8;
  cfg.encoder.d_ff = 1024;
  cfg.encoder.max_len = 64;

  cfg.stage1.name = "stage1";
  cfg.stage1.kind = PairKind::kTranslation;
  cfg.stage1.batch_size = 32;
  cfg.stage1.n_batches = 120000;
  cfg.stage1.lr = 1e-5;
  cfg.stage1.weight_decay = 0.005;
  cfg.stage1.n_holdout = 2048;
  cfg.stage1.eval_every = 500;

  cfg.stage2.name = "stage2";
  cfg.stage2.kind = PairKind::kEntailment;
  cfg.stage2.batch_size = 16;
  cfg.stage2.n_batches = 16000;
  cfg.stage2.lr = 1e-4;
  cfg.stage2.weight_decay = 0.005;
  cfg.stage2.n_eval_pos = 1000;
  cfg.stage2.n_eval_neg = 1000;
  cfg.stage2.eval_every = 500;
  return cfg;
}

RegimenConfig desk_preset() {
  RegimenConfig cfg;
  cfg.encoder = EncoderConfig::desk(0);

  cfg.stage1.name = "stage1";
  cfg.stage1.kind = PairKind::kTranslation;
  cfg.stage1.batch_size = 32;
  cfg.stage1.n_batches = 2000;
  cfg.stage1.lr = 1e-3;
  cfg.stage1.weight_decay = 0.005;
  cfg.stage1.n_holdout = 256;
  cfg.stage1.eval_every = 250;

  cfg.stage2.name = "stage2";
  cfg.stage2.kind = PairKind::kEntailment;
  cfg.stage2.batch_size = 16;
  cfg.stage2.n_batches = 1000;
  cfg.stage2.lr = 3e-4;
  cfg.stage2.weight_decay = 0.005;
  cfg.stage2.n_eval_pos = 1000;
  cfg.stage2.n_eval_neg = 1000;
  cfg.stage2.eval_every = 250;
  return cfg;
}

RegimenConfig preset_by_name(std::string_view name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw std::invalid_argument("unknown preset: " + std::string(name));
}

// --- JSON ---------------------------------------------------------------------

namespace {
void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
    }
  }
}
}  // namespace

nlohmann::json to_json(const MnrlConfig& cfg) {
  return nlohmann::json{{"scale", cfg.scale}, {"symmetric", cfg.symmetric}};
}

MnrlConfig mnrl_config_from_json(const nlohmann::json& j, MnrlConfig defaults) {
  reject_unknown_keys(j, {"scale", "symmetric"}, "mnrl config");
  MnrlConfig cfg = defaults;
  if (j.contains("scale")) cfg.scale = j.at("scale").get<double>();
  if (j.contains("symmetric")) cfg.symmetric = j.at("symmetric").get<bool>();
  return cfg;
}

nlohmann::json to_json(const StageConfig& cfg) {
  return nlohmann::json{{"name", cfg.name},
                        {"kind", pair_kind_name(cfg.kind)},
                        {"data", cfg.dataset_path},
                        {"eval_data", cfg.eval_dataset_path},
                        {"batch_size", cfg.batch_size},
                        {"n_batches", cfg.n_batches},
                        {"lr", cfg.lr},
                        {"weight_decay", cfg.weight_decay},
                        {"mnrl", to_json(cfg.mnrl)},
                        {"eval_every", cfg.eval_every},
                        {"n_holdout", cfg.n_holdout},
                        {"n_eval_pos", cfg.n_eval_pos},
                        {"n_eval_neg", cfg.n_eval_neg},
                        {"warmup_steps", cfg.warmup_steps},
                        {"seed", cfg.seed}};
}

StageConfig stage_config_from_json(const nlohmann::json& j, StageConfig defaults) {
  reject_unknown_keys(j,
                      {"name", "kind", "data", "eval_data", "batch_size", "n_batches", "lr",
                       "weight_decay", "mnrl", "eval_every", "n_holdout", "n_eval_pos",
                       "n_eval_neg", "warmup_steps", "seed"},
                      "stage config");
  StageConfig cfg = defaults;
  if (j.contains("name")) cfg.name = j.at("name").get<std::string>();
  if (j.contains("kind")) cfg.kind = pair_kind_from_name(j.at("kind").get<std::string>());
  if (j.contains("data")) cfg.dataset_path = j.at("data").get<std::string>();
  if (j.contains("eval_data")) cfg.eval_dataset_path = j.at("eval_data").get<std::string>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("n_batches")) cfg.n_batches = j.at("n_batches").get<std::size_t>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("mnrl")) cfg.mnrl = mnrl_config_from_json(j.at("mnrl"), cfg.mnrl);
  if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<std::size_t>();
  if (j.contains("n_holdout")) cfg.n_holdout = j.at("n_holdout").get<std::size_t>();
  if (j.contains("n_eval_pos")) cfg.n_eval_pos = j.at("n_eval_pos").get<std::size_t>();
  if (j.contains("n_eval_neg")) cfg.n_eval_neg = j.at("n_eval_neg").get<std::size_t>();
  if (j.contains("warmup_steps")) cfg.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

nlohmann::json to_json(const RegimenConfig& cfg) {
  return nlohmann::json{{"encoder", to_json(cfg.encoder)},
                        {"stage1", to_json(cfg.stage1)},
                        {"stage2", to_json(cfg.stage2)},
                        {"skip_stage1", cfg.skip_stage1},
                        {"out", cfg.out_dir.string()},
                        {"vocab_path", cfg.vocab_path},
                        {"vocab_min_freq", cfg.vocab_min_freq},
                        {"seed", cfg.seed}};
}

RegimenConfig regimen_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"preset", "encoder", "stage1", "stage2", "skip_stage1", "out",
                       "vocab_path", "vocab_min_freq", "seed"},
                      "regimen config");
  RegimenConfig cfg =
      j.contains("preset") ? preset_by_name(j.at("preset").get<std::string>()) : desk_preset();
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    reject_unknown_keys(
        e, {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len", "seed", "pooling"},
        "encoder config");
    if (e.contains("vocab_size")) cfg.encoder.vocab_size = e.at("vocab_size").get<std::size_t>();
    if (e.contains("d_model")) cfg.encoder.d_model = e.at("d_model").get<std::size_t>();
    if (e.contains("n_layers")) cfg.encoder.n_layers = e.at("n_layers").get<std::size_t>();
    if (e.contains("n_heads")) cfg.encoder.n_heads = e.at("n_heads").get<std::size_t>();
    if (e.contains("d_ff")) cfg.encoder.d_ff = e.at("d_ff").get<std::size_t>();
    if (e.contains("max_len")) cfg.encoder.max_len = e.at("max_len").get<std::size_t>();
    if (e.contains("seed")) cfg.encoder.seed = e.at("seed").get<std::uint64_t>();
    if (e.contains("pooling")) {
      cfg.encoder.pooling = pooling_source_from_name(e.at("pooling").get<std::string>());
    }
  }
  if (j.contains("stage1")) cfg.stage1 = stage_config_from_json(j.at("stage1"), cfg.stage1);
  if (j.contains("stage2")) cfg.stage2 = stage_config_from_json(j.at("stage2"), cfg.stage2);
  if (j.contains("skip_stage1")) cfg.skip_stage1 = j.at("skip_stage1").get<bool>();
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("vocab_path")) cfg.vocab_path = j.at("vocab_path").get<std::string>();
  if (j.contains("vocab_min_freq")) cfg.vocab_min_freq = j.at("vocab_min_freq").get<std::size_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

nlohmann::json to_json(const SynthConfig& cfg) {
  return nlohmann::json{{"vocab_a", cfg.vocab_a},
                        {"vocab_b", cfg.vocab_b},
                        {"len_min", cfg.len_min},
                        {"len_max", cfg.len_max},
                        {"n_translation", cfg.n_translation},
                        {"n_entailment", cfg.n_entailment},
                        {"n_eval", cfg.n_eval},
                        {"edit_rate", cfg.edit_rate},
                        {"n_classes", cfg.n_classes},
                        {"class_mix", cfg.class_mix},
                        {"eval_edit_rate", cfg.eval_edit_rate},
                        {"n_l1_entailment", cfg.n_l1_entailment},
                        {"seed", cfg.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig defaults) {
  reject_unknown_keys(j,
                      {"vocab_a", "vocab_b", "len_min", "len_max", "n_translation",
                       "n_entailment", "n_eval", "edit_rate", "n_classes", "class_mix",
                       "eval_edit_rate", "n_l1_entailment", "seed"},
                      "synth config");
  SynthConfig cfg = defaults;
  if (j.contains("vocab_a")) cfg.vocab_a = j.at("vocab_a").get<std::size_t>();
  if (j.contains("vocab_b")) cfg.vocab_b = j.at("vocab_b").get<std::size_t>();
  if (j.contains("len_min")) cfg.len_min = j.at("len_min").get<std::size_t>();
  if (j.contains("len_max")) cfg.len_max = j.at("len_max").get<std::size_t>();
  if (j.contains("n_translation")) cfg.n_translation = j.at("n_translation").get<std::size_t>();
  if (j.contains("n_entailment")) cfg.n_entailment = j.at("n_entailment").get<std::size_t>();
  if (j.contains("n_eval")) cfg.n_eval = j.at("n_eval").get<std::size_t>();
  if (j.contains("edit_rate")) cfg.edit_rate = j.at("edit_rate").get<double>();
  if (j.contains("n_classes")) cfg.n_classes = j.at("n_classes").get<std::size_t>();
  if (j.contains("class_mix")) cfg.class_mix = j.at("class_mix").get<double>();
  if (j.contains("eval_edit_rate")) cfg.eval_edit_rate = j.at("eval_edit_rate").get<double>();
  if (j.contains("n_l1_entailment")) {
    cfg.n_l1_entailment = j.at("n_l1_entailment").get<std::size_t>();
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

// --- metric trace -----------------------------------------------------------

void MetricTrace::append(std::string stage, std::size_t batch, std::string metric, double value,
                         double seconds) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("MetricTrace: non-finite value for " + stage + "/" + metric);
  }
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->stage == stage && it->metric == metric) {
      if (it->batch >= batch) {
        throw std::invalid_argument("MetricTrace: batch index " + std::to_string(batch) +
                                    " not increasing for " + stage + "/" + metric);
      }
      break;
    }
  }
  entries_.push_back(MetricEntry{std::move(stage), batch, std::move(metric), value, seconds});
}

std::string MetricTrace::to_csv() const {
  std::string out = "stage,batch,metric,value,seconds\n";
  char buf[64];
  for (const MetricEntry& e : entries_) {
    out += e.stage;
    out += ',';
    out += std::to_string(e.batch);
    out += ',';
    out += e.metric;
    std::snprintf(buf, sizeof(buf), ",%.17g,%.6f\n", e.value, e.seconds);
    out += buf;
  }
  return out;
}

// --- validation ---------------------------------------------------------------

TranslationValidation validate_translation(const SentenceEncoder& encoder,
                                           const PairDataset& val_pairs) {
  if (val_pairs.empty()) {
    throw std::invalid_argument("validate_translation: empty validation set");
  }
  const std::size_t n = val_pairs.size();
  std::vector<std::string> a, b;
  a.reserve(n);
  b.reserve(n);
  for (const SentencePair& p : val_pairs.pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  const Matrix ea = encoder.encode(a);
  const Matrix eb = encoder.encode(b);
  const std::size_t d = ea.cols;

  Matrix sims(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ra = ea.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double* rb = eb.row(j).data();
      double s = 0.0;
      for (std::size_t kx = 0; kx < d; ++kx) s += ra[kx] * rb[kx];
      sims.at(i, j) = s;
    }
  }

  TranslationValidation out;
  double true_sum = 0.0, off_sum = 0.0;
  std::size_t hits_ab = 0, hits_ba = 0;
  for (std::size_t i = 0; i < n; ++i) {
    true_sum += sims.at(i, i);
    std::size_t best_j = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (sims.at(i, j) > sims.at(i, best_j)) best_j = j;
    }
    if (best_j == i) ++hits_ab;
    std::size_t best_i = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (sims.at(j, i) > sims.at(best_i, i)) best_i = j;
    }
    if (best_i == i) ++hits_ba;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) off_sum += sims.at(i, j);
    }
  }
  out.mean_cos_true = true_sum / static_cast<double>(n);
  out.mean_cos_random =
      n > 1 ? off_sum / static_cast<double>(n * n - n) : 0.0;
  out.retrieval_acc_ab = static_cast<double>(hits_ab) / static_cast<double>(n);
  out.retrieval_acc_ba = static_cast<double>(hits_ba) / static_cast<double>(n);
  return out;
}

double validate_pearson(const SentenceEncoder& encoder, const LabeledPairings& pairings) {
  if (pairings.n_pos == 0 || pairings.n_neg == 0) {
    throw std::invalid_argument("validate_pearson: pairings must contain both labels");
  }
  std::vector<std::string> a, b;
  std::vector<double> labels;
  a.reserve(pairings.items.size());
  b.reserve(pairings.items.size());
  labels.reserve(pairings.items.size());
  for (const LabeledPairing& p : pairings.items) {
    a.push_back(p.a);
    b.push_back(p.b);
    labels.push_back(p.label);
  }
  const Matrix ea = encoder.encode(a);
  const Matrix eb = encoder.encode(b);
  std::vector<double> predicted(pairings.items.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    predicted[i] = cosine_similarity(ea.row(i), eb.row(i));
  }
  return pearson(predicted, labels);
}

// --- stage runner ---------------------------------------------------------------

namespace {

struct EvalOutcome {
  double primary = 0.0;
  bool defined = true;
};

EvalOutcome run_validation(const StageConfig& cfg, const SentenceEncoder& encoder,
                           const ValidationSpec& val, MetricTrace& trace, std::size_t batch,
                           double seconds) {
  EvalOutcome outcome;
  if (cfg.kind == PairKind::kTranslation) {
    const TranslationValidation tv = validate_translation(encoder, val.translation_pairs);
    trace.append(cfg.name, batch, "val_mean_cos_true", tv.mean_cos_true, seconds);
    trace.append(cfg.name, batch, "val_mean_cos_random", tv.mean_cos_random, seconds);
    trace.append(cfg.name, batch, "val_retrieval_acc_ab", tv.retrieval_acc_ab, seconds);
    trace.append(cfg.name, batch, "val_retrieval_acc_ba", tv.retrieval_acc_ba, seconds);
    const double mean_acc = 0.5 * (tv.retrieval_acc_ab + tv.retrieval_acc_ba);
    trace.append(cfg.name, batch, "val_retrieval_acc_mean", mean_acc, seconds);
    outcome.primary = mean_acc;
  } else {
    try {
      outcome.primary = validate_pearson(encoder, val.pairings);
    } catch (const std::domain_error&) {
      outcome.primary = kPearsonUndefined;
      outcome.defined = false;
    }
    trace.append(cfg.name, batch, "val_pearson_r", outcome.primary, seconds);
  }
  return outcome;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

StageSummary run_stage(EncoderParams& params, const StageConfig& cfg, const Vocab& vocab,
                       const PairDataset& train, const ValidationSpec& val,
                       const std::filesystem::path& out_dir, MetricTrace& trace) {
  cfg.validate();
  if (cfg.kind == PairKind::kTranslation && val.translation_pairs.empty()) {
    throw std::invalid_argument("run_stage: translation stage has no validation pairs");
  }
  std::filesystem::create_directories(out_dir);

  StageSummary summary;
  summary.name = cfg.name;
  summary.metric_name =
      cfg.kind == PairKind::kTranslation ? "val_retrieval_acc_mean" : "val_pearson_r";
  summary.best_checkpoint = out_dir / (cfg.name + "_best.ckpt");
  summary.final_checkpoint = out_dir / (cfg.name + "_final.ckpt");

  const auto start = std::chrono::steady_clock::now();
  const SentenceEncoder encoder(params, vocab);

  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  adam.warmup_steps = cfg.warmup_steps;
  AdamState opt(params.registry, adam);

  BatchIter batches(train, cfg.batch_size, cfg.n_batches, derive_seed(cfg.seed, "batches"));

  bool have_best = false;
  double best = 0.0;
  std::size_t best_batch = 0;
  double primary = kPearsonUndefined;

  const EvalOutcome initial = run_validation(cfg, encoder, val, trace, 0, seconds_since(start));
  if (initial.defined) {
    best = initial.primary;
    best_batch = 0;
    have_best = true;
    save_checkpoint(params, summary.best_checkpoint);
  }
  primary = initial.primary;

  for (std::size_t step = 1; step <= cfg.n_batches; ++step) {
    const auto batch = batches.next();
    if (!batch) {
      throw std::logic_error("run_stage: batch iterator exhausted early");
    }
    std::vector<std::string> side_a, side_b;
    side_a.reserve(batch->size());
    side_b.reserve(batch->size());
    for (const SentencePair& p : *batch) {
      side_a.push_back(p.a);
      side_b.push_back(p.b);
    }
    const TokenizedBatch tok_a = tokenize_batch(vocab, side_a, params.config.max_len);
    const TokenizedBatch tok_b = tokenize_batch(vocab, side_b, params.config.max_len);

    Graph g;
    EncoderGraph eg(g, params);
    Tensor u = eg.encode(tok_a);
    Tensor v = eg.encode(tok_b);
    Tensor loss = mnrl_loss(u, v, cfg.mnrl);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("run_stage: non-finite loss in " + cfg.name + " at batch " +
                               std::to_string(step) + "; last good checkpoint retained");
    }
    g.backward(loss);
    adamw_step(opt, params.registry, eg.gradients());
    summary.n_steps = step;

    trace.append(cfg.name, step, "loss", loss_value, seconds_since(start));

    if (step % cfg.eval_every == 0 || step == cfg.n_batches) {
      const EvalOutcome outcome =
          run_validation(cfg, encoder, val, trace, step, seconds_since(start));
      primary = outcome.primary;
      if (outcome.defined && (!have_best || outcome.primary > best)) {
        best = outcome.primary;
        best_batch = step;
        have_best = true;
        save_checkpoint(params, summary.best_checkpoint);
      }
    }
  }

  save_checkpoint(params, summary.final_checkpoint);
  summary.final_metric = primary;
  summary.best_metric = have_best ? best : kPearsonUndefined;
  summary.best_batch = best_batch;
  summary.wall_seconds = seconds_since(start);
  summary.batch_collisions = batches.collisions();
  if (!have_best) {
    // Never saw a defined validation value; the final state is the best state.
    std::filesystem::copy_file(summary.final_checkpoint, summary.best_checkpoint,
                               std::filesystem::copy_options::overwrite_existing);
  }
  return summary;
}

// --- regimen runner ------------------------------------------------------------

namespace {

nlohmann::json summary_to_json(const StageSummary& s) {
  if (s.skipped) return nlohmann::json{{"skipped", true}};
  return nlohmann::json{{"skipped", false},
                        {"n_steps", s.n_steps},
                        {"metric", s.metric_name},
                        {"final_metric", s.final_metric},
                        {"best_metric", s.best_metric},
                        {"best_batch", s.best_batch},
                        {"wall_seconds", s.wall_seconds},
                        {"batch_collisions", s.batch_collisions},
                        {"checkpoints",
                         {{"best", s.best_checkpoint.string()},
                          {"final", s.final_checkpoint.string()}}}};
}

std::vector<std::string> collect_sentences(const PairDataset& ds) {
  std::vector<std::string> out;
  out.reserve(ds.size() * 2);
  for (const SentencePair& p : ds.pairs) {
    out.push_back(p.a);
    out.push_back(p.b);
  }
  return out;
}

}  // namespace

RegimenResult run_regimen(const RegimenConfig& cfg) {
  RegimenDatasets data;
  data.stage1_data = load_pairs_tsv(cfg.stage1.dataset_path, PairKind::kTranslation);
  data.stage2_data = load_pairs_tsv(cfg.stage2.dataset_path, PairKind::kEntailment);
  if (!cfg.stage2.eval_dataset_path.empty()) {
    data.stage2_eval_source = load_pairs_tsv(cfg.stage2.eval_dataset_path, PairKind::kCaption);
  }
  return run_regimen(cfg, data);
}

RegimenResult run_regimen(const RegimenConfig& cfg, const RegimenDatasets& datasets) {
  RegimenConfig resolved = cfg;
  resolved.resolve_seeds();
  std::filesystem::create_directories(resolved.out_dir);

  // Vocabulary is built from both training corpora (or loaded), independent of
  // skip_stage1 so ablation runs see identical token ids.
  Vocab vocab = [&]() {
    if (!resolved.vocab_path.empty()) return Vocab::load(resolved.vocab_path);
    std::vector<std::string> corpus = collect_sentences(datasets.stage1_data);
    const std::vector<std::string> more = collect_sentences(datasets.stage2_data);
    corpus.insert(corpus.end(), more.begin(), more.end());
    return Vocab::build(corpus, resolved.vocab_min_freq);
  }();

  if (resolved.encoder.vocab_size == 0) {
    resolved.encoder.vocab_size = vocab.size();
  } else if (resolved.encoder.vocab_size != vocab.size()) {
    throw std::invalid_argument("run_regimen: config vocab_size " +
                                std::to_string(resolved.encoder.vocab_size) +
                                " != actual vocabulary size " + std::to_string(vocab.size()));
  }
  resolved.validate();
  resolved.encoder.validate();

  RegimenResult result;
  result.report_path = resolved.out_dir / "report.json";
  result.trace_path = resolved.out_dir / "trace.csv";
  result.vocab_path = resolved.out_dir / "vocab.txt";
  vocab.save(result.vocab_path);

  nlohmann::json report;
  report["config"] = to_json(resolved);
  report["vocab_size"] = vocab.size();

  MetricTrace trace;
  EncoderParams params = init_params(resolved.encoder);

  auto fail = [&](const std::string& what) {
    report["status"] = "failed";
    report["error"] = what;
    report["stages"] = {{"stage1", summary_to_json(result.stage1)},
                        {"stage2", summary_to_json(result.stage2)}};
    atomic_write_file(result.report_path, report.dump(2) + "\n");
    atomic_write_file(result.trace_path, trace.to_csv());
  };

  try {
    if (resolved.skip_stage1) {
      result.stage1.name = resolved.stage1.name;
      result.stage1.skipped = true;
    } else {
      auto [train, holdout] = split_validation(
          datasets.stage1_data, resolved.stage1.n_holdout,
          derive_seed(resolved.stage1.seed, "holdout"));
      ValidationSpec spec;
      spec.translation_pairs = std::move(holdout);
      result.stage1 =
          run_stage(params, resolved.stage1, vocab, train, spec, resolved.out_dir, trace);
    }

    {
      ValidationSpec spec;
      const PairDataset* train = &datasets.stage2_data;
      PairDataset train_local;
      if (!datasets.stage2_eval_source.empty()) {
        spec.pairings = make_eval_pairings(datasets.stage2_eval_source, resolved.stage2.n_eval_pos,
                                           resolved.stage2.n_eval_neg,
                                           derive_seed(resolved.stage2.seed, "eval-pairings"));
      } else {
        auto [tr, holdout] =
            split_validation(datasets.stage2_data, resolved.stage2.n_holdout,
                             derive_seed(resolved.stage2.seed, "holdout"));
        train_local = std::move(tr);
        train = &train_local;
        spec.pairings =
            make_eval_pairings(holdout, resolved.stage2.n_eval_pos, resolved.stage2.n_eval_neg,
                               derive_seed(resolved.stage2.seed, "eval-pairings"));
      }
      result.stage2 =
          run_stage(params, resolved.stage2, vocab, *train, spec, resolved.out_dir, trace);
    }
  } catch (const std::exception& e) {
    fail(e.what());
    throw;
  }

  report["status"] = "ok";
  report["stages"] = {{"stage1", summary_to_json(result.stage1)},
                      {"stage2", summary_to_json(result.stage2)}};
  result.report_json = report.dump(2) + "\n";
  atomic_write_file(result.report_path, result.report_json);
  atomic_write_file(result.trace_path, trace.to_csv());
  return result;
}

}  // namespace biembed
