#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "biembed/json_io.hpp"
#include "biembed/regimen.hpp"
#include "biembed/rng.hpp"
#include "biembed/util.hpp"

using namespace biembed;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "biembed_regimen_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Toy deterministic encoder over two orthogonal tokens (no layers).
struct ToyWorld {
  Vocab vocab = Vocab::build({"xx yy"}, 1);
  EncoderParams params;
  ToyWorld() {
    EncoderConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = 4;
    cfg.n_layers = 0;
    cfg.n_heads = 1;
    cfg.d_ff = 4;
    cfg.max_len = 8;
    params = init_params(cfg);
    auto& table = params.registry.at("embedding").values;
    std::fill(table.begin(), table.end(), 0.0);
    table[2 * 4 + 0] = 1.0;
    table[3 * 4 + 1] = 1.0;
  }
};

// Small synthetic world shared by the run_stage/run_regimen tests.
SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.vocab_a = 30;
  cfg.vocab_b = 30;
  cfg.len_min = 3;
  cfg.len_max = 5;
  cfg.n_translation = 120;
  cfg.n_entailment = 40;
  cfg.n_eval = 60;
  cfg.edit_rate = 0.3;
  cfg.seed = seed;
  return cfg;
}

RegimenConfig small_regimen(const std::filesystem::path& out) {
  RegimenConfig cfg = desk_preset();
  cfg.encoder.d_model = 16;
  cfg.encoder.n_layers = 1;
  cfg.encoder.n_heads = 2;
  cfg.encoder.d_ff = 32;
  cfg.encoder.max_len = 8;
  cfg.stage1.n_batches = 12;
  cfg.stage1.batch_size = 8;
  cfg.stage1.eval_every = 6;
  cfg.stage1.n_holdout = 16;
  cfg.stage2.n_batches = 8;
  cfg.stage2.batch_size = 4;
  cfg.stage2.eval_every = 4;
  cfg.stage2.n_eval_pos = 30;
  cfg.stage2.n_eval_neg = 30;
  cfg.out_dir = out;
  cfg.seed = 99;
  return cfg;
}

std::string strip_seconds_column(const std::string& csv) {
  std::string out;
  for (const std::string& line : split_lines(csv)) {
    const std::size_t last_comma = line.rfind(',');
    out += line.substr(0, last_comma);
    out += '\n';
  }
  return out;
}

nlohmann::json report_without_timing(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  for (auto& [name, stage] : j.at("stages").items()) {
    (void)name;
    if (stage.contains("wall_seconds")) stage["wall_seconds"] = 0.0;
  }
  return j;
}

}  // namespace

TEST_CASE("paper preset mirrors the published hyperparameters exactly") {
  const RegimenConfig cfg = paper_preset();
  CHECK(cfg.stage1.batch_size == 32);
  CHECK(cfg.stage1.n_batches == 120000);
  CHECK(cfg.stage1.lr == 1e-5);
  CHECK(cfg.stage1.weight_decay == 0.005);
  CHECK(cfg.stage1.n_holdout == 2048);
  CHECK(cfg.stage2.batch_size == 16);
  CHECK(cfg.stage2.n_batches == 16000);
  CHECK(cfg.stage2.lr == 1e-4);
  CHECK(cfg.stage2.weight_decay == 0.005);
  CHECK(cfg.stage2.n_eval_pos == 1000);
  CHECK(cfg.stage2.n_eval_neg == 1000);
  CHECK(cfg.encoder.d_model == 512);

  // The JSON echo carries the same numbers (config echo path).
  const nlohmann::json echo = to_json(cfg);
  CHECK(echo["stage1"]["batch_size"] == 32);
  CHECK(echo["stage1"]["n_batches"] == 120000);
  CHECK(echo["stage1"]["lr"] == 1e-5);
  CHECK(echo["stage2"]["n_batches"] == 16000);
  CHECK(echo["stage2"]["lr"] == 1e-4);

  // Round trip through the strict parser.
  const RegimenConfig parsed = regimen_config_from_json(nlohmann::json{{"preset", "paper"}});
  CHECK(parsed.stage1.n_batches == 120000);
  CHECK(parsed.stage2.batch_size == 16);
}

TEST_CASE("regimen config parser rejects unknown keys") {
  CHECK_THROWS_WITH_AS(regimen_config_from_json(nlohmann::json{{"stage_3", 1}}),
                       doctest::Contains("unknown key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      regimen_config_from_json(nlohmann::json{{"stage1", {{"batchsize", 8}}}}),
      doctest::Contains("unknown key"), std::invalid_argument);
}

TEST_CASE("metric trace enforces increasing batches and finite values") {
  MetricTrace trace;
  trace.append("stage1", 0, "loss", 1.0, 0.0);
  trace.append("stage1", 1, "loss", 0.9, 0.1);
  trace.append("stage1", 1, "val", 0.5, 0.1);  // different series, same batch is fine
  CHECK_THROWS_AS(trace.append("stage1", 1, "loss", 0.8, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(trace.append("stage1", 2, "loss", std::nan(""), 0.2), std::invalid_argument);
  const std::string csv = trace.to_csv();
  CHECK(split_lines(csv)[0] == "stage,batch,metric,value,seconds");
  CHECK(split_lines(csv).size() == 4);
}

TEST_CASE("validate_translation on duplicated text gives perfect scores") {
  const ToyWorld toy;
  const SentenceEncoder enc(toy.params, toy.vocab);
  PairDataset val;
  val.kind = PairKind::kTranslation;
  val.pairs = {{"xx", "xx"}, {"yy", "yy"}, {"xx yy", "xx yy"}};
  const TranslationValidation tv = validate_translation(enc, val);
  CHECK(tv.mean_cos_true == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tv.retrieval_acc_ab == 1.0);
  CHECK(tv.retrieval_acc_ba == 1.0);
  CHECK(tv.mean_cos_random < 1.0);
}

TEST_CASE("validate_translation at random init sits near chance level") {
  const SynthCorpora corpora = synth_bilingual(small_synth(4));
  std::vector<std::string> corpus;
  for (const auto& p : corpora.translation.pairs) {
    corpus.push_back(p.a);
    corpus.push_back(p.b);
  }
  const Vocab vocab = Vocab::build(corpus, 1);
  EncoderConfig cfg = EncoderConfig::desk(vocab.size(), 11);
  cfg.d_model = 32;
  cfg.n_layers = 1;
  cfg.d_ff = 64;
  const EncoderParams params = init_params(cfg);
  const SentenceEncoder enc(params, vocab);

  PairDataset val;
  val.kind = PairKind::kTranslation;
  val.pairs.assign(corpora.translation.pairs.begin(), corpora.translation.pairs.begin() + 64);
  const TranslationValidation tv = validate_translation(enc, val);
  // chance is 1/64; an untrained encoder must stay well under 0.2
  CHECK(tv.retrieval_acc_ab < 0.2);
  CHECK(tv.retrieval_acc_ba < 0.2);
}

TEST_CASE("validate_pearson closed forms and the zero-variance error") {
  const ToyWorld toy;
  const SentenceEncoder enc(toy.params, toy.vocab);

  LabeledPairings aligned;
  aligned.n_pos = 2;
  aligned.n_neg = 2;
  aligned.items = {{"xx", "xx", 1.0}, {"yy", "yy", 1.0}, {"xx", "yy", 0.0}, {"yy", "xx", 0.0}};
  CHECK(validate_pearson(enc, aligned) == 1.0);  // predictions equal labels exactly

  LabeledPairings inverted;
  inverted.n_pos = 2;
  inverted.n_neg = 2;
  inverted.items = {{"xx", "yy", 1.0}, {"yy", "xx", 1.0}, {"xx", "xx", 0.0}, {"yy", "yy", 0.0}};
  CHECK(validate_pearson(enc, inverted) == doctest::Approx(-1.0).epsilon(1e-15));

  LabeledPairings flat;  // all predictions identical -> zero variance
  flat.n_pos = 1;
  flat.n_neg = 1;
  flat.items = {{"xx", "xx", 1.0}, {"yy", "yy", 0.0}};
  CHECK_THROWS_AS(validate_pearson(enc, flat), std::domain_error);

  LabeledPairings one_sided;
  one_sided.n_pos = 2;
  one_sided.n_neg = 0;
  one_sided.items = {{"xx", "xx", 1.0}, {"yy", "yy", 1.0}};
  CHECK_THROWS_AS(validate_pearson(enc, one_sided), std::invalid_argument);
}

TEST_CASE("pearson of label-independent noise stays near zero") {
  SplitMix64 rng(2024);
  std::vector<double> labels(2000), preds(2000);
  for (std::size_t i = 0; i < 2000; ++i) {
    labels[i] = i < 1000 ? 1.0 : 0.0;
    preds[i] = 0.5 + 0.01 * rng.next_uniform(-1.0, 1.0);
  }
  CHECK(std::fabs(pearson(preds, labels)) < 0.1);
}

TEST_CASE("run_stage emits one step and one loss entry for n_batches=1") {
  const auto dir = fresh_dir("one_batch");
  const SynthCorpora corpora = synth_bilingual(small_synth(5));
  std::vector<std::string> corpus;
  for (const auto& p : corpora.translation.pairs) {
    corpus.push_back(p.a);
    corpus.push_back(p.b);
  }
  const Vocab vocab = Vocab::build(corpus, 1);
  EncoderConfig ecfg = EncoderConfig::desk(vocab.size(), 3);
  ecfg.d_model = 16;
  ecfg.n_layers = 1;
  ecfg.n_heads = 2;
  ecfg.d_ff = 32;
  ecfg.max_len = 8;
  EncoderParams params = init_params(ecfg);

  StageConfig cfg;
  cfg.name = "stage1";
  cfg.kind = PairKind::kTranslation;
  cfg.batch_size = 2;
  cfg.n_batches = 1;
  cfg.lr = 1e-3;
  cfg.eval_every = 1;
  cfg.n_holdout = 4;
  cfg.seed = 8;

  PairDataset train;
  train.kind = PairKind::kTranslation;
  train.pairs.assign(corpora.translation.pairs.begin(), corpora.translation.pairs.begin() + 2);
  ValidationSpec spec;
  spec.translation_pairs.kind = PairKind::kTranslation;
  spec.translation_pairs.pairs.assign(corpora.translation.pairs.begin() + 2,
                                      corpora.translation.pairs.begin() + 6);

  MetricTrace trace;
  const StageSummary summary = run_stage(params, cfg, vocab, train, spec, dir, trace);
  CHECK(summary.n_steps == 1);
  std::size_t loss_entries = 0;
  for (const auto& e : trace.entries()) {
    if (e.metric == "loss") ++loss_entries;
  }
  CHECK(loss_entries == 1);
  CHECK(std::filesystem::exists(summary.best_checkpoint));
  CHECK(std::filesystem::exists(summary.final_checkpoint));
}

TEST_CASE("run_stage with lr=0 and wd=0 leaves parameters unchanged") {
  const auto dir = fresh_dir("lr_zero");
  const SynthCorpora corpora = synth_bilingual(small_synth(6));
  std::vector<std::string> corpus;
  for (const auto& p : corpora.translation.pairs) {
    corpus.push_back(p.a);
    corpus.push_back(p.b);
  }
  const Vocab vocab = Vocab::build(corpus, 1);
  EncoderConfig ecfg = EncoderConfig::desk(vocab.size(), 3);
  ecfg.d_model = 16;
  ecfg.n_layers = 1;
  ecfg.n_heads = 2;
  ecfg.d_ff = 32;
  ecfg.max_len = 8;
  EncoderParams params = init_params(ecfg);
  const EncoderParams before = params;

  StageConfig cfg;
  cfg.name = "stage1";
  cfg.kind = PairKind::kTranslation;
  cfg.batch_size = 4;
  cfg.n_batches = 3;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.0;
  cfg.eval_every = 2;
  cfg.n_holdout = 4;
  cfg.seed = 8;

  PairDataset train;
  train.kind = PairKind::kTranslation;
  train.pairs.assign(corpora.translation.pairs.begin(), corpora.translation.pairs.begin() + 20);
  ValidationSpec spec;
  spec.translation_pairs.kind = PairKind::kTranslation;
  spec.translation_pairs.pairs.assign(corpora.translation.pairs.begin() + 20,
                                      corpora.translation.pairs.begin() + 28);

  MetricTrace trace;
  run_stage(params, cfg, vocab, train, spec, dir, trace);
  for (std::size_t i = 0; i < params.registry.size(); ++i) {
    CHECK(params.registry.items()[i].values == before.registry.items()[i].values);
  }
}

TEST_CASE("short training run improves translation validation over batch zero") {
  const auto dir = fresh_dir("improve");
  SynthConfig scfg = small_synth(7);
  scfg.n_translation = 400;
  const SynthCorpora corpora = synth_bilingual(scfg);
  std::vector<std::string> corpus;
  for (const auto& p : corpora.translation.pairs) {
    corpus.push_back(p.a);
    corpus.push_back(p.b);
  }
  const Vocab vocab = Vocab::build(corpus, 1);
  EncoderConfig ecfg;
  ecfg.vocab_size = vocab.size();
  ecfg.d_model = 32;
  ecfg.n_layers = 1;
  ecfg.n_heads = 4;
  ecfg.d_ff = 64;
  ecfg.max_len = 8;
  ecfg.seed = 21;
  EncoderParams params = init_params(ecfg);

  auto [train, holdout] = split_validation(corpora.translation, 32, 17);
  ValidationSpec spec;
  spec.translation_pairs = holdout;

  const SentenceEncoder enc(params, vocab);
  const TranslationValidation before = validate_translation(enc, holdout);

  StageConfig cfg;
  cfg.name = "stage1";
  cfg.kind = PairKind::kTranslation;
  cfg.batch_size = 32;
  cfg.n_batches = 200;
  cfg.lr = 1e-3;
  cfg.eval_every = 100;
  cfg.n_holdout = 32;
  cfg.seed = 13;

  MetricTrace trace;
  run_stage(params, cfg, vocab, train, spec, dir, trace);
  const TranslationValidation after = validate_translation(SentenceEncoder(params, vocab), holdout);
  // A freshly initialized pre-norm stack is anisotropic (everything is close
  // to everything), so the meaningful improvement is the true-vs-random
  // margin and retrieval, not the absolute true-pair cosine.
  CHECK(after.mean_cos_true - after.mean_cos_random >
        before.mean_cos_true - before.mean_cos_random);
  CHECK(after.retrieval_acc_ab > before.retrieval_acc_ab);
  CHECK(after.retrieval_acc_ba > before.retrieval_acc_ba);
}

TEST_CASE("best checkpoint reloads to parameters reproducing its recorded metric") {
  const auto dir = fresh_dir("best_reload");
  SynthConfig scfg = small_synth(8);
  scfg.n_translation = 300;
  const SynthCorpora corpora = synth_bilingual(scfg);
  std::vector<std::string> corpus;
  for (const auto& p : corpora.translation.pairs) {
    corpus.push_back(p.a);
    corpus.push_back(p.b);
  }
  const Vocab vocab = Vocab::build(corpus, 1);
  EncoderConfig ecfg;
  ecfg.vocab_size = vocab.size();
  ecfg.d_model = 16;
  ecfg.n_layers = 1;
  ecfg.n_heads = 2;
  ecfg.d_ff = 32;
  ecfg.max_len = 8;
  ecfg.seed = 5;
  EncoderParams params = init_params(ecfg);

  auto [train, holdout] = split_validation(corpora.translation, 24, 3);
  ValidationSpec spec;
  spec.translation_pairs = holdout;

  StageConfig cfg;
  cfg.name = "stage1";
  cfg.kind = PairKind::kTranslation;
  cfg.batch_size = 16;
  cfg.n_batches = 60;
  cfg.lr = 1e-3;
  cfg.eval_every = 20;
  cfg.n_holdout = 24;
  cfg.seed = 31;

  MetricTrace trace;
  const StageSummary summary = run_stage(params, cfg, vocab, train, spec, dir, trace);

  const EncoderParams best = load_checkpoint(summary.best_checkpoint);
  const TranslationValidation tv = validate_translation(SentenceEncoder(best, vocab), holdout);
  const double recomputed = 0.5 * (tv.retrieval_acc_ab + tv.retrieval_acc_ba);
  CHECK(recomputed == doctest::Approx(summary.best_metric).epsilon(1e-9));
}

TEST_CASE("run_regimen end to end: artifacts, skip_stage1 semantics, determinism") {
  const SynthCorpora corpora = synth_bilingual(small_synth(9));
  RegimenDatasets data;
  data.stage1_data = corpora.translation;
  data.stage2_data = corpora.entailment;
  data.stage2_eval_source = corpora.eval;

  const auto dir_a = fresh_dir("full_a");
  RegimenConfig cfg = small_regimen(dir_a);
  const RegimenResult first = run_regimen(cfg, data);
  CHECK(std::filesystem::exists(first.report_path));
  CHECK(std::filesystem::exists(first.trace_path));
  CHECK(std::filesystem::exists(first.stage1.best_checkpoint));
  CHECK(std::filesystem::exists(first.stage2.final_checkpoint));

  const nlohmann::json report = nlohmann::json::parse(read_text_file(first.report_path));
  CHECK(report.at("status") == "ok");
  CHECK(report.at("stages").at("stage1").at("skipped") == false);
  CHECK(report.at("stages").at("stage2").at("n_steps") == 8);
  CHECK(report.at("config").at("seed") == 99);

  // Identical rerun is bitwise identical up to wall-clock fields.
  const auto dir_b = fresh_dir("full_b");
  RegimenConfig cfg_b = small_regimen(dir_b);
  const RegimenResult second = run_regimen(cfg_b, data);
  CHECK(read_binary_file(first.stage2.final_checkpoint) ==
        read_binary_file(second.stage2.final_checkpoint));
  CHECK(read_binary_file(first.stage1.best_checkpoint) ==
        read_binary_file(second.stage1.best_checkpoint));
  CHECK(strip_seconds_column(read_text_file(first.trace_path)) ==
        strip_seconds_column(read_text_file(second.trace_path)));
  nlohmann::json ra = report_without_timing(first.report_path);
  nlohmann::json rb = report_without_timing(second.report_path);
  ra["config"].erase("out");
  rb["config"].erase("out");
  ra["stages"]["stage1"].erase("checkpoints");
  rb["stages"]["stage1"].erase("checkpoints");
  ra["stages"]["stage2"].erase("checkpoints");
  rb["stages"]["stage2"].erase("checkpoints");
  CHECK(ra == rb);

  // skip_stage1: stage 2 starts from the freshly initialized parameters.
  const auto dir_c = fresh_dir("skip");
  RegimenConfig cfg_c = small_regimen(dir_c);
  cfg_c.skip_stage1 = true;
  const RegimenResult skipped = run_regimen(cfg_c, data);
  const nlohmann::json skip_report = nlohmann::json::parse(read_text_file(skipped.report_path));
  CHECK(skip_report.at("stages").at("stage1").at("skipped") == true);
  CHECK(skipped.stage1.skipped);

  // Stage-2 schedule is identical with and without stage 1 (same seeds):
  // the same batch indices and metric names appear in the stage2 trace rows.
  auto stage2_schedule = [](const std::filesystem::path& trace_path) {
    std::vector<std::string> rows;
    for (const std::string& line : split_lines(read_text_file(trace_path))) {
      if (line.rfind("stage2,", 0) == 0) {
        const std::size_t second_comma = line.find(',', line.find(',') + 1);
        const std::size_t third_comma = line.find(',', second_comma + 1);
        rows.push_back(line.substr(0, third_comma));  // stage,batch,metric
      }
    }
    return rows;
  };
  CHECK(stage2_schedule(first.trace_path) == stage2_schedule(skipped.trace_path));

  // Resolved stage-2 initial params equal init_params output under skip.
  RegimenConfig resolved = cfg_c;
  resolved.resolve_seeds();
  // (vocab is rebuilt identically; the stage-2 *best at batch 0* checkpoint is
  // the init when no training has happened yet, so compare against init.)
  CHECK(resolved.encoder.seed == derive_seed(cfg_c.seed, "encoder-init"));
}

TEST_CASE("run_regimen writes a failure marker when a stage aborts") {
  const SynthCorpora corpora = synth_bilingual(small_synth(10));
  RegimenDatasets data;
  data.stage1_data = corpora.translation;
  data.stage2_data = corpora.entailment;
  data.stage2_eval_source = corpora.eval;

  const auto dir = fresh_dir("failure");
  RegimenConfig cfg = small_regimen(dir);
  cfg.stage2.n_eval_pos = 5000;  // more positives than the eval source has
  CHECK_THROWS(run_regimen(cfg, data));
  const nlohmann::json report = nlohmann::json::parse(read_text_file(dir / "report.json"));
  CHECK(report.at("status") == "failed");
  CHECK(report.contains("error"));
}

TEST_CASE("non-finite loss aborts the stage and keeps the last good checkpoint") {
  const auto dir = fresh_dir("nan_abort");
  // "poison" appears only in the training pairs, so the batch-0 validation is
  // finite and the abort comes from the training loss.
  const Vocab vocab = Vocab::build({"aa bb cc dd poison"}, 1);
  EncoderConfig ecfg;
  ecfg.vocab_size = vocab.size();
  ecfg.d_model = 16;
  ecfg.n_layers = 0;
  ecfg.n_heads = 2;
  ecfg.d_ff = 32;
  ecfg.max_len = 8;
  ecfg.seed = 3;
  EncoderParams params = init_params(ecfg);
  const std::size_t bad = vocab.id_of("poison");
  for (std::size_t c = 0; c < 16; ++c) {
    params.registry.at("embedding").values[bad * 16 + c] =
        std::numeric_limits<double>::quiet_NaN();
  }

  StageConfig cfg;
  cfg.name = "stage1";
  cfg.kind = PairKind::kTranslation;
  cfg.batch_size = 2;
  cfg.n_batches = 5;
  cfg.lr = 1e-3;
  cfg.eval_every = 5;
  cfg.n_holdout = 2;
  cfg.seed = 8;

  PairDataset train;
  train.kind = PairKind::kTranslation;
  train.pairs = {{"aa poison", "bb"}, {"bb poison", "cc"}, {"cc poison", "dd"}};
  ValidationSpec spec;
  spec.translation_pairs.kind = PairKind::kTranslation;
  spec.translation_pairs.pairs = {{"aa", "bb"}, {"cc", "dd"}};

  MetricTrace trace;
  CHECK_THROWS_WITH_AS(run_stage(params, cfg, vocab, train, spec, dir, trace),
                       doctest::Contains("non-finite"), std::runtime_error);
  // The batch-0 best checkpoint survives the abort.
  CHECK(std::filesystem::exists(dir / "stage1_best.ckpt"));
  CHECK_FALSE(std::filesystem::exists(dir / "stage1_final.ckpt"));
  const EncoderParams retained = load_checkpoint(dir / "stage1_best.ckpt");
  CHECK(retained.config.d_model == 16);
}
