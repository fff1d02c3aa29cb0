// Command-line front end: synthetic corpora, vocabulary building, two-stage
// training, evaluation, embedding export and PCA projection.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "biembed/data.hpp"
#include "biembed/encoder.hpp"
#include "biembed/evalkit.hpp"
#include "biembed/json_io.hpp"
#include "biembed/regimen.hpp"
#include "biembed/rng.hpp"
#include "biembed/textproc.hpp"
#include "biembed/util.hpp"

namespace {

using nlohmann::json;

// Config-level mistakes exit with code 1 and print the schema to stderr.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::string text;
  try {
    text = biembed::read_text_file(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError("cannot parse config " + path + ": " + e.what());
  }
}

// --set a.b.c=value, value parsed as JSON when possible, else kept as string.
void apply_overrides(json& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("--set expects key=value, got '" + kv + "'");
    }
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = key.find('.', start);
      const std::string part =
          dot == std::string::npos ? key.substr(start) : key.substr(start, dot - start);
      if (part.empty()) throw UsageError("--set key has an empty path segment: " + key);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

std::uint64_t pick_seed(const json& cfg, const std::optional<std::uint64_t>& flag_seed) {
  if (flag_seed) return *flag_seed;
  if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
  return 0;
}

std::filesystem::path pick_out(const json& cfg, const std::string& flag_out,
                               const char* subcommand) {
  if (!flag_out.empty()) return flag_out;
  if (cfg.contains("out")) return cfg.at("out").get<std::string>();
  throw UsageError(std::string(subcommand) + ": output directory required (--out or config)");
}

int cmd_synth(const json& merged, const std::optional<std::uint64_t>& seed,
              const std::string& out_flag) {
  json cfg = merged;
  cfg.erase("out");
  biembed::SynthConfig synth;
  try {
    synth = biembed::synth_config_from_json(cfg);
    synth.seed = pick_seed(merged, seed);
    synth.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("synth: ") + e.what());
  }
  const std::filesystem::path out = pick_out(merged, out_flag, "synth");
  std::filesystem::create_directories(out);

  const biembed::SynthCorpora corpora = biembed::synth_bilingual(synth);
  biembed::write_pairs_tsv(corpora.translation, out / "translation.tsv");
  biembed::write_pairs_tsv(corpora.entailment, out / "entailment.tsv");
  biembed::write_pairs_tsv(corpora.eval, out / "eval.tsv");
  json files = {"translation.tsv", "entailment.tsv", "eval.tsv"};
  if (!corpora.l1_entailment.empty()) {
    biembed::write_pairs_tsv(corpora.l1_entailment, out / "l1_entailment.tsv");
    files.push_back("l1_entailment.tsv");
  }

  const json manifest = {{"config", biembed::to_json(synth)},
                         {"seed", synth.seed},
                         {"counts",
                          {{"translation", corpora.translation.size()},
                           {"entailment", corpora.entailment.size()},
                           {"eval", corpora.eval.size()},
                           {"l1_entailment", corpora.l1_entailment.size()}}},
                         {"files", files}};
  biembed::atomic_write_file(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "synth: wrote " << corpora.translation.size() << " translation, "
            << corpora.entailment.size() << " entailment, " << corpora.eval.size()
            << " eval pairs to " << out.string() << "\n";
  return 0;
}

int cmd_build_vocab(const std::vector<std::string>& inputs, bool plain, std::size_t min_freq,
                    const std::string& out_flag) {
  if (inputs.empty()) throw UsageError("build-vocab: at least one --input file required");
  if (out_flag.empty()) throw UsageError("build-vocab: --out directory required");
  std::vector<std::string> corpus;
  for (const std::string& path : inputs) {
    if (plain) {
      for (std::string& line : biembed::split_lines(biembed::read_text_file(path))) {
        if (!line.empty()) corpus.push_back(std::move(line));
      }
    } else {
      const biembed::PairDataset ds =
          biembed::load_pairs_tsv(path, biembed::PairKind::kTranslation);
      for (const biembed::SentencePair& p : ds.pairs) {
        corpus.push_back(p.a);
        corpus.push_back(p.b);
      }
    }
  }
  const biembed::Vocab vocab = biembed::Vocab::build(corpus, min_freq);
  const std::filesystem::path out = out_flag;
  std::filesystem::create_directories(out);
  vocab.save(out / "vocab.txt");
  std::cout << "build-vocab: " << vocab.size() << " ids (including PAD/UNK) -> "
            << (out / "vocab.txt").string() << "\n";
  return 0;
}

int cmd_train(const json& merged, const std::optional<std::uint64_t>& seed,
              const std::string& out_flag) {
  biembed::RegimenConfig cfg;
  try {
    cfg = biembed::regimen_config_from_json(merged);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("train: ") + e.what());
  }
  cfg.seed = pick_seed(merged, seed);
  cfg.out_dir = pick_out(merged, out_flag, "train");
  if (cfg.stage1.dataset_path.empty() || cfg.stage2.dataset_path.empty()) {
    throw UsageError("train: stage1.data and stage2.data paths are required");
  }
  const biembed::RegimenResult result = biembed::run_regimen(cfg);
  std::cout << "train: report " << result.report_path.string() << "\n";
  if (!result.stage1.skipped) {
    std::cout << "  stage1 " << result.stage1.metric_name << " final "
              << result.stage1.final_metric << " best " << result.stage1.best_metric << "\n";
  } else {
    std::cout << "  stage1 skipped\n";
  }
  std::cout << "  stage2 " << result.stage2.metric_name << " final "
            << result.stage2.final_metric << " best " << result.stage2.best_metric << "\n";
  return 0;
}

int cmd_eval(const json& merged, const std::optional<std::uint64_t>& seed,
             const std::string& out_flag) {
  for (const char* key : {"checkpoint", "vocab", "pairs"}) {
    if (!merged.contains(key)) {
      throw UsageError(std::string("eval: config key '") + key + "' is required");
    }
  }
  for (auto it = merged.begin(); it != merged.end(); ++it) {
    static const std::set<std::string> allowed = {"checkpoint", "vocab", "pairs", "n_pos",
                                                  "n_neg",      "seed",  "out",   "pooling"};
    if (!allowed.count(it.key())) throw UsageError("eval: unknown config key '" + it.key() + "'");
  }
  const std::filesystem::path out = pick_out(merged, out_flag, "eval");
  std::filesystem::create_directories(out);
  const std::uint64_t root_seed = pick_seed(merged, seed);

  biembed::EncoderParams params =
      biembed::load_checkpoint(merged.at("checkpoint").get<std::string>());
  if (merged.contains("pooling")) {
    params.config.pooling =
        biembed::pooling_source_from_name(merged.at("pooling").get<std::string>());
  }
  const biembed::Vocab vocab = biembed::Vocab::load(merged.at("vocab").get<std::string>());
  const biembed::SentenceEncoder encoder(params, vocab);

  const biembed::PairDataset pairs = biembed::load_pairs_tsv(
      merged.at("pairs").get<std::string>(), biembed::PairKind::kCaption);
  const std::size_t n_pos = merged.value("n_pos", std::size_t{1000});
  const std::size_t n_neg = merged.value("n_neg", std::size_t{1000});
  const biembed::LabeledPairings pairings = biembed::make_eval_pairings(
      pairs, n_pos, n_neg, biembed::derive_seed(root_seed, "eval-pairings"));

  biembed::PairDataset same, random;
  same.kind = random.kind = biembed::PairKind::kCaption;
  for (const biembed::LabeledPairing& p : pairings.items) {
    (p.label == 1.0 ? same : random).pairs.push_back(biembed::SentencePair{p.a, p.b});
  }
  const biembed::SimilarityReport report = biembed::similarity_report(encoder, same, random);
  const double r = biembed::validate_pearson(encoder, pairings);

  json out_json = json::parse(report.to_json_string());
  out_json["pearson_r"] = r;
  out_json["seed"] = root_seed;
  out_json["checkpoint"] = merged.at("checkpoint").get<std::string>();
  biembed::atomic_write_file(out / "eval_report.json", out_json.dump(2) + "\n");
  std::cout << "eval: mean_same " << report.mean_same << " mean_random " << report.mean_random
            << " margin " << report.margin << " pearson_r " << r << "\n";
  return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& vocab_path,
              const std::string& input, const std::string& out_flag,
              const std::string& pooling) {
  if (checkpoint.empty() || vocab_path.empty() || input.empty() || out_flag.empty()) {
    throw UsageError("embed: --checkpoint, --vocab, --input and --out are required");
  }
  biembed::EncoderParams params = biembed::load_checkpoint(checkpoint);
  if (!pooling.empty()) params.config.pooling = biembed::pooling_source_from_name(pooling);
  const biembed::Vocab vocab = biembed::Vocab::load(vocab_path);
  const biembed::SentenceEncoder encoder(params, vocab);
  const std::filesystem::path out = out_flag;
  std::filesystem::create_directories(out);
  const biembed::EmbedFileResult result =
      biembed::embed_file(encoder, input, out / "embeddings.csv");
  std::cout << "embed: wrote " << result.written << " rows";
  if (result.skipped_empty) std::cout << " (skipped " << result.skipped_empty << " empty lines)";
  std::cout << " -> " << (out / "embeddings.csv").string() << "\n";
  return 0;
}

int cmd_pca(const std::string& input, std::size_t components,
            const std::optional<std::uint64_t>& seed, const std::string& out_flag) {
  if (input.empty() || out_flag.empty()) {
    throw UsageError("pca: --input and --out are required");
  }
  const biembed::Matrix m = biembed::read_embedding_csv(input);
  const biembed::PcaResult result =
      biembed::pca_project(m, components, seed.value_or(0));
  const std::filesystem::path out = out_flag;
  std::filesystem::create_directories(out);
  biembed::atomic_write_file(out / "pca.json", result.to_json_string() + "\n");
  biembed::atomic_write_file(out / "pca_coords.csv", result.coordinates_csv());
  std::cout << "pca: " << m.rows << " points from d=" << m.cols << " to " << components
            << ", explained variance";
  for (double v : result.explained_variance_ratio) std::cout << " " << v;
  std::cout << "\n";
  return 0;
}

const char* kSchemaHelp = R"(config schemas (JSON):
  synth:  {vocab_a, vocab_b, len_min, len_max, n_translation, n_entailment,
           n_eval, edit_rate, seed}
  train:  {preset: "desk"|"paper", seed, out,
           encoder: {d_model, n_layers, n_heads, d_ff, max_len, pooling},
           vocab_path, vocab_min_freq,
           stage1: {data, batch_size, n_batches, lr, weight_decay,
                    mnrl: {scale, symmetric}, eval_every, n_holdout, warmup_steps},
           stage2: {data, eval_data, ..., n_eval_pos, n_eval_neg},
           skip_stage1}
  eval:   {checkpoint, vocab, pairs, n_pos, n_neg, pooling, seed, out}
overrides: repeated --set dotted.key=value, applied after the config file.
)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage contrastive sentence-embedding trainer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, pooling;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets, inputs;
  std::string checkpoint, vocab_path, input;
  std::size_t min_freq = 1, components = 2;
  bool plain = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "global seed (all randomness derives from it)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--set", sets, "override config key (dotted.path=value)");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic bilingual corpora");
  add_common(synth);

  CLI::App* build_vocab = app.add_subcommand("build-vocab", "build a vocabulary file");
  build_vocab->add_option("--input", inputs, "pair TSV input (repeatable)");
  build_vocab->add_flag("--plain", plain, "inputs are one sentence per line");
  build_vocab->add_option("--min-freq", min_freq, "minimum token frequency");
  build_vocab->add_option("--out", out_dir, "output directory");

  CLI::App* train = app.add_subcommand("train", "run the two-stage training regimen");
  add_common(train);

  CLI::App* eval = app.add_subcommand("eval", "similarity report and Pearson r");
  add_common(eval);

  CLI::App* embed = app.add_subcommand("embed", "embed a sentence file to CSV");
  embed->add_option("--checkpoint", checkpoint, "checkpoint file");
  embed->add_option("--vocab", vocab_path, "vocabulary file");
  embed->add_option("--input", input, "one sentence per line");
  embed->add_option("--out", out_dir, "output directory");
  embed->add_option("--pooling", pooling, "auto|embeddings|layer_output");

  CLI::App* pca = app.add_subcommand("pca", "project an embedding CSV to k components");
  pca->add_option("--input", input, "embedding CSV (from embed)");
  pca->add_option("--components", components, "number of components");
  pca->add_option("--seed", seed, "seed for the power-iteration start vectors");
  pca->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    json merged = load_config(config_path);
    apply_overrides(merged, sets);
    if (synth->parsed()) return cmd_synth(merged, seed, out_dir);
    if (build_vocab->parsed()) return cmd_build_vocab(inputs, plain, min_freq, out_dir);
    if (train->parsed()) return cmd_train(merged, seed, out_dir);
    if (eval->parsed()) return cmd_eval(merged, seed, out_dir);
    if (embed->parsed()) return cmd_embed(checkpoint, vocab_path, input, out_dir, pooling);
    if (pca->parsed()) return cmd_pca(input, components, seed, out_dir);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << kSchemaHelp;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
