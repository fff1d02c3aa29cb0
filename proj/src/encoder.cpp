#include "biembed/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "biembed/json_io.hpp"
#include "biembed/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as little-endian float64");

namespace biembed {

// --- config ------------------------------------------------------------------

std::string_view pooling_source_name(PoolingSource s) {
  switch (s) {
    case PoolingSource::kAuto: return "auto";
    case PoolingSource::kEmbeddings: return "embeddings";
    case PoolingSource::kLayerOutput: return "layer_output";
  }
  throw std::logic_error("pooling_source_name: unknown value");
}

PoolingSource pooling_source_from_name(std::string_view name) {
  if (name == "auto") return PoolingSource::kAuto;
  if (name == "embeddings") return PoolingSource::kEmbeddings;
  if (name == "layer_output") return PoolingSource::kLayerOutput;
  throw std::invalid_argument("unknown pooling source: " + std::string(name));
}

EncoderConfig EncoderConfig::desk(std::size_t vocab_size, std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.max_len = 64;
  cfg.seed = seed;
  return cfg;
}

void EncoderConfig::validate() const {
  if (vocab_size < 2) {
    throw std::invalid_argument("EncoderConfig: vocab_size must be at least 2 (PAD and UNK)");
  }
  if (d_model == 0 || d_ff == 0 || max_len == 0) {
    throw std::invalid_argument("EncoderConfig: dimensions must be positive");
  }
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("EncoderConfig: n_heads must divide d_model (" +
                                std::to_string(d_model) + " % " + std::to_string(n_heads) +
                                " != 0)");
  }
}

PoolingSource EncoderConfig::resolved_pooling() const {
  if (pooling != PoolingSource::kAuto) return pooling;
  return n_layers > 0 ? PoolingSource::kLayerOutput : PoolingSource::kEmbeddings;
}

nlohmann::json to_json(const EncoderConfig& cfg) {
  return nlohmann::json{
      {"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
      {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
      {"d_ff", cfg.d_ff},             {"max_len", cfg.max_len},
      {"seed", cfg.seed},             {"pooling", pooling_source_name(cfg.pooling)},
  };
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.n_layers = j.at("n_layers").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.d_ff = j.at("d_ff").get<std::size_t>();
  cfg.max_len = j.at("max_len").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.pooling = pooling_source_from_name(j.at("pooling").get<std::string>());
  return cfg;
}

// --- registry ------------------------------------------------------------------

NamedTensor& ParamRegistry::add(std::string name, Shape shape) {
  if (index_.count(name)) {
    throw std::invalid_argument("ParamRegistry::add: duplicate name " + name);
  }
  index_.emplace(name, items_.size());
  items_.push_back(NamedTensor{std::move(name), shape,
                               std::vector<double>(shape_numel(shape), 0.0)});
  return items_.back();
}

NamedTensor& ParamRegistry::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("ParamRegistry::at: unknown name " + std::string(name));
  }
  return items_[it->second];
}

const NamedTensor& ParamRegistry::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("ParamRegistry::at: unknown name " + std::string(name));
  }
  return items_[it->second];
}

bool ParamRegistry::contains(std::string_view name) const { return index_.count(name) > 0; }

std::size_t ParamRegistry::total_values() const {
  std::size_t n = 0;
  for (const auto& t : items_) n += t.values.size();
  return n;
}

ParamRegistry make_registry(const EncoderConfig& cfg) {
  cfg.validate();
  ParamRegistry reg;
  reg.add("embedding", {cfg.vocab_size, cfg.d_model});
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    reg.add(p + "ln1.gain", {cfg.d_model});
    reg.add(p + "ln1.bias", {cfg.d_model});
    reg.add(p + "attn.wq", {cfg.d_model, cfg.d_model});
    reg.add(p + "attn.wk", {cfg.d_model, cfg.d_model});
    reg.add(p + "attn.wv", {cfg.d_model, cfg.d_model});
    reg.add(p + "attn.wo", {cfg.d_model, cfg.d_model});
    reg.add(p + "ln2.gain", {cfg.d_model});
    reg.add(p + "ln2.bias", {cfg.d_model});
    reg.add(p + "ffn.w1", {cfg.d_model, cfg.d_ff});
    reg.add(p + "ffn.b1", {cfg.d_ff});
    reg.add(p + "ffn.w2", {cfg.d_ff, cfg.d_model});
    reg.add(p + "ffn.b2", {cfg.d_model});
  }
  return reg;
}

EncoderParams init_params(const EncoderConfig& cfg) {
  EncoderParams params{cfg, make_registry(cfg)};
  SplitMix64 rng(cfg.seed);
  for (NamedTensor& t : params.registry.items()) {
    if (t.shape.size() == 2) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(t.shape[0] + t.shape[1]));
      for (double& v : t.values) v = rng.next_uniform(-limit, limit);
    } else if (t.name.ends_with(".gain")) {
      for (double& v : t.values) v = 1.0;
    }
    // biases stay zero
  }
  return params;
}

// --- forward -------------------------------------------------------------------

namespace {

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
std::vector<double> sinusoidal_positions(std::size_t time, std::size_t d_model) {
  std::vector<double> pe(time * d_model, 0.0);
  for (std::size_t pos = 0; pos < time; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double rate =
          std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * d_model + i] = std::sin(angle);
      if (i + 1 < d_model) pe[pos * d_model + i + 1] = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace

EncoderGraph::EncoderGraph(Graph& g, const EncoderParams& params)
    : graph_(&g), config_(params.config) {
  config_.validate();
  for (const NamedTensor& t : params.registry.items()) {
    index_.emplace(t.name, leaves_.size());
    leaves_.push_back(g.parameter(t.shape, t.values));
  }
}

EncoderGraph::EncoderGraph(Graph& g, const EncoderConfig& cfg, std::vector<Tensor> leaves)
    : graph_(&g), config_(cfg), leaves_(std::move(leaves)) {
  config_.validate();
  const ParamRegistry expected = make_registry(cfg);
  if (leaves_.size() != expected.size()) {
    throw std::invalid_argument("EncoderGraph: " + std::to_string(leaves_.size()) +
                                " leaves for a registry of " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const NamedTensor& t = expected.items()[i];
    if (leaves_[i].shape() != t.shape) {
      throw std::invalid_argument("EncoderGraph: leaf " + std::to_string(i) + " has shape " +
                                  shape_str(leaves_[i].shape()) + ", expected " +
                                  shape_str(t.shape) + " for " + t.name);
    }
    index_.emplace(t.name, i);
  }
}

const Tensor& EncoderGraph::leaf(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("EncoderGraph::leaf: unknown name " + std::string(name));
  }
  return leaves_[it->second];
}

std::map<std::string, std::vector<double>> EncoderGraph::gradients() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, idx] : index_) {
    auto g = graph_->grad_of(leaves_[idx]);
    out.emplace(name, std::vector<double>(g.begin(), g.end()));
  }
  return out;
}

Tensor EncoderGraph::encode(const TokenizedBatch& batch, PoolingSource source) {
  const EncoderConfig& cfg = config_;
  Graph& g = *graph_;
  const std::size_t B = batch.batch, T = batch.time, d = cfg.d_model;
  if (B == 0 || T == 0) throw std::invalid_argument("EncoderGraph::encode: empty batch");
  if (T > cfg.max_len) {
    throw std::invalid_argument("EncoderGraph::encode: batch time " + std::to_string(T) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
  }
  if (source == PoolingSource::kAuto) source = cfg.resolved_pooling();

  Tensor mask = g.constant({B, T}, batch.mask);
  Tensor emb = embedding_lookup(leaf("embedding"), batch.ids, B, T);

  if (source == PoolingSource::kEmbeddings) {
    // Pool the raw embedding table rows; the encoder stack is bypassed.
    return l2_normalize_rows(mean_pool_masked(emb, mask));
  }

  // Tile the positional encodings over the batch.
  const std::vector<double> pe = sinusoidal_positions(T, d);
  std::vector<double> pe_tile(B * T * d);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(pe.begin(), pe.end(), pe_tile.begin() + static_cast<std::ptrdiff_t>(b * T * d));
  }
  Tensor x = reshape(add(emb, g.constant({B, T, d}, std::move(pe_tile))), {B * T, d});

  const std::size_t n_heads = cfg.n_heads;
  const std::size_t dh = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // Additive attention bias per batch row: 0 on real keys, -1e9 on padding.
  std::vector<Tensor> key_bias(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> bias(T * T, 0.0);
    for (std::size_t q = 0; q < T; ++q) {
      for (std::size_t k = 0; k < T; ++k) {
        if (batch.mask[b * T + k] == 0.0) bias[q * T + k] = -1e9;
      }
    }
    key_bias[b] = g.constant({T, T}, std::move(bias));
  }

  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string p = "layer" + std::to_string(layer) + ".";
    Tensor h = layer_norm_rows(x, leaf(p + "ln1.gain"), leaf(p + "ln1.bias"));
    Tensor q = matmul(h, leaf(p + "attn.wq"));
    Tensor k = matmul(h, leaf(p + "attn.wk"));
    Tensor v = matmul(h, leaf(p + "attn.wv"));
    std::vector<Tensor> rows;
    rows.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
      Tensor qb = slice_rows(q, b * T, (b + 1) * T);
      Tensor kb = slice_rows(k, b * T, (b + 1) * T);
      Tensor vb = slice_rows(v, b * T, (b + 1) * T);
      std::vector<Tensor> heads;
      heads.reserve(n_heads);
      for (std::size_t hd = 0; hd < n_heads; ++hd) {
        Tensor qh = slice_cols(qb, hd * dh, (hd + 1) * dh);
        Tensor kh = slice_cols(kb, hd * dh, (hd + 1) * dh);
        Tensor vh = slice_cols(vb, hd * dh, (hd + 1) * dh);
        Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), key_bias[b]);
        heads.push_back(matmul(softmax_rows(scores), vh));
      }
      rows.push_back(concat_cols(heads));
    }
    Tensor ctx = concat_rows(rows);
    x = add(x, matmul(ctx, leaf(p + "attn.wo")));

    Tensor h2 = layer_norm_rows(x, leaf(p + "ln2.gain"), leaf(p + "ln2.bias"));
    Tensor f = add_row_bias(matmul(h2, leaf(p + "ffn.w1")), leaf(p + "ffn.b1"));
    f = add_row_bias(matmul(gelu(f), leaf(p + "ffn.w2")), leaf(p + "ffn.b2"));
    x = add(x, f);
  }

  return l2_normalize_rows(mean_pool_masked(reshape(x, {B, T, d}), mask));
}

Matrix encode_batch(const EncoderParams& params, const TokenizedBatch& batch,
                    PoolingSource source) {
  Graph g;
  EncoderGraph eg(g, params);
  Tensor out = eg.encode(batch, source);
  Matrix m(batch.batch, params.config.d_model);
  std::copy(out.values().begin(), out.values().end(), m.data.begin());
  return m;
}

Matrix SentenceEncoder::encode(const std::vector<std::string>& sentences,
                               std::size_t chunk) const {
  if (chunk == 0) throw std::invalid_argument("SentenceEncoder::encode: chunk must be positive");
  Matrix out(sentences.size(), params_->config.d_model);
  for (std::size_t start = 0; start < sentences.size(); start += chunk) {
    const std::size_t end = std::min(start + chunk, sentences.size());
    std::vector<std::string> part(sentences.begin() + static_cast<std::ptrdiff_t>(start),
                                  sentences.begin() + static_cast<std::ptrdiff_t>(end));
    TokenizedBatch batch = tokenize_batch(*vocab_, part, params_->config.max_len);
    Matrix enc = encode_batch(*params_, batch);
    std::copy(enc.data.begin(), enc.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(start * out.cols));
  }
  return out;
}

// --- checkpoints -----------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'B', 'T', 'N', '1'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& buf, std::size_t off) {
  return static_cast<std::uint32_t>(buf[off]) | (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 3]) << 24);
}

[[noreturn]] void integrity_error(const std::filesystem::path& path, const std::string& why) {
  throw std::runtime_error("checkpoint integrity error in " + path.string() + ": " + why);
}
}  // namespace

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path) {
  params.config.validate();
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  payload.reserve(params.registry.total_values() * sizeof(double));
  for (const NamedTensor& t : params.registry.items()) {
    manifest.push_back(nlohmann::json{
        {"name", t.name}, {"shape", t.shape}, {"offset", payload.size()}});
    const std::size_t bytes = t.values.size() * sizeof(double);
    const std::size_t off = payload.size();
    payload.resize(off + bytes);
    std::memcpy(payload.data() + off, t.values.data(), bytes);
  }
  const nlohmann::json header = {{"format_version", 1},
                                 {"config", to_json(params.config)},
                                 {"tensors", manifest}};
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> file;
  file.reserve(8 + header_text.size() + payload.size() + 4);
  file.insert(file.end(), kMagic, kMagic + 4);
  append_u32(file, static_cast<std::uint32_t>(header_text.size()));
  file.insert(file.end(), header_text.begin(), header_text.end());
  file.insert(file.end(), payload.begin(), payload.end());
  append_u32(file, crc32(payload));
  atomic_write_file(path, file);
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> buf = read_binary_file(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    integrity_error(path, "bad magic bytes");
  }
  const std::size_t header_len = read_u32(buf, 4);
  if (8 + header_len + 4 > buf.size()) integrity_error(path, "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + 8,
                                   buf.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    integrity_error(path, std::string("unparseable header: ") + e.what());
  }

  EncoderConfig cfg;
  try {
    cfg = encoder_config_from_json(header.at("config"));
    cfg.validate();
  } catch (const std::exception& e) {
    integrity_error(path, std::string("bad config: ") + e.what());
  }

  EncoderParams params{cfg, make_registry(cfg)};

  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.registry.size()) {
    throw std::runtime_error("checkpoint dimension mismatch in " + path.string() + ": " +
                             std::to_string(tensors.size()) + " tensors in manifest, config implies " +
                             std::to_string(params.registry.size()));
  }
  // Manifest shapes are checked against the config-implied registry before any
  // size or CRC work, so a mismatched model reads as a dimension error.
  std::vector<std::size_t> offsets(tensors.size());
  for (std::size_t i = 0; i < params.registry.size(); ++i) {
    const NamedTensor& t = params.registry.items()[i];
    const auto& entry = tensors[i];
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    offsets[i] = entry.at("offset").get<std::size_t>();
    if (name != t.name || shape != t.shape) {
      throw std::runtime_error("checkpoint dimension mismatch in " + path.string() +
                               ": tensor " + name + " has shape " + shape_str(shape) +
                               ", config implies " + t.name + " " + shape_str(t.shape));
    }
  }

  const std::size_t payload_off = 8 + header_len;
  const std::size_t payload_len = params.registry.total_values() * sizeof(double);
  if (payload_off + payload_len + 4 != buf.size()) {
    integrity_error(path, "payload size does not match manifest");
  }
  const std::span<const std::uint8_t> payload(buf.data() + payload_off, payload_len);
  if (crc32(payload) != read_u32(buf, payload_off + payload_len)) {
    integrity_error(path, "CRC mismatch");
  }

  for (std::size_t i = 0; i < params.registry.size(); ++i) {
    NamedTensor& t = params.registry.items()[i];
    if (offsets[i] + t.values.size() * sizeof(double) > payload_len) {
      integrity_error(path, "tensor " + t.name + " extends past payload");
    }
    std::memcpy(t.values.data(), payload.data() + offsets[i], t.values.size() * sizeof(double));
  }
  return params;
}

}  // namespace biembed
