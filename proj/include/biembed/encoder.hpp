#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "biembed/tensor.hpp"
#include "biembed/textproc.hpp"
#include "biembed/util.hpp"

namespace biembed {

// Which activations feed the mean pool: the raw token embedding rows, or the
// output of the encoder stack. kAuto resolves to kLayerOutput when the stack
// has layers and kEmbeddings otherwise.
enum class PoolingSource { kAuto, kEmbeddings, kLayerOutput };

std::string_view pooling_source_name(PoolingSource s);
PoolingSource pooling_source_from_name(std::string_view name);

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 512;
  std::size_t n_layers = 2;
  std::size_t n_heads = 8;
  std::size_t d_ff = 1024;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
  PoolingSource pooling = PoolingSource::kAuto;

  // Small dimensions that train in minutes on a laptop core.
  static EncoderConfig desk(std::size_t vocab_size, std::uint64_t seed = 0);

  void validate() const;
  PoolingSource resolved_pooling() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Insertion-ordered collection of named parameter tensors. Names are unique
// and stable; iteration order is the registry order used everywhere
// (initialization, checkpointing, optimizer state).
class ParamRegistry {
 public:
  NamedTensor& add(std::string name, Shape shape);
  NamedTensor& at(std::string_view name);
  const NamedTensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<NamedTensor>& items() { return items_; }
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t total_values() const;

 private:
  std::vector<NamedTensor> items_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct EncoderParams {
  EncoderConfig config;
  ParamRegistry registry;
};

// Registry layout for a config: embedding table plus per-layer attention,
// feed-forward and layer-norm tensors. Values are zero.
ParamRegistry make_registry(const EncoderConfig& cfg);

// Glorot-uniform matrices, unit layer-norm gains, zero biases; all draws come
// from a splitmix64 stream seeded with cfg.seed, so identical configs give
// bitwise-identical parameters.
EncoderParams init_params(const EncoderConfig& cfg);

// Binds parameters into a graph once so several forward passes (e.g. both
// sides of a contrastive batch) share the same differentiable leaves.
class EncoderGraph {
 public:
  EncoderGraph(Graph& g, const EncoderParams& params);
  // Binds externally constructed leaves (in make_registry order) instead of
  // copying parameter values in; used to differentiate through a flat
  // parameter vector.
  EncoderGraph(Graph& g, const EncoderConfig& cfg, std::vector<Tensor> leaves);

  // Embed -> sinusoidal positions -> pre-norm transformer layers with the
  // attention mask -> masked mean pool -> L2 normalize. Rows are unit-norm.
  Tensor encode(const TokenizedBatch& batch, PoolingSource source = PoolingSource::kAuto);

  // Gradient per registry name, valid after Graph::backward.
  std::map<std::string, std::vector<double>> gradients() const;

  const Tensor& leaf(std::string_view name) const;

 private:
  Graph* graph_;
  EncoderConfig config_;
  std::vector<Tensor> leaves_;  // aligned with registry order
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Non-differentiable forward pass; returns unit-norm rows [batch, d_model].
Matrix encode_batch(const EncoderParams& params, const TokenizedBatch& batch,
                    PoolingSource source = PoolingSource::kAuto);

// Checkpoint format: "BTN1" magic, u32 little-endian header length, UTF-8
// JSON header (config + tensor manifest with shapes and byte offsets),
// float64 little-endian payload, u32 CRC-32 of the payload.
void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path);

// Text-in, vectors-out convenience bundle used by validation and evaluation.
class SentenceEncoder {
 public:
  SentenceEncoder(const EncoderParams& params, const Vocab& vocab)
      : params_(&params), vocab_(&vocab) {}

  // Encodes in deterministic chunks; rows align with the input order.
  Matrix encode(const std::vector<std::string>& sentences, std::size_t chunk = 64) const;

  const EncoderParams& params() const { return *params_; }
  const Vocab& vocab() const { return *vocab_; }

 private:
  const EncoderParams* params_;
  const Vocab* vocab_;
};

}  // namespace biembed
