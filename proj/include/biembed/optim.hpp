#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "biembed/encoder.hpp"
#include "biembed/tensor.hpp"

namespace biembed {

// Multiple negatives ranking loss over in-batch negatives. The similarity is
// the scaled dot product of unit rows; each pair's partner is the positive
// and the other partners in the batch are negatives.
struct MnrlConfig {
  double scale = 20.0;   // multiplier on cosine similarities (not a paper value)
  bool symmetric = true; // average losses over both matching directions

  void validate() const;
  bool operator==(const MnrlConfig&) const = default;
};

// u and v are [B, d] with unit-norm rows (checked to 1e-6). Returns a scalar
// node: cross entropy of scale * u v^T against the diagonal, averaged with
// the transposed direction when symmetric.
Tensor mnrl_loss(const Tensor& u, const Tensor& v, const MnrlConfig& cfg = {});

using GradMap = std::map<std::string, std::vector<double>>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Decoupled decay steps the weights directly (theta -= lr*wd*theta);
  // when false the decay term is folded into the gradient instead.
  bool decoupled_decay = true;
  std::size_t warmup_steps = 0;  // linear warmup on lr; 0 disables
};

// Adam with bias correction plus weight decay on matrices only; layer-norm
// gains/biases and other vectors are never decayed.
class AdamState {
 public:
  AdamState(const ParamRegistry& registry, AdamConfig cfg);

  // In-place update of params. All gradients must be finite and every grad
  // key must exist in the registry; violations abort before any mutation.
  void step(ParamRegistry& params, const GradMap& grads);

  std::size_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Decay filter: true for matrices (rank-2 tensors), false otherwise.
  static bool decays(const NamedTensor& tensor);

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
  std::size_t t_ = 0;
};

inline void adamw_step(AdamState& state, ParamRegistry& params, const GradMap& grads) {
  state.step(params, grads);
}

// u.v / (|u||v|), clamped into [-1,1]. Both-zero input is an error.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

}  // namespace biembed
