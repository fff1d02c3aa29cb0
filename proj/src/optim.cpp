#include "biembed/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace biembed {

void MnrlConfig::validate() const {
  if (!(scale > 0.0)) throw std::invalid_argument("MnrlConfig: scale must be positive");
}

Tensor mnrl_loss(const Tensor& u, const Tensor& v, const MnrlConfig& cfg) {
  cfg.validate();
  if (u.shape().size() != 2 || v.shape().size() != 2 || u.shape() != v.shape()) {
    throw std::invalid_argument("mnrl_loss: shape mismatch: " + shape_str(u.shape()) + " vs " +
                                shape_str(v.shape()));
  }
  const std::size_t batch = u.shape()[0], d = u.shape()[1];
  if (batch == 0) throw std::invalid_argument("mnrl_loss: empty batch");
  for (const Tensor* side : {&u, &v}) {
    const double* p = side->values().data();
    for (std::size_t i = 0; i < batch; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += p[i * d + j] * p[i * d + j];
      if (std::fabs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw std::invalid_argument("mnrl_loss: row " + std::to_string(i) + " of " +
                                    (side == &u ? std::string("u") : std::string("v")) +
                                    " is not unit-norm (|row| = " + std::to_string(std::sqrt(sq)) +
                                    ")");
      }
    }
  }
  std::vector<std::size_t> diagonal(batch);
  std::iota(diagonal.begin(), diagonal.end(), std::size_t{0});

  Tensor similarities = scale(matmul(u, transpose(v)), cfg.scale);
  Tensor loss = softmax_cross_entropy_rows(similarities, diagonal);
  if (cfg.symmetric) {
    Tensor reverse = softmax_cross_entropy_rows(transpose(similarities), diagonal);
    loss = scale(add(loss, reverse), 0.5);
  }
  return loss;
}

// --- Adam ----------------------------------------------------------------

AdamState::AdamState(const ParamRegistry& registry, AdamConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.lr < 0.0) throw std::invalid_argument("AdamState: lr must be non-negative");
  for (const NamedTensor& t : registry.items()) {
    moments_.emplace(t.name, Moments{std::vector<double>(t.values.size(), 0.0),
                                     std::vector<double>(t.values.size(), 0.0)});
  }
}

bool AdamState::decays(const NamedTensor& tensor) { return tensor.shape.size() == 2; }

void AdamState::step(ParamRegistry& params, const GradMap& grads) {
  // Validate everything before touching any parameter, so a bad gradient
  // cannot leave a half-updated registry behind.
  for (const auto& [name, grad] : grads) {
    if (!params.contains(name)) {
      throw std::invalid_argument("adamw_step: gradient for unknown parameter " + name);
    }
    const NamedTensor& t = params.at(name);
    if (grad.size() != t.values.size()) {
      throw std::invalid_argument("adamw_step: gradient size " + std::to_string(grad.size()) +
                                  " != parameter size " + std::to_string(t.values.size()) +
                                  " for " + name);
    }
    for (double g : grad) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adamw_step: non-finite gradient in parameter " + name);
      }
    }
  }

  ++t_;
  double lr = cfg_.lr;
  if (cfg_.warmup_steps > 0 && t_ < cfg_.warmup_steps) {
    lr *= static_cast<double>(t_) / static_cast<double>(cfg_.warmup_steps);
  }
  const double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (const auto& [name, grad] : grads) {
    NamedTensor& t = params.at(name);
    Moments& mom = moments_.at(name);
    const bool decay_here = cfg_.weight_decay != 0.0 && decays(t);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double g = grad[i];
      if (decay_here && !cfg_.decoupled_decay) g += cfg_.weight_decay * t.values[i];
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = mom.m[i] / bias1;
      const double v_hat = mom.v[i] / bias2;
      t.values[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      if (decay_here && cfg_.decoupled_decay) t.values[i] -= lr * cfg_.weight_decay * t.values[i];
    }
  }
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw std::invalid_argument("cosine_similarity: length mismatch: " +
                                std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  if (u.empty()) throw std::invalid_argument("cosine_similarity: empty vectors");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i]) || !std::isfinite(v[i])) {
      throw std::invalid_argument("cosine_similarity: non-finite input");
    }
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 && nv == 0.0) {
    throw std::domain_error("cosine_similarity: undefined for two zero vectors");
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
}

}  // namespace biembed
