#include "biembed/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace biembed {

namespace {
double eval_at(const GraphBuilder& f, const std::vector<double>& x) {
  Graph g;
  Tensor p = g.parameter({x.size()}, x);
  Tensor loss = f(g, p);
  if (loss.numel() != 1) {
    throw std::invalid_argument("grad_check: builder did not return a scalar");
  }
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw std::runtime_error("grad_check: non-finite function value at probe point");
  }
  return v;
}
}  // namespace

double grad_check(const GraphBuilder& f, const std::vector<double>& x0, double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: step must be positive");

  Graph g;
  Tensor p = g.parameter({x0.size()}, x0);
  Tensor loss = f(g, p);
  if (loss.numel() != 1) {
    throw std::invalid_argument("grad_check: builder did not return a scalar");
  }
  if (!std::isfinite(loss.item())) {
    throw std::runtime_error("grad_check: non-finite function value at probe point");
  }
  g.backward(loss);
  std::vector<double> analytic(p.grad().begin(), p.grad().end());

  double worst = 0.0;
  std::vector<double> probe = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    probe[i] = x0[i] + h;
    const double up = eval_at(f, probe);
    probe[i] = x0[i] - h;
    const double down = eval_at(f, probe);
    probe[i] = x0[i];
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace biembed
