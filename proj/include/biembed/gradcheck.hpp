#pragma once

#include <functional>
#include <vector>

#include "biembed/tensor.hpp"

namespace biembed {

// Builds a scalar loss from a flat parameter vector on a fresh graph.
using GraphBuilder = std::function<Tensor(Graph&, const Tensor& x)>;

// Compares the analytic gradient of f at x0 against central finite
// differences and returns max_i |analytic_i - numeric_i| /
// max(1, |analytic_i|, |numeric_i|). f must be deterministic and produce a
// finite single-element tensor at every probe point.
double grad_check(const GraphBuilder& f, const std::vector<double>& x0, double h = 1e-5);

}  // namespace biembed
