#pragma once

// Central finite-difference oracle used by the unit suites: analytic
// gradients from a recorded backward pass are compared against
// (f(x+eps) - f(x-eps)) / 2eps at 64-bit precision, element by element.

#include <cmath>
#include <vector>

#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

namespace testutil {

inline s2s::Tensor<double> rand_tensor(s2s::Shape shape, s2s::Rng& rng, double lo = -1.0,
                                       double hi = 1.0) {
  auto t = s2s::Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.values_mut()) v = rng.uniform(lo, hi);
  return t;
}

// `make_loss` must rebuild the scalar loss from the handles passed in
// `inputs` (payloads are shared, so perturbations are visible to it).
// Returns the max relative error over all input elements.
template <class F>
double gradcheck(std::vector<s2s::Tensor<double>> inputs, F make_loss, double eps = 1e-5) {
  for (auto& t : inputs) t.set_requires_grad(true);

  s2s::Tape<double> tape;
  s2s::Tensor<double> loss;
  {
    typename s2s::Tape<double>::Scope scope(tape);
    loss = make_loss();
  }
  tape.backward(loss);
  std::vector<s2s::Tensor<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.push_back(tape.gradient(t));
  tape.reset();

  double max_err = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& v = inputs[ti].values_mut();
    for (size_t i = 0; i < v.size(); ++i) {
      double keep = v[i];
      v[i] = keep + eps;
      double up = make_loss().scalar();
      v[i] = keep - eps;
      double dn = make_loss().scalar();
      v[i] = keep;
      double numeric = (up - dn) / (2.0 * eps);
      double exact = analytic[ti][i];
      double err = std::abs(exact - numeric) /
                   std::max({1.0, std::abs(exact), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace testutil
