#include "patchlab/numerics/optim.hpp"

#include <cmath>

#include "patchlab/errors.hpp"

namespace plab {

void adamw_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
                AdamWState& state, const AdamWHyper& hyper, const std::vector<bool>& decay) {
  if (grads.size() != params.size() || (!decay.empty() && decay.size() != params.size())) {
    throw ShapeMismatch("adamw_step: parameter/gradient list sizes differ");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeMismatch("adamw_step: state size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel()) {
      throw ShapeMismatch("adamw_step: parameter " + std::to_string(i) + " shape");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    const double wd = (decay.empty() || decay[i]) ? hyper.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= hyper.lr * (mhat / (std::sqrt(vhat) + hyper.eps) + wd * p[j]);
    }
  }
}

void adamw_step(std::vector<Tensor>& params, AdamWState& state, const AdamWHyper& hyper,
                const std::vector<bool>& decay) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    auto g = p.grad();
    grads.emplace_back(g.begin(), g.end());
  }
  adamw_step(params, grads, state, hyper, decay);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double ss = 0.0;
  for (auto& p : params) {
    for (double g : p.grad()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace plab
