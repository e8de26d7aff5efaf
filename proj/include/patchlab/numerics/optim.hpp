#pragma once

#include <cstddef>
#include <vector>

#include "patchlab/numerics/tensor.hpp"

namespace plab {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment buffers for one parameter list.
struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One decoupled-weight-decay Adam update, in place:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// `decay[i]` selects whether weight decay applies to params[i]; an empty
/// mask applies it everywhere. Grads are read from each parameter's buffer.
void adamw_step(std::vector<Tensor>& params, AdamWState& state, const AdamWHyper& hyper,
                const std::vector<bool>& decay = {});

/// Same update with explicitly supplied gradients.
void adamw_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
                AdamWState& state, const AdamWHyper& hyper,
                const std::vector<bool>& decay = {});

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace plab
