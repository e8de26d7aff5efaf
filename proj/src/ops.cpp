#include "patchlab/numerics/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "patchlab/errors.hpp"

namespace plab {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void record(const Tensor& out, GradTape::BackwardFn fn) {
  active_tape()->record(out, std::move(fn));
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw IndexOutOfRange("axis " + std::to_string(axis));
  return static_cast<std::size_t>(a);
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

}  // namespace

// --- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeMismatch("matmul needs rank >= 2, got " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()));
  }
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  if (b.dim(b.rank() - 2) != k) {
    throw ShapeMismatch("matmul inner dims: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2);
  std::size_t batch = 1;
  bool broadcast_b = b.rank() == 2;
  if (!broadcast_b) {
    if (a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ShapeMismatch("matmul batch dims: " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    }
    batch = prod(a.shape(), 0, a.rank() - 2);
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Buffer out(shape_numel(out_shape));

  if (broadcast_b) {
    const std::size_t rows = a.numel() / k;
    MMap(out.data(), rows, n).noalias() =
        CMap(a.data().data(), rows, k) * CMap(b.data().data(), k, n);
  } else {
    for (std::size_t bi = 0; bi < batch; ++bi) {
      MMap(out.data() + bi * m * n, m, n).noalias() =
          CMap(a.data().data() + bi * m * k, m, k) *
          CMap(b.data().data() + bi * k * n, k, n);
    }
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (recording({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    record(result, [an, bn, m, k, n, batch, broadcast_b](detail::Node& o) {
      if (broadcast_b) {
        const std::size_t rows = an->data.size() / k;
        CMap dout(o.grad.data(), rows, n);
        if (an->requires_grad) {
          MMap(an->grad_buffer().data(), rows, k).noalias() +=
              dout * CMap(bn->data.data(), k, n).transpose();
        }
        if (bn->requires_grad) {
          MMap(bn->grad_buffer().data(), k, n).noalias() +=
              CMap(an->data.data(), rows, k).transpose() * dout;
        }
        return;
      }
      for (std::size_t bi = 0; bi < batch; ++bi) {
        CMap dout(o.grad.data() + bi * m * n, m, n);
        if (an->requires_grad) {
          MMap(an->grad_buffer().data() + bi * m * k, m, k).noalias() +=
              dout * CMap(bn->data.data() + bi * k * n, k, n).transpose();
        }
        if (bn->requires_grad) {
          MMap(bn->grad_buffer().data() + bi * k * n, k, n).noalias() +=
              CMap(an->data.data() + bi * m * k, m, k).transpose() * dout;
        }
      }
    });
  }
  return result;
}

// --- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Buffer out(a.numel());
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  Tensor result(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    record(result, [an, bn](detail::Node& o) {
      for (auto* in : {an.get(), bn.get()}) {
        if (!in->requires_grad) continue;
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Buffer out(a.numel());
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  Tensor result(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    record(result, [an, bn](detail::Node& o) {
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * an->data[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, double s) {
  Buffer out(a.numel());
  const double* pa = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
  Tensor result(a.shape(), std::move(out));
  if (recording({&a})) {
    auto an = a.node_ptr();
    record(result, [an, s](detail::Node& o) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    });
  }
  return result;
}

// --- softmax ------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis_arg, SoftmaxMask mask) {
  if (x.rank() == 0) throw ShapeMismatch("softmax of a scalar");
  const std::size_t axis = normalize_axis(axis_arg, x.rank());
  const bool causal = mask == SoftmaxMask::Causal;
  if (causal && (axis != x.rank() - 1 || x.rank() < 2 ||
                 x.dim(x.rank() - 2) != x.dim(x.rank() - 1))) {
    throw ShapeMismatch("causal softmax needs [.., T, T] and the last axis, got " +
                        shape_str(x.shape()));
  }
  const std::size_t len = x.dim(axis);
  const std::size_t inner = prod(x.shape(), axis + 1, x.rank());
  const std::size_t outer = prod(x.shape(), 0, axis);
  Buffer out(x.numel(), 0.0);
  const double* px = x.data().data();

  for (std::size_t o = 0; o < outer; ++o) {
    // valid entries along the axis are [0, limit)
    const std::size_t limit = causal ? (o % len) + 1 : len;
    if (inner == 1) {
      Eigen::Map<const Eigen::ArrayXd> row(px + o * len, static_cast<Eigen::Index>(limit));
      Eigen::Map<Eigen::ArrayXd> dst(out.data() + o * len, static_cast<Eigen::Index>(limit));
      dst = (row - row.maxCoeff()).exp();
      double total = 0.0;
      for (std::size_t j = 0; j < limit; ++j) total += dst[static_cast<Eigen::Index>(j)];
      dst *= 1.0 / total;
      continue;
    }
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, px[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        const double e = std::exp(px[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t j = 0; j < limit; ++j) out[base + j * inner] *= inv;
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (recording({&x})) {
    auto xn = x.node_ptr();
    record(result, [xn, len, inner, outer, causal](detail::Node& o) {
      auto& g = xn->grad_buffer();
      const auto& y = o.data;
      for (std::size_t oi = 0; oi < outer; ++oi) {
        const std::size_t limit = causal ? (oi % len) + 1 : len;
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = oi * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < limit; ++j) {
            dot += y[base + j * inner] * o.grad[base + j * inner];
          }
          for (std::size_t j = 0; j < limit; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += y[idx] * (o.grad[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

// --- rms_norm -----------------------------------------------------------------

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
  if (x.rank() == 0 || weight.rank() != 1 || x.shape().back() != weight.dim(0)) {
    throw ShapeMismatch("rms_norm: x " + shape_str(x.shape()) + " weight " +
                        shape_str(weight.shape()));
  }
  const std::size_t d = weight.dim(0);
  const std::size_t rows = x.numel() / d;
  Buffer out(x.numel());
  Buffer inv_rms(rows);
  const double* px = x.data().data();
  const double* pw = weight.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += px[r * d + j] * px[r * d + j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] * inv * pw[j];
  }
  Tensor result(x.shape(), std::move(out));
  if (recording({&x, &weight})) {
    auto xn = x.node_ptr();
    auto wn = weight.node_ptr();
    record(result, [xn, wn, d, rows, inv_rms = std::move(inv_rms)](detail::Node& o) {
      const double* px = xn->data.data();
      const double* pw = wn->data.data();
      double* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
      double* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const double inv = inv_rms[r];
        const double* dy = o.grad.data() + r * d;
        double proj = 0.0;  // sum(dxhat * xhat)
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = px[r * d + j] * inv;
          if (gw) gw[j] += dy[j] * xhat;
          proj += dy[j] * pw[j] * xhat;
        }
        if (!gx) continue;
        proj /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = px[r * d + j] * inv;
          gx[r * d + j] += inv * (dy[j] * pw[j] - xhat * proj);
        }
      }
    });
  }
  return result;
}

// --- embedding ----------------------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const TokenId> tokens) {
  if (table.rank() != 2) throw ShapeMismatch("embedding table must be [V, d]");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  Buffer out(tokens.size() * d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexOutOfRange("token " + std::to_string(t) + " outside vocab " +
                            std::to_string(vocab));
    }
    std::memcpy(out.data() + i * d, table.data().data() + static_cast<std::size_t>(t) * d,
                d * sizeof(double));
  }
  Tensor result(Shape{tokens.size(), d}, std::move(out));
  if (recording({&table})) {
    auto tn = table.node_ptr();
    std::vector<TokenId> ids(tokens.begin(), tokens.end());
    record(result, [tn, d, ids = std::move(ids)](detail::Node& o) {
      auto& g = tn->grad_buffer();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* row = g.data() + static_cast<std::size_t>(ids[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += o.grad[i * d + j];
      }
    });
  }
  return result;
}

// --- rotary -------------------------------------------------------------------

Tensor rotary(const Tensor& x, double base) {
  if (x.rank() < 2 || x.shape().back() % 2 != 0) {
    throw ShapeMismatch("rotary needs [.., T, even d], got " + shape_str(x.shape()));
  }
  const std::size_t dh = x.shape().back();
  const std::size_t seq = x.dim(x.rank() - 2);
  const std::size_t half = dh / 2;
  const std::size_t blocks = x.numel() / (seq * dh);
  Buffer cos_t(seq * half);
  Buffer sin_t(seq * half);
  for (std::size_t p = 0; p < seq; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      const double angle = static_cast<double>(p) * theta;
      cos_t[p * half + i] = std::cos(angle);
      sin_t[p * half + i] = std::sin(angle);
    }
  }
  Buffer out(x.numel());
  const double* px = x.data().data();
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t p = 0; p < seq; ++p) {
      const double* src = px + (b * seq + p) * dh;
      double* dst = out.data() + (b * seq + p) * dh;
      for (std::size_t i = 0; i < half; ++i) {
        const double c = cos_t[p * half + i];
        const double s = sin_t[p * half + i];
        dst[2 * i] = src[2 * i] * c - src[2 * i + 1] * s;
        dst[2 * i + 1] = src[2 * i] * s + src[2 * i + 1] * c;
      }
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (recording({&x})) {
    auto xn = x.node_ptr();
    record(result, [xn, dh, seq, half, blocks, cos_t = std::move(cos_t),
                    sin_t = std::move(sin_t)](detail::Node& o) {
      auto& g = xn->grad_buffer();
      for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t p = 0; p < seq; ++p) {
          const double* dy = o.grad.data() + (b * seq + p) * dh;
          double* dx = g.data() + (b * seq + p) * dh;
          for (std::size_t i = 0; i < half; ++i) {
            const double c = cos_t[p * half + i];
            const double s = sin_t[p * half + i];
            dx[2 * i] += dy[2 * i] * c + dy[2 * i + 1] * s;
            dx[2 * i + 1] += -dy[2 * i] * s + dy[2 * i + 1] * c;
          }
        }
      }
    });
  }
  return result;
}

// --- cross entropy ------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeMismatch("cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                        std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexOutOfRange("target " + std::to_string(t) + " outside vocab " +
                            std::to_string(vocab));
    }
  }
  const double* pl = logits.data().data();
  const bool grad = recording({&logits});
  Buffer probs(grad ? logits.numel() : 0);
  Buffer scratch(vocab);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Map<const Eigen::ArrayXd> row(pl + i * vocab, static_cast<Eigen::Index>(vocab));
    Eigen::Map<Eigen::ArrayXd> e(grad ? probs.data() + i * vocab : scratch.data(),
                                 static_cast<Eigen::Index>(vocab));
    const double mx = row.maxCoeff();
    e = (row - mx).exp();
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += e[static_cast<Eigen::Index>(j)];
    total -= pl[i * vocab + static_cast<std::size_t>(targets[i])] - mx - std::log(z);
    if (grad) e *= 1.0 / z;
  }
  Tensor result = Tensor::scalar(total / static_cast<double>(n));
  if (grad) {
    auto ln = logits.node_ptr();
    std::vector<TokenId> ids(targets.begin(), targets.end());
    record(result, [ln, n, vocab, ids = std::move(ids), probs = std::move(probs)](detail::Node& o) {
      auto& g = ln->grad_buffer();
      const double scale = o.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        double* grow = g.data() + i * vocab;
        const double* p = probs.data() + i * vocab;
        for (std::size_t j = 0; j < vocab; ++j) grow[j] += scale * p[j];
        grow[static_cast<std::size_t>(ids[i])] -= scale;
      }
    });
  }
  return result;
}

// --- shape ops ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor result(std::move(shape), Buffer(x.data().begin(), x.data().end()));
  if (recording({&x})) {
    auto xn = x.node_ptr();
    record(result, [xn](detail::Node& o) {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
  }
  return result;
}

namespace {

// Moves blocks of `post` contiguous values between layouts
// [pre, A, mid, B, post] <-> [pre, B, mid, A, post].
template <typename Fn>
void for_each_swapped(const Shape& s, std::size_t a0, std::size_t a1, Fn&& fn) {
  const std::size_t pre = prod(s, 0, a0);
  const std::size_t na = s[a0];
  const std::size_t mid = prod(s, a0 + 1, a1);
  const std::size_t nb = s[a1];
  const std::size_t post = prod(s, a1 + 1, s.size());
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t i = 0; i < na; ++i)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t j = 0; j < nb; ++j) {
          const std::size_t src = (((p * na + i) * mid + m) * nb + j) * post;
          const std::size_t dst = (((p * nb + j) * mid + m) * na + i) * post;
          fn(src, dst, post);
        }
}

}  // namespace

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  if (axis_a >= x.rank() || axis_b >= x.rank()) throw IndexOutOfRange("transpose axis");
  if (axis_a == axis_b) return reshape(x, x.shape());
  const std::size_t a0 = std::min(axis_a, axis_b);
  const std::size_t a1 = std::max(axis_a, axis_b);
  Shape out_shape = x.shape();
  std::swap(out_shape[a0], out_shape[a1]);
  Buffer out(x.numel());
  const double* px = x.data().data();
  for_each_swapped(x.shape(), a0, a1, [&](std::size_t src, std::size_t dst, std::size_t len) {
    std::memcpy(out.data() + dst, px + src, len * sizeof(double));
  });
  Tensor result(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    auto xn = x.node_ptr();
    record(result, [xn, a0, a1](detail::Node& o) {
      auto& g = xn->grad_buffer();
      for_each_swapped(xn->shape, a0, a1, [&](std::size_t src, std::size_t dst, std::size_t len) {
        for (std::size_t i = 0; i < len; ++i) g[src + i] += o.grad[dst + i];
      });
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) throw IndexOutOfRange("slice axis");
  if (begin > end || end > x.dim(axis)) {
    throw IndexOutOfRange("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") of " + shape_str(x.shape()));
  }
  const std::size_t pre = prod(x.shape(), 0, axis);
  const std::size_t len = x.dim(axis);
  const std::size_t post = prod(x.shape(), axis + 1, x.rank());
  const std::size_t width = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = width;
  Buffer out(pre * width * post);
  const double* px = x.data().data();
  for (std::size_t p = 0; p < pre; ++p) {
    std::memcpy(out.data() + p * width * post, px + (p * len + begin) * post,
                width * post * sizeof(double));
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    auto xn = x.node_ptr();
    record(result, [xn, pre, len, post, width, begin](detail::Node& o) {
      auto& g = xn->grad_buffer();
      for (std::size_t p = 0; p < pre; ++p) {
        double* dst = g.data() + (p * len + begin) * post;
        const double* src = o.grad.data() + p * width * post;
        for (std::size_t i = 0; i < width * post; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw IndexOutOfRange("concat axis");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = s0;
    if (a.size() != b.size()) throw ShapeMismatch("concat rank mismatch");
    total += a[axis];
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeMismatch("concat shape mismatch " + shape_str(p.shape()));
  }
  const std::size_t pre = prod(s0, 0, axis);
  const std::size_t post = prod(s0, axis + 1, s0.size());
  Shape out_shape = s0;
  out_shape[axis] = total;
  Buffer out(pre * total * post);
  std::size_t offset = 0;
  for (const auto& part : parts) {
    const std::size_t w = part.dim(axis);
    for (std::size_t p = 0; p < pre; ++p) {
      std::memcpy(out.data() + (p * total + offset) * post,
                  part.data().data() + p * w * post, w * post * sizeof(double));
    }
    offset += w;
  }
  Tensor result(std::move(out_shape), std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (active_tape() != nullptr && any) {
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    record(result, [nodes, pre, post, total, axis](detail::Node& o) {
      std::size_t offset = 0;
      for (const auto& n : nodes) {
        const std::size_t w = n->shape[axis];
        if (n->requires_grad) {
          auto& g = n->grad_buffer();
          for (std::size_t p = 0; p < pre; ++p) {
            const double* src = o.grad.data() + (p * total + offset) * post;
            double* dst = g.data() + p * w * post;
            for (std::size_t i = 0; i < w * post; ++i) dst[i] += src[i];
          }
        }
        offset += w;
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  const std::size_t n = x.numel();
  Tensor row = reshape(x, Shape{1, n});
  Tensor total = matmul(row, Tensor::full(Shape{n, 1}, 1.0));
  return reshape(total, Shape{});
}

double log_softmax_at(std::span<const double> row, std::size_t index) {
  if (index >= row.size()) throw IndexOutOfRange("log_softmax_at index");
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - mx);
  return row[index] - mx - std::log(total);
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace plab
