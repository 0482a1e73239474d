#include "vision/gradcore.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace vision {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// col has shape (C*9, OH*OW) for one batch item. Out-of-range taps read the
// nearest edge pixel (replicate padding).
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, int pad, std::size_t oh,
            std::size_t ow, T* col) {
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* plane = x + ci * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col + ((ci * 9) + ky * 3 + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = std::clamp(static_cast<long>(oy) + ky - pad, 0L, hl - 1);
          const T* src = plane + iy * w;
          T* out = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            out[ox] = src[std::clamp(static_cast<long>(ox) + kx - pad, 0L, wl - 1)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, int pad, std::size_t oh,
            std::size_t ow, T* dx) {
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);
  for (std::size_t ci = 0; ci < c; ++ci) {
    T* plane = dx + ci * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = col + ((ci * 9) + ky * 3 + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = std::clamp(static_cast<long>(oy) + ky - pad, 0L, hl - 1);
          const T* in = row + oy * ow;
          T* dst = plane + iy * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            dst[std::clamp(static_cast<long>(ox) + kx - pad, 0L, wl - 1)] += in[ox];
          }
        }
      }
    }
  }
}

// out (cout x p) = w (cout x k) * col (k x p). Every output element
// accumulates its k terms in the same order whichever path computes it, so
// results do not depend on the element's position or the spatial size.
template <typename T>
void gemm_fixed_order(const T* w, const T* col, T* out, std::size_t cout, std::size_t k,
                      std::size_t p) {
  constexpr std::size_t kRows = 8, kCols = 16;
  typedef T Vec __attribute__((vector_size(kCols * sizeof(T))));
  for (std::size_t r0 = 0; r0 < cout; r0 += kRows) {
    const std::size_t rb = std::min(kRows, cout - r0);
    for (std::size_t c0 = 0; c0 < p; c0 += kCols) {
      const std::size_t cb = std::min(kCols, p - c0);
      if (rb == kRows && cb == kCols) {
        const T* wr = w + r0 * k;
        Vec acc[kRows] = {};
        for (std::size_t kk = 0; kk < k; ++kk) {
          Vec c;
          std::memcpy(&c, col + kk * p + c0, sizeof(Vec));
          for (std::size_t i = 0; i < kRows; ++i) acc[i] += wr[i * k + kk] * c;
        }
        for (std::size_t i = 0; i < kRows; ++i) {
          std::memcpy(out + (r0 + i) * p + c0, &acc[i], sizeof(Vec));
        }
      } else {
        T acc[kRows][kCols] = {};
        for (std::size_t kk = 0; kk < k; ++kk) {
          const T* c = col + kk * p + c0;
          for (std::size_t i = 0; i < rb; ++i) {
            const T a = w[(r0 + i) * k + kk];
            for (std::size_t j = 0; j < cb; ++j) acc[i][j] += a * c[j];
          }
        }
        for (std::size_t i = 0; i < rb; ++i) {
          std::copy(acc[i], acc[i] + cb, out + (r0 + i) * p + c0);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

template <typename T>
Tensor4<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor4<T>(n.value.shape(), T{0});
  return n.grad;
}

template <typename T>
Var Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::input(Tensor4<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::param(Param<T>& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::conv2d(Var xv, Var wv, Var bv, int padding) {
  const Shape4 xs = node(xv).value.shape();
  const Shape4 ws = node(wv).value.shape();
  const Shape4 bs = node(bv).value.shape();
  if (ws.h != 3 || ws.w != 3) throw ShapeError("conv2d expects 3x3 kernels, got " + ws.str());
  if (ws.c != xs.c) {
    throw ShapeError("conv2d channel mismatch: input " + std::to_string(xs.c) + ", kernel " +
                     std::to_string(ws.c));
  }
  if (bs.count() != ws.n) throw ShapeError("conv2d bias length does not match output channels");
  if (padding < 0) throw ShapeError("conv2d padding must be non-negative");
  const long oh_l = static_cast<long>(xs.h) + 2L * padding - 2;
  const long ow_l = static_cast<long>(xs.w) + 2L * padding - 2;
  if (oh_l < 1 || ow_l < 1) throw ShapeError("conv2d input too small: " + xs.str());
  if (!node(xv).value.all_finite()) throw NumericError("conv2d input contains non-finite values");

  const std::size_t oh = static_cast<std::size_t>(oh_l), ow = static_cast<std::size_t>(ow_l);
  const std::size_t cout = ws.n, k = xs.c * 9, opix = oh * ow;
  Tensor4<T> out(Shape4{xs.n, cout, oh, ow});
  std::vector<T> col(k * opix);
  {
    const Tensor4<T>& x = node(xv).value;
    const Tensor4<T>& wt = node(wv).value;
    const Tensor4<T>& b = node(bv).value;
    for (std::size_t n = 0; n < xs.n; ++n) {
      im2col(x.data() + n * xs.c * xs.plane(), xs.c, xs.h, xs.w, padding, oh, ow, col.data());
      T* o = out.data() + n * cout * opix;
      gemm_fixed_order(wt.data(), col.data(), o, cout, k, opix);
      for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t i = 0; i < opix; ++i) o[co * opix + i] += b[co];
      }
    }
  }

  Node n;
  n.value = std::move(out);
  n.requires_grad = node(xv).requires_grad || node(wv).requires_grad || node(bv).requires_grad;
  const std::size_t xi = xv.id, wi = wv.id, bi = bv.id;
  n.back = [xi, wi, bi, padding, oh, ow](Tape& t, std::size_t self) {
    const Tensor4<T>& gy = t.nodes_[self].grad;
    const Tensor4<T>& x = t.nodes_[xi].value;
    const Tensor4<T>& wt = t.nodes_[wi].value;
    const Shape4 xs = x.shape();
    const std::size_t cout = wt.shape().n, k = xs.c * 9, opix = oh * ow;
    const bool need_x = t.nodes_[xi].requires_grad;
    const bool need_w = t.nodes_[wi].requires_grad;
    const bool need_b = t.nodes_[bi].requires_grad;
    std::vector<T> col(k * opix);
    std::vector<T> dcol(need_x ? k * opix : 0);
    Tensor4<T>* gx = need_x ? &t.grad_buffer(xi) : nullptr;
    Tensor4<T>* gw = need_w ? &t.grad_buffer(wi) : nullptr;
    Tensor4<T>* gb = need_b ? &t.grad_buffer(bi) : nullptr;
    ConstMapMat<T> wm(wt.data(), cout, k);
    for (std::size_t n = 0; n < xs.n; ++n) {
      ConstMapMat<T> gm(gy.data() + n * cout * opix, cout, opix);
      if (need_w) {
        im2col(x.data() + n * xs.c * xs.plane(), xs.c, xs.h, xs.w, padding, oh, ow, col.data());
        MapMat<T> gwm(gw->data(), cout, k);
        gwm.noalias() += gm * ConstMapMat<T>(col.data(), k, opix).transpose();
      }
      if (need_b) {
        // plain loop: Eigen's reduction order depends on pointer alignment
        const T* g = gy.data() + n * cout * opix;
        for (std::size_t co = 0; co < cout; ++co) {
          T acc{0};
          for (std::size_t i = 0; i < opix; ++i) acc += g[co * opix + i];
          (*gb)[co] += acc;
        }
      }
      if (need_x) {
        MapMat<T> dc(dcol.data(), k, opix);
        dc.noalias() = wm.transpose() * gm;
        col2im(dcol.data(), xs.c, xs.h, xs.w, padding, oh, ow, gx->data() + n * xs.c * xs.plane());
      }
    }
  };
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::relu(Var xv) {
  const Tensor4<T>& x = node(xv).value;
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  Node n;
  n.value = std::move(out);
  n.requires_grad = node(xv).requires_grad;
  const std::size_t xi = xv.id;
  n.back = [xi](Tape& t, std::size_t self) {
    if (!t.nodes_[xi].requires_grad) return;
    const Tensor4<T>& gy = t.nodes_[self].grad;
    const Tensor4<T>& x = t.nodes_[xi].value;
    Tensor4<T>& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T{0}) gx[i] += gy[i];
    }
  };
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::maxpool2(Var xv) {
  const Shape4 xs = node(xv).value.shape();
  if (xs.h < 2 || xs.w < 2) throw ShapeError("maxpool2 needs spatial dims >= 2, got " + xs.str());
  const std::size_t oh = xs.h / 2, ow = xs.w / 2;
  Tensor4<T> out(Shape4{xs.n, xs.c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const Tensor4<T>& x = node(xv).value;
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* plane = x.data() + nc * xs.plane();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = (2 * oy) * xs.w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * xs.w + 2 * ox + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        out[o] = plane[best];
        argmax[o] = nc * xs.plane() + best;
      }
    }
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = node(xv).requires_grad;
  n.indices = std::move(argmax);
  const std::size_t xi = xv.id;
  n.back = [xi](Tape& t, std::size_t self) {
    if (!t.nodes_[xi].requires_grad) return;
    const Node& me = t.nodes_[self];
    Tensor4<T>& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < me.grad.size(); ++i) {
      gx[me.indices[i]] += me.grad[i];
    }
  };
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::batchnorm(Var xv, Var gv, Var bv, Param<T>& running_mean, Param<T>& running_var,
                       Mode mode) {
  const Shape4 xs = node(xv).value.shape();
  if (node(gv).value.size() != xs.c || node(bv).value.size() != xs.c) {
    throw ShapeError("batchnorm gamma/beta length must equal channel count " +
                     std::to_string(xs.c));
  }
  if (running_mean.value.size() != xs.c || running_var.value.size() != xs.c) {
    throw ShapeError("batchnorm running statistics length must equal channel count");
  }
  const Tensor4<T>& x = node(xv).value;
  const Tensor4<T>& gamma = node(gv).value;
  const Tensor4<T>& beta = node(bv).value;
  const std::size_t m = xs.n * xs.plane();
  Tensor4<T> out(xs);
  // saved: xhat (count) followed by inv_std (C)
  std::vector<T> saved(xs.count() + xs.c);
  T* xhat = saved.data();
  T* inv_std = saved.data() + xs.count();
  for (std::size_t c = 0; c < xs.c; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      // shifted by the first sample so a constant channel has an exact mean
      const double shift = x[c * xs.plane()];
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* p = x.data() + (n * xs.c + c) * xs.plane();
        for (std::size_t i = 0; i < xs.plane(); ++i) mean += p[i] - shift;
      }
      mean = shift + mean / static_cast<double>(m);
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* p = x.data() + (n * xs.c + c) * xs.plane();
        for (std::size_t i = 0; i < xs.plane(); ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean.value[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_mean.value[c] +
                                             kBatchNormMomentum * mean);
      running_var.value[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_var.value[c] +
                                            kBatchNormMomentum * unbiased);
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(std::max(var, 0.0) + kBatchNormEpsilon));
    inv_std[c] = istd;
    const T mu = static_cast<T>(mean);
    for (std::size_t n = 0; n < xs.n; ++n) {
      const std::size_t off = (n * xs.c + c) * xs.plane();
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        const T xh = (x[off + i] - mu) * istd;
        xhat[off + i] = xh;
        out[off + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = node(xv).requires_grad || node(gv).requires_grad || node(bv).requires_grad;
  n.saved = std::move(saved);
  const std::size_t xi = xv.id, gi = gv.id, bi = bv.id;
  n.back = [xi, gi, bi, mode](Tape& t, std::size_t self) {
    const Node& me = t.nodes_[self];
    const Shape4 xs = me.value.shape();
    const std::size_t m = xs.n * xs.plane();
    const T* xhat = me.saved.data();
    const T* inv_std = me.saved.data() + xs.count();
    const Tensor4<T>& gamma = t.nodes_[gi].value;
    const bool need_x = t.nodes_[xi].requires_grad;
    const bool need_g = t.nodes_[gi].requires_grad;
    const bool need_b = t.nodes_[bi].requires_grad;
    for (std::size_t c = 0; c < xs.c; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const std::size_t off = (n * xs.c + c) * xs.plane();
        for (std::size_t i = 0; i < xs.plane(); ++i) {
          sum_dy += me.grad[off + i];
          sum_dy_xhat += static_cast<double>(me.grad[off + i]) * xhat[off + i];
        }
      }
      if (need_g) t.grad_buffer(gi)[c] += static_cast<T>(sum_dy_xhat);
      if (need_b) t.grad_buffer(bi)[c] += static_cast<T>(sum_dy);
      if (!need_x) continue;
      Tensor4<T>& gx = t.grad_buffer(xi);
      const T scale = gamma[c] * inv_std[c];
      if (mode == Mode::eval) {
        for (std::size_t n = 0; n < xs.n; ++n) {
          const std::size_t off = (n * xs.c + c) * xs.plane();
          for (std::size_t i = 0; i < xs.plane(); ++i) gx[off + i] += scale * me.grad[off + i];
        }
      } else {
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
        for (std::size_t n = 0; n < xs.n; ++n) {
          const std::size_t off = (n * xs.c + c) * xs.plane();
          for (std::size_t i = 0; i < xs.plane(); ++i) {
            gx[off + i] += scale * (me.grad[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
          }
        }
      }
    }
  };
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::global_avg_pool(Var xv) {
  const Shape4 xs = node(xv).value.shape();
  const Tensor4<T>& x = node(xv).value;
  Tensor4<T> out(Shape4{xs.n, xs.c, 1, 1});
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    double s = 0.0;
    const T* p = x.data() + nc * xs.plane();
    for (std::size_t i = 0; i < xs.plane(); ++i) s += p[i];
    out[nc] = static_cast<T>(s / static_cast<double>(xs.plane()));
  }
  Node n;
  n.value = std::move(out);
  n.requires_grad = node(xv).requires_grad;
  const std::size_t xi = xv.id;
  n.back = [xi](Tape& t, std::size_t self) {
    if (!t.nodes_[xi].requires_grad) return;
    const Tensor4<T>& gy = t.nodes_[self].grad;
    Tensor4<T>& gx = t.grad_buffer(xi);
    const std::size_t plane = gx.shape().plane();
    const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
    for (std::size_t nc = 0; nc < gy.size(); ++nc) {
      T* p = gx.data() + nc * plane;
      const T g = gy[nc] * inv;
      for (std::size_t i = 0; i < plane; ++i) p[i] += g;
    }
  };
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum(Var xv) {
  const Tensor4<T>& x = node(xv).value;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Node n;
  n.value = Tensor4<T>(Shape4{1, 1, 1, 1}, static_cast<T>(s));
  n.requires_grad = node(xv).requires_grad;
  const std::size_t xi = xv.id;
  n.back = [xi](Tape& t, std::size_t self) {
    if (!t.nodes_[xi].requires_grad) return;
    const T g = t.nodes_[self].grad[0];
    Tensor4<T>& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return push(std::move(n));
}

template <typename T>
const Tensor4<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
const Tensor4<T>& Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) throw StateError("no gradient recorded for variable; call backward first");
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var output) {
  if (nodes_.empty()) throw StateError("backward called before any forward pass");
  const Node& out = node(output);
  if (out.value.size() != 1) {
    throw StateError("backward without seed requires a single-element output, got " +
                     out.value.shape().str());
  }
  backward(output, Tensor4<T>(out.value.shape(), T{1}));
}

template <typename T>
void Tape<T>::backward(Var output, const Tensor4<T>& seed) {
  if (nodes_.empty()) throw StateError("backward called before any forward pass");
  Node& out = node(output);
  if (!(seed.shape() == out.value.shape())) {
    throw ShapeError("backward seed shape " + seed.shape().str() + " does not match output " +
                     out.value.shape().str());
  }
  if (!seed.all_finite()) throw NumericError("backward seed contains non-finite values");
  for (Node& n : nodes_) n.grad = Tensor4<T>();
  out.grad = seed;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.back) n.back(*this, id);
    if (n.param != nullptr) {
      Tensor4<T>& pg = n.param->grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

template <typename T>
void adam_step(std::span<Param<T>* const> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (Param<T>* p : params) {
      state.first_moment.emplace_back(p->value.size(), T{0});
      state.second_moment.emplace_back(p->value.size(), T{0});
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters but got " + std::to_string(params.size()));
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step = static_cast<T>(state.learning_rate / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(state.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<T>& p = *params[k];
    std::vector<T>& m = state.first_moment[k];
    std::vector<T>& v = state.second_moment[k];
    if (m.size() != p.value.size()) {
      throw ShapeError("adam moment size mismatch for parameter " + p.name);
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      p.value[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
    p.zero_grad();
  }
}

template class Tape<float>;
template class Tape<double>;
template void adam_step<float>(std::span<Param<float>* const>, AdamState<float>&);
template void adam_step<double>(std::span<Param<double>* const>, AdamState<double>&);

}  // namespace vision
