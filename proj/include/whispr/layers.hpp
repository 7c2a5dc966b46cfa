// whispr/layers.hpp
//
// Forward/backward kernels shared by the acoustic encoder, the character LM
// and the voice-conversion network: 3x3 convolution, 2x2 max-pooling, ReLU,
// dense layers and unidirectional LSTM/GRU recurrences.
//
// Backward routines accumulate parameter gradients into a GradBuffer and skip
// entries that are frozen in the ParamStore. Input gradients are produced
// only when the caller passes a destination.

#pragma once

#include <cmath>
#include <vector>

#include "whispr/common.hpp"
#include "whispr/params.hpp"

namespace whispr {

/// Channel x time x frequency activations, stored contiguously in that order.
struct Volume {
  std::size_t c = 0, t = 0, f = 0;
  std::vector<double> v;

  Volume() = default;
  Volume(std::size_t c_, std::size_t t_, std::size_t f_, double fill = 0.0)
      : c(c_), t(t_), f(f_), v(c_ * t_ * f_, fill) {}

  double& at(std::size_t ci, std::size_t ti, std::size_t fi) { return v[(ci * t + ti) * f + fi]; }
  double at(std::size_t ci, std::size_t ti, std::size_t fi) const { return v[(ci * t + ti) * f + fi]; }
  double* ptr(std::size_t ci, std::size_t ti) { return v.data() + (ci * t + ti) * f; }
  const double* ptr(std::size_t ci, std::size_t ti) const { return v.data() + (ci * t + ti) * f; }
};

/// Handles of one weight/bias pair inside a ParamStore.
struct DenseHandle {
  std::size_t w = 0;
  std::size_t b = 0;
};

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero "same" padding. Weight shape [out, in, 3, 3].

inline Volume conv3x3_forward(const ParamStore& ps, DenseHandle h, const Volume& in) {
  const auto& W = ps[h.w];
  const std::size_t cout = W.shape[0], cin = W.shape[1];
  if (cin != in.c) throw RuntimeError("conv3x3: channel mismatch in " + W.name);
  Volume out(cout, in.t, in.f);
  const auto T = static_cast<long>(in.t), F = static_cast<long>(in.f);
  for (std::size_t co = 0; co < cout; ++co) {
    const double bias = ps[h.b].value[co];
    std::fill(out.ptr(co, 0), out.ptr(co, 0) + in.t * in.f, bias);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (long dt = 0; dt < 3; ++dt) {
        const long ot = dt - 1;
        const long t0 = std::max(0L, -ot), t1 = std::min(T, T - ot);
        for (long df = 0; df < 3; ++df) {
          const long of = df - 1;
          const long f0 = std::max(0L, -of), f1 = std::min(F, F - of);
          const double wv = W.value[((co * cin + ci) * 3 + dt) * 3 + df];
          for (long t = t0; t < t1; ++t) {
            const double* src = in.ptr(ci, t + ot) + of;
            double* dst = out.ptr(co, t);
            for (long f = f0; f < f1; ++f) dst[f] += wv * src[f];
          }
        }
      }
    }
  }
  return out;
}

inline void conv3x3_backward(const ParamStore& ps, DenseHandle h, const Volume& in, const Volume& dout,
                             GradBuffer& grads, Volume* din) {
  const auto& W = ps[h.w];
  const std::size_t cout = W.shape[0], cin = W.shape[1];
  const bool want_w = !W.frozen, want_b = !ps[h.b].frozen;
  if (!want_w && !want_b && din == nullptr) return;
  if (din) *din = Volume(cin, in.t, in.f);
  const auto T = static_cast<long>(in.t), F = static_cast<long>(in.f);
  for (std::size_t co = 0; co < cout; ++co) {
    if (want_b) {
      double s = 0.0;
      const double* g = dout.ptr(co, 0);
      for (std::size_t k = 0; k < in.t * in.f; ++k) s += g[k];
      grads[h.b][co] += s;
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (long dt = 0; dt < 3; ++dt) {
        const long ot = dt - 1;
        const long t0 = std::max(0L, -ot), t1 = std::min(T, T - ot);
        for (long df = 0; df < 3; ++df) {
          const long of = df - 1;
          const long f0 = std::max(0L, -of), f1 = std::min(F, F - of);
          const std::size_t wi = ((co * cin + ci) * 3 + dt) * 3 + df;
          const double wv = W.value[wi];
          double acc = 0.0;
          for (long t = t0; t < t1; ++t) {
            const double* g = dout.ptr(co, t);
            const double* src = in.ptr(ci, t + ot) + of;
            if (want_w) {
              for (long f = f0; f < f1; ++f) acc += g[f] * src[f];
            }
            if (din) {
              double* d = din->ptr(ci, t + ot) + of;
              for (long f = f0; f < f1; ++f) d[f] += wv * g[f];
            }
          }
          if (want_w) grads[h.w][wi] += acc;
        }
      }
    }
  }
}

inline void relu_inplace(Volume& x) {
  for (double& v : x.v) v = v > 0.0 ? v : 0.0;
}

/// dx = dy where the ReLU output was positive.
inline void relu_backward_inplace(const Volume& y, Volume& dy) {
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    if (!(y.v[i] > 0.0)) dy.v[i] = 0.0;
  }
}

/// 2x2 max-pooling with ceil-mode output; records the winning input index.
struct PoolResult {
  Volume out;
  std::vector<std::size_t> argmax;
};

inline PoolResult maxpool2_forward(const Volume& in) {
  PoolResult r;
  const std::size_t to = (in.t + 1) / 2, fo = (in.f + 1) / 2;
  r.out = Volume(in.c, to, fo);
  r.argmax.resize(r.out.v.size());
  for (std::size_t c = 0; c < in.c; ++c) {
    for (std::size_t t = 0; t < to; ++t) {
      for (std::size_t f = 0; f < fo; ++f) {
        double best = kNegInf;
        std::size_t best_i = 0;
        for (std::size_t a = 2 * t; a < std::min(in.t, 2 * t + 2); ++a) {
          for (std::size_t b = 2 * f; b < std::min(in.f, 2 * f + 2); ++b) {
            const std::size_t i = (c * in.t + a) * in.f + b;
            if (in.v[i] > best) {
              best = in.v[i];
              best_i = i;
            }
          }
        }
        const std::size_t o = (c * to + t) * fo + f;
        r.out.v[o] = best;
        r.argmax[o] = best_i;
      }
    }
  }
  return r;
}

inline Volume maxpool2_backward(const PoolResult& pr, const Volume& in_shape, const Volume& dout) {
  Volume din(in_shape.c, in_shape.t, in_shape.f);
  for (std::size_t o = 0; o < dout.v.size(); ++o) din.v[pr.argmax[o]] += dout.v[o];
  return din;
}

// ---------------------------------------------------------------------------
// Dense: Y = X W^T + b, W shape [out, in].

inline Matrix dense_forward(const ParamStore& ps, DenseHandle h, const Matrix& x) {
  const auto& W = ps[h.w];
  const std::size_t out = W.shape[0], in = W.shape[1];
  if (x.cols() != in) throw RuntimeError("dense: input width mismatch in " + W.name);
  Matrix y(x.rows(), out);
  const auto& b = ps[h.b].value;
  for (std::size_t n = 0; n < x.rows(); ++n) {
    const double* xr = x.row(n).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = W.value.data() + o * in;
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      y(n, o) = s;
    }
  }
  return y;
}

inline void dense_backward(const ParamStore& ps, DenseHandle h, const Matrix& x, const Matrix& dy, GradBuffer& grads,
                           Matrix* dx) {
  const auto& W = ps[h.w];
  const std::size_t out = W.shape[0], in = W.shape[1];
  const bool want_w = !W.frozen, want_b = !ps[h.b].frozen;
  if (dx) *dx = Matrix(x.rows(), in);
  for (std::size_t n = 0; n < x.rows(); ++n) {
    const double* xr = x.row(n).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy(n, o);
      if (want_b) grads[h.b][o] += g;
      if (want_w) {
        double* gw = grads[h.w].data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gw[i] += g * xr[i];
      }
      if (dx) {
        const double* wr = W.value.data() + o * in;
        double* d = dx->row(n).data();
        for (std::size_t i = 0; i < in; ++i) d[i] += g * wr[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Recurrent cells (one direction). Gate blocks are stacked along the rows of
// Wx [G*U, in], Wh [G*U, U]; LSTM order i, f, g, o (G = 4) with a single
// bias b, GRU order r, z, n (G = 3) with input bias bx and hidden bias bh.

enum class RecurrentKind { lstm, gru };

struct CellHandle {
  RecurrentKind kind = RecurrentKind::gru;
  std::size_t wx = 0, wh = 0, bx = 0, bh = 0;  // LSTM uses bx as its bias
  std::size_t units = 0;
};

struct CellCache {
  Matrix h;      // T x U outputs
  Matrix c;      // LSTM cell state
  Matrix gates;  // post-activation gates (LSTM i,f,g,o; GRU r,z,n)
  Matrix hn;     // GRU: Wh_n h_prev + bh_n
};

namespace detail {

/// y[0..rows) += M[rows, cols] * x
inline void matvec_acc(const double* m, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* mr = m + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += mr[c] * x[c];
    y[r] += s;
  }
}

/// y[0..cols) += M^T x
inline void matvec_t_acc(const double* m, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double xr = x[r];
    const double* mr = m + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += mr[c] * xr;
  }
}

inline void outer_acc(double* g, const double* a, std::size_t rows, const double* b, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = a[r];
    double* gr = g + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gr[c] += ar * b[c];
  }
}

}  // namespace detail

inline CellCache cell_forward(const ParamStore& ps, const CellHandle& h, const Matrix& x, bool reverse,
                              const std::vector<double>* h0 = nullptr) {
  const std::size_t T = x.rows(), U = h.units, in = x.cols();
  const auto& Wx = ps[h.wx].value;
  const auto& Wh = ps[h.wh].value;
  if (ps[h.wx].shape[1] != in) throw RuntimeError("recurrent: input width mismatch in " + ps[h.wx].name);
  CellCache cc;
  cc.h = Matrix(T, U);
  std::vector<double> hprev = h0 ? *h0 : std::vector<double>(U, 0.0);
  if (h.kind == RecurrentKind::lstm) {
    cc.c = Matrix(T, U);
    cc.gates = Matrix(T, 4 * U);
    std::vector<double> cprev(U, 0.0), a(4 * U);
    const auto& b = ps[h.bx].value;
    for (std::size_t s = 0; s < T; ++s) {
      const std::size_t t = reverse ? T - 1 - s : s;
      std::copy(b.begin(), b.end(), a.begin());
      detail::matvec_acc(Wx.data(), 4 * U, in, x.row(t).data(), a.data());
      detail::matvec_acc(Wh.data(), 4 * U, U, hprev.data(), a.data());
      auto g = cc.gates.row(t);
      for (std::size_t u = 0; u < U; ++u) {
        const double ig = sigmoid(a[u]);
        const double fg = sigmoid(a[U + u]);
        const double gg = std::tanh(a[2 * U + u]);
        const double og = sigmoid(a[3 * U + u]);
        g[u] = ig;
        g[U + u] = fg;
        g[2 * U + u] = gg;
        g[3 * U + u] = og;
        const double c = fg * cprev[u] + ig * gg;
        cc.c(t, u) = c;
        cc.h(t, u) = og * std::tanh(c);
      }
      for (std::size_t u = 0; u < U; ++u) {
        cprev[u] = cc.c(t, u);
        hprev[u] = cc.h(t, u);
      }
    }
  } else {
    cc.gates = Matrix(T, 3 * U);
    cc.hn = Matrix(T, U);
    const auto& bx = ps[h.bx].value;
    const auto& bh = ps[h.bh].value;
    std::vector<double> gx(3 * U), gh(3 * U);
    for (std::size_t s = 0; s < T; ++s) {
      const std::size_t t = reverse ? T - 1 - s : s;
      std::copy(bx.begin(), bx.end(), gx.begin());
      std::copy(bh.begin(), bh.end(), gh.begin());
      detail::matvec_acc(Wx.data(), 3 * U, in, x.row(t).data(), gx.data());
      detail::matvec_acc(Wh.data(), 3 * U, U, hprev.data(), gh.data());
      auto g = cc.gates.row(t);
      for (std::size_t u = 0; u < U; ++u) {
        const double r = sigmoid(gx[u] + gh[u]);
        const double z = sigmoid(gx[U + u] + gh[U + u]);
        const double n = std::tanh(gx[2 * U + u] + r * gh[2 * U + u]);
        g[u] = r;
        g[U + u] = z;
        g[2 * U + u] = n;
        cc.hn(t, u) = gh[2 * U + u];
        cc.h(t, u) = (1.0 - z) * n + z * hprev[u];
      }
      for (std::size_t u = 0; u < U; ++u) hprev[u] = cc.h(t, u);
    }
  }
  return cc;
}

/// Backpropagation through time for one direction. `dh` is dLoss/dh_t from
/// above; `dx` (if given) receives the accumulated input gradient.
inline void cell_backward(const ParamStore& ps, const CellHandle& h, const Matrix& x, bool reverse,
                          const CellCache& cc, const Matrix& dh, GradBuffer& grads, Matrix* dx,
                          const std::vector<double>* h0 = nullptr) {
  const std::size_t T = x.rows(), U = h.units, in = x.cols();
  const auto& Wx = ps[h.wx].value;
  const auto& Wh = ps[h.wh].value;
  const bool want_wx = !ps[h.wx].frozen, want_wh = !ps[h.wh].frozen, want_bx = !ps[h.bx].frozen;
  const bool want_bh = h.kind == RecurrentKind::gru && !ps[h.bh].frozen;
  const std::vector<double> zeros(U, 0.0);
  const std::vector<double>& hinit = h0 ? *h0 : zeros;
  std::vector<double> dh_next(U, 0.0), dc_next(U, 0.0);

  auto prev_index = [&](std::size_t s) -> long {
    if (s == 0) return -1;
    return static_cast<long>(reverse ? T - s : s - 1);
  };

  if (h.kind == RecurrentKind::lstm) {
    std::vector<double> da(4 * U);
    for (std::size_t s = T; s-- > 0;) {
      const std::size_t t = reverse ? T - 1 - s : s;
      const long tp = prev_index(s);
      const double* hprev = tp >= 0 ? cc.h.row(tp).data() : hinit.data();
      auto g = cc.gates.row(t);
      for (std::size_t u = 0; u < U; ++u) {
        const double ig = g[u], fg = g[U + u], gg = g[2 * U + u], og = g[3 * U + u];
        const double cprev = tp >= 0 ? cc.c(tp, u) : 0.0;
        const double tc = std::tanh(cc.c(t, u));
        const double dht = dh(t, u) + dh_next[u];
        const double dout = dht * tc;
        const double dc = dc_next[u] + dht * og * (1.0 - tc * tc);
        da[u] = dc * gg * ig * (1.0 - ig);
        da[U + u] = dc * cprev * fg * (1.0 - fg);
        da[2 * U + u] = dc * ig * (1.0 - gg * gg);
        da[3 * U + u] = dout * og * (1.0 - og);
        dc_next[u] = dc * fg;
      }
      if (want_wx) detail::outer_acc(grads[h.wx].data(), da.data(), 4 * U, x.row(t).data(), in);
      if (want_wh) detail::outer_acc(grads[h.wh].data(), da.data(), 4 * U, hprev, U);
      if (want_bx) {
        for (std::size_t k = 0; k < 4 * U; ++k) grads[h.bx][k] += da[k];
      }
      if (dx) detail::matvec_t_acc(Wx.data(), 4 * U, in, da.data(), dx->row(t).data());
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      detail::matvec_t_acc(Wh.data(), 4 * U, U, da.data(), dh_next.data());
    }
  } else {
    std::vector<double> dgx(3 * U), dgh(3 * U);
    for (std::size_t s = T; s-- > 0;) {
      const std::size_t t = reverse ? T - 1 - s : s;
      const long tp = prev_index(s);
      const double* hprev = tp >= 0 ? cc.h.row(tp).data() : hinit.data();
      auto g = cc.gates.row(t);
      std::vector<double> dh_prev(U, 0.0);
      for (std::size_t u = 0; u < U; ++u) {
        const double r = g[u], z = g[U + u], n = g[2 * U + u];
        const double dht = dh(t, u) + dh_next[u];
        const double dn = dht * (1.0 - z);
        const double dz = dht * (hprev[u] - n);
        dh_prev[u] = dht * z;
        const double dan = dn * (1.0 - n * n);
        const double dr = dan * cc.hn(t, u);
        const double dar = dr * r * (1.0 - r);
        const double daz = dz * z * (1.0 - z);
        dgx[u] = dar;
        dgh[u] = dar;
        dgx[U + u] = daz;
        dgh[U + u] = daz;
        dgx[2 * U + u] = dan;
        dgh[2 * U + u] = dan * r;
      }
      if (want_wx) detail::outer_acc(grads[h.wx].data(), dgx.data(), 3 * U, x.row(t).data(), in);
      if (want_wh) detail::outer_acc(grads[h.wh].data(), dgh.data(), 3 * U, hprev, U);
      if (want_bx) {
        for (std::size_t k = 0; k < 3 * U; ++k) grads[h.bx][k] += dgx[k];
      }
      if (want_bh) {
        for (std::size_t k = 0; k < 3 * U; ++k) grads[h.bh][k] += dgh[k];
      }
      if (dx) detail::matvec_t_acc(Wx.data(), 3 * U, in, dgx.data(), dx->row(t).data());
      detail::matvec_t_acc(Wh.data(), 3 * U, U, dgh.data(), dh_prev.data());
      dh_next = std::move(dh_prev);
    }
  }
}

/// Registers one recurrent direction's parameters and initializes them.
inline CellHandle add_cell(ParamStore& ps, const std::string& prefix, RecurrentKind kind, std::size_t in,
                           std::size_t units, std::uint32_t layer, Rng& rng) {
  CellHandle h;
  h.kind = kind;
  h.units = units;
  const std::size_t G = kind == RecurrentKind::lstm ? 4 : 3;
  h.wx = ps.add(prefix + ".wx", {G * units, in}, layer);
  h.wh = ps.add(prefix + ".wh", {G * units, units}, layer);
  init_uniform(ps[h.wx], in, rng);
  init_uniform(ps[h.wh], units, rng);
  if (kind == RecurrentKind::lstm) {
    h.bx = ps.add(prefix + ".b", {G * units}, layer);
    for (std::size_t u = 0; u < units; ++u) ps[h.bx].value[units + u] = 1.0;  // forget gate
  } else {
    h.bx = ps.add(prefix + ".bx", {G * units}, layer);
    h.bh = ps.add(prefix + ".bh", {G * units}, layer);
  }
  return h;
}

inline DenseHandle add_dense(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out,
                             std::uint32_t layer, Rng& rng) {
  DenseHandle h;
  h.w = ps.add(prefix + ".w", {out, in}, layer);
  h.b = ps.add(prefix + ".b", {out}, layer);
  init_uniform(ps[h.w], in, rng);
  return h;
}

}  // namespace whispr
