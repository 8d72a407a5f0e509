#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "nowdiff/errors.hpp"
#include "nowdiff/types.hpp"

namespace nowdiff {

template <typename S>
struct Var {
  int i = -1;
};

/// Reverse-mode tape over channels x pixels matrices. Operations append
/// nodes; backward() walks them in reverse and accumulates parameter
/// gradients into the sinks registered by param().
template <typename S>
class Tape {
 public:
  struct Node {
    Matrix<S> val;
    Matrix<S> grad;  // allocated on first touch
    int h = 0, w = 0;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  std::vector<Node> nodes;

  void clear() {
    nodes.clear();
    sinks_.clear();
  }

  const Node& node(Var<S> v) const { return nodes[v.i]; }
  Node& node(Var<S> v) { return nodes[v.i]; }
  const Matrix<S>& val(Var<S> v) const { return nodes[v.i].val; }
  bool wants(Var<S> v) const { return nodes[v.i].needs_grad; }

  Matrix<S>& grad(int i) {
    Node& n = nodes[i];
    if (n.grad.size() == 0) n.grad = Matrix<S>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  int next_index() const { return static_cast<int>(nodes.size()); }

  Var<S> input(Matrix<S> v, int h = 0, int w = 0) {
    return push(std::move(v), h, w, false, nullptr);
  }

  Var<S> input_stack(const FieldStack<S>& s) { return input(s.data, s.h, s.w); }

  /// Leaf whose gradient accumulates into an external buffer after backward.
  Var<S> param(const Matrix<S>& value, Matrix<S>* grad_sink, int h = 0, int w = 0) {
    Var<S> v = push(value, h, w, true, nullptr);
    sinks_.push_back({v.i, grad_sink});
    return v;
  }

  Var<S> push(Matrix<S> v, int h, int w, bool needs_grad,
              std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(v);
    n.h = h;
    n.w = w;
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes.push_back(std::move(n));
    return Var<S>{static_cast<int>(nodes.size()) - 1};
  }

  FieldStack<S> stack_of(Var<S> v) const {
    FieldStack<S> s;
    s.data = nodes[v.i].val;
    s.h = nodes[v.i].h;
    s.w = nodes[v.i].w;
    return s;
  }

  void backward(Var<S> loss, S seed = S(1)) {
    if (nodes[loss.i].val.size() != 1)
      throw ContractError("backward: loss must be scalar");
    grad(loss.i)(0, 0) += seed;
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes[i];
      if (n.back && n.needs_grad && n.grad.size() != 0) n.back(*this);
    }
    for (const auto& [idx, sink] : sinks_) {
      if (nodes[idx].grad.size() != 0) *sink += nodes[idx].grad;
    }
  }

 private:
  std::vector<std::pair<int, Matrix<S>*>> sinks_;
};

// ---------------------------------------------------------------------------
// Elementwise and broadcast operations
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Tape<S>& t, Var<S> a, Var<S> b) {
  const auto& an = t.node(a);
  const auto& bn = t.node(b);
  if (an.val.rows() != bn.val.rows() || an.val.cols() != bn.val.cols())
    throw ContractError("add: shape mismatch");
  const int yi = t.next_index();
  return t.push(an.val + bn.val, an.h, an.w, an.needs_grad || bn.needs_grad,
                [=](Tape<S>& tp) {
                  const Matrix<S>& gy = tp.nodes[yi].grad;
                  if (tp.wants(a)) tp.grad(a.i) += gy;
                  if (tp.wants(b)) tp.grad(b.i) += gy;
                });
}

template <typename S>
Var<S> add_scaled(Tape<S>& t, Var<S> a, Var<S> b, S sa, S sb) {
  const auto& an = t.node(a);
  const auto& bn = t.node(b);
  if (an.val.rows() != bn.val.rows() || an.val.cols() != bn.val.cols())
    throw ContractError("add_scaled: shape mismatch");
  const int yi = t.next_index();
  return t.push(sa * an.val + sb * bn.val, an.h, an.w,
                an.needs_grad || bn.needs_grad, [=](Tape<S>& tp) {
                  const Matrix<S>& gy = tp.nodes[yi].grad;
                  if (tp.wants(a)) tp.grad(a.i) += sa * gy;
                  if (tp.wants(b)) tp.grad(b.i) += sb * gy;
                });
}

template <typename S>
Var<S> scale(Tape<S>& t, Var<S> a, S s) {
  const auto& an = t.node(a);
  const int yi = t.next_index();
  return t.push(s * an.val, an.h, an.w, an.needs_grad, [=](Tape<S>& tp) {
    if (tp.wants(a)) tp.grad(a.i) += s * tp.nodes[yi].grad;
  });
}

template <typename S>
Var<S> relu(Tape<S>& t, Var<S> a) {
  const auto& an = t.node(a);
  const int yi = t.next_index();
  return t.push(an.val.cwiseMax(S(0)), an.h, an.w, an.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(a)) return;
    const Matrix<S>& x = tp.nodes[a.i].val;
    const Matrix<S>& gy = tp.nodes[yi].grad;
    tp.grad(a.i).array() += gy.array() * (x.array() > S(0)).template cast<S>();
  });
}

template <typename S>
Var<S> sigmoid(Tape<S>& t, Var<S> a) {
  const auto& an = t.node(a);
  Matrix<S> y = (S(1) / (S(1) + (-an.val.array()).exp())).matrix();
  const int yi = t.next_index();
  return t.push(std::move(y), an.h, an.w, an.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(a)) return;
    const auto& yv = tp.nodes[yi].val.array();
    tp.grad(a.i).array() += tp.nodes[yi].grad.array() * yv * (S(1) - yv);
  });
}

template <typename S>
Var<S> silu(Tape<S>& t, Var<S> a) {
  const auto& an = t.node(a);
  Array2<S> sig = S(1) / (S(1) + (-an.val.array()).exp());
  Matrix<S> y = (an.val.array() * sig).matrix();
  const int yi = t.next_index();
  return t.push(std::move(y), an.h, an.w, an.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(a)) return;
    const auto& x = tp.nodes[a.i].val.array();
    Array2<S> s = S(1) / (S(1) + (-x).exp());
    tp.grad(a.i).array() += tp.nodes[yi].grad.array() * s * (S(1) + x * (S(1) - s));
  });
}

/// x (C,P) plus a per-channel column vector v (C,1).
template <typename S>
Var<S> add_col_broadcast(Tape<S>& t, Var<S> x, Var<S> v) {
  const auto& xn = t.node(x);
  const auto& vn = t.node(v);
  if (vn.val.cols() != 1 || vn.val.rows() != xn.val.rows())
    throw ContractError("add_col_broadcast: vector shape mismatch");
  Matrix<S> y = xn.val;
  y.colwise() += vn.val.col(0);
  const int yi = t.next_index();
  return t.push(std::move(y), xn.h, xn.w, xn.needs_grad || vn.needs_grad,
                [=](Tape<S>& tp) {
                  const Matrix<S>& gy = tp.nodes[yi].grad;
                  if (tp.wants(x)) tp.grad(x.i) += gy;
                  if (tp.wants(v)) tp.grad(v.i).col(0) += gy.rowwise().sum();
                });
}

/// x (C,P) gated by a per-position row vector g (1,P).
template <typename S>
Var<S> mul_row_broadcast(Tape<S>& t, Var<S> x, Var<S> g) {
  const auto& xn = t.node(x);
  const auto& gn = t.node(g);
  if (gn.val.rows() != 1 || gn.val.cols() != xn.val.cols())
    throw ContractError("mul_row_broadcast: gate shape mismatch");
  Matrix<S> y = xn.val.array().rowwise() * gn.val.row(0).array();
  const int yi = t.next_index();
  return t.push(std::move(y), xn.h, xn.w, xn.needs_grad || gn.needs_grad,
                [=](Tape<S>& tp) {
                  const Matrix<S>& gy = tp.nodes[yi].grad;
                  if (tp.wants(x))
                    tp.grad(x.i).array() +=
                        gy.array().rowwise() * tp.nodes[g.i].val.row(0).array();
                  if (tp.wants(g))
                    tp.grad(g.i).row(0) +=
                        (gy.array() * tp.nodes[x.i].val.array()).colwise().sum().matrix();
                });
}

template <typename S>
Var<S> concat_rows(Tape<S>& t, Var<S> a, Var<S> b) {
  const auto& an = t.node(a);
  const auto& bn = t.node(b);
  if (an.val.cols() != bn.val.cols())
    throw ContractError("concat_rows: column mismatch");
  Matrix<S> y(an.val.rows() + bn.val.rows(), an.val.cols());
  y.topRows(an.val.rows()) = an.val;
  y.bottomRows(bn.val.rows()) = bn.val;
  const long ca = an.val.rows(), cb = bn.val.rows();
  const int yi = t.next_index();
  return t.push(std::move(y), an.h, an.w, an.needs_grad || bn.needs_grad,
                [=](Tape<S>& tp) {
                  const Matrix<S>& gy = tp.nodes[yi].grad;
                  if (tp.wants(a)) tp.grad(a.i) += gy.topRows(ca);
                  if (tp.wants(b)) tp.grad(b.i) += gy.bottomRows(cb);
                });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Tape<S>& t, Var<S> a, Var<S> b, bool trans_a = false,
              bool trans_b = false) {
  const auto& an = t.node(a);
  const auto& bn = t.node(b);
  const long ak = trans_a ? an.val.rows() : an.val.cols();
  const long bk = trans_b ? bn.val.cols() : bn.val.rows();
  if (ak != bk) throw ContractError("matmul: inner dimension mismatch");
  Matrix<S> y;
  if (!trans_a && !trans_b)
    y = an.val * bn.val;
  else if (trans_a && !trans_b)
    y = an.val.transpose() * bn.val;
  else if (!trans_a && trans_b)
    y = an.val * bn.val.transpose();
  else
    y = an.val.transpose() * bn.val.transpose();
  const int yi = t.next_index();
  return t.push(std::move(y), 0, 0, an.needs_grad || bn.needs_grad,
                [=](Tape<S>& tp) {
                  const Matrix<S>& gy = tp.nodes[yi].grad;
                  const Matrix<S>& av = tp.nodes[a.i].val;
                  const Matrix<S>& bv = tp.nodes[b.i].val;
                  if (tp.wants(a)) {
                    if (!trans_a && !trans_b)
                      tp.grad(a.i).noalias() += gy * bv.transpose();
                    else if (!trans_a && trans_b)
                      tp.grad(a.i).noalias() += gy * bv;
                    else if (trans_a && !trans_b)
                      tp.grad(a.i).noalias() += bv * gy.transpose();
                    else
                      tp.grad(a.i).noalias() += bv.transpose() * gy.transpose();
                  }
                  if (tp.wants(b)) {
                    if (!trans_a && !trans_b)
                      tp.grad(b.i).noalias() += av.transpose() * gy;
                    else if (trans_a && !trans_b)
                      tp.grad(b.i).noalias() += av * gy;
                    else if (!trans_a && trans_b)
                      tp.grad(b.i).noalias() += gy.transpose() * av;
                    else
                      tp.grad(b.i).noalias() += gy.transpose() * av.transpose();
                  }
                });
}

/// y = W x + b for a column vector x.
template <typename S>
Var<S> linear(Tape<S>& t, Var<S> x, Var<S> w, Var<S> b) {
  return add_col_broadcast(t, matmul(t, w, x), b);
}

template <typename S>
Var<S> softmax_rows(Tape<S>& t, Var<S> a) {
  const auto& an = t.node(a);
  Matrix<S> y(an.val.rows(), an.val.cols());
  for (Eigen::Index r = 0; r < an.val.rows(); ++r) {
    const S m = an.val.row(r).maxCoeff();
    Array1<S> e = (an.val.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  const int yi = t.next_index();
  return t.push(std::move(y), an.h, an.w, an.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(a)) return;
    const Matrix<S>& yv = tp.nodes[yi].val;
    const Matrix<S>& gy = tp.nodes[yi].grad;
    Matrix<S>& gx = tp.grad(a.i);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const S dot = (gy.row(r).array() * yv.row(r).array()).sum();
      gx.row(r).array() += yv.row(r).array() * (gy.row(r).array() - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial operations
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
Matrix<S> im2col(const Matrix<S>& x, int h, int w, int k, int stride, int pad,
                 int oh, int ow) {
  const int cin = static_cast<int>(x.rows());
  Matrix<S> cols = Matrix<S>::Zero(static_cast<long>(cin) * k * k,
                                   static_cast<long>(oh) * ow);
  for (int ox = 0; ox < ow; ++ox) {
    for (int oy = 0; oy < oh; ++oy) {
      const int q = ox * oh + oy;
      for (int ki = 0; ki < k; ++ki) {
        const int iy = oy * stride + ki - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kj = 0; kj < k; ++kj) {
          const int ix = ox * stride + kj - pad;
          if (ix < 0 || ix >= w) continue;
          const int p = ix * h + iy;
          const int base = (ki * k + kj);
          for (int c = 0; c < cin; ++c) cols(c * k * k + base, q) = x(c, p);
        }
      }
    }
  }
  return cols;
}

template <typename S>
void col2im_add(const Matrix<S>& cols, Matrix<S>& dx, int h, int w, int k,
                int stride, int pad, int oh, int ow) {
  const int cin = static_cast<int>(dx.rows());
  for (int ox = 0; ox < ow; ++ox) {
    for (int oy = 0; oy < oh; ++oy) {
      const int q = ox * oh + oy;
      for (int ki = 0; ki < k; ++ki) {
        const int iy = oy * stride + ki - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kj = 0; kj < k; ++kj) {
          const int ix = ox * stride + kj - pad;
          if (ix < 0 || ix >= w) continue;
          const int p = ix * h + iy;
          const int base = (ki * k + kj);
          for (int c = 0; c < cin; ++c) dx(c, p) += cols(c * k * k + base, q);
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution via im2col. Weight layout: (c_out, c_in*k*k) with the
/// inner index c*k*k + ki*k + kj (ki along y, kj along x).
template <typename S>
Var<S> conv2d(Tape<S>& t, Var<S> x, Var<S> w, Var<S> b, int k, int stride, int pad) {
  const auto& xn = t.node(x);
  const auto& wn = t.node(w);
  const auto& bn = t.node(b);
  const int cin = static_cast<int>(xn.val.rows());
  if (wn.val.cols() != static_cast<long>(cin) * k * k)
    throw ContractError("conv2d: weight/input channel mismatch");
  if (bn.val.rows() != wn.val.rows() || bn.val.cols() != 1)
    throw ContractError("conv2d: bias shape mismatch");
  const int h = xn.h, wsp = xn.w;
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wsp + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1) throw ContractError("conv2d: output collapses to zero size");

  auto cols = std::make_shared<Matrix<S>>(
      detail::im2col(xn.val, h, wsp, k, stride, pad, oh, ow));
  Matrix<S> y = wn.val * (*cols);
  y.colwise() += bn.val.col(0);

  const int yi = t.next_index();
  const bool ng = xn.needs_grad || wn.needs_grad || bn.needs_grad;
  return t.push(std::move(y), oh, ow, ng, [=](Tape<S>& tp) {
    const Matrix<S>& gy = tp.nodes[yi].grad;
    if (tp.wants(w)) tp.grad(w.i).noalias() += gy * cols->transpose();
    if (tp.wants(b)) tp.grad(b.i).col(0) += gy.rowwise().sum();
    if (tp.wants(x)) {
      Matrix<S> dcols = tp.nodes[w.i].val.transpose() * gy;
      detail::col2im_add(dcols, tp.grad(x.i), h, wsp, k, stride, pad, oh, ow);
    }
  });
}

template <typename S>
Var<S> avg_pool2(Tape<S>& t, Var<S> x) {
  const auto& xn = t.node(x);
  const int h = xn.h, w = xn.w;
  if (h % 2 != 0 || w % 2 != 0) throw ContractError("avg_pool2: odd spatial size");
  const int oh = h / 2, ow = w / 2;
  const int c = static_cast<int>(xn.val.rows());
  Matrix<S> y(c, static_cast<long>(oh) * ow);
  for (int ox = 0; ox < ow; ++ox)
    for (int oy = 0; oy < oh; ++oy) {
      const int q = ox * oh + oy;
      const int p00 = (2 * ox) * h + 2 * oy;
      const int p01 = (2 * ox + 1) * h + 2 * oy;
      y.col(q) = S(0.25) * (xn.val.col(p00) + xn.val.col(p00 + 1) +
                            xn.val.col(p01) + xn.val.col(p01 + 1));
    }
  const int yi = t.next_index();
  return t.push(std::move(y), oh, ow, xn.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(x)) return;
    const Matrix<S>& gy = tp.nodes[yi].grad;
    Matrix<S>& gx = tp.grad(x.i);
    for (int ox = 0; ox < ow; ++ox)
      for (int oy = 0; oy < oh; ++oy) {
        const int q = ox * oh + oy;
        const int p00 = (2 * ox) * h + 2 * oy;
        const int p01 = (2 * ox + 1) * h + 2 * oy;
        gx.col(p00) += S(0.25) * gy.col(q);
        gx.col(p00 + 1) += S(0.25) * gy.col(q);
        gx.col(p01) += S(0.25) * gy.col(q);
        gx.col(p01 + 1) += S(0.25) * gy.col(q);
      }
  });
}

template <typename S>
Var<S> upsample_nearest2(Tape<S>& t, Var<S> x) {
  const auto& xn = t.node(x);
  const int h = xn.h, w = xn.w;
  const int oh = 2 * h, ow = 2 * w;
  const int c = static_cast<int>(xn.val.rows());
  Matrix<S> y(c, static_cast<long>(oh) * ow);
  for (int ox = 0; ox < ow; ++ox)
    for (int oy = 0; oy < oh; ++oy)
      y.col(ox * oh + oy) = xn.val.col((ox / 2) * h + oy / 2);
  const int yi = t.next_index();
  return t.push(std::move(y), oh, ow, xn.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(x)) return;
    const Matrix<S>& gy = tp.nodes[yi].grad;
    Matrix<S>& gx = tp.grad(x.i);
    for (int ox = 0; ox < ow; ++ox)
      for (int oy = 0; oy < oh; ++oy)
        gx.col((ox / 2) * h + oy / 2) += gy.col(ox * oh + oy);
  });
}

/// Group normalization over (channel-group x all pixels) with per-channel
/// affine parameters gamma, beta (each C x 1).
template <typename S>
Var<S> group_norm(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta, int groups,
                  S eps = S(1e-5)) {
  const auto& xn = t.node(x);
  const int c = static_cast<int>(xn.val.rows());
  if (groups < 1 || c % groups != 0)
    throw ConfigError("group_norm: channels must divide evenly into groups");
  const int cg = c / groups;
  const long p = xn.val.cols();

  auto xhat = std::make_shared<Matrix<S>>(c, p);
  auto inv_std = std::make_shared<Array1<S>>(groups);
  for (int g = 0; g < groups; ++g) {
    auto block = xn.val.middleRows(g * cg, cg);
    const S mean = block.mean();
    const S var = (block.array() - mean).square().sum() / S(block.size());
    const S inv = S(1) / std::sqrt(var + eps);
    (*inv_std)[g] = inv;
    xhat->middleRows(g * cg, cg) = ((block.array() - mean) * inv).matrix();
  }
  Matrix<S> y = (xhat->array().colwise() * t.node(gamma).val.col(0).array()).matrix();
  y.colwise() += t.node(beta).val.col(0);

  const bool ng = xn.needs_grad || t.node(gamma).needs_grad || t.node(beta).needs_grad;
  const int yi = t.next_index();
  return t.push(std::move(y), xn.h, xn.w, ng, [=](Tape<S>& tp) {
    const Matrix<S>& gy = tp.nodes[yi].grad;
    if (tp.wants(beta)) tp.grad(beta.i).col(0) += gy.rowwise().sum();
    if (tp.wants(gamma))
      tp.grad(gamma.i).col(0) += (gy.array() * xhat->array()).rowwise().sum().matrix();
    if (tp.wants(x)) {
      Matrix<S> dxhat =
          (gy.array().colwise() * tp.nodes[gamma.i].val.col(0).array()).matrix();
      Matrix<S>& gx = tp.grad(x.i);
      for (int g = 0; g < groups; ++g) {
        auto dxh = dxhat.middleRows(g * cg, cg);
        auto xh = xhat->middleRows(g * cg, cg);
        const S n = S(dxh.size());
        const S s1 = dxh.sum();
        const S s2 = (dxh.array() * xh.array()).sum();
        gx.middleRows(g * cg, cg).array() +=
            (*inv_std)[g] * (dxh.array() - (s1 + xh.array() * s2) / n);
      }
    }
  });
}

/// Per-position channel max and mean: (C,P) -> (2,P).
template <typename S>
Var<S> zpool(Tape<S>& t, Var<S> x) {
  const auto& xn = t.node(x);
  const long p = xn.val.cols();
  const int c = static_cast<int>(xn.val.rows());
  Matrix<S> y(2, p);
  auto argmax = std::make_shared<std::vector<int>>(p);
  for (long q = 0; q < p; ++q) {
    Eigen::Index arg;
    y(0, q) = xn.val.col(q).maxCoeff(&arg);
    (*argmax)[q] = static_cast<int>(arg);
    y(1, q) = xn.val.col(q).mean();
  }
  const int yi = t.next_index();
  return t.push(std::move(y), xn.h, xn.w, xn.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(x)) return;
    const Matrix<S>& gy = tp.nodes[yi].grad;
    Matrix<S>& gx = tp.grad(x.i);
    const S inv_c = S(1) / S(c);
    for (long q = 0; q < p; ++q) {
      gx((*argmax)[q], q) += gy(0, q);
      gx.col(q).array() += gy(1, q) * inv_c;
    }
  });
}

/// Gather through a precomputed linear-index table: out.data()[i] equals
/// in.data()[lut[i]]. Used for the axis rotations of triplet attention.
template <typename S>
Var<S> gather(Tape<S>& t, Var<S> x, std::shared_ptr<const std::vector<int>> lut,
              int out_c, int out_h, int out_w) {
  const auto& xn = t.node(x);
  Matrix<S> y(out_c, static_cast<long>(out_h) * out_w);
  if (static_cast<long>(lut->size()) != y.size())
    throw ContractError("gather: table size mismatch");
  const S* src = xn.val.data();
  S* dst = y.data();
  for (std::size_t i = 0; i < lut->size(); ++i) dst[i] = src[(*lut)[i]];
  const int yi = t.next_index();
  return t.push(std::move(y), out_h, out_w, xn.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(x)) return;
    const Matrix<S>& gy = tp.nodes[yi].grad;
    Matrix<S>& gx = tp.grad(x.i);
    const S* g = gy.data();
    S* out = gx.data();
    for (std::size_t i = 0; i < lut->size(); ++i) out[(*lut)[i]] += g[i];
  });
}

/// Scalar node: mean squared difference to a fixed target.
template <typename S>
Var<S> mse_to(Tape<S>& t, Var<S> x, const Matrix<S>& target) {
  const auto& xn = t.node(x);
  if (xn.val.rows() != target.rows() || xn.val.cols() != target.cols())
    throw ContractError("mse_to: target shape mismatch");
  auto tgt = std::make_shared<Matrix<S>>(target);
  Matrix<S> y(1, 1);
  y(0, 0) = (xn.val - *tgt).squaredNorm() / S(target.size());
  const int yi = t.next_index();
  return t.push(std::move(y), 0, 0, xn.needs_grad, [=](Tape<S>& tp) {
    if (!tp.wants(x)) return;
    const S g = tp.nodes[yi].grad(0, 0);
    tp.grad(x.i) += (S(2) / S(tgt->size())) * g * (tp.nodes[x.i].val - *tgt);
  });
}

}  // namespace nowdiff
