#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nowdiff/rng.hpp"
#include "nowdiff/tape.hpp"
#include "nowdiff/types.hpp"

namespace nowdiff {

template <typename S>
struct Param {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;

  void init(std::string n, int rows, int cols) {
    name = std::move(n);
    value = Matrix<S>::Zero(rows, cols);
    grad = Matrix<S>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

template <typename S>
using ParamRefs = std::vector<Param<S>*>;

template <typename S>
struct Conv2dLayer {
  Param<S> weight;  // (c_out, c_in*k*k)
  Param<S> bias;    // (c_out, 1)
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;

  void init(const std::string& name, int cin, int cout, int k, int s, int p,
            Rng& rng, bool zero_weights = false) {
    in_ch = cin;
    out_ch = cout;
    kernel = k;
    stride = s;
    pad = p;
    weight.init(name + ".weight", cout, cin * k * k);
    bias.init(name + ".bias", cout, 1);
    if (!zero_weights) {
      const S std = S(std::sqrt(2.0 / (double(cin) * k * k)));
      weight.value = std * rng.normal_matrix<S>(cout, cin * k * k);
    }
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    Var<S> w = t.param(weight.value, &weight.grad);
    Var<S> b = t.param(bias.value, &bias.grad);
    return conv2d(t, x, w, b, kernel, stride, pad);
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <typename S>
struct LinearLayer {
  Param<S> weight;  // (out, in)
  Param<S> bias;    // (out, 1)

  void init(const std::string& name, int in, int out, Rng& rng,
            bool zero_weights = false) {
    weight.init(name + ".weight", out, in);
    bias.init(name + ".bias", out, 1);
    if (!zero_weights) {
      const S std = S(std::sqrt(1.0 / double(in)));
      weight.value = std * rng.normal_matrix<S>(out, in);
    }
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    Var<S> w = t.param(weight.value, &weight.grad);
    Var<S> b = t.param(bias.value, &bias.grad);
    return linear(t, x, w, b);
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <typename S>
struct GroupNormLayer {
  Param<S> gamma;  // (c, 1)
  Param<S> beta;   // (c, 1)
  int groups = 1;

  void init(const std::string& name, int channels, int g) {
    groups = g;
    gamma.init(name + ".gamma", channels, 1);
    beta.init(name + ".beta", channels, 1);
    gamma.value.setOnes();
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    Var<S> g = t.param(gamma.value, &gamma.grad);
    Var<S> b = t.param(beta.value, &beta.grad);
    return group_norm(t, x, g, b, groups);
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

/// Largest divisor of `channels` not exceeding `want`; keeps group counts
/// valid across the narrow channel widths of micro configurations.
inline int norm_groups_for(int channels, int want) {
  for (int g = std::min(want, channels); g >= 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

}  // namespace nowdiff
