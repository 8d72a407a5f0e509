#pragma once

#include <Eigen/Dense>

#include <vector>

namespace nowdiff {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Array1 = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using Array2 = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

using MaskGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// A stack of 2-D fields sharing one spatial grid, stored as a
/// channels x (h*w) matrix. Pixel (y, x) lives in column x*h + y, i.e.
/// columns follow Eigen's column-major flattening of an h x w matrix.
template <typename S>
struct FieldStack {
  Matrix<S> data;
  int h = 0;
  int w = 0;

  FieldStack() = default;
  FieldStack(int channels, int height, int width)
      : data(Matrix<S>::Zero(channels, height * width)), h(height), w(width) {}

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return h * w; }

  S& at(int c, int y, int x) { return data(c, x * h + y); }
  S at(int c, int y, int x) const { return data(c, x * h + y); }

  bool same_shape(const FieldStack& o) const {
    return h == o.h && w == o.w && data.rows() == o.data.rows();
  }

  /// Channel c as an h x w matrix.
  Matrix<S> channel(int c) const {
    Matrix<S> out(h, w);
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y) out(y, x) = data(c, x * h + y);
    return out;
  }

  void set_channel(int c, const Matrix<S>& m) {
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y) data(c, x * h + y) = m(y, x);
  }
};

}  // namespace nowdiff
