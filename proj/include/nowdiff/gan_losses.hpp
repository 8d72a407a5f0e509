#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nowdiff/errors.hpp"
#include "nowdiff/types.hpp"

namespace nowdiff {

/// Grid-cell weight applied to the regularizer residual.
enum class WeightMode {
  Max24,  // max(i, 24): never below 24, follows the printed form
  Min24,  // min(i, 24): clipped from above, the source method's convention
};

inline double weight_fn(double i, WeightMode mode = WeightMode::Max24) {
  return mode == WeightMode::Max24 ? std::max(i, 24.0) : std::min(i, 24.0);
}

/// (1/HWN) * sum |gen_mean - target| * W(target).
inline double weighted_regularizer(const std::vector<Array2<double>>& gen_mean,
                                   const std::vector<Array2<double>>& target,
                                   WeightMode mode = WeightMode::Max24) {
  if (gen_mean.size() != target.size() || gen_mean.empty())
    throw ContractError("weighted_regularizer: frame count mismatch or empty input");
  double total = 0.0;
  std::int64_t count = 0;
  for (std::size_t f = 0; f < gen_mean.size(); ++f) {
    if (gen_mean[f].rows() != target[f].rows() || gen_mean[f].cols() != target[f].cols())
      throw ContractError("weighted_regularizer: grid shape mismatch");
    for (Eigen::Index i = 0; i < gen_mean[f].rows(); ++i)
      for (Eigen::Index j = 0; j < gen_mean[f].cols(); ++j)
        total += std::abs(gen_mean[f](i, j) - target[f](i, j)) *
                 weight_fn(target[f](i, j), mode);
    count += gen_mean[f].size();
  }
  return total / static_cast<double>(count);
}

/// Discriminator scores and regularizer operands for the generator losses.
/// The discriminators themselves are external; only their outputs enter.
struct GanLossInputs {
  Eigen::ArrayXd d_scores;                // spatial discriminator, one per sample
  Eigen::ArrayXd t_scores;                // temporal discriminator, one per sample
  std::vector<Array2<double>> gen_mean;   // E_Z over generator draws, N frames
  std::vector<Array2<double>> target;     // ground-truth frames, N frames
  double lambda = 0.0;
  WeightMode weight_mode = WeightMode::Max24;
  int input_frame_count = 4;  // M, the conditioning length
};

inline void check_gan_inputs(const GanLossInputs& in) {
  if (in.d_scores.size() == 0 || in.d_scores.size() != in.t_scores.size())
    throw ContractError("gan loss: score vectors must be nonempty and equal length");
  if (in.lambda < 0.0) throw ContractError("gan loss: lambda must be >= 0");
}

/// mean ReLU(1 - D) + mean ReLU(1 - T) + lambda * regularizer.
inline double hinge_generator_loss(const GanLossInputs& in) {
  check_gan_inputs(in);
  double total = 0.0;
  for (Eigen::Index i = 0; i < in.d_scores.size(); ++i)
    total += std::max(0.0, 1.0 - in.d_scores[i]) + std::max(0.0, 1.0 - in.t_scores[i]);
  double loss = total / static_cast<double>(in.d_scores.size());
  if (in.lambda > 0.0)
    loss += in.lambda * weighted_regularizer(in.gen_mean, in.target, in.weight_mode);
  return loss;
}

/// mean D + mean T - lambda * regularizer, exactly as printed. Note the
/// sign: this form grows with the discriminator scores.
inline double nonhinge_generator_loss(const GanLossInputs& in) {
  check_gan_inputs(in);
  const double loss = in.d_scores.mean() + in.t_scores.mean();
  if (in.lambda > 0.0)
    return loss - in.lambda * weighted_regularizer(in.gen_mean, in.target, in.weight_mode);
  return loss;
}

/// Elementwise mean of several generator draws (the E_Z approximation).
inline std::vector<Array2<double>> mean_over_draws(
    const std::vector<std::vector<Array2<double>>>& draws) {
  if (draws.empty()) throw ContractError("mean_over_draws: no draws");
  std::vector<Array2<double>> out = draws.front();
  for (std::size_t d = 1; d < draws.size(); ++d) {
    if (draws[d].size() != out.size())
      throw ContractError("mean_over_draws: frame count mismatch");
    for (std::size_t f = 0; f < out.size(); ++f) out[f] += draws[d][f];
  }
  for (auto& frame : out) frame /= static_cast<double>(draws.size());
  return out;
}

}  // namespace nowdiff
