#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "nowdiff/errors.hpp"
#include "nowdiff/rng.hpp"
#include "nowdiff/types.hpp"

namespace nowdiff {

/// Noise level used at each reverse step.
enum class SigmaMode {
  BetaSqrt,   // sigma_t = sqrt(beta_t)
  Posterior,  // sigma_t = sqrt(beta_t * (1 - abar_{t-1}) / (1 - abar_t)), sigma_1 = 0
};

/// Per-step noise coefficients over steps t = 1..T (stored 0-based).
template <typename S>
struct DiffusionSchedule {
  int steps = 0;
  Array1<S> betas, alphas, alpha_bars, sigmas;

  S beta(int t) const { return betas[check(t)]; }
  S alpha(int t) const { return alphas[check(t)]; }
  S alpha_bar(int t) const { return alpha_bars[check(t)]; }
  S sigma(int t) const { return sigmas[check(t)]; }

 private:
  int check(int t) const {
    if (t < 1 || t > steps) throw ContractError("schedule step out of range");
    return t - 1;
  }
};

/// Linear beta ramp from beta_start to beta_end with derived alpha,
/// cumulative alpha, and per-step sigma.
template <typename S>
DiffusionSchedule<S> build_schedule(int steps, S beta_start, S beta_end,
                                    SigmaMode mode = SigmaMode::BetaSqrt) {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
  if (!(beta_start > S(0)) || !(beta_end < S(1)) || !(beta_start <= beta_end))
    throw ConfigError("beta endpoints must satisfy 0 < start <= end < 1");

  DiffusionSchedule<S> sched;
  sched.steps = steps;
  sched.betas.resize(steps);
  sched.alphas.resize(steps);
  sched.alpha_bars.resize(steps);
  sched.sigmas.resize(steps);

  S running = S(1);
  for (int i = 0; i < steps; ++i) {
    const S frac = steps > 1 ? S(i) / S(steps - 1) : S(0);
    const S b = beta_start + (beta_end - beta_start) * frac;
    sched.betas[i] = b;
    sched.alphas[i] = S(1) - b;
    running *= sched.alphas[i];
    sched.alpha_bars[i] = running;
  }
  for (int i = 0; i < steps; ++i) {
    if (mode == SigmaMode::BetaSqrt) {
      sched.sigmas[i] = std::sqrt(sched.betas[i]);
    } else {
      const S abar_prev = i == 0 ? S(1) : sched.alpha_bars[i - 1];
      sched.sigmas[i] = std::sqrt(sched.betas[i] * (S(1) - abar_prev) /
                                  (S(1) - sched.alpha_bars[i]));
    }
  }
  return sched;
}

/// Signal/noise mixing coefficients (sqrt(abar_t), sqrt(1 - abar_t)).
template <typename S>
std::pair<S, S> q_sample_coeffs(const DiffusionSchedule<S>& sched, int t) {
  const S ab = sched.alpha_bar(t);
  return {std::sqrt(ab), std::sqrt(S(1) - ab)};
}

/// Forward corruption: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
template <typename S>
FieldStack<S> q_sample(const FieldStack<S>& x0, int t, const FieldStack<S>& eps,
                       const DiffusionSchedule<S>& sched) {
  if (!x0.same_shape(eps)) throw ContractError("q_sample: x0/eps shape mismatch");
  const auto [cs, cn] = q_sample_coeffs(sched, t);
  FieldStack<S> out = x0;
  out.data = cs * x0.data + cn * eps.data;
  return out;
}

/// One reverse step: the step-(t-1) state from x_t, the predicted noise,
/// and injected noise z. z must be zero at t = 1.
template <typename S>
FieldStack<S> ddpm_step(const FieldStack<S>& x_t, int t,
                        const FieldStack<S>& eps_hat, const FieldStack<S>& z,
                        const DiffusionSchedule<S>& sched) {
  if (!x_t.same_shape(eps_hat) || !x_t.same_shape(z))
    throw ContractError("ddpm_step: shape mismatch");
  if (t == 1 && (z.data.array() != S(0)).any())
    throw ContractError("ddpm_step: z must be zero at t = 1");

  const S a = sched.alpha(t);
  const S ab = sched.alpha_bar(t);
  const S coef = (S(1) - a) / std::sqrt(S(1) - ab);
  const S inv_sqrt_a = S(1) / std::sqrt(a);

  FieldStack<S> out = x_t;
  out.data = inv_sqrt_a * (x_t.data - coef * eps_hat.data) + sched.sigma(t) * z.data;
  return out;
}

/// Ancestral sampling from pure noise. The predictor is called exactly
/// `steps` times as predict(x_t, t).
template <typename S, typename Predict>
FieldStack<S> sample_loop(const DiffusionSchedule<S>& sched, Predict&& predict,
                          int channels, int h, int w, Rng& rng) {
  FieldStack<S> x = rng.normal_stack<S>(channels, h, w);
  for (int t = sched.steps; t >= 1; --t) {
    const FieldStack<S> eps_hat = predict(x, t);
    FieldStack<S> z(channels, h, w);
    if (t > 1) z = rng.normal_stack<S>(channels, h, w);
    x = ddpm_step(x, t, eps_hat, z, sched);
  }
  return x;
}

/// One corrupted training example: x_t = q_sample(x0, t, eps).
template <typename S>
struct NoisedSample {
  FieldStack<S> x_t;
  int t = 0;
  FieldStack<S> eps;
};

template <typename S>
NoisedSample<S> draw_noised(const FieldStack<S>& x0, const DiffusionSchedule<S>& sched,
                            Rng& rng) {
  NoisedSample<S> out;
  out.t = rng.uniform_int(1, sched.steps);
  out.eps = rng.normal_stack<S>(x0.channels(), x0.h, x0.w);
  out.x_t = q_sample(x0, out.t, out.eps, sched);
  return out;
}

/// Mean squared error between drawn noise and predicted noise, averaged
/// over draws and elements.
template <typename S, typename Predict>
S diffusion_training_loss_on(const std::vector<NoisedSample<S>>& draws,
                             Predict&& predict) {
  if (draws.empty()) throw ContractError("training loss needs a nonempty batch");
  S total = S(0);
  for (const auto& d : draws) {
    const FieldStack<S> eps_hat = predict(d.x_t, d.t);
    if (!eps_hat.same_shape(d.eps))
      throw ContractError("noise prediction shape mismatch");
    total += (eps_hat.data - d.eps.data).squaredNorm() / S(d.eps.data.size());
  }
  return total / S(draws.size());
}

/// Per-sample t ~ Uniform{1..T} and eps ~ N(0, I), then the mean squared
/// prediction error over the batch.
template <typename S, typename Predict>
S diffusion_training_loss(const std::vector<FieldStack<S>>& batch, Predict&& predict,
                          const DiffusionSchedule<S>& sched, Rng& rng) {
  if (batch.empty()) throw ContractError("training loss needs a nonempty batch");
  std::vector<NoisedSample<S>> draws;
  draws.reserve(batch.size());
  for (const auto& x0 : batch) draws.push_back(draw_noised(x0, sched, rng));
  return diffusion_training_loss_on(draws, predict);
}

}  // namespace nowdiff
