#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "nowdiff/condition.hpp"
#include "nowdiff/config.hpp"
#include "nowdiff/data.hpp"
#include "nowdiff/denoiser.hpp"
#include "nowdiff/errors.hpp"
#include "nowdiff/schedule.hpp"
#include "nowdiff/tape.hpp"

namespace nowdiff {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
class Adam {
 public:
  AdamConfig cfg;
  long long t = 0;
  std::vector<Matrix<S>> m, v;

  void init(const ParamRefs<S>& params) {
    m.clear();
    v.clear();
    for (const Param<S>* p : params) {
      m.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(const ParamRefs<S>& params) {
    if (m.size() != params.size()) throw ContractError("adam: not initialized for these params");
    ++t;
    const S bc1 = S(1) - S(std::pow(cfg.beta1, double(t)));
    const S bc2 = S(1) - S(std::pow(cfg.beta2, double(t)));
    const S b1 = S(cfg.beta1), b2 = S(cfg.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix<S>& g = params[i]->grad;
      m[i] = b1 * m[i] + (S(1) - b1) * g;
      v[i] = (b2 * v[i].array() + (S(1) - b2) * g.array().square()).matrix();
      params[i]->value.array() -=
          S(cfg.lr) * (m[i].array() / bc1) /
          ((v[i].array() / bc2).sqrt() + S(cfg.eps));
    }
  }
};

/// The denoiser plus its condition encoder, treated as one parameter set.
template <typename S>
struct NowcastModel {
  DenoiserConfig den_cfg;
  CondEncoderConfig cond_cfg;
  int h = 0, w = 0;
  bool conditional = true;
  DenoiserNet<S> denoiser;
  ConditionEncoder<S> encoder;

  void init(const DenoiserConfig& d, const CondEncoderConfig& c, int height,
            int width, bool with_condition, Rng& rng) {
    den_cfg = d;
    cond_cfg = c;
    h = height;
    w = width;
    conditional = with_condition;
    d.validate(h, w);
    denoiser.init(d, rng);
    if (conditional) encoder.init(c, h, w, rng);
  }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    denoiser.collect(out);
    if (conditional) encoder.collect(out);
    return out;
  }

  void zero_grads() {
    for (Param<S>* p : params()) p->zero_grad();
  }

  ConditionPyramid<S> condition(const FieldStack<S>& frames) {
    if (!conditional) throw ContractError("model built without condition encoder");
    return encoder.build_pyramid(frames);
  }

  FieldStack<S> predict_noise(const FieldStack<S>& x_t, int step,
                              const ConditionPyramid<S>* pyramid) {
    return denoiser.predict(x_t, step,
                            pyramid ? pyramid->maps : std::vector<FieldStack<S>>{});
  }

  /// Full ancestral draw of a 4-frame forecast in model space. Conditioning
  /// features are extracted once; the denoiser runs once per step.
  FieldStack<S> sample_forecast(const DiffusionSchedule<S>& sched,
                                const FieldStack<S>* input_frames, Rng& rng) {
    ConditionPyramid<S> pyr;
    if (conditional) {
      if (!input_frames) throw ContractError("conditional model needs input frames");
      pyr = condition(*input_frames);
    }
    auto predict = [&](const FieldStack<S>& x, int t) {
      return predict_noise(x, t, conditional ? &pyr : nullptr);
    };
    return sample_loop<S>(sched, predict, den_cfg.input_channels, h, w, rng);
  }
};

template <typename S>
struct TrainItem {
  FieldStack<S> cond_frames;  // model-space inputs (unused when unconditional)
  FieldStack<S> target;       // model-space 4-frame target
};

/// Joint training of denoiser and condition encoder with Adam on the
/// noise-prediction objective.
template <typename S>
class Trainer {
 public:
  Trainer(NowcastModel<S>& model, const DiffusionSchedule<S>& sched, AdamConfig acfg)
      : model_(model), sched_(sched) {
    opt_.cfg = acfg;
    opt_.init(model_.params());
  }

  /// Loss for a batch under the rng's current state, no parameter update.
  S loss_only(const std::vector<TrainItem<S>>& batch, Rng& rng) {
    return run_batch(batch, rng, /*with_grad=*/false);
  }

  /// Loss plus parameter gradients, without stepping the optimizer.
  S loss_and_grad(const std::vector<TrainItem<S>>& batch, Rng& rng) {
    model_.zero_grads();
    return run_batch(batch, rng, /*with_grad=*/true);
  }

  /// One gradient step; returns the batch-mean loss.
  S train_step(const std::vector<TrainItem<S>>& batch, Rng& rng) {
    model_.zero_grads();
    const S loss = run_batch(batch, rng, /*with_grad=*/true);
    opt_.step(model_.params());
    ++global_step;
    return loss;
  }

  Adam<S>& optimizer() { return opt_; }
  long long global_step = 0;

 private:
  S run_batch(const std::vector<TrainItem<S>>& batch, Rng& rng, bool with_grad) {
    if (batch.empty()) throw ContractError("train: empty batch");
    const S inv_b = S(1) / S(batch.size());
    S total = S(0);
    for (const TrainItem<S>& item : batch) {
      const int t_step = rng.uniform_int(1, sched_.steps);
      const FieldStack<S> eps =
          rng.normal_stack<S>(item.target.channels(), item.target.h, item.target.w);
      const FieldStack<S> x_t = q_sample(item.target, t_step, eps, sched_);

      Tape<S> tape;
      std::vector<Var<S>> cond;
      if (model_.conditional) {
        Var<S> frames = tape.input_stack(item.cond_frames);
        cond = model_.encoder.forward(tape, frames);
      }
      Var<S> x = tape.input_stack(x_t);
      Var<S> eps_hat = model_.denoiser.forward(tape, x, t_step, cond);
      Var<S> loss = mse_to(tape, eps_hat, eps.data);
      total += tape.val(loss)(0, 0) * inv_b;
      if (with_grad) tape.backward(loss, inv_b);
    }
    return total;
  }

  NowcastModel<S>& model_;
  DiffusionSchedule<S> sched_;
  Adam<S> opt_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

template <typename S>
void save_checkpoint(const std::string& path, NowcastModel<S>& model,
                     const Adam<S>* opt, long long step, const RunConfig& config) {
  std::string out = "NDCP";
  detail::put_u32(out, 1);  // version
  detail::put_u32(out, static_cast<std::uint32_t>(sizeof(S)));
  detail::put_u64(out, static_cast<std::uint64_t>(step));

  const std::string cfg_text = serialize_config(config);
  detail::put_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
  out += cfg_text;

  auto put_matrix = [&out](const Matrix<S>& m) {
    detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if constexpr (sizeof(S) == 4) {
          detail::put_f32(out, static_cast<float>(m(i, j)));
        } else {
          detail::put_f64(out, static_cast<double>(m(i, j)));
        }
      }
  };

  ParamRefs<S> params = model.params();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Param<S>* p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put_matrix(p->value);
  }

  out.push_back(opt ? 1 : 0);
  if (opt) {
    detail::put_u64(out, static_cast<std::uint64_t>(opt->t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_matrix(opt->m[i]);
      put_matrix(opt->v[i]);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ParseError(ParseError::Kind::Malformed, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ParseError(ParseError::Kind::Malformed, "short write to " + path);
}

template <typename S>
struct Checkpoint {
  RunConfig config;
  long long step = 0;
  bool has_adam = false;
  long long adam_t = 0;
  std::vector<std::string> names;
  std::vector<Matrix<S>> values;
  std::vector<Matrix<S>> adam_m, adam_v;
};

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader r{bytes};
  r.need(4);
  if (bytes.compare(0, 4, "NDCP") != 0)
    throw ParseError(ParseError::Kind::BadMagic, "not a checkpoint file");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != 1) throw ParseError(ParseError::Kind::Malformed, "unknown checkpoint version");
  const std::uint32_t dtype = r.u32();
  if (dtype != sizeof(S))
    throw ParseError(ParseError::Kind::Malformed,
                     "checkpoint scalar width " + std::to_string(dtype) +
                         " does not match runtime width " + std::to_string(sizeof(S)));

  Checkpoint<S> ck;
  ck.step = static_cast<long long>(r.u64());

  const std::uint32_t cfg_len = r.u32();
  r.need(cfg_len);
  const std::string cfg_text = bytes.substr(r.pos, cfg_len);
  r.pos += cfg_len;
  apply_config_text(cfg_text, ck.config);

  auto get_matrix = [&r]() {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Matrix<S> m(rows, cols);
    for (std::uint32_t j = 0; j < cols; ++j)
      for (std::uint32_t i = 0; i < rows; ++i) {
        if constexpr (sizeof(S) == 4)
          m(i, j) = static_cast<S>(r.f32());
        else
          m(i, j) = static_cast<S>(r.f64());
      }
    return m;
  };

  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::uint32_t name_len = r.u32();
    r.need(name_len);
    ck.names.push_back(bytes.substr(r.pos, name_len));
    r.pos += name_len;
    ck.values.push_back(get_matrix());
  }

  r.need(1);
  ck.has_adam = bytes[r.pos] != 0;
  r.pos += 1;
  if (ck.has_adam) {
    ck.adam_t = static_cast<long long>(r.u64());
    for (std::uint32_t i = 0; i < n_params; ++i) {
      ck.adam_m.push_back(get_matrix());
      ck.adam_v.push_back(get_matrix());
    }
  }
  if (r.pos != bytes.size())
    throw ParseError(ParseError::Kind::Malformed, "trailing bytes in checkpoint");
  return ck;
}

/// Build the model a checkpoint describes and restore its parameters
/// (and, when present, the optimizer moments).
template <typename S>
void restore_checkpoint(const Checkpoint<S>& ck, NowcastModel<S>& model,
                        Adam<S>* opt) {
  Rng init_rng(ck.config.seed);
  model.init(ck.config.denoiser_config(), ck.config.condition_config(),
             ck.config.resolution, ck.config.resolution, ck.config.conditional,
             init_rng);
  ParamRefs<S> params = model.params();
  if (params.size() != ck.values.size())
    throw ParseError(ParseError::Kind::Malformed, "checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != ck.names[i] ||
        params[i]->value.rows() != ck.values[i].rows() ||
        params[i]->value.cols() != ck.values[i].cols())
      throw ParseError(ParseError::Kind::Malformed,
                       "checkpoint parameter mismatch at " + ck.names[i]);
    params[i]->value = ck.values[i];
  }
  if (opt) {
    opt->init(params);
    if (ck.has_adam) {
      opt->t = ck.adam_t;
      opt->m = ck.adam_m;
      opt->v = ck.adam_v;
    }
  }
}

}  // namespace nowdiff
