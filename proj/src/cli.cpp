#include "nowdiff/cli.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nowdiff/config.hpp"
#include "nowdiff/data.hpp"
#include "nowdiff/metrics.hpp"
#include "nowdiff/schedule.hpp"
#include "nowdiff/train.hpp"

namespace fs = std::filesystem;

namespace nowdiff::cli {
namespace {

using S = float;  // runtime scalar; checkpoints record the width

void echo_config(const RunConfig& cfg) {
  std::cout << "# effective config\n" << serialize_config(cfg) << std::flush;
}

std::string seq_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%03d.nrf", index);
  return buf;
}

int cmd_synth(const RunConfig& cfg) {
  const std::string out_dir = cfg.out.empty() ? "synth" : cfg.out;
  fs::create_directories(out_dir);
  Rng rng(cfg.seed);
  for (int i = 0; i < cfg.count; ++i) {
    const FrameSequence seq =
        synth_advection(cfg.frames, cfg.resolution, cfg.resolution, rng);
    save_nrf(seq, (fs::path(out_dir) / seq_filename(i)).string());
  }
  std::cout << "wrote " << cfg.count << " sequence(s) to " << out_dir << "\n";
  return 0;
}

std::vector<std::string> list_nrf(const std::string& data) {
  std::vector<std::string> files;
  if (fs::is_directory(data)) {
    for (const auto& entry : fs::directory_iterator(data))
      if (entry.path().extension() == ".nrf") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
  } else if (fs::exists(data)) {
    files.push_back(data);
  }
  if (files.empty())
    throw ParseError(ParseError::Kind::Malformed, "no NRF data at " + data);
  return files;
}

std::vector<TrainItem<S>> load_train_items(const RunConfig& cfg) {
  std::vector<TrainItem<S>> items;
  for (const std::string& path : list_nrf(cfg.data)) {
    const FrameSequence seq = load_nrf(path);
    if (seq.h() != cfg.resolution || seq.w() != cfg.resolution)
      throw ContractError("sequence resolution " + std::to_string(seq.h()) +
                          " does not match configured resolution " +
                          std::to_string(cfg.resolution));
    for (const NowcastSample& s : make_windows(seq, cfg.window_stride)) {
      TrainItem<S> item;
      item.cond_frames = to_model_stack<S>(s.inputs, cfg.norm());
      item.target = to_model_stack<S>(s.targets, cfg.norm());
      items.push_back(std::move(item));
    }
  }
  if (items.empty())
    throw ParseError(ParseError::Kind::Malformed, "data yields no 8-frame windows");
  return items;
}

int train_loop(const RunConfig& cfg, NowcastModel<S>& model, Trainer<S>& trainer,
               const std::vector<TrainItem<S>>& items, Rng& rng,
               const std::string& ckpt_path, const std::string& log_path,
               bool resumed) {
  std::ofstream log;
  if (resumed && fs::exists(log_path)) {
    log.open(log_path, std::ios::app);
  } else {
    log.open(log_path, std::ios::trunc);
    log << "step,loss\n";
  }
  if (!log) throw ParseError(ParseError::Kind::Malformed, "cannot write " + log_path);

  std::vector<TrainItem<S>> batch;
  long long last_saved = -1;
  for (int s = 0; s < cfg.steps; ++s) {
    batch.clear();
    for (int b = 0; b < cfg.batch; ++b)
      batch.push_back(items[rng.uniform_int(0, static_cast<int>(items.size()) - 1)]);
    const S loss = trainer.train_step(batch, rng);
    log << trainer.global_step << "," << static_cast<double>(loss) << "\n";
    if (trainer.global_step % cfg.checkpoint_interval == 0) {
      save_checkpoint(ckpt_path, model, &trainer.optimizer(), trainer.global_step, cfg);
      last_saved = trainer.global_step;
    }
  }
  if (last_saved != trainer.global_step)
    save_checkpoint(ckpt_path, model, &trainer.optimizer(), trainer.global_step, cfg);
  std::cout << "trained to step " << trainer.global_step << ", checkpoint at "
            << ckpt_path << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("train needs --data");
  const std::string ckpt_path = cfg.checkpoint.empty() ? "model.ckpt" : cfg.checkpoint;
  const std::string log_path = cfg.loss_log.empty() ? "loss_log.csv" : cfg.loss_log;
  const std::vector<TrainItem<S>> items = load_train_items(cfg);
  const DiffusionSchedule<S> sched = build_schedule<S>(
      cfg.diffusion_steps, S(cfg.beta_start), S(cfg.beta_end), cfg.sigma());

  NowcastModel<S> model;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Rng rng(cfg.seed);

  bool resumed = false;
  long long start_step = 0;
  Adam<S> restored;
  if (cfg.resume && fs::exists(ckpt_path)) {
    const Checkpoint<S> ck = load_checkpoint<S>(ckpt_path);
    restore_checkpoint(ck, model, &restored);
    start_step = ck.step;
    resumed = true;
  } else {
    Rng init_rng(cfg.seed);
    model.init(cfg.denoiser_config(), cfg.condition_config(), cfg.resolution,
               cfg.resolution, cfg.conditional, init_rng);
  }

  Trainer<S> trainer(model, sched, adam_cfg);
  if (resumed) {
    restored.cfg = adam_cfg;
    trainer.optimizer() = restored;
    trainer.global_step = start_step;
  }
  return train_loop(cfg, model, trainer, items, rng, ckpt_path, log_path, resumed);
}

int cmd_predict(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("predict needs --checkpoint");
  if (cfg.input.empty()) throw ConfigError("predict needs --input");

  const Checkpoint<S> ck = load_checkpoint<S>(cfg.checkpoint);
  NowcastModel<S> model;
  restore_checkpoint<S>(ck, model, nullptr);

  const FrameSequence seq = load_nrf(cfg.input);
  if (seq.count() < 4) throw ContractError("predict input needs at least 4 frames");
  if (seq.h() != model.h || seq.w() != model.w)
    throw ContractError("input resolution " + std::to_string(seq.h()) +
                        " does not match checkpoint resolution " +
                        std::to_string(model.h));

  std::array<Eigen::MatrixXf, 4> inputs;
  for (int i = 0; i < 4; ++i) inputs[i] = seq.frames[i];
  const NormMode norm = ck.config.norm();
  const FieldStack<S> cond = to_model_stack<S>(inputs, norm);

  const DiffusionSchedule<S> sched =
      build_schedule<S>(ck.config.diffusion_steps, S(ck.config.beta_start),
                        S(ck.config.beta_end), ck.config.sigma());
  Rng rng(cfg.seed);
  const FieldStack<S> forecast =
      model.sample_forecast(sched, model.conditional ? &cond : nullptr, rng);

  FrameSequence out;
  out.cadence_minutes = seq.cadence_minutes;
  out.frames = from_model_stack<S>(forecast, norm);
  const std::string out_path = cfg.out.empty() ? "prediction.nrf" : cfg.out;
  save_nrf(out, out_path);
  std::cout << "wrote forecast to " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
  if (cfg.pred.empty() || cfg.obs.empty())
    throw ConfigError("evaluate needs --pred and --obs");
  const FrameSequence pred = load_nrf(cfg.pred);
  const FrameSequence obs = load_nrf(cfg.obs);
  if (pred.count() != obs.count() || pred.h() != obs.h() || pred.w() != obs.w())
    throw ContractError("evaluate: forecast/observation shapes differ");

  auto to_arrays = [](const FrameSequence& seq) {
    std::vector<Array2<double>> out;
    for (const auto& f : seq.frames) out.push_back(f.cast<double>().array());
    return out;
  };
  const SkillReport report = evaluate_report(to_arrays(pred), to_arrays(obs),
                                             cfg.fss_n, cfg.fss_threshold, cfg.hss());
  const std::string csv = to_csv(report);
  if (cfg.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(cfg.out, std::ios::trunc);
    if (!f) throw ParseError(ParseError::Kind::Malformed, "cannot write " + cfg.out);
    f << csv;
  }
  return 0;
}

int cmd_render(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ConfigError("render needs --input");
  const FrameSequence seq = load_nrf(cfg.input);
  const std::string out_dir = cfg.out.empty() ? "render" : cfg.out;
  fs::create_directories(out_dir);
  for (int f = 0; f < seq.count(); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03d.pgm", f);
    std::ofstream img((fs::path(out_dir) / name).string(), std::ios::binary);
    if (!img) throw ParseError(ParseError::Kind::Malformed, "cannot write frame image");
    img << "P5\n" << seq.w() << " " << seq.h() << "\n255\n";
    for (int y = 0; y < seq.h(); ++y)
      for (int x = 0; x < seq.w(); ++x) {
        const long px = std::lround(seq.frames[f](y, x) * 255.0 / 128.0);
        img.put(static_cast<char>(std::min(255L, std::max(0L, px))));
      }
  }
  std::cout << "wrote " << seq.count() << " frame image(s) to " << out_dir << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  RunConfig cfg;

  // Config file first, CLI flags override it.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      std::ifstream f(argv[i + 1]);
      if (!f) {
        std::cerr << "cannot open config file " << argv[i + 1] << "\n";
        return 1;
      }
      std::string text((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
      try {
        apply_config_text(text, cfg);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
      }
    }
  }

  CLI::App app{"conditional-diffusion precipitation nowcasting toolkit"};
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", cfg.seed, "random seed");
  app.add_option("--steps", cfg.steps, "training steps");
  app.add_option("--resolution", cfg.resolution, "grid height and width");
  app.add_option("--diffusion-steps", cfg.diffusion_steps, "diffusion step count T");
  app.add_option("--fss-n", cfg.fss_n, "FSS neighborhood size (odd)");
  app.add_option("--hss-mode", cfg.hss_mode, "standard | paper");
  app.add_option("--weight-mode", cfg.weight_mode, "max24 | min24");
  app.add_option("--beta-start", cfg.beta_start, "first beta");
  app.add_option("--beta-end", cfg.beta_end, "last beta");
  app.add_option("--sigma-mode", cfg.sigma_mode, "beta | posterior");
  app.add_option("--levels", cfg.levels, "UNet levels");
  app.add_option("--base-channels", cfg.base_channels, "base channel width");
  app.add_option("--channel-mult", cfg.channel_mult, "per-level channel multipliers")
      ->delimiter(',');
  app.add_option("--attention-levels", cfg.attention_levels,
                 "denoiser levels with self-attention")
      ->delimiter(',');
  app.add_option("--embed-dim", cfg.embed_dim, "timestep embedding width");
  app.add_option("--res-blocks", cfg.res_blocks, "residual blocks per level");
  app.add_option("--conditional", cfg.conditional, "train/sample with conditioning");
  app.add_option("--cond-attention", cfg.cond_attention,
                 "enable triplet attention in the condition encoder");
  app.add_option("--cond-attention-threshold", cfg.cond_attention_threshold,
                 "stage size at or below which triplet attention activates");
  app.add_option("--cond-tau-depth", cfg.cond_tau_depth,
                 "nested block depth (-1 = automatic)");
  app.add_option("--loss-log", cfg.loss_log, "training loss CSV path");
  app.add_option("--lr", cfg.lr, "Adam learning rate");
  app.add_option("--batch", cfg.batch, "batch size");
  app.add_option("--checkpoint-interval", cfg.checkpoint_interval,
                 "steps between checkpoints");
  app.add_option("--window-stride", cfg.window_stride, "frames between windows");
  app.add_flag("--resume", cfg.resume, "continue from an existing checkpoint");
  app.add_option("--norm-mode", cfg.norm_mode, "linear | log1p");
  app.add_option("--fss-threshold", cfg.fss_threshold, "FSS event threshold, mm/h");
  app.add_option("--count", cfg.count, "sequences to synthesize");
  app.add_option("--frames", cfg.frames, "frames per synthesized sequence");
  app.add_option("--data", cfg.data, "NRF file or directory");
  app.add_option("--out", cfg.out, "output path");
  app.add_option("--checkpoint", cfg.checkpoint, "checkpoint path");
  app.add_option("--input", cfg.input, "input NRF path");
  app.add_option("--pred", cfg.pred, "forecast NRF path");
  app.add_option("--obs", cfg.obs, "observation NRF path");

  CLI::App* synth = app.add_subcommand("synth", "write synthetic advection sequences");
  CLI::App* train = app.add_subcommand("train", "train the conditional denoiser");
  CLI::App* predict = app.add_subcommand("predict", "sample a 4-frame forecast");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a forecast against truth");
  CLI::App* render = app.add_subcommand("render", "write one PGM image per frame");
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (app.get_subcommands().empty()) {
    std::cerr << app.help() << "\n";
    return 1;
  }

  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  echo_config(cfg);
  try {
    if (synth->parsed()) return cmd_synth(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (predict->parsed()) return cmd_predict(cfg);
    if (evaluate->parsed()) return cmd_evaluate(cfg);
    if (render->parsed()) return cmd_render(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace nowdiff::cli
