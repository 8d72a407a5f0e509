#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nowdiff/condition.hpp"
#include "nowdiff/data.hpp"
#include "nowdiff/denoiser.hpp"
#include "nowdiff/errors.hpp"
#include "nowdiff/gan_losses.hpp"
#include "nowdiff/metrics.hpp"
#include "nowdiff/schedule.hpp"

namespace nowdiff {

/// Effective settings for a run. Serializes to `key = value` text; the
/// same text is accepted back as a config file and embedded in checkpoints.
struct RunConfig {
  // geometry and schedule
  int resolution = 64;
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::string sigma_mode = "beta";  // beta | posterior

  // denoiser
  int levels = 5;
  int base_channels = 32;
  std::vector<int> channel_mult = {1, 2, 4, 8, 8};
  std::vector<int> attention_levels = {4, 5};
  int embed_dim = 64;
  int res_blocks = 1;

  // condition encoder
  bool conditional = true;
  bool cond_attention = true;
  int cond_attention_threshold = 32;
  int cond_tau_depth = -1;

  // training
  double lr = 1e-5;
  int batch = 4;
  int steps = 2000;
  int checkpoint_interval = 500;
  int window_stride = 4;
  bool resume = false;

  // evaluation
  int fss_n = 9;
  double fss_threshold = 2.0;
  std::string hss_mode = "standard";   // standard | paper
  std::string weight_mode = "max24";   // max24 | min24

  // data
  std::string norm_mode = "linear";  // linear | log1p
  unsigned long long seed = 0;
  int count = 8;
  int frames = 24;

  // paths
  std::string data, out, checkpoint, input, pred, obs, loss_log;

  void validate() const {
    if (resolution < 16 || resolution % 16 != 0)
      throw ConfigError("resolution must be a positive multiple of 16");
    if (diffusion_steps < 1) throw ConfigError("diffusion-steps must be >= 1");
    if (!(beta_start > 0) || !(beta_end < 1) || !(beta_start <= beta_end))
      throw ConfigError("beta endpoints must satisfy 0 < start <= end < 1");
    if (sigma_mode != "beta" && sigma_mode != "posterior")
      throw ConfigError("sigma-mode must be beta or posterior");
    if (hss_mode != "standard" && hss_mode != "paper")
      throw ConfigError("hss-mode must be standard or paper");
    if (weight_mode != "max24" && weight_mode != "min24")
      throw ConfigError("weight-mode must be max24 or min24");
    if (norm_mode != "linear" && norm_mode != "log1p")
      throw ConfigError("norm-mode must be linear or log1p");
    if (batch < 1 || steps < 0 || checkpoint_interval < 1)
      throw ConfigError("invalid training sizes");
    if (fss_n < 1 || fss_n % 2 == 0) throw ConfigError("fss-n must be odd and >= 1");
    if (count < 0 || frames < 1) throw ConfigError("invalid synth sizes");
    denoiser_config().validate(resolution, resolution);
  }

  DenoiserConfig denoiser_config() const {
    DenoiserConfig d;
    d.levels = levels;
    d.base_channels = base_channels;
    d.channel_mult = channel_mult;
    d.attention_levels = attention_levels;
    d.input_channels = 4;
    d.embed_dim = embed_dim;
    d.res_blocks = res_blocks;
    return d;
  }

  CondEncoderConfig condition_config() const {
    CondEncoderConfig c;
    c.input_channels = 4;
    c.levels = levels;
    const DenoiserConfig d = denoiser_config();
    c.level_channels.clear();
    for (int k = 0; k < levels; ++k) c.level_channels.push_back(d.channels_at(k));
    c.tau.attention_size_threshold = cond_attention_threshold;
    c.tau.attention_enabled = cond_attention;
    c.tau.depth = cond_tau_depth;
    return c;
  }

  SigmaMode sigma() const {
    return sigma_mode == "posterior" ? SigmaMode::Posterior : SigmaMode::BetaSqrt;
  }
  HssMode hss() const {
    return hss_mode == "paper" ? HssMode::AsPublished : HssMode::Standard;
  }
  WeightMode weights() const {
    return weight_mode == "min24" ? WeightMode::Min24 : WeightMode::Max24;
  }
  NormMode norm() const {
    return norm_mode == "log1p" ? NormMode::Log1p : NormMode::Linear;
  }
};

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out << "resolution = " << c.resolution << "\n";
  out << "diffusion-steps = " << c.diffusion_steps << "\n";
  out << "beta-start = " << c.beta_start << "\n";
  out << "beta-end = " << c.beta_end << "\n";
  out << "sigma-mode = " << c.sigma_mode << "\n";
  out << "levels = " << c.levels << "\n";
  out << "base-channels = " << c.base_channels << "\n";
  out << "channel-mult = " << detail::join_ints(c.channel_mult) << "\n";
  out << "attention-levels = " << detail::join_ints(c.attention_levels) << "\n";
  out << "embed-dim = " << c.embed_dim << "\n";
  out << "res-blocks = " << c.res_blocks << "\n";
  out << "conditional = " << (c.conditional ? 1 : 0) << "\n";
  out << "cond-attention = " << (c.cond_attention ? 1 : 0) << "\n";
  out << "cond-attention-threshold = " << c.cond_attention_threshold << "\n";
  out << "cond-tau-depth = " << c.cond_tau_depth << "\n";
  out << "lr = " << c.lr << "\n";
  out << "batch = " << c.batch << "\n";
  out << "steps = " << c.steps << "\n";
  out << "checkpoint-interval = " << c.checkpoint_interval << "\n";
  out << "window-stride = " << c.window_stride << "\n";
  out << "resume = " << (c.resume ? 1 : 0) << "\n";
  out << "fss-n = " << c.fss_n << "\n";
  out << "fss-threshold = " << c.fss_threshold << "\n";
  out << "hss-mode = " << c.hss_mode << "\n";
  out << "weight-mode = " << c.weight_mode << "\n";
  out << "norm-mode = " << c.norm_mode << "\n";
  out << "seed = " << c.seed << "\n";
  out << "count = " << c.count << "\n";
  out << "frames = " << c.frames << "\n";
  if (!c.data.empty()) out << "data = " << c.data << "\n";
  if (!c.out.empty()) out << "out = " << c.out << "\n";
  if (!c.checkpoint.empty()) out << "checkpoint = " << c.checkpoint << "\n";
  if (!c.input.empty()) out << "input = " << c.input << "\n";
  if (!c.pred.empty()) out << "pred = " << c.pred << "\n";
  if (!c.obs.empty()) out << "obs = " << c.obs << "\n";
  if (!c.loss_log.empty()) out << "loss-log = " << c.loss_log << "\n";
  return out.str();
}

inline void apply_config_entry(const std::string& key, const std::string& val,
                               RunConfig& c) {
  if (key == "resolution") c.resolution = std::stoi(val);
  else if (key == "diffusion-steps") c.diffusion_steps = std::stoi(val);
  else if (key == "beta-start") c.beta_start = std::stod(val);
  else if (key == "beta-end") c.beta_end = std::stod(val);
  else if (key == "sigma-mode") c.sigma_mode = val;
  else if (key == "levels") c.levels = std::stoi(val);
  else if (key == "base-channels") c.base_channels = std::stoi(val);
  else if (key == "channel-mult") c.channel_mult = detail::split_ints(val);
  else if (key == "attention-levels") c.attention_levels = detail::split_ints(val);
  else if (key == "embed-dim") c.embed_dim = std::stoi(val);
  else if (key == "res-blocks") c.res_blocks = std::stoi(val);
  else if (key == "conditional") c.conditional = std::stoi(val) != 0;
  else if (key == "cond-attention") c.cond_attention = std::stoi(val) != 0;
  else if (key == "cond-attention-threshold") c.cond_attention_threshold = std::stoi(val);
  else if (key == "cond-tau-depth") c.cond_tau_depth = std::stoi(val);
  else if (key == "lr") c.lr = std::stod(val);
  else if (key == "batch") c.batch = std::stoi(val);
  else if (key == "steps") c.steps = std::stoi(val);
  else if (key == "checkpoint-interval") c.checkpoint_interval = std::stoi(val);
  else if (key == "window-stride") c.window_stride = std::stoi(val);
  else if (key == "resume") c.resume = std::stoi(val) != 0;
  else if (key == "fss-n") c.fss_n = std::stoi(val);
  else if (key == "fss-threshold") c.fss_threshold = std::stod(val);
  else if (key == "hss-mode") c.hss_mode = val;
  else if (key == "weight-mode") c.weight_mode = val;
  else if (key == "norm-mode") c.norm_mode = val;
  else if (key == "seed") c.seed = std::stoull(val);
  else if (key == "count") c.count = std::stoi(val);
  else if (key == "frames") c.frames = std::stoi(val);
  else if (key == "data") c.data = val;
  else if (key == "out") c.out = val;
  else if (key == "checkpoint") c.checkpoint = val;
  else if (key == "input") c.input = val;
  else if (key == "pred") c.pred = val;
  else if (key == "obs") c.obs = val;
  else if (key == "loss-log") c.loss_log = val;
  else throw ConfigError("unknown config key: " + key);
}

/// Apply `key = value` lines (with # comments) onto a config.
inline void apply_config_text(const std::string& text, RunConfig& c) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    try {
      apply_config_entry(key, val, c);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad value for " + key);
    }
  }
}

}  // namespace nowdiff
