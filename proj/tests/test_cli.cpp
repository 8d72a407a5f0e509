#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "nowdiff/cli.hpp"
#include "nowdiff/config.hpp"
#include "nowdiff/data.hpp"
#include "nowdiff/metrics.hpp"

namespace fs = std::filesystem;
using namespace nowdiff;

namespace {

int run_cli(const std::vector<std::string>& args, std::string* captured = nullptr) {
  std::vector<const char*> argv = {"nowdiff"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::stringstream buf;
  std::streambuf* old = std::cout.rdbuf(buf.rdbuf());
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  if (captured) *captured = buf.str();
  return rc;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nowdiff_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string micro_net_config() {
  return "levels = 2\nchannel-mult = 1,2\nattention-levels = 2\n"
         "base-channels = 4\nembed-dim = 8\n";
}

}  // namespace

TEST_CASE("synth writes loadable deterministic sequences") {
  const fs::path dir = fresh_dir("synth_a");
  const fs::path dir2 = fresh_dir("synth_b");

  CHECK(run_cli({"synth", "--resolution", "16", "--count", "2", "--frames", "10",
                 "--seed", "5", "--out", dir.string()}) == 0);
  const FrameSequence seq = load_nrf((dir / "seq_000.nrf").string());
  CHECK(seq.count() == 10);
  CHECK(seq.h() == 16);
  CHECK(seq.w() == 16);

  CHECK(run_cli({"synth", "--resolution", "16", "--count", "2", "--frames", "10",
                 "--seed", "5", "--out", dir2.string()}) == 0);
  CHECK(slurp(dir / "seq_000.nrf") == slurp(dir2 / "seq_000.nrf"));
  CHECK(slurp(dir / "seq_001.nrf") == slurp(dir2 / "seq_001.nrf"));

  const fs::path dir3 = fresh_dir("synth_c");
  CHECK(run_cli({"synth", "--resolution", "16", "--count", "0", "--out",
                 dir3.string()}) == 0);
  CHECK(fs::is_empty(dir3));
}

TEST_CASE("config file, echo, and precedence round trip") {
  const fs::path dir = fresh_dir("echo");
  const fs::path cfg_path = dir / "run.cfg";
  {
    std::ofstream f(cfg_path);
    f << "resolution = 16\ncount = 1\nframes = 9\nseed = 11\n";
  }
  std::string out;
  CHECK(run_cli({"--config", cfg_path.string(), "synth", "--out",
                 (dir / "a").string()}, &out) == 0);
  CHECK(out.find("# effective config") != std::string::npos);
  CHECK(out.find("frames = 9") != std::string::npos);

  // the echoed block is itself a valid config that reproduces the run
  const auto start = out.find("resolution =");
  const auto end = out.find("wrote ");
  REQUIRE(start != std::string::npos);
  const fs::path echo_path = dir / "echo.cfg";
  {
    std::ofstream f(echo_path);
    f << out.substr(start, end - start);
  }
  CHECK(run_cli({"--config", echo_path.string(), "synth", "--out",
                 (dir / "b").string()}) == 0);
  CHECK(slurp(dir / "a" / "seq_000.nrf") == slurp(dir / "b" / "seq_000.nrf"));

  // CLI flags beat the config file
  std::string out2;
  CHECK(run_cli({"--config", cfg_path.string(), "synth", "--frames", "12", "--out",
                 (dir / "c").string()}, &out2) == 0);
  CHECK(out2.find("frames = 12") != std::string::npos);
  CHECK(load_nrf((dir / "c" / "seq_000.nrf").string()).count() == 12);
}

TEST_CASE("train, resume, predict, evaluate, render end to end") {
  const fs::path dir = fresh_dir("pipeline");
  const fs::path cfg_path = dir / "net.cfg";
  {
    std::ofstream f(cfg_path);
    f << micro_net_config();
  }
  const std::string data_dir = (dir / "data").string();
  REQUIRE(run_cli({"synth", "--resolution", "16", "--count", "2", "--frames", "12",
                   "--seed", "3", "--out", data_dir}) == 0);

  const std::string ckpt = (dir / "model.ckpt").string();
  const std::string log = (dir / "loss.csv").string();
  const std::vector<std::string> train_args = {
      "--config", cfg_path.string(), "train", "--data", data_dir, "--checkpoint",
      ckpt, "--loss-log", log, "--resolution", "16", "--diffusion-steps", "8",
      "--steps", "6", "--batch", "1", "--seed", "2", "--window-stride", "2"};
  REQUIRE(run_cli(train_args) == 0);
  REQUIRE(fs::exists(ckpt));

  {
    std::ifstream f(log);
    std::string line;
    std::getline(f, line);
    CHECK(line == "step,loss");
    int rows = 0;
    std::string last;
    while (std::getline(f, line))
      if (!line.empty()) {
        ++rows;
        last = line;
      }
    CHECK(rows == 6);
    CHECK(last.substr(0, 2) == "6,");
  }

  // resume continues the step counter
  std::vector<std::string> resume_args = train_args;
  resume_args.push_back("--resume");
  resume_args[resume_args.size() - 8] = "4";  // --steps 4
  REQUIRE(resume_args[resume_args.size() - 9] == "--steps");
  REQUIRE(run_cli(resume_args) == 0);
  {
    std::ifstream f(log);
    std::string line, last;
    std::getline(f, line);
    int rows = 0;
    while (std::getline(f, line))
      if (!line.empty()) {
        ++rows;
        last = line;
      }
    CHECK(rows == 10);
    CHECK(last.substr(0, 3) == "10,");
  }

  // predict: deterministic 4-frame forecast at the input geometry
  const std::string pred1 = (dir / "p1.nrf").string();
  const std::string pred2 = (dir / "p2.nrf").string();
  REQUIRE(run_cli({"predict", "--checkpoint", ckpt, "--input",
                   data_dir + "/seq_000.nrf", "--out", pred1, "--seed", "9"}) == 0);
  REQUIRE(run_cli({"predict", "--checkpoint", ckpt, "--input",
                   data_dir + "/seq_000.nrf", "--out", pred2, "--seed", "9"}) == 0);
  CHECK(slurp(pred1) == slurp(pred2));
  const FrameSequence forecast = load_nrf(pred1);
  CHECK(forecast.count() == 4);
  CHECK(forecast.h() == 16);
  for (const auto& fr : forecast.frames) {
    CHECK(fr.minCoeff() >= 0.0f);
    CHECK(fr.maxCoeff() <= 128.0f);
  }

  // a different seed changes the sample
  const std::string pred3 = (dir / "p3.nrf").string();
  REQUIRE(run_cli({"predict", "--checkpoint", ckpt, "--input",
                   data_dir + "/seq_000.nrf", "--out", pred3, "--seed", "10"}) == 0);
  CHECK(slurp(pred1) != slurp(pred3));

  // resolution mismatch is a data error
  const std::string big_dir = (dir / "big").string();
  REQUIRE(run_cli({"synth", "--resolution", "32", "--count", "1", "--frames", "8",
                   "--out", big_dir}) == 0);
  CHECK(run_cli({"predict", "--checkpoint", ckpt, "--input", big_dir + "/seq_000.nrf",
                 "--out", (dir / "px.nrf").string()}) == 2);

  // evaluate a forecast against itself: perfect scores
  const std::string csv_path = (dir / "self.csv").string();
  REQUIRE(run_cli({"evaluate", "--pred", pred1, "--obs", pred1, "--fss-n", "3",
                   "--out", csv_path}) == 0);
  const std::string csv = slurp(csv_path);
  CHECK(csv.find("metric,band,value") == 0);
  CHECK(csv.find("csi,0-2,1.000000") != std::string::npos);
  CHECK(csv.find("mse,all,0.000000") != std::string::npos);

  // the CSV equals a direct recomputation through the metric operations
  {
    const FrameSequence p = load_nrf(pred1);
    std::vector<Array2<double>> frames;
    for (const auto& fr : p.frames) frames.push_back(fr.cast<double>().array());
    const SkillReport direct = evaluate_report(frames, frames, 3, 2.0, HssMode::Standard);
    CHECK(to_csv(direct) == csv);
  }

  // render endpoints
  FrameSequence ramp;
  ramp.frames.push_back((Eigen::MatrixXf(1, 3) << 0.0f, 64.0f, 128.0f).finished());
  save_nrf(ramp, (dir / "ramp.nrf").string());
  const std::string render_dir = (dir / "render").string();
  REQUIRE(run_cli({"render", "--input", (dir / "ramp.nrf").string(), "--out",
                   render_dir}) == 0);
  const std::string pgm = slurp(fs::path(render_dir) / "frame_000.pgm");
  const std::string header = "P5\n3 1\n255\n";
  REQUIRE(pgm.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(pgm[header.size() + 0]) == 0);
  CHECK(static_cast<unsigned char>(pgm[header.size() + 1]) == 128);
  CHECK(static_cast<unsigned char>(pgm[header.size() + 2]) == 255);
}

TEST_CASE("evaluate surfaces undefined bands and rejects mismatches") {
  const fs::path dir = fresh_dir("evaluate");
  FrameSequence zero;
  zero.frames.assign(2, Eigen::MatrixXf::Zero(8, 8));
  const std::string za = (dir / "a.nrf").string();
  save_nrf(zero, za);

  std::string out;
  CHECK(run_cli({"evaluate", "--pred", za, "--obs", za, "--fss-n", "3"}, &out) == 0);
  CHECK(out.find("csi,0-2,1.000000") != std::string::npos);
  CHECK(out.find("csi,>2,undefined") != std::string::npos);
  CHECK(out.find("hss,>8,undefined") != std::string::npos);
  CHECK(out.find("fss,>2,undefined") != std::string::npos);

  FrameSequence other;
  other.frames.assign(2, Eigen::MatrixXf::Zero(8, 9));
  const std::string zb = (dir / "b.nrf").string();
  save_nrf(other, zb);
  CHECK(run_cli({"evaluate", "--pred", za, "--obs", zb}) == 2);
}

TEST_CASE("usage and data errors map to exit codes") {
  CHECK(run_cli({"--no-such-flag"}) == 1);
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"synth", "--resolution", "17"}) == 1);
  CHECK(run_cli({"evaluate", "--pred", "/nonexistent.nrf", "--obs",
                 "/nonexistent.nrf"}) == 2);
  CHECK(run_cli({"train", "--data", "/nonexistent_dir"}) == 2);
  CHECK(run_cli({"synth", "--fss-n", "2", "--resolution", "16"}) == 1);
}
