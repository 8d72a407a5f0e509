#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "nowdiff/data.hpp"

using namespace nowdiff;

namespace {

FrameSequence random_sequence(Rng& rng, int count, int h, int w) {
  FrameSequence seq;
  for (int f = 0; f < count; ++f) {
    Eigen::MatrixXf frame(h, w);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) frame(i, j) = float(rng.uniform(0.0, 128.0));
    seq.frames.push_back(frame);
  }
  return seq;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("nrf round trip is byte exact") {
  Rng rng(21);
  const FrameSequence seq = random_sequence(rng, 5, 6, 7);
  const std::string path = temp_path("nowdiff_roundtrip.nrf");
  save_nrf(seq, path);
  const FrameSequence back = load_nrf(path);
  REQUIRE(back.count() == 5);
  REQUIRE(back.h() == 6);
  REQUIRE(back.w() == 7);
  CHECK(back.cadence_minutes == seq.cadence_minutes);
  for (int f = 0; f < 5; ++f) CHECK((back.frames[f].array() == seq.frames[f].array()).all());
  CHECK(encode_nrf(back) == encode_nrf(seq));
  std::remove(path.c_str());
}

TEST_CASE("nrf parse failures are distinct") {
  Rng rng(22);
  const std::string good = encode_nrf(random_sequence(rng, 2, 3, 3));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_nrf(bad_magic), "not an NRF file", ParseError);
  try {
    decode_nrf(bad_magic);
  } catch (const ParseError& e) {
    CHECK(e.kind == ParseError::Kind::BadMagic);
  }

  const std::string truncated = good.substr(0, good.size() - 3);
  try {
    decode_nrf(truncated);
    FAIL("expected truncation error");
  } catch (const ParseError& e) {
    CHECK(e.kind == ParseError::Kind::Truncated);
  }

  FrameSequence hot = random_sequence(rng, 1, 2, 2);
  hot.frames[0](0, 0) = 50.0f;
  std::string encoded = encode_nrf(hot);
  {
    // poke an out-of-range value directly into the payload
    float big = 400.0f;
    std::uint32_t bits;
    std::memcpy(&bits, &big, 4);
    const std::size_t off = 4 + 12 + 8;  // magic + dims + cadence
    for (int i = 0; i < 4; ++i) encoded[off + i] = char((bits >> (8 * i)) & 0xFF);
  }
  try {
    decode_nrf(encoded);
    FAIL("expected range error");
  } catch (const ParseError& e) {
    CHECK(e.kind == ParseError::Kind::OutOfRange);
  }

  std::string trailing = good + "zz";
  try {
    decode_nrf(trailing);
    FAIL("expected malformed error");
  } catch (const ParseError& e) {
    CHECK(e.kind == ParseError::Kind::Malformed);
  }
}

TEST_CASE("saving an invalid sequence fails loudly") {
  FrameSequence bad;
  bad.frames.push_back(Eigen::MatrixXf::Constant(2, 2, 200.0f));  // above the cap
  CHECK_THROWS_AS(encode_nrf(bad), ContractError);

  FrameSequence empty;
  CHECK_THROWS_AS(encode_nrf(empty), ContractError);

  FrameSequence ragged;
  ragged.frames.push_back(Eigen::MatrixXf::Zero(2, 2));
  ragged.frames.push_back(Eigen::MatrixXf::Zero(2, 3));
  CHECK_THROWS_AS(encode_nrf(ragged), ContractError);

  FrameSequence nan_seq;
  nan_seq.frames.push_back(Eigen::MatrixXf::Constant(2, 2, std::nanf("")));
  CHECK_THROWS_AS(encode_nrf(nan_seq), ContractError);
}

TEST_CASE("hand-written 2x2x2 byte layout decodes to known values") {
  std::string bytes = "NRF1";
  auto u32 = [&bytes](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(char((v >> (8 * i)) & 0xFF));
  };
  auto f32 = [&bytes](float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) bytes.push_back(char((bits >> (8 * i)) & 0xFF));
  };
  u32(2);
  u32(2);
  u32(2);
  const double cadence = 5.0;
  std::uint64_t cb;
  std::memcpy(&cb, &cadence, 8);
  for (int i = 0; i < 8; ++i) bytes.push_back(char((cb >> (8 * i)) & 0xFF));
  // frame 0 rows: (1, 2), (3, 4); frame 1 rows: (5, 6), (7, 8)
  for (float v : {1.f, 2.f, 3.f, 4.f, 5.f, 6.f, 7.f, 8.f}) f32(v);

  const FrameSequence seq = decode_nrf(bytes);
  REQUIRE(seq.count() == 2);
  CHECK(seq.cadence_minutes == 5.0);
  CHECK(seq.frames[0](0, 0) == 1.f);
  CHECK(seq.frames[0](0, 1) == 2.f);
  CHECK(seq.frames[0](1, 0) == 3.f);
  CHECK(seq.frames[0](1, 1) == 4.f);
  CHECK(seq.frames[1](0, 0) == 5.f);
  CHECK(seq.frames[1](1, 1) == 8.f);
}

TEST_CASE("window extraction") {
  Rng rng(23);
  const FrameSequence seq24 = random_sequence(rng, 24, 4, 4);
  CHECK(make_windows(seq24, 8).size() == 3);
  CHECK(make_windows(seq24, 4).size() == 5);

  const FrameSequence seq8 = random_sequence(rng, 8, 4, 4);
  const auto one = make_windows(seq8, 3);
  REQUIRE(one.size() == 1);
  for (int i = 0; i < 4; ++i) {
    CHECK((one[0].inputs[i].array() == seq8.frames[i].array()).all());
    CHECK((one[0].targets[i].array() == seq8.frames[4 + i].array()).all());
  }

  const FrameSequence seq7 = random_sequence(rng, 7, 4, 4);
  CHECK(make_windows(seq7, 1).empty());
  CHECK_THROWS_AS(make_windows(seq8, 0), ConfigError);

  // windows start at 0, s, 2s, ...
  const auto strided = make_windows(seq24, 5);
  REQUIRE(strided.size() == 4);
  CHECK((strided[2].inputs[0].array() == seq24.frames[10].array()).all());
}

TEST_CASE("normalization endpoints and inverse") {
  Eigen::MatrixXf f(1, 3);
  f << 0.0f, 64.0f, 128.0f;
  const auto n = normalize<double>(f);
  CHECK(n(0, 0) == -1.0);
  CHECK(n(0, 1) == 0.0);
  CHECK(n(0, 2) == 1.0);

  const auto back = denormalize<double>(n);
  CHECK((back.array() == f.array()).all());

  Matrix<double> low(1, 1);
  low(0, 0) = -1.2;
  CHECK(denormalize<double>(low)(0, 0) == 0.0f);
  Matrix<double> high(1, 1);
  high(0, 0) = 1.7;
  CHECK(denormalize<double>(high)(0, 0) == 128.0f);

  Eigen::MatrixXf bad(1, 1);
  bad(0, 0) = 300.0f;
  CHECK_THROWS_AS(normalize<double>(bad), ContractError);

  // log mode round trip
  Eigen::MatrixXf vals(1, 4);
  vals << 0.0f, 1.0f, 10.0f, 128.0f;
  const auto ln = normalize<double>(vals, NormMode::Log1p);
  CHECK(ln(0, 0) == doctest::Approx(-1.0));
  CHECK(ln(0, 3) == doctest::Approx(1.0));
  const auto lb = denormalize<double>(ln, NormMode::Log1p);
  for (int j = 0; j < 4; ++j) CHECK(lb(0, j) == doctest::Approx(vals(0, j)).epsilon(1e-5));
}

TEST_CASE("synthetic advection determinism and bounds") {
  Rng a(31), b(31), c(32);
  const FrameSequence s1 = synth_advection(10, 24, 24, a);
  const FrameSequence s2 = synth_advection(10, 24, 24, b);
  const FrameSequence s3 = synth_advection(10, 24, 24, c);
  CHECK(encode_nrf(s1) == encode_nrf(s2));
  CHECK(encode_nrf(s1) != encode_nrf(s3));
  for (const auto& frame : s1.frames) {
    CHECK(frame.minCoeff() >= 0.0f);
    CHECK(frame.maxCoeff() <= 128.0f);
  }
  CHECK_THROWS_AS(synth_advection(4, 8, 8, a), ConfigError);
}

TEST_CASE("cell centroid tracks the configured velocity") {
  AdvectionParams p;
  p.frame_count = 6;
  p.h = 48;
  p.w = 48;
  p.vx = 1.2;
  p.vy = -0.7;
  p.cells = {{20.0, 28.0, 30.0, 4.0}};
  p.spread_growth = 1.01;
  const FrameSequence seq = synth_advection(p);

  auto centroid = [](const Eigen::MatrixXf& f) {
    double sx = 0, sy = 0, mass = 0;
    for (int i = 0; i < f.rows(); ++i)
      for (int j = 0; j < f.cols(); ++j) {
        sx += f(i, j) * j;
        sy += f(i, j) * i;
        mass += f(i, j);
      }
    return std::pair<double, double>{sx / mass, sy / mass};
  };
  for (int f = 1; f < seq.count(); ++f) {
    const auto [x0, y0] = centroid(seq.frames[f - 1]);
    const auto [x1, y1] = centroid(seq.frames[f]);
    CHECK(std::abs((x1 - x0) - p.vx) < 0.5);
    CHECK(std::abs((y1 - y0) - p.vy) < 0.5);
  }
}
