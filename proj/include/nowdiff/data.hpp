#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nowdiff/errors.hpp"
#include "nowdiff/rng.hpp"
#include "nowdiff/types.hpp"

namespace nowdiff {

constexpr float kMaxIntensity = 128.0f;  // mm/h cap

/// A time-ordered stack of rainfall-intensity grids in mm/h.
struct FrameSequence {
  std::vector<Eigen::MatrixXf> frames;
  double cadence_minutes = 5.0;

  int count() const { return static_cast<int>(frames.size()); }
  int h() const { return frames.empty() ? 0 : static_cast<int>(frames.front().rows()); }
  int w() const { return frames.empty() ? 0 : static_cast<int>(frames.front().cols()); }

  void validate() const {
    if (frames.empty()) throw ContractError("frame sequence is empty");
    if (!(cadence_minutes > 0.0) || !std::isfinite(cadence_minutes))
      throw ContractError("cadence must be finite and positive");
    for (const auto& f : frames) {
      if (f.rows() != frames.front().rows() || f.cols() != frames.front().cols())
        throw ContractError("frames have inconsistent dimensions");
      for (Eigen::Index j = 0; j < f.cols(); ++j)
        for (Eigen::Index i = 0; i < f.rows(); ++i) {
          const float v = f(i, j);
          if (!std::isfinite(v) || v < 0.0f || v > kMaxIntensity)
            throw ContractError("frame value outside [0, 128] mm/h");
        }
    }
  }
};

/// A 4-input / 4-target training or evaluation pair.
struct NowcastSample {
  std::array<Eigen::MatrixXf, 4> inputs;
  std::array<Eigen::MatrixXf, 4> targets;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw ParseError(ParseError::Kind::Truncated, "unexpected end of file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::Malformed, "cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

}  // namespace detail

/// Serialize to the NRF container: "NRF1", u32 frames/h/w, f64 cadence,
/// then f32 values frame-major, row-major within a frame. Little-endian.
inline std::string encode_nrf(const FrameSequence& seq) {
  seq.validate();
  std::string out = "NRF1";
  detail::put_u32(out, static_cast<std::uint32_t>(seq.count()));
  detail::put_u32(out, static_cast<std::uint32_t>(seq.h()));
  detail::put_u32(out, static_cast<std::uint32_t>(seq.w()));
  detail::put_f64(out, seq.cadence_minutes);
  for (const auto& f : seq.frames)
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (Eigen::Index j = 0; j < f.cols(); ++j) detail::put_f32(out, f(i, j));
  return out;
}

inline void save_nrf(const FrameSequence& seq, const std::string& path) {
  const std::string bytes = encode_nrf(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(ParseError::Kind::Malformed, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError(ParseError::Kind::Malformed, "short write to " + path);
}

inline FrameSequence decode_nrf(const std::string& bytes) {
  detail::ByteReader r{bytes};
  r.need(4);
  if (bytes.compare(0, 4, "NRF1") != 0)
    throw ParseError(ParseError::Kind::BadMagic, "not an NRF file");
  r.pos = 4;
  const std::uint32_t count = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  if (count == 0 || h == 0 || w == 0)
    throw ParseError(ParseError::Kind::Malformed, "empty frame geometry");
  if (static_cast<std::uint64_t>(count) * h * w > (1ull << 31))
    throw ParseError(ParseError::Kind::Malformed, "implausible frame geometry");

  FrameSequence seq;
  seq.cadence_minutes = r.f64();
  if (!std::isfinite(seq.cadence_minutes) || seq.cadence_minutes <= 0.0)
    throw ParseError(ParseError::Kind::OutOfRange, "invalid cadence");

  seq.frames.reserve(count);
  for (std::uint32_t f = 0; f < count; ++f) {
    Eigen::MatrixXf frame(h, w);
    for (std::uint32_t i = 0; i < h; ++i)
      for (std::uint32_t j = 0; j < w; ++j) {
        const float v = r.f32();
        if (!std::isfinite(v) || v < 0.0f || v > kMaxIntensity)
          throw ParseError(ParseError::Kind::OutOfRange, "value outside [0, 128] mm/h");
        frame(i, j) = v;
      }
    seq.frames.push_back(std::move(frame));
  }
  if (r.pos != bytes.size())
    throw ParseError(ParseError::Kind::Malformed, "trailing bytes after payload");
  return seq;
}

inline FrameSequence load_nrf(const std::string& path) {
  return decode_nrf(detail::read_file(path));
}

/// Sliding 8-frame windows split 4/4, starting at indices 0, stride, 2*stride, ...
inline std::vector<NowcastSample> make_windows(const FrameSequence& seq, int stride) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  std::vector<NowcastSample> out;
  for (int start = 0; start + 8 <= seq.count(); start += stride) {
    NowcastSample s;
    for (int i = 0; i < 4; ++i) {
      s.inputs[i] = seq.frames[start + i];
      s.targets[i] = seq.frames[start + 4 + i];
    }
    out.push_back(std::move(s));
  }
  return out;
}

enum class NormMode { Linear, Log1p };

/// mm/h -> model space. Linear maps [0, 128] onto [-1, 1].
template <typename S>
Matrix<S> normalize(const Eigen::MatrixXf& field, NormMode mode = NormMode::Linear) {
  Matrix<S> out(field.rows(), field.cols());
  const double log_cap = std::log1p(static_cast<double>(kMaxIntensity));
  for (Eigen::Index j = 0; j < field.cols(); ++j)
    for (Eigen::Index i = 0; i < field.rows(); ++i) {
      const double v = field(i, j);
      if (!(v >= 0.0) || v > kMaxIntensity)
        throw ContractError("normalize: value outside [0, 128] mm/h");
      out(i, j) = mode == NormMode::Linear
                      ? static_cast<S>(v / 64.0 - 1.0)
                      : static_cast<S>(2.0 * std::log1p(v) / log_cap - 1.0);
    }
  return out;
}

/// Model space -> mm/h, clipped back into [0, 128].
template <typename S>
Eigen::MatrixXf denormalize(const Matrix<S>& field, NormMode mode = NormMode::Linear) {
  Eigen::MatrixXf out(field.rows(), field.cols());
  const double log_cap = std::log1p(static_cast<double>(kMaxIntensity));
  for (Eigen::Index j = 0; j < field.cols(); ++j)
    for (Eigen::Index i = 0; i < field.rows(); ++i) {
      const double y = static_cast<double>(field(i, j));
      double v = mode == NormMode::Linear ? (y + 1.0) * 64.0
                                          : std::expm1((y + 1.0) * 0.5 * log_cap);
      v = std::min(static_cast<double>(kMaxIntensity), std::max(0.0, v));
      out(i, j) = static_cast<float>(v);
    }
  return out;
}

template <typename S>
FieldStack<S> to_model_stack(const std::array<Eigen::MatrixXf, 4>& frames,
                             NormMode mode = NormMode::Linear) {
  FieldStack<S> out(4, static_cast<int>(frames[0].rows()),
                    static_cast<int>(frames[0].cols()));
  for (int c = 0; c < 4; ++c) out.set_channel(c, normalize<S>(frames[c], mode));
  return out;
}

template <typename S>
std::vector<Eigen::MatrixXf> from_model_stack(const FieldStack<S>& stack,
                                              NormMode mode = NormMode::Linear) {
  std::vector<Eigen::MatrixXf> out;
  out.reserve(stack.channels());
  for (int c = 0; c < stack.channels(); ++c)
    out.push_back(denormalize<S>(stack.channel(c), mode));
  return out;
}

/// One translating rain cell of the synthetic generator.
struct RainCell {
  double x = 0, y = 0;  // center at frame 0, pixels
  double peak = 1;      // mm/h
  double radius = 4;    // gaussian sigma, pixels
};

struct AdvectionParams {
  int frame_count = 24;
  int h = 64, w = 64;
  double vx = 0, vy = 0;  // pixels per frame, constant over the sequence
  std::vector<RainCell> cells;
  double spread_growth = 1.02;  // per-frame radius factor (mild diffusion)
  double cadence_minutes = 5.0;
};

inline AdvectionParams draw_advection_params(int frame_count, int h, int w, Rng& rng) {
  AdvectionParams p;
  p.frame_count = frame_count;
  p.h = h;
  p.w = w;
  p.vx = rng.uniform(-1.5, 1.5);
  p.vy = rng.uniform(-1.5, 1.5);
  const int n_cells = rng.uniform_int(2, 4);
  for (int i = 0; i < n_cells; ++i) {
    RainCell c;
    c.x = rng.uniform(0.15 * w, 0.85 * w);
    c.y = rng.uniform(0.15 * h, 0.85 * h);
    c.peak = rng.uniform(1.0, 64.0);
    c.radius = rng.uniform(3.0, std::max(4.0, std::min(h, w) / 6.0));
    p.cells.push_back(c);
  }
  return p;
}

/// Gaussian rain cells translated by a constant velocity with mild
/// spreading; amplitudes scale so each cell conserves its mass.
inline FrameSequence synth_advection(const AdvectionParams& p) {
  if (p.h < 16 || p.w < 16) throw ConfigError("synthetic grids must be at least 16x16");
  FrameSequence seq;
  seq.cadence_minutes = p.cadence_minutes;
  for (int f = 0; f < p.frame_count; ++f) {
    Eigen::MatrixXf frame = Eigen::MatrixXf::Zero(p.h, p.w);
    const double growth = std::pow(p.spread_growth, f);
    for (const auto& cell : p.cells) {
      const double cx = cell.x + f * p.vx;
      const double cy = cell.y + f * p.vy;
      const double sigma = cell.radius * growth;
      const double amp = cell.peak / (growth * growth);
      const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
      for (int i = 0; i < p.h; ++i)
        for (int j = 0; j < p.w; ++j) {
          const double dy = i - cy, dx = j - cx;
          frame(i, j) += static_cast<float>(amp * std::exp(-(dx * dx + dy * dy) * inv2s2));
        }
    }
    for (int i = 0; i < p.h; ++i)
      for (int j = 0; j < p.w; ++j)
        frame(i, j) = std::min(kMaxIntensity, std::max(0.0f, frame(i, j)));
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

inline FrameSequence synth_advection(int frame_count, int h, int w, Rng& rng) {
  return synth_advection(draw_advection_params(frame_count, h, w, rng));
}

}  // namespace nowdiff
