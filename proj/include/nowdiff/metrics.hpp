#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "nowdiff/errors.hpp"
#include "nowdiff/types.hpp"

namespace nowdiff {

/// Exceedance mask: field strictly above the threshold.
inline MaskGrid binarize(const Array2<double>& field, double threshold) {
  return field > threshold;
}

/// The light/no-rain band: field at or below the threshold (default 2 mm/h).
inline MaskGrid binarize_low_band(const Array2<double>& field, double threshold = 2.0) {
  return field <= threshold;
}

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

inline ConfusionCounts confusion(const MaskGrid& pred, const MaskGrid& obs) {
  if (pred.rows() != obs.rows() || pred.cols() != obs.cols())
    throw ContractError("confusion: mask shape mismatch");
  ConfusionCounts c;
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      const bool p = pred(i, j), o = obs(i, j);
      if (p && o)
        ++c.tp;
      else if (p && !o)
        ++c.fp;
      else if (!p && o)
        ++c.fn;
      else
        ++c.tn;
    }
  }
  return c;
}

/// TP / (TP + FP + FN); empty when there are no events on either side.
inline std::optional<double> csi(const ConfusionCounts& c) {
  const std::int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

enum class HssMode {
  Standard,     // 2(TP*TN - FN*FP) / [(TP+FN)(FN+TN) + (TP+FP)(FP+TN)]
  AsPublished,  // (TP*TN - FN*FP) / [(TP+TN)(FN+TN) + (TP+FP)(FP+TN)]
};

inline std::optional<double> hss(const ConfusionCounts& c, HssMode mode = HssMode::Standard) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  const double num = tp * tn - fn * fp;
  double denom;
  if (mode == HssMode::Standard)
    denom = (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn);
  else
    denom = (tp + tn) * (fn + tn) + (tp + fp) * (fp + tn);
  if (denom == 0.0) return std::nullopt;
  if (mode == HssMode::Standard) return 2.0 * num / denom;
  return num / denom;
}

/// Neighborhood event fraction: each pixel averages the mask over an n x n
/// window truncated at the grid edges.
inline Array2<double> fraction_field(const MaskGrid& mask, int n) {
  if (n < 1 || n % 2 == 0) throw ConfigError("neighborhood size must be odd and >= 1");
  const int r = (n - 1) / 2;
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  Array2<double> frac(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const int i0 = std::max(0, i - r), i1 = std::min(rows - 1, i + r);
      const int j0 = std::max(0, j - r), j1 = std::min(cols - 1, j + r);
      std::int64_t hits = 0;
      for (int a = i0; a <= i1; ++a)
        for (int b = j0; b <= j1; ++b)
          if (mask(a, b)) ++hits;
      const std::int64_t cells = static_cast<std::int64_t>(i1 - i0 + 1) * (j1 - j0 + 1);
      frac(i, j) = static_cast<double>(hits) / static_cast<double>(cells);
    }
  }
  return frac;
}

/// Fractions skill score over a stack of forecast/observation frames,
/// pooling the fraction-field errors across all frames.
inline std::optional<double> fss_frames(const std::vector<Array2<double>>& pred,
                                        const std::vector<Array2<double>>& obs,
                                        double threshold, int n) {
  if (pred.size() != obs.size() || pred.empty())
    throw ContractError("fss: frame count mismatch or empty input");
  if (n < 1 || n % 2 == 0) throw ConfigError("fss: neighborhood size must be odd");
  double num = 0.0, ref_f = 0.0, ref_o = 0.0;
  std::int64_t count = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (pred[f].rows() != obs[f].rows() || pred[f].cols() != obs[f].cols())
      throw ContractError("fss: grid shape mismatch");
    const Array2<double> pf = fraction_field(binarize(pred[f], threshold), n);
    const Array2<double> po = fraction_field(binarize(obs[f], threshold), n);
    for (Eigen::Index i = 0; i < pf.rows(); ++i) {
      for (Eigen::Index j = 0; j < pf.cols(); ++j) {
        const double d = pf(i, j) - po(i, j);
        num += d * d;
        ref_f += pf(i, j) * pf(i, j);
        ref_o += po(i, j) * po(i, j);
        ++count;
      }
    }
  }
  const double mse_n = num / static_cast<double>(count);
  const double mse_ref =
      ref_f / static_cast<double>(count) + ref_o / static_cast<double>(count);
  if (mse_ref == 0.0) return std::nullopt;
  return 1.0 - mse_n / mse_ref;
}

inline std::optional<double> fss(const Array2<double>& pred, const Array2<double>& obs,
                                 double threshold, int n) {
  return fss_frames({pred}, {obs}, threshold, n);
}

inline double mse_frames(const std::vector<Array2<double>>& pred,
                         const std::vector<Array2<double>>& obs) {
  if (pred.size() != obs.size() || pred.empty())
    throw ContractError("mse: frame count mismatch or empty input");
  double total = 0.0;
  std::int64_t count = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (pred[f].rows() != obs[f].rows() || pred[f].cols() != obs[f].cols())
      throw ContractError("mse: grid shape mismatch");
    for (Eigen::Index i = 0; i < pred[f].rows(); ++i) {
      for (Eigen::Index j = 0; j < pred[f].cols(); ++j) {
        const double d = pred[f](i, j) - obs[f](i, j);
        total += d * d;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

inline double mse_metric(const Array2<double>& pred, const Array2<double>& obs) {
  return mse_frames({pred}, {obs});
}

/// Aggregated verification scores for a forecast/observation pair.
struct SkillReport {
  struct BandScore {
    std::string band;
    std::optional<double> csi;
    std::optional<double> hss;
  };
  std::vector<BandScore> bands;
  std::optional<double> fss;
  double fss_threshold = 2.0;
  int fss_n = 9;
  double mse = 0.0;
  HssMode hss_mode = HssMode::Standard;
};

/// CSI/HSS at the 0-2 band and the 2/4/8 mm/h exceedance thresholds with
/// confusion counts pooled over all frames, plus FSS and MSE.
inline SkillReport evaluate_report(const std::vector<Array2<double>>& pred,
                                   const std::vector<Array2<double>>& obs, int n,
                                   double fss_threshold = 2.0,
                                   HssMode hss_mode = HssMode::Standard) {
  if (pred.size() != obs.size() || pred.empty())
    throw ContractError("evaluate_report: frame count mismatch or empty input");

  SkillReport report;
  report.fss_threshold = fss_threshold;
  report.fss_n = n;
  report.hss_mode = hss_mode;

  struct Band {
    std::string label;
    bool low;
    double threshold;
  };
  const std::vector<Band> bands = {
      {"0-2", true, 2.0}, {">2", false, 2.0}, {">4", false, 4.0}, {">8", false, 8.0}};

  for (const auto& band : bands) {
    ConfusionCounts pooled;
    for (std::size_t f = 0; f < pred.size(); ++f) {
      const MaskGrid pm = band.low ? binarize_low_band(pred[f], band.threshold)
                                   : binarize(pred[f], band.threshold);
      const MaskGrid om = band.low ? binarize_low_band(obs[f], band.threshold)
                                   : binarize(obs[f], band.threshold);
      pooled += confusion(pm, om);
    }
    report.bands.push_back({band.label, csi(pooled), hss(pooled, hss_mode)});
  }

  report.fss = fss_frames(pred, obs, fss_threshold, n);
  report.mse = mse_frames(pred, obs);
  return report;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

/// CSV rows `metric,band,value` with fixed 6-decimal formatting.
inline std::string to_csv(const SkillReport& report) {
  std::string out = "metric,band,value\n";
  for (const auto& b : report.bands)
    out += "csi," + b.band + "," + format_metric(b.csi) + "\n";
  for (const auto& b : report.bands)
    out += "hss," + b.band + "," + format_metric(b.hss) + "\n";
  char band[32];
  std::snprintf(band, sizeof(band), ">%g", report.fss_threshold);
  out += "fss," + std::string(band) + "," + format_metric(report.fss) + "\n";
  out += "mse,all," + format_metric(report.mse) + "\n";
  return out;
}

}  // namespace nowdiff
