#pragma once

// Fusion quality metrics: ERGAS, SAM (degrees), SRE (dB).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "pnp/cube.hpp"
#include "pnp/error.hpp"

namespace pnp {

struct MetricReport {
  // SRE reported for an exact reconstruction.
  static constexpr double kSreSentinel = std::numeric_limits<double>::max();

  double ergas = 0.0;
  double sam_degrees = 0.0;
  double sre_db = 0.0;
  Eigen::VectorXd band_rmse;
  Index sam_skipped_pixels = 0;

  static std::string csv_header() { return "ergas,sam_degrees,sre_db,sam_skipped_pixels"; }

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(17);
    os << ergas << ',' << sam_degrees << ',' << sre_db << ',' << sam_skipped_pixels;
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "ergas: " << ergas << "\nsam_degrees: " << sam_degrees << "\nsre_db: " << sre_db
       << "\nsam_skipped_pixels: " << sam_skipped_pixels << "\nband_rmse:";
    for (Index b = 0; b < band_rmse.size(); ++b) os << ' ' << band_rmse[b];
    os << '\n';
    return os.str();
  }
};

/// `resolution_ratio` is the HS/high-resolution ground sampling ratio (the
/// subsampling factor); ERGAS scales with 100 / ratio.
inline MetricReport evaluate(const HSCube& estimate, const HSCube& reference, double resolution_ratio) {
  detail::require(estimate.bands() == reference.bands() && estimate.width == reference.width &&
                      estimate.height == reference.height,
                  "evaluate: cube dimensions differ");
  detail::require(resolution_ratio > 0.0, "evaluate: resolution ratio must be positive");
  const double ref_energy = reference.values.squaredNorm();
  if (!(ref_energy > 0.0)) throw DataError("evaluate: reference cube is identically zero");

  MetricReport rep;
  const Eigen::MatrixXd diff = estimate.values - reference.values;
  const double err = diff.squaredNorm();
  rep.sre_db = err > 0.0 ? 10.0 * std::log10(ref_energy / err) : MetricReport::kSreSentinel;

  const auto n = static_cast<double>(reference.pixels());
  rep.band_rmse = (diff.rowwise().squaredNorm() / n).cwiseSqrt();
  double acc = 0.0;
  for (Index b = 0; b < reference.bands(); ++b) {
    const double mu = reference.values.row(b).mean();
    if (mu == 0.0) throw DataError("evaluate: reference band " + std::to_string(b) + " has zero mean");
    acc += (rep.band_rmse[b] / mu) * (rep.band_rmse[b] / mu);
  }
  rep.ergas = 100.0 / resolution_ratio * std::sqrt(acc / static_cast<double>(reference.bands()));

  double angle_sum = 0.0;
  Index counted = 0;
  for (Index p = 0; p < reference.pixels(); ++p) {
    const double nz2 = reference.values.col(p).squaredNorm();
    const double nh2 = estimate.values.col(p).squaredNorm();
    if (nz2 == 0.0 || nh2 == 0.0) {
      ++rep.sam_skipped_pixels;
      continue;
    }
    const double c = std::clamp(reference.values.col(p).dot(estimate.values.col(p)) / std::sqrt(nz2 * nh2), -1.0, 1.0);
    angle_sum += std::acos(c);
    ++counted;
  }
  rep.sam_degrees = counted > 0 ? angle_sum / static_cast<double>(counted) * 180.0 / std::numbers::pi : 0.0;
  return rep;
}

}  // namespace pnp
