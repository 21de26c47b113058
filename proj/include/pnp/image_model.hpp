#pragma once

// Patch algebra on single-band images: unit-stride extraction with periodic
// boundaries, averaging re-assembly and the non-overlapping partition of the
// patch set.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pnp/error.hpp"

namespace pnp {

using Index = Eigen::Index;

/// Row-major single-band raster held in 64-bit floats.
struct BandImage {
  Index width = 0;
  Index height = 0;
  Eigen::VectorXd values;

  BandImage() = default;
  BandImage(Index w, Index h) : width(w), height(h), values(Eigen::VectorXd::Zero(w * h)) {}
  BandImage(Index w, Index h, Eigen::VectorXd v) : width(w), height(h), values(std::move(v)) {
    detail::require(w > 0 && h > 0, "BandImage: dimensions must be positive");
    detail::require(values.size() == w * h, "BandImage: value count does not match width*height");
  }

  Index size() const { return width * height; }
  double& at(Index row, Index col) { return values[row * width + col]; }
  double at(Index row, Index col) const { return values[row * width + col]; }
  bool all_finite() const { return values.allFinite(); }
};

/// Square patches anchored at every pixel (top-left corner), wrapping
/// periodically. There is one patch per pixel, ordered raster-wise.
class PatchGeometry {
 public:
  PatchGeometry() = default;
  PatchGeometry(Index width, Index height, Index patch_side)
      : width_(width), height_(height), side_(patch_side) {
    detail::require(width > 0 && height > 0, "PatchGeometry: image dimensions must be positive");
    detail::require(patch_side >= 1, "PatchGeometry: patch_side must be >= 1");
    detail::require(patch_side <= width && patch_side <= height,
                    "PatchGeometry: patch_side exceeds image dimensions");
  }

  Index width() const { return width_; }
  Index height() const { return height_; }
  Index patch_side() const { return side_; }
  Index patch_size() const { return side_ * side_; }
  Index patch_count() const { return width_ * height_; }
  Index pixel_count() const { return width_ * height_; }

  /// Linear pixel index of slot `slot` in the patch anchored at pixel `anchor`.
  Index pixel_of(Index anchor, Index slot) const {
    const Index r = anchor / width_, c = anchor % width_;
    const Index dr = slot / side_, dc = slot % side_;
    return ((r + dr) % height_) * width_ + (c + dc) % width_;
  }

  bool matches(const BandImage& img) const { return img.width == width_ && img.height == height_; }

  bool operator==(const PatchGeometry&) const = default;

 private:
  Index width_ = 0;
  Index height_ = 0;
  Index side_ = 1;
};

/// Patches stored one per column (patch_size x patch_count). When `means` is
/// non-empty each column has had its mean subtracted and the mean is kept.
struct PatchSet {
  PatchGeometry geometry;
  Eigen::MatrixXd patches;
  Eigen::VectorXd means;

  bool has_means() const { return means.size() > 0; }
};

/// Disjoint groups of patches; inside a group no two patches share a pixel.
struct PatchPartition {
  std::vector<std::vector<Index>> subsets;
};

inline void check_geometry(const PatchGeometry& geom, const BandImage& img) {
  if (!geom.matches(img)) {
    throw InvalidArgument("patch geometry " + std::to_string(geom.width()) + "x" +
                          std::to_string(geom.height()) + " does not match image " +
                          std::to_string(img.width) + "x" + std::to_string(img.height));
  }
}

inline PatchSet extract_patches(const BandImage& img, const PatchGeometry& geom,
                                bool remove_means) {
  check_geometry(geom, img);
  const Index np = geom.patch_size(), N = geom.patch_count();
  const Index w = geom.width(), h = geom.height(), s = geom.patch_side();
  PatchSet ps;
  ps.geometry = geom;
  ps.patches.resize(np, N);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double* col = ps.patches.col(r * w + c).data();
      for (Index dr = 0; dr < s; ++dr) {
        const double* row = img.values.data() + ((r + dr) % h) * w;
        for (Index dc = 0; dc < s; ++dc) col[dr * s + dc] = row[(c + dc) % w];
      }
    }
  }
  if (remove_means) {
    ps.means = ps.patches.colwise().mean().transpose();
    ps.patches.rowwise() -= ps.means.transpose();
  }
  return ps;
}

/// Sum of P_i^T q_i over all patches (no normalization, means ignored).
inline BandImage aggregate_unnormalized(const PatchGeometry& geom, const Eigen::MatrixXd& patches) {
  detail::require(patches.rows() == geom.patch_size() && patches.cols() == geom.patch_count(),
                  "aggregate: patch matrix shape does not match geometry");
  const Index w = geom.width(), h = geom.height(), s = geom.patch_side();
  BandImage out(w, h);
  // Per-pixel gather in fixed slot order keeps the result independent of any
  // loop partitioning.
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double acc = 0.0;
      for (Index dr = 0; dr < s; ++dr) {
        const Index ar = (r - dr + h) % h;
        for (Index dc = 0; dc < s; ++dc) {
          const Index ac = (c - dc + w) % w;
          acc += patches(dr * s + dc, ar * w + ac);
        }
      }
      out.values[r * w + c] = acc;
    }
  }
  return out;
}

/// (1/n_p) * sum_i P_i^T (patch_i + mean_i * 1). Left inverse of extract_patches.
inline BandImage aggregate_patches(const PatchSet& ps) {
  const PatchGeometry& g = ps.geometry;
  if (ps.has_means()) {
    detail::require(ps.means.size() == g.patch_count(), "aggregate: means length mismatch");
    Eigen::MatrixXd full = ps.patches;
    full.rowwise() += ps.means.transpose();
    BandImage out = aggregate_unnormalized(g, full);
    out.values /= static_cast<double>(g.patch_size());
    return out;
  }
  BandImage out = aggregate_unnormalized(g, ps.patches);
  out.values /= static_cast<double>(g.patch_size());
  return out;
}

/// Number of patches covering each pixel (n_p everywhere under periodic
/// boundaries).
inline std::vector<Index> coverage_counts(const PatchGeometry& geom) {
  std::vector<Index> counts(static_cast<std::size_t>(geom.pixel_count()), 0);
  for (Index i = 0; i < geom.patch_count(); ++i)
    for (Index k = 0; k < geom.patch_size(); ++k) ++counts[geom.pixel_of(i, k)];
  return counts;
}

/// Groups patches by anchor offset modulo patch_side. Each group tiles the
/// image exactly once, so there are patch_side^2 = n_p groups.
inline PatchPartition build_partition(const PatchGeometry& geom) {
  const Index s = geom.patch_side(), w = geom.width(), h = geom.height();
  if (w % s != 0 || h % s != 0) {
    throw InvalidArgument("build_partition: patch_side " + std::to_string(s) +
                          " must divide image dimensions " + std::to_string(w) + "x" +
                          std::to_string(h));
  }
  PatchPartition part;
  part.subsets.resize(static_cast<std::size_t>(s * s));
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c)
      part.subsets[static_cast<std::size_t>((r % s) * s + c % s)].push_back(r * w + c);
  return part;
}

}  // namespace pnp
