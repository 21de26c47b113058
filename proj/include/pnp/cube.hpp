#pragma once

#include <Eigen/Dense>

#include <string>

#include "pnp/error.hpp"
#include "pnp/image_model.hpp"

namespace pnp {

/// Multi-band raster: one row per band, each row a row-major image.
struct HSCube {
  Index width = 0;
  Index height = 0;
  Eigen::MatrixXd values;  // bands x (width*height)

  HSCube() = default;
  HSCube(Index bands, Index w, Index h) : width(w), height(h), values(Eigen::MatrixXd::Zero(bands, w * h)) {}
  HSCube(Index w, Index h, Eigen::MatrixXd v) : width(w), height(h), values(std::move(v)) {
    detail::require(w > 0 && h > 0, "HSCube: dimensions must be positive");
    detail::require(values.cols() == w * h, "HSCube: column count does not match width*height");
    detail::require(values.rows() > 0, "HSCube: at least one band required");
  }

  Index bands() const { return values.rows(); }
  Index pixels() const { return width * height; }

  BandImage band(Index b) const { return BandImage(width, height, values.row(b).transpose()); }
  void set_band(Index b, const BandImage& img) {
    detail::require(img.width == width && img.height == height, "HSCube::set_band: dimension mismatch");
    values.row(b) = img.values.transpose();
  }
};

}  // namespace pnp
