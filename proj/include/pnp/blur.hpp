#pragma once

// Cyclic 2-D convolution through the FFT.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <vector>

#include "pnp/error.hpp"
#include "pnp/image_model.hpp"

namespace pnp {

/// Odd-sized square kernel with its origin at the center tap.
struct BlurKernel {
  Eigen::MatrixXd taps;

  Index radius() const { return taps.rows() / 2; }
  double sum() const { return taps.sum(); }

  static BlurKernel delta() { return BlurKernel{Eigen::MatrixXd::Ones(1, 1)}; }

  /// Normalized Gaussian with the given standard deviation and odd support.
  static BlurKernel gaussian(double stddev, Index support) {
    detail::require(stddev > 0.0, "gaussian kernel: stddev must be positive");
    detail::require(support >= 1 && support % 2 == 1, "gaussian kernel: support must be odd");
    const Index r = support / 2;
    Eigen::MatrixXd k(support, support);
    for (Index i = -r; i <= r; ++i)
      for (Index j = -r; j <= r; ++j)
        k(i + r, j + r) = std::exp(-0.5 * static_cast<double>(i * i + j * j) / (stddev * stddev));
    return BlurKernel{k / k.sum()};
  }
};

/// Kernel wrapped onto a width x height torus: entry (r, c) holds the weight
/// for offset (r, c) modulo the image size.
inline Eigen::MatrixXd periodize(const BlurKernel& k, Index width, Index height) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(height, width);
  const Index r = k.radius();
  for (Index i = -r; i <= r; ++i)
    for (Index j = -r; j <= r; ++j)
      p(((i % height) + height) % height, ((j % width) + width) % width) += k.taps(i + r, j + r);
  return p;
}

class Fft2 {
 public:
  using Spectrum = Eigen::MatrixXcd;  // height x width

  Fft2(Index width, Index height) : w_(width), h_(height) {}

  Spectrum forward(const double* img) const {
    Spectrum out(h_, w_);
    std::vector<std::complex<double>> in(static_cast<std::size_t>(w_)), tmp;
    for (Index r = 0; r < h_; ++r) {
      for (Index c = 0; c < w_; ++c) in[static_cast<std::size_t>(c)] = img[r * w_ + c];
      fft_.fwd(tmp, in);
      for (Index c = 0; c < w_; ++c) out(r, c) = tmp[static_cast<std::size_t>(c)];
    }
    columns(out, false);
    return out;
  }

  void inverse(Spectrum spec, double* img) const {
    columns(spec, true);
    std::vector<std::complex<double>> in(static_cast<std::size_t>(w_)), tmp;
    for (Index r = 0; r < h_; ++r) {
      for (Index c = 0; c < w_; ++c) in[static_cast<std::size_t>(c)] = spec(r, c);
      fft_.inv(tmp, in);
      for (Index c = 0; c < w_; ++c) img[r * w_ + c] = tmp[static_cast<std::size_t>(c)].real();
    }
  }

 private:
  void columns(Spectrum& s, bool inv) const {
    std::vector<std::complex<double>> in(static_cast<std::size_t>(h_)), tmp;
    for (Index c = 0; c < w_; ++c) {
      for (Index r = 0; r < h_; ++r) in[static_cast<std::size_t>(r)] = s(r, c);
      if (inv)
        fft_.inv(tmp, in);
      else
        fft_.fwd(tmp, in);
      for (Index r = 0; r < h_; ++r) s(r, c) = tmp[static_cast<std::size_t>(r)];
    }
  }

  Index w_, h_;
  mutable Eigen::FFT<double> fft_;
};

/// Cyclic blur B acting on row-major band images. `apply` computes x B (the
/// convolution), `adjoint` computes x B^T (the correlation).
class BlurOperator {
 public:
  BlurOperator(const BlurKernel& kernel, Index width, Index height)
      : w_(width), h_(height), fft_(width, height) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> p = periodize(kernel, width, height);
    transfer_ = fft_.forward(p.data());
    power_ = transfer_.cwiseAbs2();
  }

  Index width() const { return w_; }
  Index height() const { return h_; }
  const Fft2::Spectrum& transfer() const { return transfer_; }
  const Eigen::MatrixXd& power() const { return power_; }
  const Fft2& fft() const { return fft_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return filter(x, false); }
  Eigen::VectorXd adjoint(const Eigen::VectorXd& x) const { return filter(x, true); }

  /// Row-wise application to a bands x pixels matrix.
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& x) const { return rows(x, false); }
  Eigen::MatrixXd adjoint_rows(const Eigen::MatrixXd& x) const { return rows(x, true); }

 private:
  Eigen::VectorXd filter(const Eigen::VectorXd& x, bool adj) const {
    detail::require(x.size() == w_ * h_, "BlurOperator: size mismatch");
    Fft2::Spectrum s = fft_.forward(x.data());
    if (adj)
      s.array() *= transfer_.array().conjugate();
    else
      s.array() *= transfer_.array();
    Eigen::VectorXd out(x.size());
    fft_.inverse(std::move(s), out.data());
    return out;
  }

  Eigen::MatrixXd rows(const Eigen::MatrixXd& x, bool adj) const {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Index b = 0; b < x.rows(); ++b) out.row(b) = filter(x.row(b).transpose(), adj).transpose();
    return out;
  }

  Index w_, h_;
  Fft2 fft_;
  Fft2::Spectrum transfer_;
  Eigen::MatrixXd power_;
};

}  // namespace pnp
