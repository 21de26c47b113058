#pragma once

// Zero-mean Gaussian mixture prior over image patches: EM training,
// posterior component weights and likelihood evaluation.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pnp/binary_io.hpp"
#include "pnp/error.hpp"
#include "pnp/image_model.hpp"

namespace pnp {

/// Mixture of K zero-mean Gaussians on R^{n_p}. Eigendecompositions are cached
/// on construction: C_j = U_j diag(s_j) U_j^T with eigenvectors in the columns
/// of U_j and s_j non-increasing.
class GMMModel {
 public:
  GMMModel() = default;

  GMMModel(Eigen::VectorXd weights, std::vector<Eigen::MatrixXd> covariances)
      : weights_(std::move(weights)), covariances_(std::move(covariances)) {
    const Index K = weights_.size();
    detail::require(K >= 1, "GMMModel: at least one component required");
    detail::require(static_cast<Index>(covariances_.size()) == K,
                    "GMMModel: weight and covariance counts differ");
    detail::require((weights_.array() > 0.0).all(), "GMMModel: weights must be positive");
    detail::require(std::abs(weights_.sum() - 1.0) <= 1e-9, "GMMModel: weights must sum to 1");
    weights_ /= weights_.sum();
    const Index np = covariances_.front().rows();
    detail::require(np >= 1, "GMMModel: empty covariance");
    eigvecs_.reserve(covariances_.size());
    eigvals_.reserve(covariances_.size());
    for (auto& c : covariances_) {
      detail::require(c.rows() == np && c.cols() == np, "GMMModel: covariance shape mismatch");
      if (!c.allFinite()) throw DataError("GMMModel: non-finite covariance");
      detail::require((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + c.cwiseAbs().maxCoeff()),
                      "GMMModel: covariance not symmetric");
      c = 0.5 * (c + c.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
      // Eigen returns ascending eigenvalues.
      eigvals_.push_back(es.eigenvalues().reverse());
      eigvecs_.push_back(es.eigenvectors().rowwise().reverse());
      detail::require(eigvals_.back()[np - 1] > 0.0, "GMMModel: covariance must be positive definite");
    }
  }

  Index components() const { return weights_.size(); }
  Index patch_size() const { return covariances_.empty() ? 0 : covariances_.front().rows(); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::MatrixXd& covariance(Index j) const { return covariances_[static_cast<std::size_t>(j)]; }
  const Eigen::MatrixXd& eigenvectors(Index j) const { return eigvecs_[static_cast<std::size_t>(j)]; }
  const Eigen::VectorXd& eigenvalues(Index j) const { return eigvals_[static_cast<std::size_t>(j)]; }
  Eigen::VectorXd mean(Index) const { return Eigen::VectorXd::Zero(patch_size()); }

  double min_eigenvalue() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& s : eigvals_) m = std::min(m, s[s.size() - 1]);
    return m;
  }

 private:
  Eigen::VectorXd weights_;
  std::vector<Eigen::MatrixXd> covariances_;
  std::vector<Eigen::MatrixXd> eigvecs_;
  std::vector<Eigen::VectorXd> eigvals_;
};

/// Posterior component weights, one row per patch (N x K).
struct Responsibilities {
  Eigen::MatrixXd beta;
};

/// log N(y_i; 0, C_j + sigma^2 I) for every component (rows) and patch (columns).
inline Eigen::MatrixXd component_log_densities(const GMMModel& model, const Eigen::MatrixXd& patches,
                                               double sigma) {
  detail::require(sigma >= 0.0, "sigma must be non-negative");
  detail::require(patches.rows() == model.patch_size(), "patch size does not match model");
  const Index K = model.components(), np = model.patch_size();
  const double s2 = sigma * sigma;
  Eigen::MatrixXd logp(K, patches.cols());
  for (Index j = 0; j < K; ++j) {
    const Eigen::VectorXd var = model.eigenvalues(j).array() + s2;
    const double logdet = var.array().log().sum();
    Eigen::MatrixXd t = model.eigenvectors(j).transpose() * patches;
    t.array().colwise() /= var.array().sqrt();
    logp.row(j) = (-0.5 * (np * std::log(2.0 * std::numbers::pi) + logdet)) -
                  0.5 * t.colwise().squaredNorm().array();
  }
  return logp;
}

namespace detail {

// Normalizes log(alpha_j) + log N_j column-wise via log-sum-exp. Returns the
// per-patch log evidence and overwrites `logp` with the posterior weights.
inline Eigen::VectorXd normalize_log_posteriors(Eigen::MatrixXd& logp, const Eigen::VectorXd& weights) {
  logp.colwise() += weights.array().log().matrix();
  Eigen::VectorXd evidence(logp.cols());
  for (Index i = 0; i < logp.cols(); ++i) {
    const double m = logp.col(i).maxCoeff();
    const double s = (logp.col(i).array() - m).exp().sum();
    evidence[i] = m + std::log(s);
    // subnormal weights are flushed; they stall the scatter products
    logp.col(i) = (logp.col(i).array() - evidence[i]).exp().unaryExpr([](double v) {
      return v < std::numeric_limits<double>::min() ? 0.0 : v;
    });
  }
  return evidence;
}

}  // namespace detail

inline Responsibilities responsibilities(const GMMModel& model, const Eigen::MatrixXd& patches,
                                         double sigma) {
  Eigen::MatrixXd logp = component_log_densities(model, patches, sigma);
  detail::normalize_log_posteriors(logp, model.weights());
  return Responsibilities{logp.transpose()};
}

inline Responsibilities responsibilities(const GMMModel& model, const PatchSet& ps, double sigma) {
  return responsibilities(model, ps.patches, sigma);
}

/// sum_i log sum_j alpha_j N(y_i; 0, C_j + sigma^2 I)
inline double log_likelihood(const GMMModel& model, const Eigen::MatrixXd& patches, double sigma) {
  Eigen::MatrixXd logp = component_log_densities(model, patches, sigma);
  return detail::normalize_log_posteriors(logp, model.weights()).sum();
}

inline double log_likelihood(const GMMModel& model, const PatchSet& ps, double sigma) {
  return log_likelihood(model, ps.patches, sigma);
}

struct EMOptions {
  int max_iters = 200;
  double rel_tol = 1e-6;
  // Noise level of the training patches; 0 gives standard EM on clean data.
  double sigma = 0.0;
  // Covariance eigenvalue floor. Non-positive selects reg_scale * mean patch variance.
  double reg_epsilon = 0.0;
  double reg_scale = 1e-6;
  std::uint64_t seed = 0;
};

struct EMFit {
  GMMModel model;
  std::vector<double> log_likelihood;  // one value per E-step
  double reg_epsilon = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

namespace detail {

// Symmetric eigenvalue floor: the maximizer of the Gaussian M-step objective
// over {C : C >= eps I}.
inline Eigen::MatrixXd floor_spectrum(const Eigen::MatrixXd& s, double eps) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(eps);
  Eigen::MatrixXd c = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (c + c.transpose());
}

inline Eigen::MatrixXd weighted_scatter(const Eigen::MatrixXd& y, const Eigen::VectorXd& w) {
  Eigen::MatrixXd yw = y.array().rowwise() * w.transpose().array();
  return yw * y.transpose();
}

}  // namespace detail

/// EM for a zero-mean GMM. Patches are expected to be mean-removed. With
/// opts.sigma > 0 the patches are treated as noisy observations of clean
/// patches and the M-step uses the posterior second moments.
inline EMFit fit_em(const Eigen::MatrixXd& patches, Index K, const EMOptions& opts = {}) {
  detail::require(K >= 1, "train_em: K must be >= 1");
  detail::require(patches.cols() > 0 && patches.rows() > 0, "train_em: empty patch set");
  detail::require(opts.sigma >= 0.0, "train_em: sigma must be non-negative");
  if (!patches.allFinite()) throw DataError("train_em: non-finite patch values");
  const Index np = patches.rows(), N = patches.cols();
  const double s2 = opts.sigma * opts.sigma;

  EMFit fit;
  if (N < K * np) {
    fit.warnings.push_back("train_em: only " + std::to_string(N) + " patches for " + std::to_string(K) +
                           " components of dimension " + std::to_string(np));
  }
  double eps = opts.reg_epsilon;
  if (eps <= 0.0) {
    const double mean_var = patches.squaredNorm() / static_cast<double>(N * np);
    eps = std::max(opts.reg_scale * mean_var, 1e-12);
  }
  fit.reg_epsilon = eps;

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd beta(K, N);
  for (Index i = 0; i < N; ++i) {
    for (Index j = 0; j < K; ++j) beta(j, i) = unif(rng) + 1e-3;
    beta.col(i) /= beta.col(i).sum();
  }
  std::vector<Eigen::MatrixXd> covs(static_cast<std::size_t>(K));
  for (Index j = 0; j < K; ++j) {
    const Eigen::VectorXd w = beta.row(j).transpose();
    covs[static_cast<std::size_t>(j)] = detail::floor_spectrum(detail::weighted_scatter(patches, w) / w.sum(), eps);
  }
  GMMModel model(Eigen::VectorXd::Constant(K, 1.0 / static_cast<double>(K)), covs);

  for (int it = 0;; ++it) {
    Eigen::MatrixXd logp = component_log_densities(model, patches, opts.sigma);
    const double ll = detail::normalize_log_posteriors(logp, model.weights()).sum();
    fit.log_likelihood.push_back(ll);
    fit.iterations = it;
    const std::size_t t = fit.log_likelihood.size();
    if (t >= 2 && std::abs(ll - fit.log_likelihood[t - 2]) < opts.rel_tol * std::abs(fit.log_likelihood[t - 2])) {
      fit.converged = true;
      break;
    }
    if (it >= opts.max_iters) break;

    // M-step
    Eigen::VectorXd nk = logp.rowwise().sum();
    Eigen::VectorXd alpha = (nk / static_cast<double>(N)).cwiseMax(1e-12);
    alpha /= alpha.sum();
    for (Index j = 0; j < K; ++j) {
      auto& c = covs[static_cast<std::size_t>(j)];
      if (nk[j] <= std::numeric_limits<double>::min()) {
        c = eps * Eigen::MatrixXd::Identity(np, np);
        continue;
      }
      const Eigen::MatrixXd s = detail::weighted_scatter(patches, logp.row(j).transpose()) / nk[j];
      if (s2 > 0.0) {
        const Eigen::MatrixXd& u = model.eigenvectors(j);
        const Eigen::VectorXd& lam = model.eigenvalues(j);
        const Eigen::VectorXd gain = lam.array() / (lam.array() + s2);
        const Eigen::MatrixXd f = u * gain.asDiagonal() * u.transpose();
        const Eigen::VectorXd post_var = lam.array() * s2 / (lam.array() + s2);
        const Eigen::MatrixXd sx = f * s * f.transpose() + u * post_var.asDiagonal() * u.transpose();
        c = detail::floor_spectrum(sx, eps);
      } else {
        c = detail::floor_spectrum(s, eps);
      }
    }
    model = GMMModel(alpha, covs);
  }
  fit.model = std::move(model);
  return fit;
}

inline EMFit fit_em(const PatchSet& ps, Index K, const EMOptions& opts = {}) {
  return fit_em(ps.patches, K, opts);
}

inline GMMModel train_em(const PatchSet& ps, Index K, const EMOptions& opts = {}) {
  return fit_em(ps.patches, K, opts).model;
}

// Binary layout (little-endian): "GMM1", uint64 K, uint64 n_p, K float64
// weights, then K row-major n_p x n_p float64 covariances. A text manifest
// "<path>.txt" repeats the dimensions.
inline void save_gmm(const GMMModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write("GMM1", 4);
  const auto K = static_cast<std::uint64_t>(model.components());
  const auto np = static_cast<std::uint64_t>(model.patch_size());
  binary::write_le(os, K);
  binary::write_le(os, np);
  for (Index j = 0; j < model.components(); ++j) binary::write_le(os, model.weights()[j]);
  for (Index j = 0; j < model.components(); ++j) {
    const auto& c = model.covariance(j);
    for (Index r = 0; r < c.rows(); ++r)
      for (Index q = 0; q < c.cols(); ++q) binary::write_le(os, c(r, q));
  }
  if (!os) throw DataError("failed writing " + path.string());
  std::ofstream man(path.string() + ".txt");
  man << "format: GMM1\ncomponents: " << K << "\npatch_size: " << np << "\n";
}

inline GMMModel load_gmm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "GMM1") throw DataError(path.string() + ": bad GMM magic");
  const auto K = binary::read_le<std::uint64_t>(is);
  const auto np = binary::read_le<std::uint64_t>(is);
  if (K == 0 || np == 0 || K > (1u << 20) || np > (1u << 16)) throw DataError(path.string() + ": bad GMM header");
  const auto expected = 4 + 16 + 8 * (K + K * np * np);
  if (std::filesystem::file_size(path) != expected) throw DataError(path.string() + ": file size does not match header");
  Eigen::VectorXd w(static_cast<Index>(K));
  for (auto& x : w) x = binary::read_le<double>(is);
  std::vector<Eigen::MatrixXd> covs;
  for (std::uint64_t j = 0; j < K; ++j) {
    Eigen::MatrixXd c(static_cast<Index>(np), static_cast<Index>(np));
    for (Index r = 0; r < c.rows(); ++r)
      for (Index q = 0; q < c.cols(); ++q) c(r, q) = binary::read_le<double>(is);
    covs.push_back(std::move(c));
  }
  try {
    return GMMModel(w, covs);
  } catch (const InvalidArgument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace pnp
