#pragma once

// GMM patch denoisers: the posterior-mean (MMSE) denoiser with data-dependent
// component weights, and the scene-adapted variant whose weights are frozen
// from a training image, which makes the whole-image map linear,
//
//   W = (1/n_p) sum_i P_i^T F_i P_i,   F_i = sum_m beta_m^i C_m (C_m + sigma^2 I)^{-1}.
//
// Dense diagnostics materialize W on small images to check its spectrum and
// its interpretation as a proximity operator.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pnp/error.hpp"
#include "pnp/gmm_prior.hpp"
#include "pnp/image_model.hpp"

namespace pnp {

/// C_j (C_j + sigma^2 I)^{-1} for every component, exactly symmetric.
inline std::vector<Eigen::MatrixXd> component_filters(const GMMModel& model, double sigma) {
  const double s2 = sigma * sigma;
  std::vector<Eigen::MatrixXd> filters;
  filters.reserve(static_cast<std::size_t>(model.components()));
  for (Index j = 0; j < model.components(); ++j) {
    const Eigen::VectorXd& lam = model.eigenvalues(j);
    const Eigen::VectorXd gain = lam.array() / (lam.array() + s2);
    const Eigen::MatrixXd& u = model.eigenvectors(j);
    Eigen::MatrixXd f = u * gain.asDiagonal() * u.transpose();
    filters.push_back(0.5 * (f + f.transpose()));
  }
  return filters;
}

inline void require_finite(const BandImage& img, const char* who) {
  if (!img.all_finite()) throw DataError(std::string(who) + ": non-finite input image");
}

inline BandImage denoise_mmse(const GMMModel& model, const BandImage& img, double sigma,
                              const PatchGeometry& geom, bool remove_means = true) {
  detail::require(sigma > 0.0, "denoise_mmse: sigma must be positive");
  detail::require(geom.patch_size() == model.patch_size(), "denoise_mmse: patch size does not match model");
  require_finite(img, "denoise_mmse");
  PatchSet ps = extract_patches(img, geom, remove_means);
  const Responsibilities r = responsibilities(model, ps, sigma);
  const auto filters = component_filters(model, sigma);
  Eigen::MatrixXd est = Eigen::MatrixXd::Zero(ps.patches.rows(), ps.patches.cols());
  for (Index j = 0; j < model.components(); ++j) {
    Eigen::MatrixXd v = filters[static_cast<std::size_t>(j)] * ps.patches;
    est += v * r.beta.col(j).asDiagonal();
  }
  ps.patches = std::move(est);
  return aggregate_patches(ps);
}

/// Frozen per-patch component weights for one image geometry. The noise level
/// is a parameter of each application, so one plan serves every ADMM step.
class FixedWeightPlan {
 public:
  // Weights below this are skipped when applying the operator. The pruned
  // operator is still a non-negative combination of the component filters.
  static constexpr double kDefaultWeightFloor = 1e-12;

  FixedWeightPlan(std::shared_ptr<const GMMModel> model, Responsibilities beta, PatchGeometry geom,
                  bool remove_means = true, double weight_floor = kDefaultWeightFloor)
      : model_(std::move(model)), beta_(std::move(beta)), geom_(geom), remove_means_(remove_means),
        weight_floor_(weight_floor) {
    detail::require(model_ != nullptr, "FixedWeightPlan: null model");
    detail::require(beta_.beta.rows() == geom_.patch_count() && beta_.beta.cols() == model_->components(),
                    "FixedWeightPlan: weight matrix shape mismatch");
    detail::require(geom_.patch_size() == model_->patch_size(), "FixedWeightPlan: patch size mismatch");
    active_.resize(static_cast<std::size_t>(model_->components()));
    for (Index m = 0; m < model_->components(); ++m)
      for (Index i = 0; i < geom_.patch_count(); ++i)
        if (beta_.beta(i, m) > weight_floor_) active_[static_cast<std::size_t>(m)].push_back(i);
  }

  const GMMModel& model() const { return *model_; }
  std::shared_ptr<const GMMModel> model_ptr() const { return model_; }
  const Responsibilities& beta() const { return beta_; }
  const PatchGeometry& geometry() const { return geom_; }
  bool remove_means() const { return remove_means_; }
  double weight_floor() const { return weight_floor_; }
  const std::vector<Index>& active_patches(Index m) const { return active_[static_cast<std::size_t>(m)]; }

  /// Same plan with mean handling switched on or off.
  FixedWeightPlan with_mean_handling(bool on) const {
    FixedWeightPlan copy = *this;
    copy.remove_means_ = on;
    return copy;
  }

 private:
  std::shared_ptr<const GMMModel> model_;
  Responsibilities beta_;
  PatchGeometry geom_;
  bool remove_means_ = true;
  double weight_floor_ = kDefaultWeightFloor;
  std::vector<std::vector<Index>> active_;
};

inline FixedWeightPlan freeze_weights(std::shared_ptr<const GMMModel> model, const BandImage& training_img,
                                      double sigma_train, const PatchGeometry& geom, bool remove_means = true) {
  detail::require(sigma_train >= 0.0, "freeze_weights: sigma_train must be non-negative");
  require_finite(training_img, "freeze_weights");
  const PatchSet ps = extract_patches(training_img, geom, true);
  Responsibilities r = responsibilities(*model, ps, sigma_train);
  return FixedWeightPlan(std::move(model), std::move(r), geom, remove_means);
}

/// W y, computed patch-wise.
inline BandImage apply_fixed(const FixedWeightPlan& plan, const BandImage& img, double sigma) {
  detail::require(sigma > 0.0, "apply_fixed: sigma must be positive");
  check_geometry(plan.geometry(), img);
  PatchSet ps = extract_patches(img, plan.geometry(), plan.remove_means());
  const auto filters = component_filters(plan.model(), sigma);
  const Eigen::MatrixXd& beta = plan.beta().beta;
  Eigen::MatrixXd est = Eigen::MatrixXd::Zero(ps.patches.rows(), ps.patches.cols());
  for (Index m = 0; m < plan.model().components(); ++m) {
    const auto& idx = plan.active_patches(m);
    if (idx.empty()) continue;
    const Eigen::MatrixXd sub = ps.patches(Eigen::all, idx);
    const Eigen::MatrixXd out = filters[static_cast<std::size_t>(m)] * sub;
    for (std::size_t k = 0; k < idx.size(); ++k)
      est.col(idx[k]) += beta(idx[k], m) * out.col(static_cast<Index>(k));
  }
  ps.patches = std::move(est);
  return aggregate_patches(ps);
}

namespace detail {

// Per-patch linear map G_i acting on the raw patch: F_i, or F_i (I - J) + J
// with J = 11^T / n_p when patch means are removed and re-added.
inline Eigen::MatrixXd patch_operator(const FixedWeightPlan& plan, const std::vector<Eigen::MatrixXd>& filters,
                                      Index i, bool with_means) {
  const Index np = plan.geometry().patch_size();
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(np, np);
  for (Index m = 0; m < plan.model().components(); ++m) {
    const double b = plan.beta().beta(i, m);
    if (b > plan.weight_floor()) f += b * filters[static_cast<std::size_t>(m)];
  }
  if (!with_means) return f;
  const Eigen::MatrixXd j = Eigen::MatrixXd::Constant(np, np, 1.0 / static_cast<double>(np));
  return f * (Eigen::MatrixXd::Identity(np, np) - j) + j;
}

inline void scatter_patch(Eigen::MatrixXd& target, const PatchGeometry& g, Index i, const Eigen::MatrixXd& op,
                          double scale) {
  const Index np = g.patch_size();
  for (Index b = 0; b < np; ++b) {
    const Index q = g.pixel_of(i, b);
    for (Index a = 0; a < np; ++a) target(g.pixel_of(i, a), q) += scale * op(a, b);
  }
}

}  // namespace detail

inline constexpr Index kDefaultMaterializeCap = 4096;

/// Dense W (n x n) for diagnostics, using the plan's mean handling.
inline Eigen::MatrixXd materialize_W(const FixedWeightPlan& plan, double sigma,
                                     Index cap = kDefaultMaterializeCap) {
  detail::require(sigma > 0.0, "materialize_W: sigma must be positive");
  const PatchGeometry& g = plan.geometry();
  if (g.pixel_count() > cap) {
    throw InvalidArgument("materialize_W: " + std::to_string(g.pixel_count()) + " pixels exceeds cap " +
                          std::to_string(cap));
  }
  const auto filters = component_filters(plan.model(), sigma);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(g.pixel_count(), g.pixel_count());
  const double scale = 1.0 / static_cast<double>(g.patch_size());
  for (Index i = 0; i < g.patch_count(); ++i)
    detail::scatter_patch(w, g, i, detail::patch_operator(plan, filters, i, plan.remove_means()), scale);
  return w;
}

/// A_j = sum_{k in subset j} P_k^T F_k P_k for each subset of the
/// non-overlapping partition, so that W = (1/n_p) sum_j A_j.
inline std::vector<Eigen::MatrixXd> partition_blocks(const FixedWeightPlan& plan, double sigma,
                                                     const PatchPartition& part,
                                                     Index cap = kDefaultMaterializeCap) {
  detail::require(sigma > 0.0, "partition_blocks: sigma must be positive");
  const PatchGeometry& g = plan.geometry();
  if (g.pixel_count() > cap) throw InvalidArgument("partition_blocks: image exceeds materialization cap");
  const auto filters = component_filters(plan.model(), sigma);
  std::vector<Eigen::MatrixXd> blocks;
  for (const auto& subset : part.subsets) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.pixel_count(), g.pixel_count());
    for (Index k : subset)
      detail::scatter_patch(a, g, k, detail::patch_operator(plan, filters, k, plan.remove_means()), 1.0);
    blocks.push_back(std::move(a));
  }
  return blocks;
}

struct EigenRange {
  double min = 0.0;
  double max = 0.0;
};

struct DenoiserReport {
  Index n = 0;
  double sigma = 0.0;
  bool means_removed = false;
  double symmetry_defect = 0.0;           // max |W - W^T|
  double symmetry_defect_relative = 0.0;  // divided by max |W|
  EigenRange w_range;
  double spectral_norm = 0.0;
  double eigen_residual = 0.0;            // max_k ||W v_k - l_k v_k|| / ||W||_2
  EigenRange patch_filter_range;          // over all F_i
  std::vector<EigenRange> component_bounds;
  EigenRange analytic_hull;
  std::vector<EigenRange> subset_ranges;  // A_j, when requested
  bool within_unit_interval = false;
  bool within_analytic_hull = false;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "n: " << n << "\n"
       << "sigma: " << sigma << "\n"
       << "means_removed: " << (means_removed ? 1 : 0) << "\n"
       << "symmetry_defect: " << symmetry_defect << "\n"
       << "symmetry_defect_relative: " << symmetry_defect_relative << "\n"
       << "lambda_min: " << w_range.min << "\n"
       << "lambda_max: " << w_range.max << "\n"
       << "spectral_norm: " << spectral_norm << "\n"
       << "eigen_residual: " << eigen_residual << "\n"
       << "patch_filter_min: " << patch_filter_range.min << "\n"
       << "patch_filter_max: " << patch_filter_range.max << "\n"
       << "analytic_min: " << analytic_hull.min << "\n"
       << "analytic_max: " << analytic_hull.max << "\n";
    for (std::size_t j = 0; j < component_bounds.size(); ++j)
      os << "component_" << j << "_bounds: " << component_bounds[j].min << " " << component_bounds[j].max << "\n";
    for (std::size_t j = 0; j < subset_ranges.size(); ++j)
      os << "subset_" << j << "_range: " << subset_ranges[j].min << " " << subset_ranges[j].max << "\n";
    os << "within_unit_interval: " << (within_unit_interval ? 1 : 0) << "\n"
       << "within_analytic_hull: " << (within_analytic_hull ? 1 : 0) << "\n";
    return os.str();
  }
};

/// Spectral analysis of the plan's operator without asserting anything.
inline DenoiserReport analyze_operator(const FixedWeightPlan& plan, double sigma, bool with_partition = false,
                                       Index cap = kDefaultMaterializeCap) {
  DenoiserReport rep;
  rep.sigma = sigma;
  rep.means_removed = plan.remove_means();
  const Eigen::MatrixXd w = materialize_W(plan, sigma, cap);
  rep.n = w.rows();
  const double wmax = w.cwiseAbs().maxCoeff();
  rep.symmetry_defect = (w - w.transpose()).cwiseAbs().maxCoeff();
  rep.symmetry_defect_relative = wmax > 0.0 ? rep.symmetry_defect / wmax : 0.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (w + w.transpose()));
  if (es.info() != Eigen::Success) throw DiagnosticFailure("analyze_operator: eigensolver failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  rep.w_range = {lam.minCoeff(), lam.maxCoeff()};
  rep.spectral_norm = lam.cwiseAbs().maxCoeff();
  const Eigen::MatrixXd resid = w * es.eigenvectors() - es.eigenvectors() * lam.asDiagonal();
  rep.eigen_residual = resid.colwise().norm().maxCoeff() / std::max(rep.spectral_norm, 1e-300);

  const double s2 = sigma * sigma;
  rep.analytic_hull = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (Index j = 0; j < plan.model().components(); ++j) {
    const Eigen::VectorXd& s = plan.model().eigenvalues(j);
    const double lo = s[s.size() - 1] / (s[s.size() - 1] + s2);
    const double hi = s[0] / (s[0] + s2);
    rep.component_bounds.push_back({lo, hi});
    rep.analytic_hull.min = std::min(rep.analytic_hull.min, lo);
    rep.analytic_hull.max = std::max(rep.analytic_hull.max, hi);
  }

  const auto filters = component_filters(plan.model(), sigma);
  rep.patch_filter_range = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (Index i = 0; i < plan.geometry().patch_count(); ++i) {
    const Eigen::MatrixXd f = detail::patch_operator(plan, filters, i, plan.remove_means());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> fs(0.5 * (f + f.transpose()), Eigen::EigenvaluesOnly);
    rep.patch_filter_range.min = std::min(rep.patch_filter_range.min, fs.eigenvalues().minCoeff());
    rep.patch_filter_range.max = std::max(rep.patch_filter_range.max, fs.eigenvalues().maxCoeff());
  }

  if (with_partition) {
    const auto blocks = partition_blocks(plan, sigma, build_partition(plan.geometry()), cap);
    for (const auto& a : blocks) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> as(a, Eigen::EigenvaluesOnly);
      rep.subset_ranges.push_back({as.eigenvalues().minCoeff(), as.eigenvalues().maxCoeff()});
    }
  }

  rep.within_unit_interval = rep.w_range.min > 0.0 && rep.w_range.max < 1.0;
  const double slack = 1e-12;
  rep.within_analytic_hull =
      rep.w_range.min >= rep.analytic_hull.min - slack && rep.w_range.max <= rep.analytic_hull.max + slack;
  return rep;
}

/// Checks the plain fixed-weight operator (no mean handling):
/// symmetric, eigenvalues in (0, 1), inside the hull of the per-component
/// filter bounds. Throws DiagnosticFailure when any check fails.
inline DenoiserReport verify_lemma1(const FixedWeightPlan& plan, double sigma, bool with_partition = false,
                                    Index cap = kDefaultMaterializeCap) {
  DenoiserReport rep = analyze_operator(plan.with_mean_handling(false), sigma, with_partition, cap);
  std::string failure;
  if (rep.symmetry_defect_relative > 1e-12) failure += " symmetry defect too large;";
  if (!rep.within_unit_interval) failure += " eigenvalues outside (0,1);";
  if (!rep.within_analytic_hull) failure += " eigenvalues outside analytic hull;";
  if (rep.eigen_residual > 1e-9) failure += " eigensolver residual too large;";
  if (!failure.empty()) throw DiagnosticFailure("verify_lemma1:" + failure + "\n" + rep.to_text());
  return rep;
}

/// || argmin_x 1/2||x - y||^2 + 1/2 x^T (W^{-1} - I) x  -  W y ||_inf, with the
/// minimizer obtained by a dense solve.
inline double prox_check(const FixedWeightPlan& plan, double sigma, const BandImage& y,
                         Index cap = kDefaultMaterializeCap) {
  check_geometry(plan.geometry(), y);
  const Eigen::MatrixXd w = materialize_W(plan, sigma, cap);
  const Index n = w.rows();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(w);
  if (!(lu.rcond() > 1e-14)) throw DiagnosticFailure("prox_check: W is numerically singular");
  const Eigen::MatrixXd q = lu.inverse() - Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd hess = Eigen::MatrixXd::Identity(n, n) + 0.5 * (q + q.transpose());
  const Eigen::VectorXd x = hess.ldlt().solve(y.values);
  const BandImage wy = apply_fixed(plan, y, sigma);
  return (x - wy.values).cwiseAbs().maxCoeff();
}

/// Univariate posterior-mean estimate under a zero-mean mixture with the given
/// weights and variances, evaluated on a grid of observations.
inline std::vector<double> scalar_mmse_map(const std::vector<double>& alpha, const std::vector<double>& variances,
                                           double sigma, const std::vector<double>& y_grid) {
  detail::require(alpha.size() == variances.size() && !alpha.empty(), "scalar_mmse_map: size mismatch");
  for (double v : variances) detail::require(v > 0.0, "scalar_mmse_map: variances must be positive");
  const double s2 = sigma * sigma;
  std::vector<double> out;
  out.reserve(y_grid.size());
  std::vector<double> logp(alpha.size());
  for (double y : y_grid) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      const double v = variances[j] + s2;
      logp[j] = std::log(alpha[j]) - 0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * y * y / v;
      mx = std::max(mx, logp[j]);
    }
    double norm = 0.0, acc = 0.0;
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      const double b = std::exp(logp[j] - mx);
      norm += b;
      acc += b * variances[j] / (variances[j] + s2);
    }
    out.push_back(acc / norm * y);
  }
  return out;
}

/// The same estimator with the component weights frozen: a line through 0.
inline std::vector<double> scalar_fixed_map(const std::vector<double>& beta, const std::vector<double>& variances,
                                            double sigma, const std::vector<double>& y_grid) {
  detail::require(beta.size() == variances.size() && !beta.empty(), "scalar_fixed_map: size mismatch");
  const double s2 = sigma * sigma;
  double slope = 0.0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    detail::require(variances[j] > 0.0, "scalar_fixed_map: variances must be positive");
    slope += beta[j] * variances[j] / (variances[j] + s2);
  }
  std::vector<double> out;
  out.reserve(y_grid.size());
  for (double y : y_grid) out.push_back(slope * y);
  return out;
}

}  // namespace pnp
