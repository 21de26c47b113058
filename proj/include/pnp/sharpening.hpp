#pragma once

// Hyperspectral sharpening with plug-and-play ADMM (SALSA splitting).
//
// Observation model on the latent subspace coefficients X (L_s x n_m):
//   Y_h = E X B M + N_h,    Y_m = R E X + N_m,
// and the estimate minimizes
//   1/2 ||E X B M - Y_h||^2 + lambda/2 ||R E X - Y_m||^2 + tau phi(X),
// where the prior step is the fixed-weight GMM denoiser. Variables V1, V2, V3
// split X B, X and X; D1..D3 are the scaled duals.

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "pnp/blur.hpp"
#include "pnp/cube.hpp"
#include "pnp/error.hpp"
#include "pnp/gmm_denoiser.hpp"
#include "pnp/parallel.hpp"

namespace pnp {

/// Spatial blur B, subsampling M on a regular lattice (top-left pixel of each
/// factor x factor cell), spectral response R (L_m x L_h).
struct DegradationModel {
  BlurKernel blur = BlurKernel::delta();
  Index factor = 1;
  Eigen::MatrixXd response;
  Eigen::VectorXd hs_noise_std;  // per HS band, optional
  Eigen::VectorXd ms_noise_std;  // per MS band, optional

  void validate(Index width, Index height, Index hs_bands) const {
    detail::require(factor >= 1, "DegradationModel: factor must be >= 1");
    detail::require(width % factor == 0 && height % factor == 0,
                    "DegradationModel: factor must divide the image dimensions");
    detail::require(std::abs(blur.sum() - 1.0) <= 1e-12, "DegradationModel: blur kernel must sum to 1");
    detail::require(blur.taps.rows() == blur.taps.cols() && blur.taps.rows() % 2 == 1,
                    "DegradationModel: blur kernel must be square with odd size");
    detail::require(response.cols() == hs_bands && response.rows() >= 1,
                    "DegradationModel: spectral response shape mismatch");
    detail::require((response.array() >= 0.0).all(), "DegradationModel: spectral response must be non-negative");
    for (Index r = 0; r < response.rows(); ++r)
      detail::require(std::abs(response.row(r).sum() - 1.0) <= 1e-9,
                      "DegradationModel: spectral response rows must sum to 1");
  }
};

/// Linear indices of the sampled pixels, ordered raster-wise over the
/// low-resolution grid.
inline std::vector<Index> sampled_pixels(Index width, Index height, Index factor) {
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>((width / factor) * (height / factor)));
  for (Index r = 0; r < height; r += factor)
    for (Index c = 0; c < width; c += factor) idx.push_back(r * width + c);
  return idx;
}

inline Eigen::MatrixXd subsample(const Eigen::MatrixXd& full, Index width, Index height, Index factor) {
  return full(Eigen::all, sampled_pixels(width, height, factor));
}

/// Places low-resolution pixels on their lattice positions of the full grid.
inline Eigen::MatrixXd zero_fill(const HSCube& low, Index factor) {
  const Index w = low.width * factor, h = low.height * factor;
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(low.bands(), w * h);
  full(Eigen::all, sampled_pixels(w, h, factor)) = low.values;
  return full;
}

/// Zero-order hold: every low-resolution pixel fills its factor x factor cell.
inline HSCube upsample_nearest(const HSCube& low, Index factor) {
  const Index w = low.width * factor, h = low.height * factor;
  HSCube out(low.bands(), w, h);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) out.values.col(r * w + c) = low.values.col((r / factor) * low.width + c / factor);
  return out;
}

/// Unweighted mean of the multispectral bands.
inline BandImage synthesize_pan(const HSCube& ms) {
  return BandImage(ms.width, ms.height, ms.values.colwise().mean().transpose());
}

struct SubspaceBasis {
  Eigen::MatrixXd E;            // L_h x L_s, orthonormal columns
  Eigen::VectorXd eigenvalues;  // all L_h, non-increasing
};

/// Top-L_s eigenvectors of Y_h Y_h^T / n_h. Each column's largest-magnitude
/// entry is made positive.
inline SubspaceBasis learn_subspace(const HSCube& yh, Index ls) {
  const Index lh = yh.bands();
  detail::require(ls >= 1 && ls <= lh, "learn_subspace: L_s must lie in [1, L_h]");
  const Eigen::MatrixXd corr = yh.values * yh.values.transpose() / static_cast<double>(yh.pixels());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
  SubspaceBasis basis;
  basis.eigenvalues = es.eigenvalues().reverse();
  basis.E = es.eigenvectors().rowwise().reverse().leftCols(ls);
  for (Index j = 0; j < ls; ++j) {
    Index arg = 0;
    basis.E.col(j).cwiseAbs().maxCoeff(&arg);
    if (basis.E(arg, j) < 0.0) basis.E.col(j) *= -1.0;
  }
  return basis;
}

/// E X B M as a low-resolution cube.
inline HSCube forward_hs(const Eigen::MatrixXd& x, const Eigen::MatrixXd& E, const BlurOperator& blur,
                         Index factor) {
  detail::require(x.rows() == E.cols() && x.cols() == blur.width() * blur.height(), "forward_hs: shape mismatch");
  const Eigen::MatrixXd blurred = blur.apply_rows(E * x);
  return HSCube(blur.width() / factor, blur.height() / factor,
                subsample(blurred, blur.width(), blur.height(), factor));
}

inline HSCube forward_ms(const Eigen::MatrixXd& x, const Eigen::MatrixXd& E, const Eigen::MatrixXd& response,
                         Index width, Index height) {
  detail::require(x.rows() == E.cols() && response.cols() == E.rows() && x.cols() == width * height,
                  "forward_ms: shape mismatch");
  return HSCube(width, height, response * E * x);
}

struct TraceRecord {
  int iteration = 0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double x_change = 0.0;  // ||X^{k+1} - X^k||_F
};

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace) {
  os << "iteration,objective,primal_residual,dual_residual\n";
  os << std::setprecision(17);
  for (const auto& t : trace)
    os << t.iteration << ',' << t.objective << ',' << t.primal_residual << ',' << t.dual_residual << '\n';
}

struct SolverState {
  Eigen::MatrixXd X, V1, V2, V3, D1, D2, D3;
  double rho = 1.0;
  double lambda = 1.0;
  double tau = 1e-3;
  int iteration = 0;
  std::vector<TraceRecord> trace;

  /// Noise level handed to the plugged denoiser: sigma^2 = tau / rho.
  double denoiser_sigma() const { return std::sqrt(tau / rho); }
};

// -- closed-form subproblem updates ------------------------------------------

/// [(V1 + D1) B^T + V2 + D2 + V3 + D3] [B B^T + 2 I]^{-1}, per band in the
/// Fourier domain.
inline Eigen::MatrixXd update_X(const SolverState& s, const BlurOperator& blur) {
  const Fft2& fft = blur.fft();
  const Eigen::MatrixXd a = s.V1 + s.D1;
  const Eigen::MatrixXd b = s.V2 + s.D2 + s.V3 + s.D3;
  Eigen::MatrixXd x(a.rows(), a.cols());
  const Eigen::ArrayXXd denom = blur.power().array() + 2.0;
  for (Index r = 0; r < a.rows(); ++r) {
    const Eigen::VectorXd ar = a.row(r).transpose(), br = b.row(r).transpose();
    Fft2::Spectrum num = fft.forward(ar.data());
    num.array() *= blur.transfer().array().conjugate();
    num += fft.forward(br.data());
    num.array() /= denom;
    Eigen::VectorXd out(a.cols());
    fft.inverse(std::move(num), out.data());
    x.row(r) = out.transpose();
  }
  return x;
}

/// Precomputed pieces of the V1 step for a fixed rho.
struct V1Step {
  Eigen::MatrixXd inverse;  // (E^T E + rho I)^{-1}
  Eigen::MatrixXd ety;      // E^T Y_h on the full grid (zero off the lattice)
  std::vector<Index> sampled;
  double rho = 1.0;
};

inline V1Step make_v1_step(const Eigen::MatrixXd& E, const Eigen::MatrixXd& yh_zero_filled,
                           std::vector<Index> sampled, double rho) {
  detail::require(rho > 0.0, "V1 step: rho must be positive");
  const Index ls = E.cols();
  V1Step step;
  step.inverse = (E.transpose() * E + rho * Eigen::MatrixXd::Identity(ls, ls)).inverse();
  step.ety = E.transpose() * yh_zero_filled;
  step.sampled = std::move(sampled);
  step.rho = rho;
  return step;
}

inline Eigen::MatrixXd update_V1(const SolverState& s, const V1Step& step, const BlurOperator& blur) {
  Eigen::MatrixXd v = blur.apply_rows(s.X) - s.D1;
  for (Index p : step.sampled) v.col(p) = step.inverse * (step.ety.col(p) + step.rho * v.col(p));
  return v;
}

inline Eigen::MatrixXd update_V1(const SolverState& s, const Eigen::MatrixXd& E, const Eigen::MatrixXd& yh_zero_filled,
                                 const std::vector<Index>& sampled, const BlurOperator& blur) {
  return update_V1(s, make_v1_step(E, yh_zero_filled, sampled, s.rho), blur);
}

struct V2Step {
  Eigen::MatrixXd inverse;  // (lambda E^T R^T R E + rho I)^{-1}
  Eigen::MatrixXd data;     // lambda E^T R^T Y_m
  double rho = 1.0;
};

inline V2Step make_v2_step(const Eigen::MatrixXd& E, const Eigen::MatrixXd& response, const Eigen::MatrixXd& ym,
                           double lambda, double rho) {
  detail::require(rho > 0.0 && lambda >= 0.0, "V2 step: need rho > 0 and lambda >= 0");
  const Eigen::MatrixXd re = response * E;
  V2Step step;
  step.inverse = (lambda * re.transpose() * re + rho * Eigen::MatrixXd::Identity(E.cols(), E.cols())).inverse();
  step.data = lambda * re.transpose() * ym;
  step.rho = rho;
  return step;
}

inline Eigen::MatrixXd update_V2(const SolverState& s, const V2Step& step) {
  return step.inverse * (step.data + step.rho * (s.X - s.D2));
}

inline Eigen::MatrixXd update_V2(const SolverState& s, const Eigen::MatrixXd& response, const Eigen::MatrixXd& E,
                                 const Eigen::MatrixXd& ym) {
  return update_V2(s, make_v2_step(E, response, ym, s.lambda, s.rho));
}

/// Fixed-weight GMM denoiser applied band by band to X - D3 with
/// sigma^2 = tau / rho. All bands share the same frozen weights.
inline Eigen::MatrixXd update_V3(const SolverState& s, const FixedWeightPlan& plan, int jobs = 1) {
  const PatchGeometry& g = plan.geometry();
  detail::require(s.X.cols() == g.pixel_count(), "update_V3: plan geometry does not match latent bands");
  const Eigen::MatrixXd input = s.X - s.D3;
  if (s.tau <= 0.0) return input;
  const double sigma = s.denoiser_sigma();
  Eigen::MatrixXd out(input.rows(), input.cols());
  detail::parallel_for(static_cast<std::size_t>(input.rows()), jobs, [&](std::size_t b) {
    const auto r = static_cast<Index>(b);
    const BandImage band(g.width(), g.height(), input.row(r).transpose());
    out.row(r) = apply_fixed(plan, band, sigma).values.transpose();
  });
  return out;
}

// -- objective -------------------------------------------------------------

/// tau * phi(X) where the fixed-weight denoiser at sigma^2 = tau / rho is the
/// proximity operator of (tau/rho) phi, i.e. tau * phi(x) = rho/2 x^T (W^{-1} - I) x
/// per band. Needs a dense W, so only available up to a pixel cap.
class QuadraticPrior {
 public:
  QuadraticPrior(const FixedWeightPlan& plan, double tau, double rho, Index cap = kDefaultMaterializeCap)
      : rho_(rho), zero_(tau <= 0.0) {
    if (zero_) return;
    lu_ = Eigen::PartialPivLU<Eigen::MatrixXd>(materialize_W(plan, std::sqrt(tau / rho), cap));
  }

  double operator()(const Eigen::MatrixXd& x) const {
    if (zero_) return 0.0;
    double acc = 0.0;
    for (Index b = 0; b < x.rows(); ++b) {
      const Eigen::VectorXd xb = x.row(b).transpose();
      const Eigen::VectorXd winv = lu_.solve(xb);
      acc += xb.dot(winv - xb);
    }
    return 0.5 * rho_ * acc;
  }

 private:
  double rho_;
  bool zero_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

struct ObjectiveValue {
  double hs_term = 0.0;
  double ms_term = 0.0;
  double prior_term = std::numeric_limits<double>::quiet_NaN();
  bool prior_exact = false;  // false: prior omitted from total
  double total = 0.0;
};

/// Data-fit and prior terms of the MAP objective. The prior term is evaluated
/// exactly when `prior` is given.
inline ObjectiveValue objective(const Eigen::MatrixXd& x, const HSCube& yh, const HSCube& ym,
                                const Eigen::MatrixXd& E, const DegradationModel& deg, const BlurOperator& blur,
                                double lambda, const QuadraticPrior* prior) {
  ObjectiveValue v;
  const HSCube pred_h = forward_hs(x, E, blur, deg.factor);
  v.hs_term = 0.5 * (pred_h.values - yh.values).squaredNorm();
  if (lambda != 0.0) {
    const HSCube pred_m = forward_ms(x, E, deg.response, blur.width(), blur.height());
    v.ms_term = 0.5 * lambda * (pred_m.values - ym.values).squaredNorm();
  }
  v.total = v.hs_term + v.ms_term;
  if (prior) {
    v.prior_term = (*prior)(x);
    v.prior_exact = true;
    v.total += v.prior_term;
  }
  return v;
}

/// Convenience form: materializes the prior when the image is small enough.
inline ObjectiveValue objective(const Eigen::MatrixXd& x, const HSCube& yh, const HSCube& ym,
                                const Eigen::MatrixXd& E, const DegradationModel& deg, const FixedWeightPlan& plan,
                                double lambda, double tau, double rho, Index cap = kDefaultMaterializeCap) {
  const BlurOperator blur(deg.blur, ym.width, ym.height);
  std::optional<QuadraticPrior> prior;
  if (plan.geometry().pixel_count() <= cap) prior.emplace(plan, tau, rho, cap);
  return objective(x, yh, ym, E, deg, blur, lambda, prior ? &*prior : nullptr);
}

// -- solver ------------------------------------------------------------------

struct SolverParams {
  double rho = 1.0;
  double lambda = 1.0;
  double tau = 1e-3;
  int max_iters = 200;
  double tol = 0.0;  // <= 0 selects 1e-6 * sqrt(L_s * n_m)
  int jobs = 1;
  bool record_objective = true;
  Index exact_prior_cap = 1024;  // pixels; above this the trace omits the prior term
};

struct SolveResult {
  HSCube z;
  SolverState state;
  bool converged = false;
  double tol = 0.0;
};

/// Initial latent image: E^T applied to the zero-order upsampled Y_h.
inline Eigen::MatrixXd initial_latent(const HSCube& yh, const Eigen::MatrixXd& E, Index factor) {
  return E.transpose() * upsample_nearest(yh, factor).values;
}

inline SolveResult solve(const HSCube& yh, const HSCube& ym, const DegradationModel& deg, const FixedWeightPlan& plan,
                         const SubspaceBasis& basis, const SolverParams& params) {
  detail::require(params.rho > 0.0 && params.tau >= 0.0 && params.lambda >= 0.0,
                  "solve: need rho > 0, tau >= 0, lambda >= 0");
  detail::require(params.max_iters >= 0, "solve: max_iters must be non-negative");
  const Index w = ym.width, h = ym.height;
  const Eigen::MatrixXd& E = basis.E;
  deg.validate(w, h, yh.bands());
  detail::require(yh.width * deg.factor == w && yh.height * deg.factor == h, "solve: Y_h / Y_m grid mismatch");
  detail::require(E.rows() == yh.bands(), "solve: basis does not match Y_h bands");
  detail::require(ym.bands() == deg.response.rows(), "solve: Y_m bands do not match spectral response");
  detail::require(plan.geometry().width() == w && plan.geometry().height() == h,
                  "solve: plan geometry does not match the high-resolution grid");

  const BlurOperator blur(deg.blur, w, h);
  const V1Step v1 = make_v1_step(E, zero_fill(yh, deg.factor), sampled_pixels(w, h, deg.factor), params.rho);
  const V2Step v2 = make_v2_step(E, deg.response, ym.values, params.lambda, params.rho);
  std::optional<QuadraticPrior> prior;
  if (params.record_objective && plan.geometry().pixel_count() <= params.exact_prior_cap)
    prior.emplace(plan, params.tau, params.rho, params.exact_prior_cap);

  SolveResult res;
  SolverState& s = res.state;
  s.rho = params.rho;
  s.lambda = params.lambda;
  s.tau = params.tau;
  s.X = initial_latent(yh, E, deg.factor);
  s.V1 = blur.apply_rows(s.X);
  s.V2 = s.X;
  s.V3 = s.X;
  s.D1 = Eigen::MatrixXd::Zero(s.X.rows(), s.X.cols());
  s.D2 = s.D1;
  s.D3 = s.D1;
  res.tol = params.tol > 0.0 ? params.tol : 1e-6 * std::sqrt(static_cast<double>(s.X.size()));

  for (int k = 0; k < params.max_iters; ++k) {
    const Eigen::MatrixXd x_old = s.X;
    const Eigen::MatrixXd v1_old = s.V1, v2_old = s.V2, v3_old = s.V3;
    s.X = update_X(s, blur);
    s.V1 = update_V1(s, v1, blur);
    s.V2 = update_V2(s, v2);
    s.V3 = update_V3(s, plan, params.jobs);
    const Eigen::MatrixXd xb = blur.apply_rows(s.X);
    s.D1 += s.V1 - xb;
    s.D2 += s.V2 - s.X;
    s.D3 += s.V3 - s.X;
    if (!s.X.allFinite() || !s.D1.allFinite() || !s.D3.allFinite()) throw DataError("solve: non-finite iterate");
    s.iteration = k + 1;

    TraceRecord rec;
    rec.iteration = k + 1;
    rec.primal_residual =
        std::sqrt((xb - s.V1).squaredNorm() + (s.X - s.V2).squaredNorm() + (s.X - s.V3).squaredNorm());
    rec.dual_residual =
        s.rho * (blur.adjoint_rows(s.V1 - v1_old) + (s.V2 - v2_old) + (s.V3 - v3_old)).norm();
    rec.x_change = (s.X - x_old).norm();
    if (params.record_objective)
      rec.objective = objective(s.X, yh, ym, E, deg, blur, s.lambda, prior ? &*prior : nullptr).total;
    s.trace.push_back(rec);
    if (rec.primal_residual + rec.dual_residual < res.tol) {
      res.converged = true;
      break;
    }
  }
  res.z = HSCube(w, h, E * s.X);
  return res;
}

}  // namespace pnp
