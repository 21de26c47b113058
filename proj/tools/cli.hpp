#pragma once

// pnp command line: simulate | train-gmm | sharpen | denoise | eval | diagnose.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 diagnostic failure.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pnp/pnp.hpp"

namespace pnp::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kDiagnostic = 3 };

// Flag overrides land here as strings and are merged over the config file.
struct Settings {
  std::string config_path;
  std::map<std::string, std::string> flags;
  KeyValueConfig cfg;

  void resolve() {
    if (!config_path.empty()) cfg = KeyValueConfig::load(config_path);
    for (const auto& [k, v] : flags)
      if (!v.empty()) cfg.set(k, v);
  }
  double num(const std::string& k, double fallback) const { return cfg.get_double(k, fallback); }
  long long integer(const std::string& k, long long fallback) const { return cfg.get_int(k, fallback); }
  std::string str(const std::string& k, const std::string& fallback) const { return cfg.get_string(k, fallback); }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed", 0)); }
};

inline void add_common(CLI::App* sub, Settings& s) {
  sub->add_option("--config", s.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  const std::vector<std::tuple<std::string, std::string, std::string, bool>> opts = {
      {"--seed", "seed", "random seed", true},
      {"--rho", "rho", "ADMM penalty", false},
      {"--lambda", "lambda", "MS data-fit weight", false},
      {"--tau", "tau", "prior weight", false},
      {"--patch-side", "patch_side", "patch side length", true},
      {"--components,-K", "components", "GMM components", true},
      {"--subspace", "subspace", "latent subspace dimension L_s", true},
      {"--iters", "iters", "iteration cap", true},
      {"--tol", "tol", "stopping tolerance", false},
      {"--sigma", "sigma", "noise standard deviation", false},
      {"--jobs", "jobs", "worker threads", true},
  };
  for (const auto& [flag, key, help, integral] : opts) {
    auto* o = sub->add_option(flag, s.flags[key], help);
    if (integral)
      o->check(CLI::NonNegativeNumber & CLI::TypeValidator<long long>("INT"));
    else
      o->check(CLI::Number);
  }
}

inline void print_warnings(const std::vector<std::string>& w, std::ostream& err) {
  for (const auto& m : w) err << "warning: " << m << "\n";
}

inline BandImage training_band(const HSCube& cube, long long band) {
  if (band < 0) return synthesize_pan(cube);
  if (band >= cube.bands()) throw InvalidArgument("--band " + std::to_string(band) + " out of range");
  return cube.band(static_cast<Index>(band));
}

inline Index side_of(const GMMModel& m) {
  const auto s = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(m.patch_size()))));
  if (s * s != m.patch_size()) throw DataError("GMM patch size is not a square");
  return s;
}

inline Index check_patch_side(const Settings& s, const GMMModel& m) {
  const Index side = side_of(m);
  if (s.cfg.has("patch_side") && s.integer("patch_side", side) != side)
    throw InvalidArgument("--patch-side does not match the GMM patch size " + std::to_string(side));
  return side;
}

// -- simulate ---------------------------------------------------------------

inline DegradationSpec degradation_spec(const KeyValueConfig& c) {
  DegradationSpec d;
  d.factor = c.get_int("factor", d.factor);
  d.blur_std = c.get_double("blur_std", d.blur_std);
  d.blur_support = c.get_int("blur_support", d.blur_support);
  d.ms_bands = c.get_int("ms_bands", d.ms_bands);
  d.response_width = c.get_double("response_width", d.response_width);
  return d;
}

inline int cmd_simulate(const Settings& s, const std::string& out_dir, std::ostream& out) {
  SceneSpec spec;
  spec.width = s.integer("width", spec.width);
  spec.height = s.integer("height", spec.height);
  spec.bands = s.integer("bands", spec.bands);
  spec.endmembers = s.integer("endmembers", spec.endmembers);
  spec.regions = s.integer("regions", spec.regions);
  const DegradationSpec dspec = degradation_spec(s.cfg);
  const std::string snr_hs = s.str("snr_hs", "50"), snr_ms = s.str("snr_ms", "50");

  const HSCube z = generate_scene(spec, s.seed());
  const DegradationModel model = dspec.build(spec.bands);
  const Observations obs = degrade(z, model, parse_snr_groups(snr_hs, spec.bands),
                                   parse_snr_groups(snr_ms, model.response.rows()), s.seed() + 1);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_cube(z, dir / "z.f32");
  write_cube(obs.yh, dir / "yh.f32");
  write_cube(obs.ym, dir / "ym.f32");

  KeyValueConfig deg;
  deg.set("factor", std::to_string(dspec.factor));
  std::ostringstream os;
  os.precision(17);
  os << dspec.blur_std;
  deg.set("blur_std", os.str());
  deg.set("blur_support", std::to_string(dspec.blur_support));
  deg.set("ms_bands", std::to_string(dspec.ms_bands));
  os.str("");
  os << dspec.response_width;
  deg.set("response_width", os.str());
  deg.set("snr_hs", snr_hs);
  deg.set("snr_ms", snr_ms);
  deg.set("seed", std::to_string(s.seed()));
  std::ofstream f(dir / "degradation.cfg");
  deg.write(f);
  if (!f) throw DataError("cannot write " + (dir / "degradation.cfg").string());
  out << "wrote " << (dir / "z.f32").string() << ", yh.f32, ym.f32, degradation.cfg\n";
  return kOk;
}

// -- train-gmm --------------------------------------------------------------

inline int cmd_train(const Settings& s, const std::string& input, const std::string& output, long long band,
                     std::ostream& out, std::ostream& err) {
  const HSCube cube = read_cube(input);
  const BandImage img = training_band(cube, band);
  const Index side = s.integer("patch_side", 8);
  const Index K = s.integer("components", 20);
  EMOptions opts;
  opts.seed = s.seed();
  opts.sigma = s.num("sigma", 0.0);
  opts.max_iters = static_cast<int>(s.integer("iters", opts.max_iters));
  if (s.cfg.has("tol")) opts.rel_tol = s.num("tol", opts.rel_tol);
  const PatchSet ps = extract_patches(img, PatchGeometry(img.width, img.height, side), true);
  const EMFit fit = fit_em(ps, K, opts);
  print_warnings(fit.warnings, err);
  save_gmm(fit.model, output);
  out << "components: " << K << "\npatch_side: " << side << "\niterations: " << fit.iterations
      << "\nconverged: " << (fit.converged ? 1 : 0) << "\nlog_likelihood: " << fit.log_likelihood.back() << "\n";
  return kOk;
}

// -- sharpen ----------------------------------------------------------------

struct SharpenPaths {
  std::string yh, ym, gmm, out, trace, degradation;
  long long band = -1;
  bool keep_means = true;
};

inline int cmd_sharpen(const Settings& s, const SharpenPaths& p, std::ostream& out) {
  const HSCube yh = read_cube(p.yh);
  const HSCube ym = read_cube(p.ym);
  auto model = std::make_shared<const GMMModel>(load_gmm(p.gmm));
  const Index side = check_patch_side(s, *model);

  const fs::path deg_path = p.degradation.empty() ? fs::path(p.yh).parent_path() / "degradation.cfg" : fs::path(p.degradation);
  KeyValueConfig dcfg = s.cfg;  // degradation keys may also sit in --config
  if (fs::exists(deg_path)) {
    const KeyValueConfig file = KeyValueConfig::load(deg_path);
    for (const auto& [k, v] : file.entries())
      if (!dcfg.has(k)) dcfg.set(k, v);
  } else if (!p.degradation.empty()) {
    throw DataError("cannot open degradation file " + deg_path.string());
  }
  DegradationSpec dspec = degradation_spec(dcfg);
  dspec.ms_bands = ym.bands();
  const DegradationModel deg = dspec.build(yh.bands());
  if (yh.width * deg.factor != ym.width || yh.height * deg.factor != ym.height)
    throw DataError("Y_h and Y_m grids are inconsistent with factor " + std::to_string(deg.factor));

  SolverParams params;
  params.rho = s.num("rho", params.rho);
  params.lambda = s.num("lambda", params.lambda);
  params.tau = s.num("tau", params.tau);
  params.max_iters = static_cast<int>(s.integer("iters", params.max_iters));
  params.tol = s.num("tol", params.tol);
  params.jobs = static_cast<int>(s.integer("jobs", 1));
  params.record_objective = true;
  const Index ls = s.integer("subspace", std::min<Index>(4, yh.bands()));
  detail::require(params.rho > 0.0, "--rho must be positive");

  const SubspaceBasis basis = learn_subspace(yh, ls);
  const double sigma_train = s.num("sigma", std::sqrt(params.tau / params.rho));
  const FixedWeightPlan plan =
      freeze_weights(model, training_band(ym, p.band), sigma_train, PatchGeometry(ym.width, ym.height, side), p.keep_means);
  const SolveResult r = solve(yh, ym, deg, plan, basis, params);
  write_cube(r.z, p.out);
  const std::string trace = p.trace.empty() ? p.out + ".trace.csv" : p.trace;
  std::ofstream t(trace);
  write_trace_csv(t, r.state.trace);
  if (!t) throw DataError("cannot write " + trace);
  out << "iterations: " << r.state.iteration << "\nconverged: " << (r.converged ? 1 : 0) << "\n";
  return kOk;
}

// -- denoise ----------------------------------------------------------------

inline int cmd_denoise(const Settings& s, const std::string& input, const std::string& gmm, const std::string& output,
                       const std::string& mode, const std::string& training, long long band, std::ostream& out) {
  const HSCube cube = read_cube(input);
  const BandImage img = training_band(cube, band < 0 && cube.bands() == 1 ? 0 : band);
  auto model = std::make_shared<const GMMModel>(load_gmm(gmm));
  const Index side = check_patch_side(s, *model);
  const double sigma = s.num("sigma", 0.05);
  detail::require(sigma > 0.0, "--sigma must be positive");
  const PatchGeometry geom(img.width, img.height, side);
  BandImage result;
  if (mode == "mmse") {
    result = denoise_mmse(*model, img, sigma, geom);
  } else {
    BandImage train = img;
    if (!training.empty()) {
      const HSCube tc = read_cube(training);
      train = training_band(tc, tc.bands() == 1 ? 0 : -1);
    }
    result = apply_fixed(freeze_weights(model, train, sigma, geom), img, sigma);
  }
  HSCube o(1, img.width, img.height);
  o.set_band(0, result);
  write_cube(o, output);
  out << "mode: " << mode << "\nsigma: " << sigma << "\n";
  return kOk;
}

// -- eval -------------------------------------------------------------------

inline int cmd_eval(const Settings& s, const std::string& estimate, const std::string& reference,
                    const std::string& output, std::ostream& out) {
  const HSCube est = read_cube(estimate), ref = read_cube(reference);
  if (est.bands() != ref.bands() || est.width != ref.width || est.height != ref.height)
    throw DataError("estimate and reference cubes differ in shape");
  const double ratio = s.num("ratio", static_cast<double>(s.integer("factor", 4)));
  const MetricReport r = evaluate(est, ref, ratio);
  const std::string csv = MetricReport::csv_header() + "\n" + r.csv_row() + "\n";
  if (output.empty()) {
    out << csv;
  } else {
    std::ofstream f(output);
    f << csv;
    if (!f) throw DataError("cannot write " + output);
    out << r.to_text();
  }
  return kOk;
}

// -- diagnose ---------------------------------------------------------------

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return g;
}

inline double max_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < x.size(); ++i) m = std::max(m, (y[i] - y[i - 1]) / (x[i] - x[i - 1]));
  return m;
}

inline int cmd_diagnose(const Settings& s, const std::string& gmm, const std::string& input,
                        const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const double sigma = s.num("sigma", 0.5);
  detail::require(sigma > 0.0, "--sigma must be positive");
  BandImage img;
  if (!input.empty()) {
    const HSCube c = read_cube(input);
    img = training_band(c, c.bands() == 1 ? 0 : -1);
  } else {
    SceneSpec spec;
    spec.width = s.integer("width", 8);
    spec.height = s.integer("height", 8);
    spec.bands = s.integer("bands", 8);
    spec.endmembers = std::min<Index>(3, spec.bands);
    spec.regions = 4;
    img = synthesize_pan(HSCube(spec.width, spec.height,
                                gaussian_spectral_response(2, spec.bands) * generate_scene(spec, s.seed()).values));
  }
  std::shared_ptr<const GMMModel> model;
  if (!gmm.empty()) {
    model = std::make_shared<const GMMModel>(load_gmm(gmm));
    check_patch_side(s, *model);
  } else {
    const Index side = s.integer("patch_side", 2);
    EMOptions opts;
    opts.seed = s.seed();
    opts.max_iters = static_cast<int>(s.integer("iters", 100));
    const EMFit fit =
        fit_em(extract_patches(img, PatchGeometry(img.width, img.height, side), true), s.integer("components", 3), opts);
    model = std::make_shared<const GMMModel>(fit.model);
  }
  const PatchGeometry geom(img.width, img.height, side_of(*model));
  const FixedWeightPlan plan = freeze_weights(model, img, sigma, geom, false);
  const bool partition = img.width % geom.patch_side() == 0 && img.height % geom.patch_side() == 0;

  std::ostringstream report;
  report.precision(17);
  int status = kOk;
  DenoiserReport rep;
  try {
    rep = verify_lemma1(plan, sigma, partition);
  } catch (const DiagnosticFailure& e) {
    err << "diagnostic failure: " << e.what() << "\n";
    rep = analyze_operator(plan, sigma, partition);
    status = kDiagnostic;
  }
  report << rep.to_text();

  std::mt19937_64 rng(s.seed() + 7);
  std::normal_distribution<double> g(0.0, 1.0);
  BandImage y(img.width, img.height);
  for (Index i = 0; i < y.size(); ++i) y.values[i] = g(rng);
  const double defect = prox_check(plan, sigma, y);
  report << "prox_defect: " << defect << "\n";
  if (!(defect <= 1e-8)) {
    err << "diagnostic failure: prox defect " << defect << " exceeds 1e-8\n";
    status = kDiagnostic;
  }

  // scalar two-component maps: adaptive weights against frozen weights
  const std::vector<double> alpha{0.5, 0.5}, var{0.1, 10.0};
  const double ssig = 1.0;
  const auto grid = linspace(-6.0, 6.0, 1201);
  const auto mmse = scalar_mmse_map(alpha, var, ssig, grid);
  const auto fixed = scalar_fixed_map(alpha, var, ssig, grid);
  const double sm = max_slope(grid, mmse), sf = max_slope(grid, fixed);
  report << "scalar_mmse_max_slope: " << sm << "\nscalar_fixed_max_slope: " << sf << "\n";
  if (!(sf > 0.0 && sf < 1.0)) status = kDiagnostic;

  std::ostringstream table;
  table.precision(17);
  table << "y,mmse,fixed\n";
  for (std::size_t i = 0; i < grid.size(); ++i) table << grid[i] << ',' << mmse[i] << ',' << fixed[i] << '\n';

  if (out_dir.empty()) {
    out << report.str();
  } else {
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "report.txt") << report.str();
    std::ofstream(fs::path(out_dir) / "scalar_map.csv") << table.str();
    out << report.str();
  }
  out << (status == kOk ? "operator checks: pass\n" : "operator checks: FAIL\n");
  return status;
}

// -- entry point ------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Plug-and-play ADMM hyperspectral sharpening with a fixed-weight GMM denoiser", "pnp"};
  app.require_subcommand(1);
  Settings s;

  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic scene and its observations");
  add_common(sim, s);
  sim->add_option("--out", sim_out, "output directory")->required();
  for (const char* k : {"width", "height", "bands", "endmembers", "factor", "ms_bands"})
    sim->add_option(std::string("--") + k, s.flags[k])->check(CLI::PositiveNumber & CLI::TypeValidator<long long>("INT"));
  sim->add_option("--snr-hs", s.flags["snr_hs"], "HS SNR in dB: value, inf or count:snr groups");
  sim->add_option("--snr-ms", s.flags["snr_ms"], "MS SNR in dB");

  std::string tr_in, tr_out;
  long long band = -1;
  auto* train = app.add_subcommand("train-gmm", "fit a zero-mean patch GMM by EM");
  add_common(train, s);
  train->add_option("--input", tr_in, "training cube (PAN = mean of its bands)")->required();
  train->add_option("--out", tr_out, "output GMM file")->required();
  train->add_option("--band", band, "train on this band instead of the PAN");

  SharpenPaths sp;
  std::string means = "on";
  auto* sharpen = app.add_subcommand("sharpen", "fuse Y_h and Y_m");
  add_common(sharpen, s);
  sharpen->add_option("--yh", sp.yh)->required();
  sharpen->add_option("--ym", sp.ym)->required();
  sharpen->add_option("--gmm", sp.gmm)->required();
  sharpen->add_option("--out", sp.out, "output cube")->required();
  sharpen->add_option("--trace", sp.trace, "trace CSV (default <out>.trace.csv)");
  sharpen->add_option("--degradation", sp.degradation, "degradation config (default next to Y_h)");
  sharpen->add_option("--band", sp.band, "MS band for the frozen weights instead of the PAN");
  sharpen->add_option("--means", means, "patch mean handling")->check(CLI::IsMember({"on", "off"}));

  std::string dn_in, dn_gmm, dn_out, dn_mode = "fixed", dn_train;
  long long dn_band = -1;
  auto* denoise = app.add_subcommand("denoise", "denoise one band");
  add_common(denoise, s);
  denoise->add_option("--input", dn_in)->required();
  denoise->add_option("--gmm", dn_gmm)->required();
  denoise->add_option("--out", dn_out)->required();
  denoise->add_option("--mode", dn_mode)->check(CLI::IsMember({"mmse", "fixed"}));
  denoise->add_option("--training", dn_train, "image for the frozen weights (default: the input)");
  denoise->add_option("--band", dn_band);

  std::string ev_est, ev_ref, ev_out;
  auto* eval = app.add_subcommand("eval", "ERGAS, SAM and SRE against a reference");
  add_common(eval, s);
  eval->add_option("--estimate", ev_est)->required();
  eval->add_option("--reference", ev_ref)->required();
  eval->add_option("--out", ev_out, "CSV file (default stdout)");
  eval->add_option("--ratio", s.flags["ratio"], "resolution ratio")->check(CLI::PositiveNumber);

  std::string dg_gmm, dg_in, dg_out;
  auto* diag = app.add_subcommand("diagnose", "spectral checks of the fixed-weight denoiser");
  add_common(diag, s);
  diag->add_option("--gmm", dg_gmm, "model to analyse (default: trained on a tiny scene)");
  diag->add_option("--input", dg_in, "training image cube");
  diag->add_option("--out-dir", dg_out, "write report.txt and scalar_map.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    s.resolve();
    if (*sim) return cmd_simulate(s, sim_out, out);
    if (*train) return cmd_train(s, tr_in, tr_out, band, out, err);
    if (*sharpen) {
      sp.keep_means = means == "on";
      return cmd_sharpen(s, sp, out);
    }
    if (*denoise) return cmd_denoise(s, dn_in, dn_gmm, dn_out, dn_mode, dn_train, dn_band, out);
    if (*eval) return cmd_eval(s, ev_est, ev_ref, ev_out, out);
    if (*diag) return cmd_diagnose(s, dg_gmm, dg_in, dg_out, out, err);
  } catch (const DiagnosticFailure& e) {
    err << "diagnostic failure: " << e.what() << "\n";
    return kDiagnostic;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace pnp::cli
