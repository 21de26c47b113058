#pragma once

// Synthetic scenes, the forward degradation with noise at a target SNR, and
// the on-disk cube format.
//
// Cube format: a text header "<path>.hdr" with "key: value" lines (width,
// height, bands, dtype=f32, order=band-sequential, endian=little) and the raw
// payload in "<path>".

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pnp/binary_io.hpp"
#include "pnp/blur.hpp"
#include "pnp/config.hpp"
#include "pnp/cube.hpp"
#include "pnp/error.hpp"
#include "pnp/sharpening.hpp"

namespace pnp {

struct SceneSpec {
  Index width = 64;
  Index height = 64;
  Index bands = 32;
  Index endmembers = 4;
  Index regions = 12;

  void validate() const {
    detail::require(width > 0 && height > 0, "SceneSpec: dimensions must be positive");
    detail::require(bands >= 1, "SceneSpec: need at least one band");
    detail::require(endmembers >= 1 && endmembers <= bands, "SceneSpec: endmembers must lie in [1, bands]");
    detail::require(regions >= 1, "SceneSpec: need at least one region");
  }
};

struct Scene {
  HSCube z;
  Eigen::MatrixXd spectra;     // bands x endmembers
  Eigen::MatrixXd abundances;  // endmembers x pixels, columns on the simplex
};

/// Piecewise-smooth abundance maps (periodic Voronoi regions, each with its own
/// mixture, modulated by smooth waves) mixed with smooth random spectra.
inline Scene generate_scene_components(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Index w = spec.width, h = spec.height, p = spec.endmembers, L = spec.bands;

  Scene scene;
  scene.spectra.resize(L, p);
  for (Index e = 0; e < p; ++e) {
    const double base = 0.05 + 0.15 * u01(rng);
    double centers[3], widths[3], amps[3];
    for (int k = 0; k < 3; ++k) {
      centers[k] = u01(rng) * static_cast<double>(L);
      widths[k] = (0.08 + 0.25 * u01(rng)) * static_cast<double>(L);
      amps[k] = 0.2 + 0.8 * u01(rng);
    }
    for (Index l = 0; l < L; ++l) {
      double v = base;
      for (int k = 0; k < 3; ++k) {
        const double t = (static_cast<double>(l) - centers[k]) / widths[k];
        v += amps[k] * std::exp(-0.5 * t * t);
      }
      scene.spectra(l, e) = v;
    }
  }

  struct Region {
    double r, c;
    Eigen::VectorXd mix;
  };
  std::vector<Region> regions;
  for (Index k = 0; k < spec.regions; ++k) {
    Region reg{u01(rng) * static_cast<double>(h), u01(rng) * static_cast<double>(w), Eigen::VectorXd(p)};
    const auto dominant = static_cast<Index>(u01(rng) * static_cast<double>(p)) % p;
    for (Index e = 0; e < p; ++e) reg.mix[e] = 0.1 * u01(rng);
    reg.mix[dominant] += 1.0;
    regions.push_back(std::move(reg));
  }
  Eigen::MatrixXd phase(p, 4);
  for (Index e = 0; e < p; ++e)
    for (Index k = 0; k < 4; ++k) phase(e, k) = u01(rng) * 2.0 * std::numbers::pi;

  scene.abundances.resize(p, w * h);
  const double tw = 2.0 * std::numbers::pi / static_cast<double>(w);
  const double th = 2.0 * std::numbers::pi / static_cast<double>(h);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double best = std::numeric_limits<double>::infinity();
      const Region* owner = &regions.front();
      for (const auto& reg : regions) {
        double dr = std::abs(static_cast<double>(r) - reg.r), dc = std::abs(static_cast<double>(c) - reg.c);
        dr = std::min(dr, static_cast<double>(h) - dr);
        dc = std::min(dc, static_cast<double>(w) - dc);
        const double d = dr * dr + dc * dc;
        if (d < best) {
          best = d;
          owner = &reg;
        }
      }
      Eigen::VectorXd a(p);
      for (Index e = 0; e < p; ++e) {
        const double wave = 0.5 + 0.25 * std::sin(tw * static_cast<double>(c) * (1 + e % 2) + phase(e, 0)) +
                            0.25 * std::sin(th * static_cast<double>(r) * (1 + e % 3) + phase(e, 1));
        a[e] = owner->mix[e] * (0.6 + 0.4 * wave) + 0.02;
      }
      scene.abundances.col(r * w + c) = a / a.sum();
    }
  }
  scene.z = HSCube(w, h, scene.spectra * scene.abundances);
  return scene;
}

inline HSCube generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  return generate_scene_components(spec, seed).z;
}

/// Rows are normalized Gaussian bumps over band index with evenly spaced centers.
inline Eigen::MatrixXd gaussian_spectral_response(Index ms_bands, Index hs_bands, double relative_width = 0.6) {
  detail::require(ms_bands >= 1 && hs_bands >= 1, "spectral response: band counts must be positive");
  detail::require(relative_width > 0.0, "spectral response: width must be positive");
  Eigen::MatrixXd r(ms_bands, hs_bands);
  const double spacing = static_cast<double>(hs_bands) / static_cast<double>(ms_bands);
  const double sd = relative_width * spacing;
  for (Index k = 0; k < ms_bands; ++k) {
    const double center = (static_cast<double>(k) + 0.5) * spacing - 0.5;
    for (Index l = 0; l < hs_bands; ++l) {
      const double t = (static_cast<double>(l) - center) / sd;
      r(k, l) = std::exp(-0.5 * t * t);
    }
    r.row(k) /= r.row(k).sum();
  }
  return r;
}

struct DegradationSpec {
  Index factor = 4;
  double blur_std = 0.0;    // <= 0 selects factor / 2
  Index blur_support = 0;   // <= 0 selects 4 * factor + 1
  Index ms_bands = 4;
  double response_width = 0.6;

  DegradationModel build(Index hs_bands) const {
    detail::require(factor >= 1, "DegradationSpec: factor must be >= 1");
    DegradationModel m;
    m.factor = factor;
    const double sd = blur_std > 0.0 ? blur_std : static_cast<double>(factor) / 2.0;
    const Index support = blur_support > 0 ? blur_support : 4 * factor + 1;
    m.blur = BlurKernel::gaussian(sd, support);
    m.response = gaussian_spectral_response(ms_bands, hs_bands, response_width);
    return m;
  }
};

/// Per-band SNR from "count:snr" groups, e.g. "43:35,50:30"; a single number
/// applies to every band and "inf" disables the noise.
inline std::vector<double> parse_snr_groups(const std::string& text, Index bands) {
  auto parse_value = [](const std::string& s) {
    if (s == "inf" || s == "Inf" || s == "INF") return std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw InvalidArgument("invalid SNR value: " + s);
    }
    if (used != s.size() || std::isnan(v)) throw InvalidArgument("invalid SNR value: " + s);
    return v;
  };
  if (text.find(':') == std::string::npos) return std::vector<double>(static_cast<std::size_t>(bands), parse_value(text));
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidArgument("invalid SNR group: " + item);
    const long long count = std::stoll(item.substr(0, colon));
    const double snr = parse_value(item.substr(colon + 1));
    if (count <= 0) throw InvalidArgument("invalid SNR group count: " + item);
    out.insert(out.end(), static_cast<std::size_t>(count), snr);
  }
  if (static_cast<Index>(out.size()) != bands)
    throw InvalidArgument("SNR groups cover " + std::to_string(out.size()) + " bands, expected " + std::to_string(bands));
  return out;
}

namespace detail {

// Adds white Gaussian noise. Bands sharing an SNR form one group whose noise
// level is set from the group's mean signal power. Returns the per-band std.
inline Eigen::VectorXd add_noise(Eigen::MatrixXd& signal, const std::vector<double>& snr_db, std::mt19937_64& rng) {
  require(static_cast<Index>(snr_db.size()) == signal.rows(), "add_noise: one SNR per band required");
  for (double s : snr_db) require(!std::isnan(s), "add_noise: SNR must not be NaN");
  Eigen::VectorXd stds = Eigen::VectorXd::Zero(signal.rows());
  Index b = 0;
  while (b < signal.rows()) {
    Index e = b;
    while (e < signal.rows() && snr_db[static_cast<std::size_t>(e)] == snr_db[static_cast<std::size_t>(b)]) ++e;
    const double snr = snr_db[static_cast<std::size_t>(b)];
    if (std::isfinite(snr)) {
      const double power = signal.middleRows(b, e - b).squaredNorm() / static_cast<double>((e - b) * signal.cols());
      const double sd = std::sqrt(power / std::pow(10.0, snr / 10.0));
      stds.segment(b, e - b).setConstant(sd);
    } else if (snr < 0.0) {
      throw InvalidArgument("add_noise: SNR of -inf");
    }
    b = e;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index r = 0; r < signal.rows(); ++r) {
    if (stds[r] == 0.0) continue;
    for (Index c = 0; c < signal.cols(); ++c) signal(r, c) += stds[r] * gauss(rng);
  }
  return stds;
}

}  // namespace detail

struct Observations {
  HSCube yh;
  HSCube ym;
  Eigen::VectorXd hs_noise_std;
  Eigen::VectorXd ms_noise_std;
};

/// Y_h = Z B M + N_h and Y_m = R Z + N_m at the requested SNRs (dB, per band).
inline Observations degrade(const HSCube& z, const DegradationModel& model, const std::vector<double>& snr_hs_db,
                            const std::vector<double>& snr_ms_db, std::uint64_t seed) {
  model.validate(z.width, z.height, z.bands());
  const BlurOperator blur(model.blur, z.width, z.height);
  Observations obs;
  Eigen::MatrixXd hs = subsample(blur.apply_rows(z.values), z.width, z.height, model.factor);
  Eigen::MatrixXd ms = model.response * z.values;
  std::mt19937_64 rng_h(seed);
  std::mt19937_64 rng_m(seed ^ 0x9e3779b97f4a7c15ULL);
  obs.hs_noise_std = detail::add_noise(hs, snr_hs_db, rng_h);
  obs.ms_noise_std = detail::add_noise(ms, snr_ms_db, rng_m);
  obs.yh = HSCube(z.width / model.factor, z.height / model.factor, std::move(hs));
  obs.ym = HSCube(z.width, z.height, std::move(ms));
  return obs;
}

inline Observations degrade(const HSCube& z, const DegradationModel& model, double snr_hs_db, double snr_ms_db,
                            std::uint64_t seed) {
  return degrade(z, model, std::vector<double>(static_cast<std::size_t>(z.bands()), snr_hs_db),
                 std::vector<double>(static_cast<std::size_t>(model.response.rows()), snr_ms_db), seed);
}

// -- cube files ------------------------------------------------------------

inline std::filesystem::path header_path(const std::filesystem::path& payload) {
  return std::filesystem::path(payload.string() + ".hdr");
}

inline void write_cube(const HSCube& cube, const std::filesystem::path& path) {
  {
    std::ofstream hdr(header_path(path));
    if (!hdr) throw DataError("cannot write " + header_path(path).string());
    hdr << "width: " << cube.width << "\nheight: " << cube.height << "\nbands: " << cube.bands()
        << "\ndtype: f32\norder: band-sequential\nendian: little\n";
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  for (Index b = 0; b < cube.bands(); ++b)
    for (Index p = 0; p < cube.pixels(); ++p) binary::write_le(os, static_cast<float>(cube.values(b, p)));
  if (!os) throw DataError("failed writing " + path.string());
}

inline HSCube read_cube(const std::filesystem::path& path) {
  std::ifstream hdr(header_path(path));
  if (!hdr) throw DataError("cannot open header " + header_path(path).string());
  KeyValueConfig h;
  try {
    h = KeyValueConfig::parse(hdr, header_path(path).string());
  } catch (const DataError& e) {
    throw DataError(std::string("malformed cube header: ") + e.what());
  }
  for (const char* key : {"width", "height", "bands", "dtype", "order", "endian"})
    if (!h.has(key)) throw DataError(header_path(path).string() + ": missing key '" + key + "'");
  if (h.get_string("dtype", "") != "f32") throw DataError(path.string() + ": unsupported dtype");
  if (h.get_string("order", "") != "band-sequential") throw DataError(path.string() + ": unsupported order");
  if (h.get_string("endian", "") != "little") throw DataError(path.string() + ": unsupported endianness");
  const long long w = h.get_int("width", 0), hh = h.get_int("height", 0), L = h.get_int("bands", 0);
  if (w <= 0 || hh <= 0 || L <= 0) throw DataError(path.string() + ": non-positive dimensions in header");
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("cannot stat " + path.string());
  if (size != static_cast<std::uintmax_t>(w * hh * L * 4))
    throw DataError(path.string() + ": payload size " + std::to_string(size) + " does not match header dimensions");
  std::ifstream is(path, std::ios::binary);
  HSCube cube(static_cast<Index>(L), static_cast<Index>(w), static_cast<Index>(hh));
  for (Index b = 0; b < cube.bands(); ++b)
    for (Index p = 0; p < cube.pixels(); ++p) cube.values(b, p) = binary::read_le<float>(is);
  return cube;
}

}  // namespace pnp
