#pragma once

// Configuration, end-to-end reconstruction and report serialization behind
// the nvmag command-line tool.

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "nvmag/cone_solver.hpp"
#include "nvmag/constants.hpp"
#include "nvmag/csv.hpp"
#include "nvmag/errors.hpp"
#include "nvmag/spectra.hpp"
#include "nvmag/spin_model.hpp"
#include "nvmag/uncertainty.hpp"

namespace nvmag::pipeline {

using json = nlohmann::json;
using cones::NvLabel;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr std::string_view kCloudHeader = "phi_deg,psi_deg";
/// Lower bound on tilt sigmas propagated from fitted line positions.
inline constexpr double kSigmaFloorDeg = 1e-6;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kFitFailure = 3,
  kInconsistentCones = 4,
  kAmbiguous = 5,
  kDegenerateEllipse = 6,
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const FitError*>(&e) || dynamic_cast<const InconsistentFrequencies*>(&e)) return kFitFailure;
  if (dynamic_cast<const ConesDisjoint*>(&e) || dynamic_cast<const InconsistentCones*>(&e))
    return kInconsistentCones;
  if (dynamic_cast<const AmbiguousSolution*>(&e)) return kAmbiguous;
  if (dynamic_cast<const DegenerateEllipse*>(&e)) return kDegenerateEllipse;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const InvalidArgument*>(&e))
    return kUsage;
  return kInternal;
}

struct MonteCarloSettings {
  std::uint64_t n_samples = 100000;
  std::uint64_t seed = 0;
  double coverage = 0.997;
};

struct FitSettings {
  int n_peaks = 3;
  double linewidth_init_mhz = 0.25;
};

struct MeasurementInput {
  NvLabel axis;
  double theta_deg;
  double sigma_deg;
};

struct SpectraInput {
  NvLabel axis;
  std::string minus;  // path to the f- spectrum CSV
  std::string plus;
  std::optional<double> sigma_deg;  // overrides the propagated fit uncertainty
};

struct PipelineConfig {
  PhysicalConstants constants;
  std::array<Eigen::Vector3d, 4> axes{cones::NvAxis::of(NvLabel::NV1).direction,
                                      cones::NvAxis::of(NvLabel::NV2).direction,
                                      cones::NvAxis::of(NvLabel::NV3).direction,
                                      cones::NvAxis::of(NvLabel::NV4).direction};
  MonteCarloSettings monte_carlo;
  FitSettings fit;
  std::vector<MeasurementInput> measurements;
  std::vector<SpectraInput> spectra;
  std::vector<NvLabel> subset;  // empty: the first three inputs

  cones::NvAxis axis(NvLabel l) const { return {l, axes[static_cast<size_t>(l)]}; }

  void validate() const {
    try {
      constants.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("constants: ") + e.what());
    }
    if (monte_carlo.n_samples < 100) throw ConfigError("monte_carlo.n_samples: must be at least 100");
    if (!(monte_carlo.coverage > 0.5 && monte_carlo.coverage <= 1.0))
      throw ConfigError("monte_carlo.coverage: must lie in (0.5, 1]");
    if (fit.n_peaks < 1) throw ConfigError("fit.n_peaks: must be at least 1");
    if (!(fit.linewidth_init_mhz > 0.0)) throw ConfigError("fit.linewidth_init_mhz: must be positive");
    if (!measurements.empty() && !spectra.empty())
      throw ConfigError("inputs: give either measurements or spectra, not both");
    std::set<NvLabel> seen;
    auto check = [&](NvLabel l, const std::string& where) {
      if (!seen.insert(l).second) throw ConfigError(where + ": " + cones::to_string(l) + " listed twice");
    };
    for (size_t k = 0; k < measurements.size(); ++k) {
      const auto where = "inputs.measurements[" + std::to_string(k) + "]";
      check(measurements[k].axis, where);
      try {
        cones::ConeMeasurement{axis(measurements[k].axis), measurements[k].theta_deg, measurements[k].sigma_deg}
            .validate();
      } catch (const InvalidArgument& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
    for (size_t k = 0; k < spectra.size(); ++k) {
      const auto where = "inputs.spectra[" + std::to_string(k) + "]";
      check(spectra[k].axis, where);
      for (const auto* p : {&spectra[k].minus, &spectra[k].plus})
        if (!std::filesystem::exists(*p)) throw ConfigError(where + ": file not found: " + *p);
      if (spectra[k].sigma_deg && !(*spectra[k].sigma_deg >= 0.0))
        throw ConfigError(where + ".sigma_deg: must be non-negative");
    }
    if (!subset.empty()) {
      if (subset.size() != 3) throw ConfigError("inputs.subset: must name exactly three axes");
      for (auto l : subset)
        if (!seen.count(l)) throw ConfigError("inputs.subset: " + cones::to_string(l) + " has no input");
      if (std::set<NvLabel>(subset.begin(), subset.end()).size() != 3)
        throw ConfigError("inputs.subset: axes must be distinct");
    }
  }
};

namespace detail {

inline std::string location(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t k = 0; k < byte && k < text.size(); ++k) {
    if (text[k] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [k, v] : obj.items()) {
    (void)v;
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end())
      throw ConfigError((path.empty() ? "" : path + ".") + k + ": unknown key");
  }
}

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline double number(const json& obj, const char* key, const std::string& path, std::optional<double> fallback = {}) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError(join(path, key) + ": required");
  }
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key) + ": expected a number");
  return v.get<double>();
}

inline std::uint64_t unsigned_integer(const json& obj, const char* key, const std::string& path,
                                      std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ConfigError(join(path, key) + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::string string(const json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) throw ConfigError(join(path, key) + ": required");
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(join(path, key) + ": expected a string");
  return v.get<std::string>();
}

inline NvLabel label(const json& obj, const char* key, const std::string& path) {
  const auto s = string(obj, key, path);
  try {
    return cones::parse_label(s);
  } catch (const InvalidArgument& e) {
    throw ConfigError(join(path, key) + ": " + e.what());
  }
}

inline json vec(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace detail

/// Builds a config from parsed JSON. Relative spectrum paths resolve against
/// `base_dir` and are stored absolute.
inline PipelineConfig config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  reject_unknown(j, {"format_version", "constants", "axes", "monte_carlo", "fit", "inputs"}, "");
  PipelineConfig c;
  const auto version = unsigned_integer(j, "format_version", "", kFormatVersion);
  if (version != static_cast<std::uint64_t>(kFormatVersion))
    throw ConfigError("format_version: unsupported version " + std::to_string(version));

  if (j.contains("constants")) {
    const auto& k = j.at("constants");
    reject_unknown(k, {"zfs_D_mhz", "gamma_e_mhz_per_gauss", "hyperfine_A_mhz", "quadrupole_Q_mhz",
                       "gamma_n_mhz_per_gauss"},
                   "constants");
    c.constants.zfs_D = number(k, "zfs_D_mhz", "constants", c.constants.zfs_D);
    c.constants.gamma_e = number(k, "gamma_e_mhz_per_gauss", "constants", c.constants.gamma_e);
    c.constants.hyperfine_A = number(k, "hyperfine_A_mhz", "constants", c.constants.hyperfine_A);
    c.constants.quadrupole_Q = number(k, "quadrupole_Q_mhz", "constants", c.constants.quadrupole_Q);
    c.constants.gamma_n = number(k, "gamma_n_mhz_per_gauss", "constants", c.constants.gamma_n);
  }
  if (j.contains("axes")) {
    const auto& a = j.at("axes");
    reject_unknown(a, {"NV1", "NV2", "NV3", "NV4"}, "axes");
    for (const auto& [name, v] : a.items()) {
      const auto where = "axes." + name;
      if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
        throw ConfigError(where + ": expected [x, y, z]");
      const Eigen::Vector3d d(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
      if (!(d.norm() > 0.0)) throw ConfigError(where + ": zero vector");
      c.axes[static_cast<size_t>(cones::parse_label(name))] = d.normalized();
    }
  }
  if (j.contains("monte_carlo")) {
    const auto& m = j.at("monte_carlo");
    reject_unknown(m, {"n_samples", "seed", "coverage"}, "monte_carlo");
    c.monte_carlo.n_samples = unsigned_integer(m, "n_samples", "monte_carlo", c.monte_carlo.n_samples);
    c.monte_carlo.seed = unsigned_integer(m, "seed", "monte_carlo", c.monte_carlo.seed);
    c.monte_carlo.coverage = number(m, "coverage", "monte_carlo", c.monte_carlo.coverage);
  }
  if (j.contains("fit")) {
    const auto& f = j.at("fit");
    reject_unknown(f, {"n_peaks", "linewidth_init_mhz"}, "fit");
    c.fit.n_peaks = static_cast<int>(unsigned_integer(f, "n_peaks", "fit", 3));
    c.fit.linewidth_init_mhz = number(f, "linewidth_init_mhz", "fit", c.fit.linewidth_init_mhz);
  }
  const json& in = j.contains("inputs") ? j.at("inputs") : json::object();
  reject_unknown(in, {"measurements", "spectra", "subset"}, "inputs");
  if (in.contains("measurements")) {
    const auto& arr = in.at("measurements");
    if (!arr.is_array()) throw ConfigError("inputs.measurements: expected an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const auto where = "inputs.measurements[" + std::to_string(k) + "]";
      reject_unknown(arr[k], {"axis", "theta_deg", "sigma_deg"}, where);
      c.measurements.push_back(
          {label(arr[k], "axis", where), number(arr[k], "theta_deg", where), number(arr[k], "sigma_deg", where)});
    }
  }
  if (in.contains("spectra")) {
    const auto& arr = in.at("spectra");
    if (!arr.is_array()) throw ConfigError("inputs.spectra: expected an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const auto where = "inputs.spectra[" + std::to_string(k) + "]";
      reject_unknown(arr[k], {"axis", "minus", "plus", "sigma_deg"}, where);
      auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        return std::filesystem::absolute(path).lexically_normal().string();
      };
      SpectraInput s{label(arr[k], "axis", where), resolve(string(arr[k], "minus", where)),
                     resolve(string(arr[k], "plus", where)), std::nullopt};
      if (arr[k].contains("sigma_deg")) s.sigma_deg = number(arr[k], "sigma_deg", where);
      c.spectra.push_back(std::move(s));
    }
  }
  if (in.contains("subset")) {
    const auto& arr = in.at("subset");
    if (!arr.is_array()) throw ConfigError("inputs.subset: expected an array of axis labels");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      if (!arr[k].is_string()) throw ConfigError("inputs.subset[" + std::to_string(k) + "]: expected a label");
      try {
        c.subset.push_back(cones::parse_label(arr[k].get<std::string>()));
      } catch (const InvalidArgument& e) {
        throw ConfigError("inputs.subset[" + std::to_string(k) + "]: " + e.what());
      }
    }
  }
  c.validate();
  return c;
}

inline PipelineConfig parse_config(const std::string& text, const std::string& name,
                                   const std::filesystem::path& base_dir = {}) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(name + ":" + detail::location(text, e.byte > 0 ? e.byte - 1 : 0) + ": JSON syntax error");
  }
  try {
    return config_from_json(j, base_dir);
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path, std::filesystem::path(path).parent_path());
}

/// Canonical JSON form; every default is spelled out.
inline json to_json(const PipelineConfig& c) {
  json j;
  j["format_version"] = kFormatVersion;
  j["constants"] = {{"zfs_D_mhz", c.constants.zfs_D},
                    {"gamma_e_mhz_per_gauss", c.constants.gamma_e},
                    {"hyperfine_A_mhz", c.constants.hyperfine_A},
                    {"quadrupole_Q_mhz", c.constants.quadrupole_Q},
                    {"gamma_n_mhz_per_gauss", c.constants.gamma_n}};
  j["axes"] = json::object();
  for (int k = 0; k < 4; ++k)
    j["axes"][cones::to_string(static_cast<NvLabel>(k))] = detail::vec(c.axes[static_cast<size_t>(k)]);
  j["monte_carlo"] = {{"n_samples", c.monte_carlo.n_samples},
                      {"seed", c.monte_carlo.seed},
                      {"coverage", c.monte_carlo.coverage}};
  j["fit"] = {{"n_peaks", c.fit.n_peaks}, {"linewidth_init_mhz", c.fit.linewidth_init_mhz}};
  json in = json::object();
  if (!c.measurements.empty()) {
    in["measurements"] = json::array();
    for (const auto& m : c.measurements)
      in["measurements"].push_back(
          {{"axis", cones::to_string(m.axis)}, {"theta_deg", m.theta_deg}, {"sigma_deg", m.sigma_deg}});
  }
  if (!c.spectra.empty()) {
    in["spectra"] = json::array();
    for (const auto& s : c.spectra) {
      json e = {{"axis", cones::to_string(s.axis)}, {"minus", s.minus}, {"plus", s.plus}};
      if (s.sigma_deg) e["sigma_deg"] = *s.sigma_deg;
      in["spectra"].push_back(e);
    }
  }
  if (!c.subset.empty()) {
    in["subset"] = json::array();
    for (auto l : c.subset) in["subset"].push_back(cones::to_string(l));
  }
  j["inputs"] = in;
  return j;
}

/// FNV-1a over the canonical serialization, as 16 hex digits.
inline std::string config_hash(const PipelineConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct AxisReport {
  NvLabel axis;
  double theta_deg;
  double sigma_deg;
  std::optional<double> field_gauss;  // spectra path only
  std::optional<double> f_minus_mhz;
  std::optional<double> f_plus_mhz;
};

struct EllipseReport {
  mc::EllipseEstimate ellipse;
  std::size_t n_dropped = 0;
};

struct SubsetReport {
  std::string label;
  EllipseReport ellipse;
  std::vector<std::string> warnings;
};

struct ReconstructionReport {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::uint64_t seed = 0;
  json config;
  std::vector<AxisReport> measurements;
  std::vector<NvLabel> subset;
  cones::FieldEstimate field;
  std::vector<SubsetReport> subsets;
  EllipseReport combined;
};

inline json to_json(const EllipseReport& e) {
  const auto& s = e.ellipse.covariance_sigma;
  return {{"mu", {e.ellipse.center_mu.x(), e.ellipse.center_mu.y()}},
          {"sigma", {{s(0, 0), s(0, 1)}, {s(1, 0), s(1, 1)}}},
          {"coverage", e.ellipse.coverage},
          {"n_dropped", e.n_dropped},
          {"n_kept", e.ellipse.n_kept},
          {"n_trimmed", e.ellipse.n_trimmed}};
}

inline EllipseReport ellipse_from_json(const json& j) {
  EllipseReport e;
  e.ellipse.center_mu = {j.at("mu")[0].get<double>(), j.at("mu")[1].get<double>()};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) e.ellipse.covariance_sigma(r, c) = j.at("sigma")[r][c].get<double>();
  e.ellipse.coverage = j.at("coverage").get<double>();
  e.n_dropped = j.at("n_dropped").get<std::size_t>();
  e.ellipse.n_kept = j.at("n_kept").get<std::size_t>();
  e.ellipse.n_trimmed = j.at("n_trimmed").get<std::size_t>();
  return e;
}

inline json to_json(const ReconstructionReport& r) {
  json j;
  j["format_version"] = kFormatVersion;
  j["provenance"] = {{"tool", "nvmag"}, {"tool_version", r.tool_version}, {"config_hash", r.config_hash},
                     {"seed", r.seed}};
  j["config"] = r.config;
  j["measurements"] = json::array();
  for (const auto& m : r.measurements) {
    json e = {{"axis", cones::to_string(m.axis)}, {"theta_deg", m.theta_deg}, {"sigma_deg", m.sigma_deg}};
    if (m.field_gauss) e["field_gauss"] = *m.field_gauss;
    if (m.f_minus_mhz) e["f_minus_mhz"] = *m.f_minus_mhz;
    if (m.f_plus_mhz) e["f_plus_mhz"] = *m.f_plus_mhz;
    j["measurements"].push_back(e);
  }
  j["subset"] = json::array();
  for (auto l : r.subset) j["subset"].push_back(cones::to_string(l));
  json residuals = json::object();
  for (const auto& res : r.field.residuals_deg) residuals[cones::to_string(res.label)] = res.residual_deg;
  j["field_estimate"] = {{"direction", detail::vec(r.field.direction)},
                         {"phi_deg", r.field.phi_deg},
                         {"psi_deg", r.field.psi_deg},
                         {"residuals_deg", residuals},
                         {"signs", r.field.signs},
                         {"sign_search", r.field.sign_search},
                         {"warnings", r.field.warnings}};
  j["subsets"] = json::array();
  for (const auto& s : r.subsets)
    j["subsets"].push_back({{"label", s.label}, {"ellipse", to_json(s.ellipse)}, {"warnings", s.warnings}});
  j["combined"] = to_json(r.combined);
  return j;
}

inline ReconstructionReport report_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kFormatVersion) throw ParseError("report: unsupported format_version");
  ReconstructionReport r;
  const auto& p = j.at("provenance");
  r.tool_version = p.at("tool_version").get<std::string>();
  r.config_hash = p.at("config_hash").get<std::string>();
  r.seed = p.at("seed").get<std::uint64_t>();
  r.config = j.at("config");
  for (const auto& e : j.at("measurements")) {
    AxisReport a{cones::parse_label(e.at("axis").get<std::string>()), e.at("theta_deg").get<double>(),
                 e.at("sigma_deg").get<double>(), std::nullopt, std::nullopt, std::nullopt};
    if (e.contains("field_gauss")) a.field_gauss = e.at("field_gauss").get<double>();
    if (e.contains("f_minus_mhz")) a.f_minus_mhz = e.at("f_minus_mhz").get<double>();
    if (e.contains("f_plus_mhz")) a.f_plus_mhz = e.at("f_plus_mhz").get<double>();
    r.measurements.push_back(a);
  }
  for (const auto& l : j.at("subset")) r.subset.push_back(cones::parse_label(l.get<std::string>()));
  const auto& f = j.at("field_estimate");
  const auto& d = f.at("direction");
  r.field.direction = {d[0].get<double>(), d[1].get<double>(), d[2].get<double>()};
  r.field.phi_deg = f.at("phi_deg").get<double>();
  r.field.psi_deg = f.at("psi_deg").get<double>();
  for (const auto& [k, v] : f.at("residuals_deg").items())
    r.field.residuals_deg.push_back({cones::parse_label(k), v.get<double>()});
  r.field.signs = f.at("signs").get<std::array<int, 3>>();
  r.field.sign_search = f.at("sign_search").get<bool>();
  r.field.warnings = f.at("warnings").get<std::vector<std::string>>();
  for (const auto& s : j.at("subsets"))
    r.subsets.push_back({s.at("label").get<std::string>(), ellipse_from_json(s.at("ellipse")),
                         s.at("warnings").get<std::vector<std::string>>()});
  r.combined = ellipse_from_json(j.at("combined"));
  return r;
}

/// Tilt and its uncertainty from a pair of f-/f+ spectra.
struct SpectraExtraction {
  double f_minus;
  double f_plus;
  double field_gauss;
  double theta_deg;
  double sigma_deg;
};

/// Closed-form extraction corrected for the hyperfine shift of the mI = 0
/// lines: the shift predicted by the nuclear-resolved model at the current
/// estimate is removed and the extraction repeated until it settles.
inline cones::FieldAndTilt extract_mI0_field_and_tilt(double fm, double fp, const PhysicalConstants& c) {
  auto ft = cones::extract_field_and_tilt(fm, fp, c);
  for (int it = 0; it < 50; ++it) {
    const auto eig = spin::eigensolve_hermitian(
        spin::build_full_hamiltonian(spin::FieldVector::from_polar(ft.magnitude, ft.theta_deg), c));
    double full_m = 0.0, full_p = 0.0;
    for (const auto& t : spin::transition_frequencies(eig, spin::TransitionMode::NuclearResolved))
      if (t.m_i == 0) (t.ms < 0 ? full_m : full_p) = t.frequency;
    const auto [em, ep] = spin::electron_transitions(ft.magnitude, ft.theta_deg, c);
    const auto next = cones::extract_field_and_tilt(fm - (full_m - em), fp - (full_p - ep), c);
    const bool done = std::abs(next.theta_deg - ft.theta_deg) < 1e-10 &&
                      std::abs(next.magnitude - ft.magnitude) < 1e-10 * std::max(1.0, ft.magnitude);
    ft = next;
    if (done) break;
  }
  return ft;
}

inline SpectraExtraction extract_from_spectra(const SpectraInput& in, const PipelineConfig& cfg) {
  const auto name = cones::to_string(in.axis);
  spectra::FitOptions opt;
  opt.linewidth_init = cfg.fit.linewidth_init_mhz;
  auto fit_one = [&](const std::string& path, const char* which) {
    try {
      const auto s = spectra::read_spectrum_csv(path);
      const auto peaks = spectra::fit_lorentzian_multiplet(s, cfg.fit.n_peaks, std::nullopt, opt);
      const std::size_t mid = peaks.peaks.size() / 2;
      const double f = cfg.fit.n_peaks == 3 ? spectra::extract_mI0_frequency(peaks) : peaks.peaks[mid].center;
      return std::pair{f, peaks.peaks[mid].center_stderr};
    } catch (const FitError& e) {
      throw FitError(name + " (" + which + "): " + e.what(), e.residual());
    } catch (const ParseError& e) {
      throw ParseError(name + " (" + which + "): " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(name + " (" + which + "): " + e.what());
    }
  };
  const auto [fm, sm] = fit_one(in.minus, "minus");
  const auto [fp, sp] = fit_one(in.plus, "plus");
  if (!(fm < fp))
    throw InconsistentFrequencies(name + ": fitted f- (" + csv::format_double(fm) + " MHz) is not below f+ (" +
                                  csv::format_double(fp) + " MHz)");
  cones::FieldAndTilt ft{};
  try {
    ft = cfg.fit.n_peaks == 3 ? extract_mI0_field_and_tilt(fm, fp, cfg.constants)
                              : cones::extract_field_and_tilt(fm, fp, cfg.constants);
  } catch (const InconsistentFrequencies& e) {
    throw InconsistentFrequencies(name + ": " + e.what());
  }

  double sigma = 0.0;
  if (in.sigma_deg) {
    sigma = *in.sigma_deg;
  } else {
    // central differences of the closed-form tilt in each line position
    const double h = 1e-4;
    auto theta = [&](double a, double b) {
      try {
        return cones::extract_field_and_tilt(a, b, cfg.constants).theta_deg;
      } catch (const Error&) {
        return ft.theta_deg;
      }
    };
    const double dm = (theta(fm + h, fp) - theta(fm - h, fp)) / (2 * h);
    const double dp = (theta(fm, fp + h) - theta(fm, fp - h)) / (2 * h);
    sigma = std::max(kSigmaFloorDeg, std::hypot(dm * sm, dp * sp));
  }
  return {fm, fp, ft.magnitude, ft.theta_deg, sigma};
}

struct ReconstructionResult {
  ReconstructionReport report;
  std::vector<mc::AngleCloud> clouds;
};

inline std::string describe_spherical(const std::vector<Eigen::Vector3d>& dirs) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (const auto& d : dirs) {
    const auto sp = cones::to_spherical(d.normalized());
    if (os.tellp() > 0) os << "; ";
    os << "(phi, psi) = (" << sp.phi_deg << ", " << sp.psi_deg << ") deg";
  }
  return os.str();
}

inline ReconstructionResult run_reconstruct(const PipelineConfig& cfg, unsigned threads = 0) {
  cfg.validate();
  ReconstructionResult out;
  auto& rep = out.report;
  rep.config = to_json(cfg);
  rep.config_hash = config_hash(cfg);
  rep.seed = cfg.monte_carlo.seed;

  std::vector<cones::ConeMeasurement> meas;
  for (const auto& m : cfg.measurements) {
    meas.push_back({cfg.axis(m.axis), m.theta_deg, m.sigma_deg});
    rep.measurements.push_back({m.axis, m.theta_deg, m.sigma_deg, std::nullopt, std::nullopt, std::nullopt});
  }
  for (const auto& s : cfg.spectra) {
    const auto x = extract_from_spectra(s, cfg);
    meas.push_back({cfg.axis(s.axis), x.theta_deg, x.sigma_deg});
    rep.measurements.push_back({s.axis, x.theta_deg, x.sigma_deg, x.field_gauss, x.f_minus, x.f_plus});
  }

  if (meas.size() < 2) throw ConfigError("inputs: need at least three measurements, got " + std::to_string(meas.size()));
  if (meas.size() == 2) {
    const auto roots = cones::reconstruct_pair(meas[0], meas[1]);
    throw AmbiguousSolution("only two axes (" + cones::to_string(meas[0].axis.label) + ", " +
                            cones::to_string(meas[1].axis.label) + "): " + std::to_string(roots.size()) +
                            " candidate orientations " + describe_spherical(roots) +
                            "; a third axis is required");
  }

  std::array<cones::ConeMeasurement, 3> triple;
  if (cfg.subset.empty()) {
    std::copy_n(meas.begin(), 3, triple.begin());
  } else {
    for (size_t k = 0; k < 3; ++k)
      triple[k] = *std::find_if(meas.begin(), meas.end(),
                                [&](const cones::ConeMeasurement& m) { return m.axis.label == cfg.subset[k]; });
  }
  for (const auto& t : triple) rep.subset.push_back(t.axis.label);

  rep.field = cones::reconstruct_triple(triple);
  out.clouds = mc::propagate_subsets(triple, cfg.monte_carlo.n_samples, cfg.monte_carlo.seed, {threads});
  std::size_t dropped = 0;
  for (const auto& c : out.clouds) {
    SubsetReport s{c.subset_label, {mc::enclosing_ellipse(c, cfg.monte_carlo.coverage), c.n_dropped}, c.warnings};
    dropped += c.n_dropped;
    rep.subsets.push_back(std::move(s));
  }
  rep.combined = {mc::combine_subsets(out.clouds, cfg.monte_carlo.coverage), dropped};
  return out;
}

inline void write_cloud_csv(const std::string& path, const mc::AngleCloud& cloud) {
  std::vector<double> phi, psi;
  phi.reserve(cloud.points.size());
  psi.reserve(cloud.points.size());
  for (const auto& p : cloud.points) {
    phi.push_back(p.x());
    psi.push_back(p.y());
  }
  csv::write_two_columns(path, kCloudHeader, phi, psi);
}

inline void print_summary(std::ostream& os, const ReconstructionReport& r) {
  const auto flags = os.flags();
  const auto prec = os.precision(6);
  os.unsetf(std::ios::floatfield);
  for (const auto& m : r.measurements) {
    os << cones::to_string(m.axis) << ": theta = " << m.theta_deg << " +- " << m.sigma_deg << " deg";
    if (m.field_gauss) os << ", |B| = " << *m.field_gauss << " G";
    os << '\n';
  }
  os << "direction: (" << r.field.direction.x() << ", " << r.field.direction.y() << ", " << r.field.direction.z()
     << ")\n";
  os << "phi = " << r.field.phi_deg << " deg, psi = " << r.field.psi_deg << " deg\n";
  for (const auto& w : r.field.warnings) os << "warning: " << w << '\n';
  auto ellipse = [&](const std::string& name, const EllipseReport& e) {
    const auto& s = e.ellipse.covariance_sigma;
    os << name << ": mu = (" << e.ellipse.center_mu.x() << ", " << e.ellipse.center_mu.y() << "), sigma = [["
       << s(0, 0) << ", " << s(0, 1) << "], [" << s(1, 0) << ", " << s(1, 1) << "]] deg^2, dropped " << e.n_dropped
       << '\n';
  };
  for (const auto& s : r.subsets) {
    ellipse(s.label, s.ellipse);
    for (const auto& w : s.warnings) os << "warning: " << w << '\n';
  }
  ellipse("combined", r.combined);
  os.precision(prec);
  os.flags(flags);
}

/// Forward model row for one axis.
struct ForwardRow {
  NvLabel axis;
  double theta_deg;  // folded
  double f_minus;
  double f_plus;
};

inline std::vector<ForwardRow> forward_table(const PipelineConfig& cfg, const Eigen::Vector3d& field_gauss) {
  std::vector<ForwardRow> rows;
  const double mag = field_gauss.norm();
  for (int k = 0; k < 4; ++k) {
    const auto l = static_cast<NvLabel>(k);
    const double theta = mag > 0.0 ? cones::unsigned_tilt_deg(field_gauss, cfg.axes[static_cast<size_t>(k)]) : 0.0;
    const auto [fm, fp] = spin::electron_transitions(mag, theta, cfg.constants);
    rows.push_back({l, theta, fm, fp});
  }
  return rows;
}

/// Nuclear-resolved (f- triplet, f+ triplet) for one axis.
inline std::pair<std::vector<double>, std::vector<double>> forward_triplets(const PipelineConfig& cfg, double mag,
                                                                            double theta_deg) {
  const auto eig =
      spin::eigensolve_hermitian(spin::build_full_hamiltonian(spin::FieldVector::from_polar(mag, theta_deg), cfg.constants));
  const auto t = spin::transition_frequencies(eig, spin::TransitionMode::NuclearResolved);
  std::vector<double> minus, plus;
  for (const auto& x : t) (x.ms < 0 ? minus : plus).push_back(x.frequency);
  return {minus, plus};
}

/// Synthetic spectrum of a triplet: equal-depth lines, +-5 MHz around the
/// middle line in 0.01 MHz steps.
inline spectra::Spectrum triplet_spectrum(const std::vector<double>& lines, double fwhm, double noise_sd,
                                          std::uint64_t seed) {
  std::vector<spectra::Line> ls;
  for (double f : lines) ls.push_back({f, 1.0 / static_cast<double>(lines.size())});
  const double mid = lines[lines.size() / 2];
  const spectra::Grid grid{mid - 5.0, mid + 5.0, 0.01};
  return spectra::simulate_pulsed_odmr(ls, fwhm, grid, noise_sd, seed);
}

}  // namespace nvmag::pipeline
