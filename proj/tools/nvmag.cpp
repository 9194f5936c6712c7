// nvmag: field-orientation reconstruction from NV-center ODMR data.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nvmag/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nvmag;
using pipeline::json;

namespace {

pipeline::PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? pipeline::PipelineConfig{} : pipeline::load_config(path);
}

Eigen::Vector3d parse_vector(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(csv::parse_number(item, "--vector"));
  if (v.size() != 3) throw InvalidArgument("--vector: expected x,y,z");
  return {v[0], v[1], v[2]};
}

spectra::Line parse_line(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) return {csv::parse_number(s, "--line"), 1.0};
  return {csv::parse_number(std::string_view(s).substr(0, colon), "--line"),
          csv::parse_number(std::string_view(s).substr(colon + 1), "--line")};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

struct ForwardArgs {
  std::string config;
  double field_gauss = 230.0;
  double phi = 0.0;
  double psi = 0.0;
  std::string vector;
  std::string spectra_out;
  double noise = 0.0;
  std::uint64_t seed = 0;
  bool as_json = false;
};

int cmd_forward(const ForwardArgs& a) {
  auto cfg = config_or_default(a.config);
  const Eigen::Vector3d b =
      a.vector.empty() ? Eigen::Vector3d(a.field_gauss * cones::from_spherical(a.phi, a.psi)) : parse_vector(a.vector);
  const auto rows = pipeline::forward_table(cfg, b);

  if (a.as_json) {
    json j = {{"format_version", pipeline::kFormatVersion}, {"field_gauss", {b.x(), b.y(), b.z()}}, {"axes", json::array()}};
    for (const auto& r : rows)
      j["axes"].push_back({{"axis", cones::to_string(r.axis)},
                           {"theta_deg", r.theta_deg},
                           {"f_minus_mhz", r.f_minus},
                           {"f_plus_mhz", r.f_plus}});
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << std::setprecision(6) << "axis  theta_deg  f_minus_mhz  f_plus_mhz\n";
    for (const auto& r : rows)
      std::cout << cones::to_string(r.axis) << "  " << r.theta_deg << "  " << r.f_minus << "  " << r.f_plus << '\n';
  }

  if (!a.spectra_out.empty()) {
    fs::create_directories(a.spectra_out);
    json inputs = json::array();
    for (const auto& r : rows) {
      const auto [minus, plus] = pipeline::forward_triplets(cfg, b.norm(), r.theta_deg);
      const auto name = cones::to_string(r.axis);
      const auto idx = static_cast<std::uint64_t>(r.axis);
      spectra::write_spectrum_csv((fs::path(a.spectra_out) / (name + "_minus.csv")).string(),
                                  pipeline::triplet_spectrum(minus, cfg.fit.linewidth_init_mhz, a.noise, a.seed + 2 * idx));
      spectra::write_spectrum_csv((fs::path(a.spectra_out) / (name + "_plus.csv")).string(),
                                  pipeline::triplet_spectrum(plus, cfg.fit.linewidth_init_mhz, a.noise, a.seed + 2 * idx + 1));
      inputs.push_back({{"axis", name}, {"minus", name + "_minus.csv"}, {"plus", name + "_plus.csv"}});
    }
    // A ready-to-run reconstruction config next to the spectra.
    json c = pipeline::to_json(cfg);
    c["inputs"] = {{"spectra", inputs}};
    write_json((fs::path(a.spectra_out) / "config.json").string(), c);
  }
  return pipeline::kOk;
}

struct FitArgs {
  std::string config;
  std::string spectrum;
  int peaks = 3;
  std::optional<double> linewidth;
};

int cmd_fit(const FitArgs& a) {
  const auto cfg = config_or_default(a.config);
  spectra::FitOptions opt;
  opt.linewidth_init = a.linewidth.value_or(cfg.fit.linewidth_init_mhz);
  const auto s = spectra::read_spectrum_csv(a.spectrum);
  const auto p = spectra::fit_lorentzian_multiplet(s, a.peaks, std::nullopt, opt);
  json j = {{"format_version", pipeline::kFormatVersion},
            {"file", a.spectrum},
            {"baseline", p.baseline},
            {"fit_residual", p.fit_residual},
            {"iterations", p.iterations},
            {"peaks", json::array()}};
  for (const auto& k : p.peaks)
    j["peaks"].push_back({{"center_mhz", k.center},
                          {"center_stderr_mhz", k.center_stderr},
                          {"fwhm_mhz", k.fwhm},
                          {"depth", k.depth}});
  if (a.peaks == 3) j["mI0_frequency_mhz"] = spectra::extract_mI0_frequency(p);
  std::cout << j.dump(2) << '\n';
  return pipeline::kOk;
}

struct ReconstructArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> samples;
  std::optional<double> coverage;
  std::string out;
  unsigned threads = 0;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  auto cfg = pipeline::load_config(a.config);
  if (a.seed) cfg.monte_carlo.seed = *a.seed;
  if (a.samples) cfg.monte_carlo.n_samples = *a.samples;
  if (a.coverage) cfg.monte_carlo.coverage = *a.coverage;
  const auto result = pipeline::run_reconstruct(cfg, a.threads);
  const auto j = pipeline::to_json(result.report);
  if (a.out.empty()) {
    std::cout << j.dump(2) << '\n';
    return pipeline::kOk;
  }
  fs::create_directories(a.out);
  write_json((fs::path(a.out) / "report.json").string(), j);
  for (const auto& c : result.clouds)
    pipeline::write_cloud_csv((fs::path(a.out) / ("cloud_" + c.subset_label + ".csv")).string(), c);
  pipeline::print_summary(std::cout, result.report);
  return pipeline::kOk;
}

struct SimulateArgs {
  std::string config;
  std::vector<std::string> lines;
  std::optional<double> field_gauss;
  double theta = 0.0;
  std::string transition = "minus";
  double fwhm = 0.25;
  std::optional<double> start, stop;
  double step = 0.01;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  const auto cfg = config_or_default(a.config);
  std::vector<spectra::Line> lines;
  for (const auto& l : a.lines) lines.push_back(parse_line(l));
  if (a.field_gauss) {
    const auto [minus, plus] = pipeline::forward_triplets(cfg, *a.field_gauss, a.theta);
    for (double f : a.transition == "plus" ? plus : minus) lines.push_back({f, 1.0 / 3.0});
  }
  if (lines.empty() && !(a.start && a.stop)) throw InvalidArgument("simulate: give --line, --field-gauss or a grid");
  double lo = 1e300, hi = -1e300;
  for (const auto& l : lines) {
    lo = std::min(lo, l.frequency);
    hi = std::max(hi, l.frequency);
  }
  const spectra::Grid grid{a.start.value_or(lo - 5.0), a.stop.value_or(hi + 5.0), a.step};
  const auto s = spectra::simulate_pulsed_odmr(lines, a.fwhm, grid, a.noise, a.seed);
  if (a.out.empty())
    csv::write_two_columns(std::cout, spectra::kSpectrumHeader, s.frequencies, s.signal);
  else
    spectra::write_spectrum_csv(a.out, s);
  return pipeline::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vector magnetometry with NV centers: forward model, ODMR fitting, field reconstruction"};
  app.set_version_flag("--version", std::string("nvmag ") + pipeline::kToolVersion);
  app.require_subcommand(1);

  ForwardArgs fwd;
  auto* f = app.add_subcommand("forward", "Transition table (and optional synthetic spectra) for a lab-frame field");
  f->add_option("--config", fwd.config, "Config JSON (constants, axes, fit linewidth)")->check(CLI::ExistingFile);
  f->add_option("--field-gauss", fwd.field_gauss, "Field magnitude in Gauss")->capture_default_str();
  f->add_option("--phi", fwd.phi, "Azimuth in degrees");
  f->add_option("--psi", fwd.psi, "Polar angle from +z in degrees");
  f->add_option("--vector", fwd.vector, "Field as x,y,z in Gauss (overrides the polar options)");
  f->add_option("--spectra-out", fwd.spectra_out, "Write NVi_minus/plus.csv and config.json to this directory");
  f->add_option("--noise", fwd.noise, "Gaussian noise sd for the synthetic spectra");
  f->add_option("--seed", fwd.seed, "Noise seed");
  f->add_flag("--json", fwd.as_json, "Print the table as JSON");

  FitArgs fit;
  auto* t = app.add_subcommand("fit", "Fit a Lorentzian multiplet to a spectrum CSV");
  t->add_option("spectrum", fit.spectrum, "CSV with header frequency_mhz,signal")->required();
  t->add_option("--peaks", fit.peaks, "Number of peaks")->capture_default_str();
  t->add_option("--linewidth", fit.linewidth, "Initial FWHM in MHz");
  t->add_option("--config", fit.config, "Config JSON")->check(CLI::ExistingFile);

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "Full pipeline: extraction, reconstruction, Monte Carlo, ellipses");
  r->add_option("--config", rec.config, "Config JSON")->required()->check(CLI::ExistingFile);
  r->add_option("--seed", rec.seed, "Monte Carlo seed (overrides the config)");
  r->add_option("--samples", rec.samples, "Monte Carlo samples (overrides the config)");
  r->add_option("--coverage", rec.coverage, "Ellipse coverage fraction (overrides the config)");
  r->add_option("--out", rec.out, "Output directory for report.json and cloud CSVs (default: JSON to stdout)");
  r->add_option("--threads", rec.threads, "Worker threads, 0 = all cores (does not change results)");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Synthetic pulsed-ODMR spectrum");
  s->add_option("--line", sim.lines, "Line as f_mhz[:depth], repeatable");
  s->add_option("--field-gauss", sim.field_gauss, "Add the hyperfine triplet for this field magnitude");
  s->add_option("--theta", sim.theta, "Tilt of that field from the NV axis, degrees");
  s->add_option("--transition", sim.transition, "Triplet to simulate")->check(CLI::IsMember({"minus", "plus"}));
  s->add_option("--fwhm", sim.fwhm, "Line FWHM in MHz")->capture_default_str();
  s->add_option("--start", sim.start, "Grid start, MHz");
  s->add_option("--stop", sim.stop, "Grid stop, MHz");
  s->add_option("--step", sim.step, "Grid step, MHz")->capture_default_str();
  s->add_option("--noise", sim.noise, "Gaussian noise sd");
  s->add_option("--seed", sim.seed, "Noise seed");
  s->add_option("--out", sim.out, "Output CSV (default: stdout)");
  s->add_option("--config", sim.config, "Config JSON (constants)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pipeline::kUsage;
  }

  try {
    if (*f) return cmd_forward(fwd);
    if (*t) return cmd_fit(fit);
    if (*r) return cmd_reconstruct(rec);
    if (*s) return cmd_simulate(sim);
  } catch (const std::exception& e) {
    std::cerr << "nvmag: error: " << e.what() << '\n';
    return pipeline::exit_code_for(e);
  }
  return pipeline::kUsage;
}
