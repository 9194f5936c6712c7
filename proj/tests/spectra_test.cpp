#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "nvmag/spectra.hpp"
#include "nvmag/spin_model.hpp"

namespace nvmag::spectra {
namespace {

// Independent evaluation of 1 - sum d_k (w/2)^2 / ((f - f_k)^2 + (w/2)^2).
double analytic_signal(double f, const std::vector<Line>& lines, double w) {
  double v = 1.0;
  for (const auto& l : lines) v -= l.depth / (1.0 + std::pow(2.0 * (f - l.frequency) / w, 2));
  return v;
}

TEST(Philox, KnownAnswerVectors) {
  // Random123 kat_vectors for philox4x32_10
  const auto zero = Philox4x32::bijection({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(zero, (Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  const auto ones = Philox4x32::bijection({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                          {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(ones, (Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, NormalMoments) {
  const Philox4x32 rng(99);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double x = rng.normal(static_cast<std::uint64_t>(k), 3);
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Simulate, NoLinesIsFlat) {
  const auto s = simulate_pulsed_odmr({}, 0.25, {2860.0, 2880.0, 0.1}, 0.0, 1);
  for (double v : s.signal) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(s.size(), 201u);
}

TEST(Simulate, SingleFullDepthLine) {
  const auto s = simulate_pulsed_odmr({{2870.0, 1.0}}, 0.25, {2860.0, 2880.0, 0.1}, 0.0, 1);
  const auto it = std::min_element(s.signal.begin(), s.signal.end());
  EXPECT_NEAR(*it, 0.0, 1e-12);
  EXPECT_NEAR(s.frequencies[static_cast<size_t>(it - s.signal.begin())], 2870.0, 1e-9);
}

TEST(Simulate, TripletIsResolvedBelowHyperfineSpacing) {
  const double a = 2.16;
  const std::vector<Line> lines{{2870.0 - a, 1.0 / 3}, {2870.0, 1.0 / 3}, {2870.0 + a, 1.0 / 3}};
  const double w = 0.25;
  const auto s = simulate_pulsed_odmr(lines, w, {2865.0, 2875.0, 0.01}, 0.0, 1);
  for (size_t k = 0; k < s.size(); ++k) EXPECT_NEAR(s.signal[k], analytic_signal(s.frequencies[k], lines, w), 1e-14);
  // dips at the centers, maxima between them
  for (double mid : {2870.0 - a / 2, 2870.0 + a / 2}) {
    const double between = analytic_signal(mid, lines, w);
    EXPECT_GT(between, analytic_signal(2870.0, lines, w) + 0.2);
  }
  PeakSet seeds = seed_peaks(s, 3);
  ASSERT_EQ(seeds.peaks.size(), 3u);
  for (size_t k = 0; k < 3; ++k) EXPECT_NEAR(seeds.peaks[k].center, lines[k].frequency, 0.011);
}

TEST(Simulate, DeterministicForSeed) {
  const auto a = simulate_pulsed_odmr({{2870.0, 0.5}}, 0.25, {2860.0, 2880.0, 0.1}, 0.02, 5);
  const auto b = simulate_pulsed_odmr({{2870.0, 0.5}}, 0.25, {2860.0, 2880.0, 0.1}, 0.02, 5);
  const auto c = simulate_pulsed_odmr({{2870.0, 0.5}}, 0.25, {2860.0, 2880.0, 0.1}, 0.02, 6);
  EXPECT_EQ(a.signal, b.signal);
  EXPECT_NE(a.signal, c.signal);
}

TEST(Simulate, RejectsLineOutsideGrid) {
  EXPECT_THROW(simulate_pulsed_odmr({{2890.0, 0.5}}, 0.25, {2860.0, 2880.0, 0.1}, 0.0, 1), InvalidArgument);
  EXPECT_THROW(simulate_pulsed_odmr({{2870.0, 0.5}}, 0.0, {2860.0, 2880.0, 0.1}, 0.0, 1), InvalidArgument);
}

TEST(Normalize, BrightDarkMidpoint) {
  Spectrum raw{{1.0, 2.0, 3.0}, {100.0, 100.0, 100.0}};
  EXPECT_EQ(normalize_rabi_contrast(raw, 100.0, 40.0).signal, (std::vector<double>{1.0, 1.0, 1.0}));
  raw.signal = {40.0, 40.0, 40.0};
  EXPECT_EQ(normalize_rabi_contrast(raw, 100.0, 40.0).signal, (std::vector<double>{0.0, 0.0, 0.0}));
  raw.signal = {70.0, 70.0, 70.0};
  EXPECT_EQ(normalize_rabi_contrast(raw, 100.0, 40.0).signal, (std::vector<double>{0.5, 0.5, 0.5}));
  EXPECT_THROW(normalize_rabi_contrast(raw, 40.0, 40.0), InvalidArgument);
  EXPECT_THROW(normalize_rabi_contrast(raw, 30.0, 40.0), InvalidArgument);
}

TEST(Normalize, UnitLevelsAreIdentity) {
  const auto s = simulate_pulsed_odmr({{2870.0, 0.4}}, 0.5, {2860.0, 2880.0, 0.05}, 0.03, 11);
  EXPECT_EQ(normalize_rabi_contrast(s, 1.0, 0.0).signal, s.signal);
}

TEST(Fit, NoiselessSinglePeak) {
  const auto s = simulate_pulsed_odmr({{2870.0, 0.6}}, 0.5, {2865.0, 2875.0, 0.02}, 0.0, 1);
  const auto fit = fit_lorentzian_multiplet(s, 1);
  ASSERT_EQ(fit.peaks.size(), 1u);
  EXPECT_NEAR(fit.peaks[0].center, 2870.0, 1e-6);
  EXPECT_NEAR(fit.peaks[0].fwhm, 0.5, 1e-6);
  EXPECT_NEAR(fit.peaks[0].depth, 0.6, 1e-6);
  EXPECT_NEAR(fit.baseline, 1.0, 1e-8);
  EXPECT_LE(fit.fit_residual, 1e-8);
}

TEST(Fit, NoiselessHyperfineTriplet) {
  const std::vector<Line> lines{{2867.84, 1.0 / 3}, {2870.0, 1.0 / 3}, {2872.16, 1.0 / 3}};
  const auto s = simulate_pulsed_odmr(lines, 0.25, {2865.0, 2875.0, 0.01}, 0.0, 1);
  const auto fit = fit_lorentzian_multiplet(s, 3);
  ASSERT_EQ(fit.peaks.size(), 3u);
  for (size_t k = 0; k < 3; ++k) EXPECT_NEAR(fit.peaks[k].center, lines[k].frequency, 1e-4);
  EXPECT_LE(fit.fit_residual, 1e-8);
  EXPECT_NEAR(extract_mI0_frequency(fit), 2870.0, 1e-4);
}

TEST(Fit, PerPeakWidths) {
  const std::vector<Line> lines{{2868.0, 0.3}, {2872.0, 0.5}};
  Spectrum s = simulate_pulsed_odmr({lines[0]}, 0.4, {2864.0, 2876.0, 0.01}, 0.0, 1);
  const auto wide = simulate_pulsed_odmr({lines[1]}, 1.2, {2864.0, 2876.0, 0.01}, 0.0, 1);
  for (size_t k = 0; k < s.size(); ++k) s.signal[k] += wide.signal[k] - 1.0;
  FitOptions opt;
  opt.linewidth_init = 0.5;
  const auto fit = fit_lorentzian_multiplet(s, 2, std::nullopt, opt);
  EXPECT_NEAR(fit.peaks[0].fwhm, 0.4, 1e-6);
  EXPECT_NEAR(fit.peaks[1].fwhm, 1.2, 1e-6);
}

TEST(Fit, RandomConfigurationsRoundTrip) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 4;
    const double w = 0.2 + 0.6 * u(rng);
    std::vector<Line> lines;
    double f = 2860.0 + 2.0 * u(rng);
    for (int k = 0; k < n; ++k) {
      lines.push_back({f, 0.2 + 0.6 * u(rng)});
      f += 2.0 * w + 0.5 + 3.0 * u(rng);
    }
    const Grid grid{2857.0, f + 3.0, 0.01};
    const auto s = simulate_pulsed_odmr(lines, w, grid, 0.0, 1);
    FitOptions opt;
    opt.linewidth_init = w;
    const auto fit = fit_lorentzian_multiplet(s, n, std::nullopt, opt);
    ASSERT_EQ(fit.peaks.size(), lines.size());
    for (size_t k = 0; k < lines.size(); ++k) EXPECT_NEAR(fit.peaks[k].center, lines[k].frequency, 1e-4) << trial;
    EXPECT_LE(fit.fit_residual, 1e-8) << trial;
  }
}

TEST(Fit, NoisyTripletCenterScatter) {
  const std::vector<Line> lines{{2867.84, 1.0 / 3}, {2870.0, 1.0 / 3}, {2872.16, 1.0 / 3}};
  std::vector<double> centers;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = simulate_pulsed_odmr(lines, 0.25, {2865.0, 2875.0, 0.01}, 0.02, seed);
    centers.push_back(extract_mI0_frequency(fit_lorentzian_multiplet(s, 3)));
  }
  double mean = 0.0;
  for (double c : centers) mean += c;
  mean /= static_cast<double>(centers.size());
  double var = 0.0;
  for (double c : centers) var += (c - mean) * (c - mean);
  const double sd = std::sqrt(var / static_cast<double>(centers.size() - 1));
  EXPECT_LE(sd, 0.05);
  EXPECT_NEAR(mean, 2870.0, 0.05);
}

TEST(Fit, ErrorPaths) {
  const auto s = simulate_pulsed_odmr({{2870.0, 0.6}}, 0.5, {2865.0, 2875.0, 0.02}, 0.0, 1);
  EXPECT_THROW(fit_lorentzian_multiplet(s, 0), InvalidArgument);
  // a single dip cannot seed four separated peaks
  EXPECT_THROW(fit_lorentzian_multiplet(s, 4), SeedingError);
  const Spectrum tiny{{1, 2, 3, 4, 5}, {1, 1, 0, 1, 1}};
  EXPECT_THROW(fit_lorentzian_multiplet(tiny, 1), InvalidArgument);
}

TEST(ExtractMI0, MiddleOfThree) {
  PeakSet p;
  p.peaks = {{2868.0, 0.25, 0.3}, {2870.16, 0.25, 0.3}, {2872.32, 0.25, 0.3}};
  EXPECT_DOUBLE_EQ(extract_mI0_frequency(p), 2870.16);
  p.peaks = {{2870.0 - 2.16, 0.25, 0.3}, {2870.0, 0.25, 0.3}, {2870.0 + 2.16, 0.25, 0.3}};
  EXPECT_EQ(extract_mI0_frequency(p), 2870.0);
  p.peaks.pop_back();
  EXPECT_THROW(extract_mI0_frequency(p), InvalidArgument);
}

TEST(ExtractMI0, NuclearResolvedModelMatchesElectronOnly) {
  const PhysicalConstants c;
  const auto field = spin::FieldVector::from_polar(230.0, 30.0);
  const auto lines = spin::transition_frequencies(spin::eigensolve_hermitian(spin::build_full_hamiltonian(field, c)),
                                                  spin::TransitionMode::NuclearResolved);
  const auto [fm, fp] = spin::electron_transitions(230.0, 30.0, c);
  for (int branch = 0; branch < 2; ++branch) {
    PeakSet triplet;
    for (int k = 0; k < 3; ++k) triplet.peaks.push_back({lines[static_cast<size_t>(3 * branch + k)].frequency, 0.25, 0.3});
    EXPECT_NEAR(extract_mI0_frequency(triplet), branch == 0 ? fm : fp, 0.1);
  }
}

PolarizationSweep sweep(double phase_deg, double offset = 10.0, double amp = 5.0, double shift = 0.0) {
  PolarizationSweep p;
  for (int k = 0; k < 36; ++k) {
    const double a = shift + 5.0 * k;
    p.waveplate_deg.push_back(a);
    p.counts.push_back(offset + amp * std::pow(std::cos(2.0 * deg2rad(a - shift - phase_deg)), 2));
  }
  return p;
}

TEST(Polarization, PairAAtZeroPhase) {
  const auto fit = fit_polarization_sweep(sweep(0.0, 0.0, 1.0));
  EXPECT_EQ(fit.pair, AxisPair::A);
  EXPECT_NEAR(std::min(fit.phase_deg, 90.0 - fit.phase_deg), 0.0, 1e-9);
}

TEST(Polarization, PairBFortyFiveDegreesAway) {
  const auto fit = fit_polarization_sweep(sweep(45.0));
  EXPECT_EQ(fit.pair, AxisPair::B);
  EXPECT_NEAR(fit.phase_deg, 45.0, 1e-9);
  EXPECT_NEAR(fit.modulation_depth, 0.5, 1e-9);
}

TEST(Polarization, LabelInvariantUnderFullPeriodShift) {
  for (double phase : {3.0, 20.0, 40.0, 50.0, 80.0}) {
    const auto base = fit_polarization_sweep(sweep(phase));
    for (int m = -3; m <= 3; ++m) {
      auto shifted = sweep(phase);
      for (auto& a : shifted.waveplate_deg) a += 90.0 * m;
      EXPECT_EQ(fit_polarization_sweep(shifted).pair, base.pair);
      auto half = sweep(phase);
      for (auto& a : half.waveplate_deg) a += 45.0 * (2 * m + 1);
      EXPECT_NE(fit_polarization_sweep(half).pair, base.pair);
    }
  }
}

TEST(Polarization, ConstantCountsUnclassifiable) {
  EXPECT_THROW(fit_polarization_sweep(sweep(0.0, 10.0, 0.0)), UnclassifiableError);
  PolarizationSweep small;
  small.waveplate_deg = {0, 10, 20};
  small.counts = {1, 2, 3};
  EXPECT_THROW(fit_polarization_sweep(small), InvalidArgument);
}

TEST(SpectrumCsv, RoundTripAndDiagnostics) {
  const auto dir = std::filesystem::temp_directory_path() / "nvmag_spectra_test";
  std::filesystem::create_directories(dir);
  const auto s = simulate_pulsed_odmr({{2870.0, 0.5}}, 0.25, {2869.0, 2871.0, 0.01}, 0.01, 3);
  write_spectrum_csv((dir / "s.csv").string(), s);
  const auto back = read_spectrum_csv((dir / "s.csv").string());
  EXPECT_EQ(back.frequencies, s.frequencies);
  EXPECT_EQ(back.signal, s.signal);

  std::ofstream((dir / "empty.csv").string()).close();
  EXPECT_THROW(read_spectrum_csv((dir / "empty.csv").string()), ParseError);
  {
    std::ofstream bad((dir / "bad.csv").string());
    bad << "frequency_mhz,signal\n2870,1\n2871,abc\n";
  }
  try {
    read_spectrum_csv((dir / "bad.csv").string());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  {
    std::ofstream bad((dir / "header.csv").string());
    bad << "f,s\n2870,1\n";
  }
  EXPECT_THROW(read_spectrum_csv((dir / "header.csv").string()), ParseError);
}

}  // namespace
}  // namespace nvmag::spectra
