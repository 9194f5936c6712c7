#pragma once

// Synthetic pulsed-ODMR spectra, Rabi-contrast normalization, multi-Lorentzian
// fitting and photoluminescence polarization sweeps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/constants.hpp"
#include "nvmag/csv.hpp"
#include "nvmag/errors.hpp"
#include "nvmag/rng.hpp"

namespace nvmag::spectra {

inline constexpr std::string_view kSpectrumHeader = "frequency_mhz,signal";
inline constexpr std::string_view kSweepHeader = "waveplate_deg,counts";

struct Spectrum {
  std::vector<double> frequencies;  // MHz, strictly ascending
  std::vector<double> signal;

  size_t size() const { return frequencies.size(); }

  void validate() const {
    if (frequencies.size() != signal.size())
      throw InvalidArgument("spectrum: frequency and signal lengths differ");
    if (frequencies.empty()) throw InvalidArgument("spectrum: empty");
    for (size_t k = 0; k < frequencies.size(); ++k) {
      if (!std::isfinite(frequencies[k]) || !std::isfinite(signal[k]))
        throw InvalidArgument("spectrum: non-finite value at row " + std::to_string(k));
      if (k > 0 && !(frequencies[k] > frequencies[k - 1]))
        throw InvalidArgument("spectrum: frequency grid not strictly ascending at row " + std::to_string(k));
    }
  }
};

struct Line {
  double frequency;  // MHz
  double depth;      // relative contrast
};

struct Grid {
  double start;  // MHz
  double stop;
  double step;

  std::vector<double> points() const {
    if (!(step > 0.0) || !(stop >= start)) throw InvalidArgument("grid: need step > 0 and stop >= start");
    const auto n = static_cast<size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    std::vector<double> f(n);
    for (size_t k = 0; k < n; ++k) f[k] = start + static_cast<double>(k) * step;
    return f;
  }
};

struct Peak {
  double center;        // MHz
  double fwhm;          // MHz
  double depth;
  double center_stderr = 0.0;
};

struct PeakSet {
  std::vector<Peak> peaks;  // sorted by center
  double baseline = 1.0;
  double fit_residual = 0.0;  // RMS
  int iterations = 0;
};

/// Peak-normalized Lorentzian: 1 at the center, 1/2 at +-fwhm/2.
inline double lorentzian(double f, double center, double fwhm) {
  const double hw = 0.5 * fwhm;
  const double d = f - center;
  return hw * hw / (d * d + hw * hw);
}

inline Spectrum simulate_pulsed_odmr(const std::vector<Line>& lines, double linewidth_fwhm, const Grid& grid,
                                     double noise_sd, std::uint64_t seed) {
  if (!(linewidth_fwhm > 0.0)) throw InvalidArgument("simulate_pulsed_odmr: linewidth must be positive");
  if (noise_sd < 0.0) throw InvalidArgument("simulate_pulsed_odmr: negative noise");
  for (const auto& l : lines)
    if (l.frequency < grid.start || l.frequency > grid.stop)
      throw InvalidArgument("simulate_pulsed_odmr: line at " + csv::format_double(l.frequency) +
                            " MHz lies outside the grid");
  Spectrum s;
  s.frequencies = grid.points();
  s.signal.resize(s.frequencies.size());
  const Philox4x32 rng(seed);
  for (size_t k = 0; k < s.frequencies.size(); ++k) {
    double v = 1.0;
    for (const auto& l : lines) v -= l.depth * lorentzian(s.frequencies[k], l.frequency, linewidth_fwhm);
    if (noise_sd > 0.0) v += noise_sd * rng.normal(k, 0);
    s.signal[k] = v;
  }
  return s;
}

/// Maps the dark Rabi level to 0 and the bright level to 1.
inline Spectrum normalize_rabi_contrast(const Spectrum& raw, double bright_level, double dark_level) {
  if (!(bright_level > dark_level))
    throw InvalidArgument("normalize_rabi_contrast: bright level must exceed dark level");
  Spectrum out = raw;
  const double span = bright_level - dark_level;
  for (auto& v : out.signal) v = (v - dark_level) / span;
  return out;
}

struct FitOptions {
  double linewidth_init = 0.25;  // MHz, seed FWHM and minimum seed separation
  int max_iterations = 200;
  double rel_tol = 1e-10;
};

namespace detail {

inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
  const int n = static_cast<int>(v.size());
  const int half = window / 2;
  std::vector<double> out(v.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double s = 0.0;
    for (int k = lo; k <= hi; ++k) s += v[static_cast<size_t>(k)];
    out[static_cast<size_t>(i)] = s / (hi - lo + 1);
  }
  return out;
}

inline double quantile(std::vector<double> v, double q) {
  const auto k = static_cast<size_t>(q * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace detail

/// Seeds for `n_peaks` dips: deepest local minima of the 5-sample moving
/// average, at least one seed linewidth apart.
inline PeakSet seed_peaks(const Spectrum& s, int n_peaks, const FitOptions& opt = {}) {
  const auto smooth = detail::moving_average(s.signal, 5);
  const double base = detail::quantile(s.signal, 0.9);
  std::vector<size_t> minima;
  for (size_t i = 1; i + 1 < smooth.size(); ++i)
    if (smooth[i] < smooth[i - 1] && smooth[i] <= smooth[i + 1]) minima.push_back(i);
  std::stable_sort(minima.begin(), minima.end(), [&](size_t a, size_t b) { return smooth[a] < smooth[b]; });

  PeakSet seed;
  seed.baseline = base;
  std::vector<size_t> chosen;
  for (size_t i : minima) {
    if (static_cast<int>(chosen.size()) == n_peaks) break;
    const bool clear = std::all_of(chosen.begin(), chosen.end(), [&](size_t j) {
      return std::abs(s.frequencies[i] - s.frequencies[j]) >= opt.linewidth_init;
    });
    if (!clear) continue;
    chosen.push_back(i);
    const double depth = std::clamp(base - s.signal[i], 1e-3, 1.5);
    seed.peaks.push_back({s.frequencies[i], opt.linewidth_init, depth});
  }
  if (static_cast<int>(chosen.size()) < n_peaks)
    throw SeedingError("seed_peaks: found " + std::to_string(chosen.size()) + " separated local minima, need " +
                       std::to_string(n_peaks));
  std::sort(seed.peaks.begin(), seed.peaks.end(), [](const Peak& a, const Peak& b) { return a.center < b.center; });
  return seed;
}

/// Levenberg-Marquardt fit of baseline - sum_k depth_k * L(f; center_k, fwhm_k).
inline PeakSet fit_lorentzian_multiplet(const Spectrum& s, int n_peaks,
                                        const std::optional<PeakSet>& initial_guess = std::nullopt,
                                        const FitOptions& opt = {}) {
  if (n_peaks < 1) throw InvalidArgument("fit_lorentzian_multiplet: n_peaks must be >= 1");
  s.validate();
  const auto n_params = static_cast<Eigen::Index>(3 * n_peaks + 1);
  if (static_cast<Eigen::Index>(s.size()) < 5 * n_params)
    throw InvalidArgument("fit_lorentzian_multiplet: need at least " + std::to_string(5 * n_params) +
                          " samples, got " + std::to_string(s.size()));

  const PeakSet seed = initial_guess ? *initial_guess : seed_peaks(s, n_peaks, opt);
  if (static_cast<int>(seed.peaks.size()) != n_peaks)
    throw InvalidArgument("fit_lorentzian_multiplet: initial guess has wrong peak count");

  const auto m = static_cast<Eigen::Index>(s.size());
  Eigen::VectorXd p(n_params);
  p(0) = seed.baseline;
  for (int k = 0; k < n_peaks; ++k) {
    p(1 + 3 * k) = seed.peaks[static_cast<size_t>(k)].center;
    p(2 + 3 * k) = seed.peaks[static_cast<size_t>(k)].fwhm;
    p(3 + 3 * k) = seed.peaks[static_cast<size_t>(k)].depth;
  }

  auto residuals = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const double f = s.frequencies[static_cast<size_t>(i)];
      double v = q(0);
      for (int k = 0; k < n_peaks; ++k) v -= q(3 + 3 * k) * lorentzian(f, q(1 + 3 * k), q(2 + 3 * k));
      r(i) = v - s.signal[static_cast<size_t>(i)];
    }
  };
  auto jacobian = [&](const Eigen::VectorXd& q, Eigen::MatrixXd& j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const double f = s.frequencies[static_cast<size_t>(i)];
      j(i, 0) = 1.0;
      for (int k = 0; k < n_peaks; ++k) {
        const double c = q(1 + 3 * k);
        const double w = q(2 + 3 * k);
        const double d = q(3 + 3 * k);
        const double hw2 = 0.25 * w * w;
        const double x = f - c;
        const double den = x * x + hw2;
        const double lor = hw2 / den;
        j(i, 1 + 3 * k) = -d * 2.0 * hw2 * x / (den * den);
        j(i, 2 + 3 * k) = -d * (0.5 * w * x * x) / (den * den);
        j(i, 3 + 3 * k) = -lor;
      }
    }
  };
  auto valid = [&](const Eigen::VectorXd& q) {
    for (int k = 0; k < n_peaks; ++k)
      if (!(q(2 + 3 * k) > 0.0) || !std::isfinite(q(1 + 3 * k))) return false;
    return true;
  };

  Eigen::VectorXd r(m), r_try(m);
  Eigen::MatrixXd jac(m, n_params);
  residuals(p, r);
  double cost = 0.5 * r.squaredNorm();
  const double cost_floor = 1e-30 * static_cast<double>(m);
  double lambda = 1e-3;
  bool converged = cost <= cost_floor;
  int iter = 0;

  while (!converged && iter < opt.max_iterations) {
    ++iter;
    jacobian(p, jac);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      const Eigen::VectorXd trial = p + step;
      if (step.allFinite() && valid(trial)) {
        residuals(trial, r_try);
        const double trial_cost = 0.5 * r_try.squaredNorm();
        if (trial_cost <= cost) {
          const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
          p = trial;
          r = r_try;
          cost = trial_cost;
          lambda = std::max(lambda / 10.0, 1e-12);
          accepted = true;
          if (rel < opt.rel_tol || cost <= cost_floor) converged = true;
          break;
        }
      }
      lambda *= 10.0;
      // no descent direction left within double precision: stationary point
      if (lambda > 1e16) {
        converged = true;
        break;
      }
    }
  }

  const double rms = std::sqrt(2.0 * cost / static_cast<double>(m));
  if (!converged)
    throw FitError("fit_lorentzian_multiplet: no convergence after " + std::to_string(opt.max_iterations) +
                       " iterations",
                   rms);

  PeakSet out;
  out.baseline = p(0);
  out.fit_residual = rms;
  out.iterations = iter;
  jacobian(p, jac);
  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  const double dof = static_cast<double>(std::max<Eigen::Index>(m - n_params, 1));
  const Eigen::MatrixXd cov = (2.0 * cost / dof) * jtj.ldlt().solve(Eigen::MatrixXd::Identity(n_params, n_params));
  for (int k = 0; k < n_peaks; ++k) {
    const double var = cov(1 + 3 * k, 1 + 3 * k);
    out.peaks.push_back({p(1 + 3 * k), p(2 + 3 * k), p(3 + 3 * k), var > 0.0 ? std::sqrt(var) : 0.0});
  }
  std::sort(out.peaks.begin(), out.peaks.end(), [](const Peak& a, const Peak& b) { return a.center < b.center; });

  const double lo = s.frequencies.front();
  const double hi = s.frequencies.back();
  for (const auto& pk : out.peaks) {
    if (!(pk.fwhm > 0.0) || !(pk.depth > 0.0) || pk.depth > 1.5 || pk.center < lo || pk.center > hi)
      throw FitError("fit_lorentzian_multiplet: fitted peak at " + csv::format_double(pk.center) +
                         " MHz violates peak constraints",
                     rms);
  }
  return out;
}

/// Center of the middle line of an m_I triplet.
inline double extract_mI0_frequency(const PeakSet& triplet) {
  if (triplet.peaks.size() != 3)
    throw InvalidArgument("extract_mI0_frequency: expected 3 peaks, got " + std::to_string(triplet.peaks.size()));
  std::vector<double> c;
  for (const auto& p : triplet.peaks) c.push_back(p.center);
  std::sort(c.begin(), c.end());
  return c[1];
}

struct PolarizationSweep {
  std::vector<double> waveplate_deg;
  std::vector<double> counts;

  void validate() const {
    if (waveplate_deg.size() != counts.size()) throw InvalidArgument("polarization sweep: length mismatch");
    if (waveplate_deg.size() < 8) throw InvalidArgument("polarization sweep: need at least 8 samples");
    const auto [lo, hi] = std::minmax_element(waveplate_deg.begin(), waveplate_deg.end());
    if (*hi - *lo < 90.0) throw InvalidArgument("polarization sweep: must span at least 90 degrees");
  }
};

enum class AxisPair { A, B };

inline const char* to_string(AxisPair p) { return p == AxisPair::A ? "pair-A" : "pair-B"; }

struct PolarizationFit {
  AxisPair pair;
  double phase_deg;         // in [0, 90)
  double modulation_depth;  // c1 / c0
  double offset;            // c0
  double amplitude;         // c1
};

/// Fits counts = c0 + c1 cos^2(2(alpha - alpha0)).
///
/// The two NV pairs seen through a (100) face have dipoles 90 deg apart,
/// i.e. 45 deg apart in half-wave-plate angle. alpha0 is reported modulo the
/// 90 deg model period; the pair label is whichever of `reference_phase_deg`
/// (pair A) or reference + 45 deg (pair B) lies closer.
inline PolarizationFit fit_polarization_sweep(const PolarizationSweep& sweep, double reference_phase_deg = 0.0) {
  sweep.validate();
  const auto n = static_cast<Eigen::Index>(sweep.counts.size());
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = 4.0 * deg2rad(sweep.waveplate_deg[static_cast<size_t>(i)]);
    a(i, 0) = 1.0;
    a(i, 1) = std::cos(x);
    a(i, 2) = std::sin(x);
    y(i) = sweep.counts[static_cast<size_t>(i)];
  }
  const Eigen::Vector3d coef = a.colPivHouseholderQr().solve(y);
  const double half_amp = std::hypot(coef(1), coef(2));
  const double c1 = 2.0 * half_amp;
  const double c0 = coef(0) - half_amp;
  const double depth = c0 > 0.0 ? c1 / c0 : (c1 > 0.0 ? INFINITY : 0.0);
  if (!(depth >= 0.05))
    throw UnclassifiableError("fit_polarization_sweep: modulation depth " + csv::format_double(depth) +
                              " below 0.05; pairs indistinguishable");

  double phase = rad2deg(std::atan2(coef(2), coef(1))) / 4.0;
  phase = std::fmod(phase, 90.0);
  if (phase < 0.0) phase += 90.0;
  if (phase >= 90.0) phase -= 90.0;

  double rel = std::fmod(phase - reference_phase_deg, 90.0);
  if (rel < 0.0) rel += 90.0;
  const double to_a = std::min(rel, 90.0 - rel);
  const double to_b = std::abs(rel - 45.0);
  return {to_a <= to_b ? AxisPair::A : AxisPair::B, phase, depth, c0, c1};
}

inline Spectrum read_spectrum_csv(const std::string& path) {
  auto cols = csv::read_two_columns(path, kSpectrumHeader);
  Spectrum s{std::move(cols.first), std::move(cols.second)};
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(path + ": " + e.what());
  }
  return s;
}

inline void write_spectrum_csv(const std::string& path, const Spectrum& s) {
  csv::write_two_columns(path, kSpectrumHeader, s.frequencies, s.signal);
}

inline PolarizationSweep read_sweep_csv(const std::string& path) {
  auto cols = csv::read_two_columns(path, kSweepHeader);
  return {std::move(cols.first), std::move(cols.second)};
}

}  // namespace nvmag::spectra
