#pragma once

// Monte Carlo propagation of tilt-angle noise into (phi, psi) clouds and
// their 3-sigma enclosing ellipses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/cone_solver.hpp"
#include "nvmag/mvee.hpp"
#include "nvmag/rng.hpp"

namespace nvmag::mc {

using cones::ConeMeasurement;
using Eigen::Matrix2d;
using Eigen::Vector2d;

/// Samples per measurement, indexed [measurement][sample].
using TiltSamples = std::vector<std::vector<double>>;

/// Normal(theta, sigma) draws clamped to [0, 90]. Draw k of measurement i is
/// the Philox output at counter (k, i), independent of n and of threading.
inline TiltSamples sample_tilt_angles(const std::vector<ConeMeasurement>& m, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample_tilt_angles: need at least one sample");
  const Philox4x32 rng(seed);
  TiltSamples out(m.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i].validate();
    for (std::size_t k = 0; k < n; ++k) {
      const double z = rng.normal(k, static_cast<std::uint32_t>(i));
      out[i][k] = std::clamp(m[i].theta_deg + m[i].sigma_deg * z, 0.0, 90.0);
    }
  }
  return out;
}

struct AngleCloud {
  std::string subset_label;     // e.g. "NV1-NV2"
  std::vector<Vector2d> points;  // (phi_deg, psi_deg)
  std::size_t n_dropped = 0;
  std::vector<std::string> warnings;
};

struct PropagationOptions {
  unsigned threads = 0;  // 0: hardware concurrency
};

/// Fraction of dropped samples above which a cloud is flagged.
inline constexpr double kUnstableDropFraction = 0.01;

/// For each axis pair, solves the two-cone system per sample with the plane
/// signs of the deterministic triple solution, keeping the root nearest it.
/// Azimuths are unwrapped onto the branch centered on the deterministic phi.
inline std::vector<AngleCloud> propagate_subsets(const std::array<ConeMeasurement, 3>& m, std::size_t n,
                                                 std::uint64_t seed, const PropagationOptions& opt = {}) {
  const auto det = cones::reconstruct_triple(m);
  const auto samples = sample_tilt_angles({m.begin(), m.end()}, n, seed);

  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, n / 4096)));

  std::vector<AngleCloud> clouds;
  for (const auto& [i, j] : cones::detail::kPairs) {
    const auto a = static_cast<std::size_t>(i);
    const auto b = static_cast<std::size_t>(j);
    std::vector<Vector2d> pts(n);
    std::vector<char> ok(n, 0);

    auto work = [&](std::size_t lo, std::size_t hi) {
      auto mi = m[a];
      auto mj = m[b];
      for (std::size_t k = lo; k < hi; ++k) {
        mi.theta_deg = samples[a][k];
        mj.theta_deg = samples[b][k];
        std::vector<Eigen::Vector3d> roots;
        try {
          roots = cones::pairwise_intersection(mi, mj, {det.signs[a], det.signs[b]}, 0.0);
        } catch (const ConesDisjoint&) {
          continue;
        }
        const auto best = std::min_element(roots.begin(), roots.end(), [&](const auto& x, const auto& y) {
          return (x - det.direction).norm() < (y - det.direction).norm();
        });
        const auto s = cones::to_spherical(best->normalized());
        pts[k] = {det.phi_deg + std::remainder(s.phi_deg - det.phi_deg, 360.0), s.psi_deg};
        ok[k] = 1;
      }
    };
    if (threads <= 1) {
      work(0, n);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t chunk = (n + threads - 1) / threads;
      for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back(work, lo, std::min(n, lo + chunk));
    }

    AngleCloud cloud;
    cloud.subset_label = cones::to_string(m[a].axis.label) + "-" + cones::to_string(m[b].axis.label);
    cloud.points.reserve(n);
    for (std::size_t k = 0; k < n; ++k)
      if (ok[k]) cloud.points.push_back(pts[k]);
    cloud.n_dropped = n - cloud.points.size();
    if (static_cast<double>(cloud.n_dropped) > kUnstableDropFraction * static_cast<double>(n))
      cloud.warnings.push_back("unstable geometry: " + std::to_string(cloud.n_dropped) + " of " + std::to_string(n) +
                               " samples of " + cloud.subset_label + " had disjoint cones");
    clouds.push_back(std::move(cloud));
  }
  return clouds;
}

struct EllipseEstimate {
  Vector2d center_mu;         // (phi_deg, psi_deg)
  Matrix2d covariance_sigma;  // deg^2; the ellipse is the 3-sigma contour
  double coverage = 1.0;
  std::size_t n_kept = 0;
  std::size_t n_trimmed = 0;

  /// (x - mu)^T (9 Sigma)^-1 (x - mu); <= 1 inside the ellipse.
  double level(const Vector2d& x) const {
    const Vector2d d = x - center_mu;
    return d.dot((9.0 * covariance_sigma).inverse() * d);
  }
  /// Semi-axes of the 3-sigma ellipse in degrees, ascending.
  Vector2d semi_axes() const {
    Eigen::SelfAdjointEigenSolver<Matrix2d> es(9.0 * covariance_sigma);
    return es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  }
  double area() const { return std::numbers::pi * 9.0 * std::sqrt(covariance_sigma.determinant()); }
};

/// Number of points the coverage rule discards.
inline std::size_t trim_count(std::size_t n, double coverage) {
  return static_cast<std::size_t>(std::ceil((1.0 - coverage) * static_cast<double>(n) - 1e-9));
}

/// Indices of the points kept after Mahalanobis trimming, in input order.
inline std::vector<std::size_t> coverage_subset(const std::vector<Vector2d>& pts, double coverage) {
  const std::size_t n = pts.size();
  Vector2d mean = Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(n);
  Matrix2d cov = Matrix2d::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(n > 1 ? n - 1 : 1);
  Eigen::SelfAdjointEigenSolver<Matrix2d> es(cov);
  if (!(es.eigenvalues()(0) > 1e-14 * std::max(es.eigenvalues()(1), 1e-300)))
    throw DegenerateEllipse("enclosing ellipse: sample covariance is singular (points collapsed or collinear)");
  const Matrix2d inv = cov.inverse();

  std::vector<double> dist(n);
  for (std::size_t k = 0; k < n; ++k) dist[k] = (pts[k] - mean).dot(inv * (pts[k] - mean));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  order.resize(n - std::min(n, trim_count(n, coverage)));
  std::sort(order.begin(), order.end());
  return order;
}

inline EllipseEstimate enclosing_ellipse(const std::vector<Vector2d>& pts, double coverage = 0.997) {
  if (!(coverage > 0.0 && coverage <= 1.0)) throw InvalidArgument("enclosing_ellipse: coverage must lie in (0, 1]");
  if (pts.size() < 3) throw DegenerateEllipse("enclosing ellipse needs at least 3 points");
  const auto keep = coverage_subset(pts, coverage);
  std::vector<Vector2d> kept;
  kept.reserve(keep.size());
  for (auto k : keep) kept.push_back(pts[k]);
  const auto e = geom::minimum_volume_ellipse(kept);

  EllipseEstimate est;
  est.center_mu = e.center;
  est.covariance_sigma = e.shape.inverse() / 9.0;
  est.covariance_sigma = 0.5 * (est.covariance_sigma + est.covariance_sigma.transpose());
  est.coverage = coverage;
  est.n_kept = kept.size();
  est.n_trimmed = pts.size() - kept.size();
  return est;
}

inline EllipseEstimate enclosing_ellipse(const AngleCloud& cloud, double coverage = 0.997) {
  return enclosing_ellipse(cloud.points, coverage);
}

/// Enclosing ellipse of the union of all subset clouds.
inline EllipseEstimate combine_subsets(const std::vector<AngleCloud>& clouds, double coverage = 0.997) {
  std::vector<Vector2d> all;
  for (const auto& c : clouds) all.insert(all.end(), c.points.begin(), c.points.end());
  return enclosing_ellipse(all, coverage);
}

/// Bivariate normal density with the ellipse's mean and covariance.
inline double bivariate_pdf(const Vector2d& x, const EllipseEstimate& est) {
  const Eigen::LLT<Matrix2d> llt(est.covariance_sigma);
  if (llt.info() != Eigen::Success || !(est.covariance_sigma.determinant() > 0.0))
    throw InvalidArgument("bivariate_pdf: covariance is not positive definite");
  const Vector2d d = x - est.center_mu;
  const double q = d.dot(llt.solve(d));
  return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(est.covariance_sigma.determinant()));
}

}  // namespace nvmag::mc
