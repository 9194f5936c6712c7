#pragma once

// Tilt-angle extraction from (f-, f+) and cone-intersection reconstruction of
// the field direction over the four tetrahedral NV axes.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/constants.hpp"
#include "nvmag/csv.hpp"
#include "nvmag/errors.hpp"

namespace nvmag::cones {

using Eigen::Vector3d;

enum class NvLabel { NV1 = 0, NV2 = 1, NV3 = 2, NV4 = 3 };

inline std::string to_string(NvLabel l) { return "NV" + std::to_string(static_cast<int>(l) + 1); }

inline NvLabel parse_label(const std::string& s) {
  if (s == "NV1") return NvLabel::NV1;
  if (s == "NV2") return NvLabel::NV2;
  if (s == "NV3") return NvLabel::NV3;
  if (s == "NV4") return NvLabel::NV4;
  throw InvalidArgument("unknown NV axis label '" + s + "' (expected NV1..NV4)");
}

struct NvAxis {
  NvLabel label;
  Vector3d direction;  // unit

  /// NV1 [1,-1,-1], NV2 [-1,1,-1], NV3 [-1,-1,1], NV4 [1,1,1], normalized.
  static NvAxis of(NvLabel label) {
    static const std::array<Vector3d, 4> dirs{Vector3d(1, -1, -1), Vector3d(-1, 1, -1), Vector3d(-1, -1, 1),
                                              Vector3d(1, 1, 1)};
    return {label, dirs[static_cast<size_t>(label)].normalized()};
  }
};

inline std::array<NvAxis, 4> tetrahedral_axes() {
  return {NvAxis::of(NvLabel::NV1), NvAxis::of(NvLabel::NV2), NvAxis::of(NvLabel::NV3), NvAxis::of(NvLabel::NV4)};
}

struct ConeMeasurement {
  NvAxis axis;
  double theta_deg;  // unsigned tilt in [0, 90]
  double sigma_deg;

  void validate() const {
    if (!(theta_deg >= 0.0 && theta_deg <= 90.0))
      throw InvalidArgument(to_string(axis.label) + ": theta must lie in [0, 90] deg");
    if (!(sigma_deg >= 0.0) || !std::isfinite(sigma_deg))
      throw InvalidArgument(to_string(axis.label) + ": sigma must be non-negative");
  }
};

struct Spherical {
  double phi_deg;  // azimuth, (-180, 180]
  double psi_deg;  // polar angle from +z, [0, 180]
};

inline Spherical to_spherical(const Vector3d& v) {
  const double n = v.norm();
  if (!(std::abs(n - 1.0) <= 1e-9)) throw InvalidArgument("to_spherical: direction is not a unit vector");
  const double rho = std::hypot(v.x(), v.y());
  const double psi = rad2deg(std::atan2(rho, v.z()));
  if (rho == 0.0) return {0.0, psi};
  double phi = rad2deg(std::atan2(v.y(), v.x()));
  if (phi <= -180.0) phi += 360.0;
  return {phi, psi};
}

inline Vector3d from_spherical(double phi_deg, double psi_deg) {
  const double p = deg2rad(phi_deg);
  const double s = deg2rad(psi_deg);
  return {std::sin(s) * std::cos(p), std::sin(s) * std::sin(p), std::cos(s)};
}

/// Unsigned tilt between a direction and an axis, folded into [0, 90] deg.
inline double unsigned_tilt_deg(const Vector3d& dir, const Vector3d& axis) {
  const double c = std::abs(dir.normalized().dot(axis));
  const double s = dir.normalized().cross(axis).norm();
  return rad2deg(std::atan2(s, c));
}

/// Angle between two unit vectors, degrees, stable for tiny angles.
inline double angle_deg(const Vector3d& a, const Vector3d& b) {
  return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

struct FieldAndTilt {
  double magnitude;  // Gauss
  double theta_deg;  // [0, 90]
};

/// Exact inversion of the S = 1 electron spectrum. With lambda0 the ms=0-like
/// level, the three levels are lambda0, lambda0 + f-, lambda0 + f+, and the
/// trace, sum of squares and determinant of D Sz^2 + gamma B.S give |B| and
/// sin^2(theta) in closed form.
inline FieldAndTilt extract_field_and_tilt(double f_minus, double f_plus, const PhysicalConstants& c) {
  if (!(f_minus <= f_plus)) throw InvalidArgument("extract_field_and_tilt: need f_minus <= f_plus");
  const double d = c.zfs_D;
  const double l0 = (2.0 * d - f_plus - f_minus) / 3.0;
  const double g2b2 = (f_plus * f_plus + f_minus * f_minus - f_plus * f_minus - d * d) / 3.0;
  if (!(g2b2 > 0.0))
    throw InconsistentFrequencies("extract_field_and_tilt: (" + csv::format_double(f_minus) + ", " +
                                  csv::format_double(f_plus) + ") MHz implies non-positive field energy");
  double sin2 = -l0 * (l0 + f_plus) * (l0 + f_minus) / (d * g2b2);
  if (sin2 < -1e-9 || sin2 > 1.0 + 1e-9)
    throw InconsistentFrequencies("extract_field_and_tilt: sin^2(theta) = " + csv::format_double(sin2) +
                                  " out of range; peaks likely misidentified");
  sin2 = std::clamp(sin2, 0.0, 1.0);
  const double theta = rad2deg(std::atan2(std::sqrt(sin2), std::sqrt(1.0 - sin2)));
  return {std::sqrt(g2b2) / c.gamma_e, theta};
}

struct Fold {
  double theta_deg;  // cone angle about the original (unsigned) axis
  int sign;          // plane sign: n . B = sign * cos(theta_measured)
};

/// Tilts beyond arccos(1/sqrt 3) are assumed to belong to the antipodal
/// branch: B sits at 180 - theta from n, i.e. at theta from -n.
inline Fold fold_angle(double theta_deg) {
  if (theta_deg <= magic_angle_deg()) return {theta_deg, +1};
  return {180.0 - theta_deg, -1};
}

inline constexpr double kTangencyTolDeg = 1e-6;

/// Intersections of the unit sphere with the planes
///   s_i n_i . B = cos(theta_i),  s_j n_j . B = cos(theta_j).
/// Returns one root at tangency and two otherwise; throws ConesDisjoint when
/// the cones miss each other. Near tangency the two roots are only
/// O(sqrt(gap)) apart, so collapsing them trades accuracy for a definite
/// count; pass tangency_tol_deg = 0 to keep both.
inline std::vector<Vector3d> pairwise_intersection(const ConeMeasurement& mi, const ConeMeasurement& mj,
                                                   std::pair<int, int> signs,
                                                   double tangency_tol_deg = kTangencyTolDeg) {
  if (mi.axis.label == mj.axis.label) throw InvalidArgument("pairwise_intersection: axes must be distinct");
  const Vector3d ei = signs.first * mi.axis.direction;
  const Vector3d ej = signs.second * mj.axis.direction;
  const double ci = std::cos(deg2rad(mi.theta_deg));
  const double cj = std::cos(deg2rad(mj.theta_deg));

  // point on the line of intersection of the two planes, in span{ei, ej}
  const double g = ei.dot(ej);
  const double det = 1.0 - g * g;
  const double a = (ci - g * cj) / det;
  const double b = (cj - g * ci) / det;
  const Vector3d p = a * ei + b * ej;
  const Vector3d dir = ei.cross(ej).normalized();
  const double disc = 1.0 - p.squaredNorm();

  const double gamma = angle_deg(ei, ej);
  const double outer = mi.theta_deg + mj.theta_deg - gamma;
  const double inner = gamma - std::abs(mi.theta_deg - mj.theta_deg);
  if (std::abs(outer) <= tangency_tol_deg || std::abs(inner) <= tangency_tol_deg) return {p.normalized()};
  if (disc < 0.0)
    throw ConesDisjoint("pairwise_intersection: cones about " + to_string(mi.axis.label) + " and " +
                            to_string(mj.axis.label) + " do not intersect (discriminant " +
                            csv::format_double(disc) + ")",
                        disc);
  const double t = std::sqrt(disc);
  return {p + t * dir, p - t * dir};
}

/// Candidate directions from two measurements, using the folding signs
/// (falling back to the opposite relative sign when the folded cones miss).
inline std::vector<Vector3d> reconstruct_pair(const ConeMeasurement& mi, const ConeMeasurement& mj) {
  mi.validate();
  mj.validate();
  const int si = fold_angle(mi.theta_deg).sign;
  const int sj = fold_angle(mj.theta_deg).sign;
  try {
    return pairwise_intersection(mi, mj, {si, sj});
  } catch (const ConesDisjoint&) {
    return pairwise_intersection(mi, mj, {si, -sj});
  }
}

struct AxisResidual {
  NvLabel label;
  double residual_deg;
};

struct FieldEstimate {
  Vector3d direction = Vector3d::UnitZ();
  double phi_deg = 0.0;
  double psi_deg = 0.0;
  std::vector<AxisResidual> residuals_deg;
  std::array<int, 3> signs{1, 1, 1};  // plane sign per measurement, relative to `direction`
  bool sign_search = false;           // folding heuristic was overridden
  std::vector<std::string> warnings;

  double max_residual_deg() const {
    double m = 0.0;
    for (const auto& r : residuals_deg) m = std::max(m, r.residual_deg);
    return m;
  }
};

inline constexpr double kClusterThresholdDeg = 5.0;
/// Tilts within this distance of arccos(1/sqrt 3) on all three axes are
/// treated as the cubic-symmetric degenerate configuration.
inline constexpr double kDegenerateTolDeg = 1e-3;

namespace detail {

struct Cluster {
  Vector3d centroid;
  double spread_deg;  // largest angle between member roots
};

struct Candidate {
  std::array<int, 3> signs;
  Vector3d direction;
  double residual_sq;
  double max_residual;
};

/// Direction on the great circle through ei and ej halfway across the gap
/// between two cones that miss each other.
inline Vector3d closest_approach(const Vector3d& ei, double theta_i, const Vector3d& ej, double theta_j) {
  const Vector3d w = (ej - ej.dot(ei) * ei).normalized();
  const double gamma = angle_deg(ei, ej);
  auto wrap = [](double a) {
    a = std::remainder(a, 360.0);
    return a <= -180.0 ? a + 360.0 : a;
  };
  double best_mid = 0.0;
  double best_gap = 1e9;
  for (const double ai : {theta_i, -theta_i}) {
    for (const double aj : {gamma + theta_j, gamma - theta_j}) {
      const double diff = wrap(aj - ai);
      if (std::abs(diff) < best_gap) {
        best_gap = std::abs(diff);
        best_mid = ai + diff / 2.0;
      }
    }
  }
  const double a = deg2rad(best_mid);
  return std::cos(a) * ei + std::sin(a) * w;
}

inline std::vector<Cluster> cluster_roots(const std::array<std::vector<Vector3d>, 3>& roots) {
  std::vector<Cluster> clusters;
  std::vector<std::array<size_t, 3>> seen;
  for (size_t seed_pair = 0; seed_pair < 3; ++seed_pair) {
    for (size_t r = 0; r < roots[seed_pair].size(); ++r) {
      const Vector3d& seed = roots[seed_pair][r];
      std::array<size_t, 3> pick{};
      bool ok = true;
      for (size_t q = 0; q < 3; ++q) {
        if (q == seed_pair) {
          pick[q] = r;
          continue;
        }
        size_t best = 0;
        double best_angle = 1e9;
        for (size_t k = 0; k < roots[q].size(); ++k) {
          const double ang = angle_deg(seed, roots[q][k]);
          if (ang < best_angle) {
            best_angle = ang;
            best = k;
          }
        }
        if (best_angle > kClusterThresholdDeg) ok = false;
        pick[q] = best;
      }
      if (!ok || std::find(seen.begin(), seen.end(), pick) != seen.end()) continue;
      seen.push_back(pick);
      Vector3d sum = Vector3d::Zero();
      double spread = 0.0;
      for (size_t q = 0; q < 3; ++q) {
        sum += roots[q][pick[q]];
        for (size_t u = q + 1; u < 3; ++u) spread = std::max(spread, angle_deg(roots[q][pick[q]], roots[u][pick[u]]));
      }
      clusters.push_back({sum.normalized(), spread});
    }
  }
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const Cluster& a, const Cluster& b) { return a.spread_deg < b.spread_deg; });
  return clusters;
}

inline constexpr std::array<std::pair<int, int>, 3> kPairs{{{0, 1}, {0, 2}, {1, 2}}};

/// Pairwise solve + clustering for one sign assignment. Pairs whose cones
/// miss by less than the cluster threshold contribute their closest-approach
/// direction; the residual ranking then penalizes the miss.
inline std::vector<Candidate> solve_with_signs(const std::array<ConeMeasurement, 3>& m,
                                               const std::array<int, 3>& signs,
                                               std::vector<Vector3d>* all_candidates = nullptr) {
  std::array<std::vector<Vector3d>, 3> roots;
  for (size_t k = 0; k < 3; ++k) {
    const auto i = static_cast<size_t>(kPairs[k].first);
    const auto j = static_cast<size_t>(kPairs[k].second);
    try {
      roots[k] = pairwise_intersection(m[i], m[j], {signs[i], signs[j]}, 0.0);
    } catch (const ConesDisjoint&) {
      const Vector3d ei = signs[i] * m[i].axis.direction;
      const Vector3d ej = signs[j] * m[j].axis.direction;
      const double gamma = angle_deg(ei, ej);
      const double miss = std::max(gamma - m[i].theta_deg - m[j].theta_deg,
                                   std::abs(m[i].theta_deg - m[j].theta_deg) - gamma);
      if (miss <= kClusterThresholdDeg) roots[k] = {closest_approach(ei, m[i].theta_deg, ej, m[j].theta_deg)};
    }
    if (all_candidates) all_candidates->insert(all_candidates->end(), roots[k].begin(), roots[k].end());
  }
  for (const auto& r : roots)
    if (r.empty()) return {};

  std::vector<Candidate> out;
  for (const auto& cl : cluster_roots(roots)) {
    Candidate c{signs, cl.centroid, 0.0, 0.0};
    for (const auto& mm : m) {
      const double r = std::abs(mm.theta_deg - unsigned_tilt_deg(c.direction, mm.axis.direction));
      c.residual_sq += r * r;
      c.max_residual = std::max(c.max_residual, r);
    }
    out.push_back(c);
  }
  return out;
}

inline std::string describe(const std::vector<Vector3d>& candidates) {
  std::string s;
  for (const auto& c : candidates) {
    if (!s.empty()) s += ", ";
    s += "(" + csv::format_double(c.x()) + ", " + csv::format_double(c.y()) + ", " + csv::format_double(c.z()) + ")";
  }
  return s.empty() ? "none" : s;
}

inline Vector3d nearest_cube_axis(const Vector3d& v) {
  Eigen::Index k = 0;
  v.cwiseAbs().maxCoeff(&k);
  Vector3d out = Vector3d::Zero();
  out(k) = v(k) >= 0.0 ? 1.0 : -1.0;
  return out;
}

}  // namespace detail

/// Canonical antipodal representative: positive projection on the axis with
/// the smallest measured tilt (first such axis on ties).
template <size_t N>
inline Vector3d canonical_direction(const Vector3d& v, const std::array<ConeMeasurement, N>& m) {
  size_t ref = 0;
  for (size_t k = 1; k < N; ++k)
    if (m[k].theta_deg < m[ref].theta_deg) ref = k;
  return v.dot(m[ref].axis.direction) < 0.0 ? Vector3d(-v) : v;
}

inline FieldEstimate finish_estimate(const Vector3d& raw, const std::array<ConeMeasurement, 3>& m) {
  FieldEstimate est;
  est.direction = canonical_direction(raw.normalized(), m);
  const auto sph = to_spherical(est.direction);
  est.phi_deg = sph.phi_deg;
  est.psi_deg = sph.psi_deg;
  for (size_t k = 0; k < 3; ++k) {
    const double dot = est.direction.dot(m[k].axis.direction);
    est.signs[k] = dot < 0.0 ? -1 : 1;
    est.residuals_deg.push_back(
        {m[k].axis.label, std::abs(m[k].theta_deg - unsigned_tilt_deg(est.direction, m[k].axis.direction))});
  }
  return est;
}

/// Field direction from three tilt measurements on distinct axes.
///
/// Every plane-sign assignment (up to a global flip) is solved pairwise and
/// its roots clustered with a 5 deg threshold; the cluster centroid with the
/// smallest total squared tilt residual wins, the folding assignment first on
/// ties.
inline FieldEstimate reconstruct_triple(const std::array<ConeMeasurement, 3>& m) {
  for (const auto& mm : m) mm.validate();
  if (m[0].axis.label == m[1].axis.label || m[0].axis.label == m[2].axis.label ||
      m[1].axis.label == m[2].axis.label)
    throw InvalidArgument("reconstruct_triple: the three measurements need distinct axes");

  const double magic = magic_angle_deg();
  const bool degenerate = std::all_of(m.begin(), m.end(), [&](const ConeMeasurement& mm) {
    return std::abs(mm.theta_deg - magic) <= kDegenerateTolDeg;
  });
  if (degenerate) {
    auto exact = m;
    for (auto& mm : exact) mm.theta_deg = magic;
    static constexpr std::array<std::array<int, 3>, 4> kFixed{{{1, 1, 1}, {1, 1, -1}, {1, -1, 1}, {1, -1, -1}}};
    for (const auto& signs : kFixed) {
      const auto cands = detail::solve_with_signs(exact, signs);
      if (cands.empty()) continue;
      auto est = finish_estimate(detail::nearest_cube_axis(cands.front().direction), m);
      est.warnings.push_back(
          "degenerate: all tilt angles equal arccos(1/sqrt(3)); the six cube-axis directions are "
          "indistinguishable, returning the nearest cube axis");
      return est;
    }
    throw InconsistentCones("reconstruct_triple: degenerate magic-angle input produced no cluster");
  }

  std::array<int, 3> folded{};
  for (size_t k = 0; k < 3; ++k) folded[k] = fold_angle(m[k].theta_deg).sign;
  std::vector<std::array<int, 3>> patterns{folded};
  for (const auto& flip : std::array<std::array<int, 3>, 3>{{{1, 1, -1}, {1, -1, 1}, {1, -1, -1}}})
    patterns.push_back({folded[0] * flip[0], folded[1] * flip[1], folded[2] * flip[2]});

  std::vector<Vector3d> seen;
  std::vector<detail::Candidate> cands;
  for (const auto& signs : patterns) {
    auto c = detail::solve_with_signs(m, signs, &seen);
    cands.insert(cands.end(), c.begin(), c.end());
  }
  if (cands.empty())
    throw InconsistentCones("reconstruct_triple: no consistent intersection for any sign assignment; candidates: " +
                            detail::describe(seen));
  std::stable_sort(cands.begin(), cands.end(),
                   [](const auto& a, const auto& b) { return a.residual_sq < b.residual_sq; });
  const auto& best = cands.front();
  if (best.max_residual > kClusterThresholdDeg)
    throw InconsistentCones("reconstruct_triple: best cluster leaves a " + csv::format_double(best.max_residual) +
                            " deg residual; candidates: " + detail::describe(seen));
  for (size_t k = 1; k < cands.size(); ++k) {
    const auto& other = cands[k];
    const double apart =
        std::min(angle_deg(best.direction, other.direction), angle_deg(best.direction, -other.direction));
    const bool equal_quality = other.residual_sq <= best.residual_sq * (1.0 + 1e-6) + 1e-18;
    if (equal_quality && apart > kClusterThresholdDeg)
      throw AmbiguousSolution("reconstruct_triple: two equally good orientations: " +
                              detail::describe({best.direction, other.direction}));
  }
  auto est = finish_estimate(best.direction, m);
  est.sign_search = best.signs != folded;
  return est;
}

}  // namespace nvmag::cones
