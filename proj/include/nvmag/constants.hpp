#pragma once

#include <cmath>
#include <numbers>

#include "nvmag/errors.hpp"

namespace nvmag {

inline constexpr double kDegPerRad = 180.0 / std::numbers::pi;
inline constexpr double kRadPerDeg = std::numbers::pi / 180.0;

inline double deg2rad(double deg) { return deg * kRadPerDeg; }
inline double rad2deg(double rad) { return rad * kDegPerRad; }

/// Angle between a tetrahedral NV axis and any cube axis, arccos(1/sqrt(3)).
inline double magic_angle_deg() { return rad2deg(std::acos(1.0 / std::sqrt(3.0))); }

/// NV ground-state parameters. All rates in MHz; field in Gauss.
///
/// Only the zero-field splitting is a measured value of the setup; the other
/// entries default to common literature values for 14N NV centers and are
/// overridden from the pipeline configuration.
struct PhysicalConstants {
  double zfs_D = 2870.0;
  double gamma_e = 2.8025;        // MHz/G
  double hyperfine_A = -2.16;     // MHz, isotropic
  double quadrupole_Q = -4.96;    // MHz
  double gamma_n = -3.077e-4;     // MHz/G, sign follows the +gamma_n*|B|*Iz term

  void validate() const {
    if (!(zfs_D > 0.0)) throw InvalidArgument("zfs_D must be positive");
    if (!(gamma_e > 0.0)) throw InvalidArgument("gamma_e must be positive");
    if (!std::isfinite(hyperfine_A) || !std::isfinite(quadrupole_Q) || !std::isfinite(gamma_n))
      throw InvalidArgument("hyperfine/quadrupole/nuclear rates must be finite");
  }
};

}  // namespace nvmag
