#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace odt {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Base of all toolkit errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or schema-violating configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input outside an operation's domain (exit code 3).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Parameters that leave the validity range of a physical model (exit code 4).
class ModelValidityError : public Error {
 public:
  using Error::Error;
};

namespace units {
inline constexpr double um = 1e-6;
inline constexpr double mm = 1e-3;
inline constexpr double uK = 1e-6;
inline constexpr double mK = 1e-3;
inline constexpr double ms = 1e-3;
inline constexpr double pi = 3.14159265358979323846;
inline constexpr double deg = pi / 180.0;
/// Atomic unit of polarizability in C m^2 / V.
inline constexpr double au_polarizability = 1.64877727436e-41;
}  // namespace units

struct PhysicalConstants {
  double atom_mass = 86.909180527 * 1.66053906660e-27;  // Rb-87
  double polarizability = 687.0 * units::au_polarizability;
  double vacuum_permittivity = 8.8541878128e-12;
  double speed_of_light = 299792458.0;
  double boltzmann = 1.380649e-23;
  double reduced_planck = 1.054571817e-34;
  double gravity = 9.81;

  /// U = -coefficient * I.
  double light_shift_coefficient() const {
    return polarizability / (2.0 * vacuum_permittivity * speed_of_light);
  }
  double gravity_force() const { return atom_mass * gravity; }

  void validate() const {
    if (!(atom_mass > 0) || !(polarizability > 0) || !(vacuum_permittivity > 0) ||
        !(speed_of_light > 0) || !(boltzmann > 0) || !(reduced_planck > 0))
      throw DomainError("physical constants must be strictly positive");
    if (!(gravity >= 0)) throw DomainError("gravity must be >= 0");
  }
};

enum class Channel { H1 = 0, V1 = 1, H2 = 2, V2 = 3 };
inline constexpr std::array<Channel, 4> kChannels{Channel::H1, Channel::V1, Channel::H2,
                                                  Channel::V2};

inline const char* channel_name(Channel c) {
  switch (c) {
    case Channel::H1: return "H1";
    case Channel::V1: return "V1";
    case Channel::H2: return "H2";
    case Channel::V2: return "V2";
  }
  return "?";
}
inline bool is_horizontal(Channel c) { return c == Channel::H1 || c == Channel::H2; }
inline int beam_of(Channel c) { return (c == Channel::H1 || c == Channel::V1) ? 0 : 1; }
inline std::size_t idx(Channel c) { return static_cast<std::size_t>(c); }

/// Axis-aligned box.
struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& p, double slack = 0.0) const {
    for (int i = 0; i < 3; ++i)
      if (p[i] < lo[i] - slack || p[i] > hi[i] + slack) return false;
    return true;
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 size() const { return hi - lo; }
  Box expanded(double m) const { return {lo.array() - m, hi.array() + m}; }
  /// Distance from p along unit u to the boundary (p inside).
  double exit_distance(const Vec3& p, const Vec3& u) const {
    double t = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      if (u[i] > 1e-15) t = std::min(t, (hi[i] - p[i]) / u[i]);
      if (u[i] < -1e-15) t = std::min(t, (lo[i] - p[i]) / u[i]);
    }
    return std::max(0.0, t);
  }
};

}  // namespace odt
