#pragma once

#include "odt/core.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <optional>
#include <utility>

namespace odt {

/// Where the nominal crossing sits relative to the two line foci of an astigmatic beam.
enum class FocusPlacement { Sagittal, Midpoint, Tangential };

struct OpticalLayout {
  double focal_length = 60 * units::mm;
  double lens_diameter = 75 * units::mm;
  double numerical_aperture = 0.62;
  double beam_separation_at_lens = 30 * units::mm;
  double crossing_full_angle = 30 * units::deg;
  double window_thickness = 10 * units::mm;
  double window_index = 1.45;
  std::optional<double> window_tilt;  // defaults to half the crossing angle
  double aod_center_freq = 75.0;       // MHz
  double aod_freq_range = 15.0;        // MHz, symmetric
  double aod_full_deflection = 1.4 * units::deg;
  std::array<double, 2> aod_aperture{7.5 * units::mm, 7.5 * units::mm};
  double power_throughput = 0.75;
  FocusPlacement crossing_focus = FocusPlacement::Sagittal;

  double half_angle() const { return 0.5 * crossing_full_angle; }
  double tilt() const { return window_tilt.value_or(half_angle()); }
  /// Deflection angle per MHz of drive offset.
  double angle_per_MHz() const {
    return aod_freq_range > 0 ? aod_full_deflection / aod_freq_range : 0.0;
  }

  void validate() const {
    if (!(focal_length > 0) || !(lens_diameter > 0) || !(beam_separation_at_lens > 0))
      throw DomainError("layout lengths must be positive");
    if (!(numerical_aperture > 0 && numerical_aperture < 1))
      throw DomainError("numerical_aperture must lie in (0, 1)");
    if (!(crossing_full_angle > 0 && crossing_full_angle < units::pi))
      throw DomainError("crossing_full_angle must lie in (0, 180) deg");
    if (!(window_thickness >= 0) || !(window_index >= 1.0))
      throw DomainError("window needs thickness >= 0 and index >= 1");
    if (!(std::abs(tilt()) < 0.5 * units::pi)) throw DomainError("window tilt must be below 90 deg");
    if (!(aod_freq_range >= 0) || !(aod_full_deflection >= 0))
      throw DomainError("AOD range and deflection must be >= 0");
    if (!(aod_aperture[0] > 0 && aod_aperture[1] > 0))
      throw DomainError("AOD aperture must be positive");
    if (!(power_throughput >= 0 && power_throughput <= 1))
      throw DomainError("power_throughput must lie in [0, 1]");
    double half = 0.5 * beam_separation_at_lens / focal_length;
    if (half >= 1) throw DomainError("beam separation exceeds the lens aperture geometry");
    // aplanatic lens: entry height = f sin(u)
    double implied = 2.0 * std::asin(half);
    if (std::abs(implied - crossing_full_angle) > 0.05 * crossing_full_angle)
      throw DomainError("crossing_full_angle inconsistent with beam separation and focal length");
    if (0.5 * beam_separation_at_lens + aod_aperture[0] > 0.5 * lens_diameter)
      throw DomainError("beam separation plus beam size exceeds the lens diameter");
  }
};

struct InputBeam {
  double power = 40.0 / 3.0;  // W before the throughput loss
  double wavelength = 1.064 * units::um;
  double collimated_radius = 1.95 * units::mm;
};

/// Local beam-frame coordinates: x along horizontal, y along vertical, z along the axis.
struct BeamCoords {
  double x, y, z;
};

struct AstigmaticBeam {
  double power = 0;
  double wavelength = 1.064 * units::um;
  double waist_h = 0, waist_v = 0;
  double focus_h = 0, focus_v = 0;  // axial positions relative to origin
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitY();
  Vec3 horizontal = -Vec3::UnitX();  // transverse unit vector in the crossing plane

  /// Right-handed frame: horizontal x vertical = direction.
  Vec3 vertical() const { return direction.cross(horizontal); }
  double rayleigh_h() const { return units::pi * waist_h * waist_h / wavelength; }
  double rayleigh_v() const { return units::pi * waist_v * waist_v / wavelength; }
  double radius_h(double z) const {
    double s = (z - focus_h) / rayleigh_h();
    return waist_h * std::sqrt(1 + s * s);
  }
  double radius_v(double z) const {
    double s = (z - focus_v) / rayleigh_v();
    return waist_v * std::sqrt(1 + s * s);
  }
  BeamCoords local(const Vec3& p) const {
    Vec3 r = p - origin;
    return {r.dot(horizontal), r.dot(vertical()), r.dot(direction)};
  }
  bool stigmatic() const { return waist_h == waist_v && focus_h == focus_v; }

  void validate() const {
    if (!(waist_h > 0 && waist_v > 0)) throw DomainError("beam waists must be positive");
    if (!(wavelength > 0)) throw DomainError("wavelength must be positive");
    if (!(power >= 0)) throw DomainError("beam power must be >= 0");
    if (std::abs(direction.norm() - 1) > 1e-12) throw DomainError("beam direction not unit length");
    if (std::abs(horizontal.norm() - 1) > 1e-12 || std::abs(horizontal.dot(direction)) > 1e-12)
      throw DomainError("beam horizontal axis must be a unit vector normal to the direction");
  }
};

using BeamPair = std::array<AstigmaticBeam, 2>;

namespace detail {
/// Shared intensity kernel. Beyond 90 1/e^2-exponents the value (< 1e-39 of peak) is dropped.
inline double gaussian_intensity(double power, double x, double y, double wh, double wv) {
  double e = 2 * x * x / (wh * wh) + 2 * y * y / (wv * wv);
  if (e > 90) return 0.0;
  return 2 * power / (units::pi * wh * wv) * std::exp(-e);
}
}  // namespace detail

/// 2P/(pi w_h w_v) exp(-2x^2/w_h^2 - 2y^2/w_v^2).
inline double beam_intensity(const AstigmaticBeam& b, const Vec3& p) {
  BeamCoords c = b.local(p);
  return detail::gaussian_intensity(b.power, c.x, c.y, b.radius_h(c.z), b.radius_v(c.z));
}

/// Longitudinal focal shifts of a plane-parallel plate, (sagittal, tangential).
inline std::pair<double, double> plate_focal_shifts(double t, double n, double theta) {
  double st = std::sin(theta) / n;
  double ct = std::sqrt(1 - st * st);
  double c = std::cos(theta);
  double ds = t / c - t / (n * ct);
  double dt = t / c - t * c * c / (n * ct * ct * ct);
  return {ds, dt};
}

/// Separation between the tangential (horizontal) and sagittal (vertical) line foci.
inline double astigmatic_split(const OpticalLayout& layout) {
  auto [ds, dt] = plate_focal_shifts(layout.window_thickness, layout.window_index, layout.tilt());
  return dt - ds;
}

inline AstigmaticBeam focus_input_beam(const OpticalLayout& layout, const InputBeam& in) {
  if (!(in.collimated_radius > 0)) throw DomainError("input beam radius must be positive");
  if (!(in.wavelength > 0)) throw DomainError("input wavelength must be positive");
  if (!(in.power >= 0)) throw DomainError("input power must be >= 0");
  double w0 = layout.focal_length * in.wavelength / (units::pi * in.collimated_radius);
  if (w0 < 0.5 * in.wavelength)
    throw ModelValidityError("focused waist below lambda/2, paraxial model invalid");
  AstigmaticBeam b;
  b.power = in.power * layout.power_throughput;
  b.wavelength = in.wavelength;
  b.waist_h = b.waist_v = w0;
  double split = astigmatic_split(layout);
  switch (layout.crossing_focus) {
    case FocusPlacement::Sagittal: b.focus_v = 0; b.focus_h = split; break;
    case FocusPlacement::Midpoint: b.focus_v = -0.5 * split; b.focus_h = 0.5 * split; break;
    case FocusPlacement::Tangential: b.focus_v = -split; b.focus_h = 0; break;
  }
  return b;
}

/// Nominal axis and horizontal unit vector of beam i (0 or 1). The lens axis is +y, z is up.
inline std::pair<Vec3, Vec3> nominal_axes(const OpticalLayout& layout, int i) {
  double u = layout.half_angle();
  double sx = (i == 0) ? 1.0 : -1.0;
  Vec3 d(sx * std::sin(u), std::cos(u), 0);
  Vec3 h = Vec3::UnitZ().cross(d);
  return {d, h};
}

enum class DisplacementMode { Geometric, Calibrated };

struct DisplacementModel {
  DisplacementMode mode = DisplacementMode::Calibrated;
  std::array<double, 4> um_per_MHz{92.0, 86.0, 92.0, 86.0};  // indexed by Channel
  bool off_axis_correction = true;
  bool window_correction = true;

  static DisplacementModel calibrated(double h, double v) {
    DisplacementModel m;
    m.um_per_MHz = {h, v, h, v};
    return m;
  }
  static DisplacementModel geometric(bool off_axis = true, bool window = true) {
    DisplacementModel m;
    m.mode = DisplacementMode::Geometric;
    m.off_axis_correction = off_axis;
    m.window_correction = window;
    return m;
  }
  void validate() const {
    if (mode == DisplacementMode::Calibrated)
      for (double s : um_per_MHz)
        if (!(s > 0)) throw DomainError("calibration constants must be positive");
  }
};

namespace detail {

inline Vec3 refract(Vec3 d, Vec3 n, double n1, double n2) {
  d.normalize();
  double c1 = -n.dot(d);
  if (c1 < 0) {
    n = -n;
    c1 = -c1;
  }
  double r = n1 / n2;
  double k = 1 - r * r * (1 - c1 * c1);
  return r * d + (r * c1 - std::sqrt(k)) * n;
}

/// Chief ray of beam 0 after lens and window, aimed at `target` in the focal plane.
inline std::pair<Vec3, Vec3> chief_ray(const OpticalLayout& L, const Vec3& target, bool window) {
  double f = L.focal_length;
  Vec3 entry(-f * std::tan(L.half_angle()), -f, 0);
  Vec3 d = (target - entry).normalized();
  if (!window || L.window_thickness == 0) return {entry, d};
  double gap = std::min(5 * units::mm, 0.25 * f);
  double y1 = -gap - L.window_thickness;
  Vec3 p1 = entry + ((y1 - entry.y()) / d.y()) * d;  // plate faces are taken at fixed y
  double a = L.half_angle() - L.tilt();
  Vec3 tilt_normal(std::sin(a), std::cos(a), 0);
  Vec3 d2 = refract(d, tilt_normal, 1.0, L.window_index);
  Vec3 p2 = p1 + (L.window_thickness / d2.y()) * d2;
  Vec3 d3 = refract(d2, tilt_normal, L.window_index, 1.0);
  return {p2, d3};
}

/// Signed displacement of beam 0 along h (horizontal) or v, for deflection theta.
inline double geometric_displacement(const OpticalLayout& L, const DisplacementModel& m,
                                     bool horizontal, double theta) {
  double f = L.focal_length;
  if (!m.off_axis_correction && !m.window_correction) return f * std::tan(theta);
  auto [d0, h0] = nominal_axes(L, 0);
  Vec3 axis = horizontal ? h0 : Vec3::UnitZ();
  // focal-plane (y = 0) direction that moves the beam toward +axis
  Vec3 fp = horizontal ? Vec3(axis.x() < 0 ? -1.0 : 1.0, 0, 0) : Vec3::UnitZ();
  Vec3 target = f * std::tan(theta) * fp;
  if (!m.off_axis_correction) {
    // plate only: lateral shift difference measured in the focal plane
    auto [p, e] = chief_ray(L, target, m.window_correction);
    auto [q, e0] = chief_ray(L, Vec3::Zero(), m.window_correction);
    Vec3 a = p + (-p.y() / e.y()) * e;
    Vec3 b = q + (-q.y() / e0.y()) * e0;
    return (a - b).dot(fp);
  }
  auto [p, e] = chief_ray(L, target, m.window_correction);
  auto [p0, e0] = chief_ray(L, Vec3::Zero(), m.window_correction);
  Vec3 q = p + (-p.dot(d0) / e.dot(d0)) * e;
  Vec3 q0 = p0 + (-p0.dot(d0) / e0.dot(d0)) * e0;
  return (q - q0).dot(axis);
}

}  // namespace detail

/// Displacement (m) in the focal region perpendicular to the beam axis, along beam-frame h or v.
inline double deflection_to_displacement(const OpticalLayout& layout, const DisplacementModel& m,
                                         Channel ch, double delta_freq_MHz) {
  if (!(std::abs(delta_freq_MHz) <= layout.aod_freq_range * (1 + 1e-12)))
    throw DomainError(std::string("frequency offset outside AOD range on channel ") +
                      channel_name(ch));
  if (m.mode == DisplacementMode::Calibrated)
    return m.um_per_MHz[idx(ch)] * delta_freq_MHz * units::um;
  if (delta_freq_MHz == 0) return 0;
  double theta = delta_freq_MHz * layout.angle_per_MHz();
  bool h = is_horizontal(ch);
  // beam 1 is the mirror image of beam 0 under x -> -x, which flips h
  if (h && beam_of(ch) == 1) return -detail::geometric_displacement(layout, m, true, -theta);
  return detail::geometric_displacement(layout, m, h, theta);
}

/// Largest reachable |displacement| on a channel (min over both sweep directions).
inline double channel_reach(const OpticalLayout& layout, const DisplacementModel& m, Channel ch) {
  double r = layout.aod_freq_range;
  return std::min(std::abs(deflection_to_displacement(layout, m, ch, r)),
                  std::abs(deflection_to_displacement(layout, m, ch, -r)));
}

/// Inverse of deflection_to_displacement (MHz).
inline double displacement_to_deflection(const OpticalLayout& layout, const DisplacementModel& m,
                                         Channel ch, double displacement) {
  if (m.mode == DisplacementMode::Calibrated) {
    double f = displacement / (m.um_per_MHz[idx(ch)] * units::um);
    if (!(std::abs(f) <= layout.aod_freq_range * (1 + 1e-12)))
      throw DomainError(std::string("displacement unreachable on channel ") + channel_name(ch));
    return f;
  }
  if (displacement == 0) return 0;
  double r = layout.aod_freq_range;
  double gl = deflection_to_displacement(layout, m, ch, -r);
  double gh = deflection_to_displacement(layout, m, ch, r);
  if (displacement < std::min(gl, gh) || displacement > std::max(gl, gh))
    throw DomainError(std::string("displacement unreachable on channel ") + channel_name(ch));
  double a = -r, b = r;
  bool increasing = gh > gl;
  for (int i = 0; i < 200 && b - a > 1e-13; ++i) {
    double c = 0.5 * (a + b);
    double gc = deflection_to_displacement(layout, m, ch, c);
    if ((gc < displacement) == increasing) a = c; else b = c;
  }
  return 0.5 * (a + b);
}

/// Per-channel displacement offsets (m), indexed by Channel.
using ChannelOffsets = std::array<double, 4>;

/// Offsets that place the crossing of the two beam axes at point p.
inline ChannelOffsets crossing_offsets(const OpticalLayout& layout, const Vec3& p) {
  auto [d0, h0] = nominal_axes(layout, 0);
  auto [d1, h1] = nominal_axes(layout, 1);
  return {p.dot(h0), p.z(), p.dot(h1), p.z()};
}

/// Crossing point for in-plane offsets with common vertical offset.
inline Vec3 crossing_point(const OpticalLayout& layout, double H1, double H2, double V) {
  auto [d0, h0] = nominal_axes(layout, 0);
  auto [d1, h1] = nominal_axes(layout, 1);
  Eigen::Matrix2d A;
  A << h0.x(), h0.y(), h1.x(), h1.y();
  Eigen::Vector2d xy = A.inverse() * Eigen::Vector2d(H1, H2);
  return {xy.x(), xy.y(), V};
}

inline BeamPair build_beamlines(const OpticalLayout& layout, const std::array<InputBeam, 2>& inputs,
                                const ChannelOffsets& offsets,
                                const DisplacementModel& model = {}) {
  layout.validate();
  BeamPair beams;
  for (int i = 0; i < 2; ++i) {
    double ap = std::min(layout.aod_aperture[0], layout.aod_aperture[1]);
    if (inputs[i].collimated_radius > 0.5 * ap * (1 + 1e-12))
      throw DomainError("input beam radius exceeds half the AOD aperture");
    beams[i] = focus_input_beam(layout, inputs[i]);
    auto [d, h] = nominal_axes(layout, i);
    beams[i].direction = d;
    beams[i].horizontal = h;
    Channel ch = i == 0 ? Channel::H1 : Channel::H2;
    Channel cv = i == 0 ? Channel::V1 : Channel::V2;
    for (Channel c : {ch, cv})
      if (std::abs(offsets[idx(c)]) > channel_reach(layout, model, c) * (1 + 1e-9))
        throw DomainError(std::string("offset out of reachable range on channel ") +
                          channel_name(c));
    beams[i].origin = offsets[idx(ch)] * h + offsets[idx(cv)] * beams[i].vertical();
  }
  return beams;
}

/// Shortest distance between two beam axes and the midpoint of the connecting segment.
inline std::pair<double, Vec3> closest_approach(const AstigmaticBeam& a, const AstigmaticBeam& b) {
  Vec3 w = a.origin - b.origin;
  double A = a.direction.dot(a.direction), B = a.direction.dot(b.direction);
  double C = b.direction.dot(b.direction), D = a.direction.dot(w), E = b.direction.dot(w);
  double den = A * C - B * B;
  double s = 0, t = 0;
  if (std::abs(den) < 1e-15) t = E / C;
  else {
    s = (B * E - C * D) / den;
    t = (A * E - B * D) / den;
  }
  Vec3 pa = a.origin + s * a.direction, pb = b.origin + t * b.direction;
  return {(pa - pb).norm(), 0.5 * (pa + pb)};
}

}  // namespace odt
