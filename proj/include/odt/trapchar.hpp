#pragma once

#include "odt/field_io.hpp"
#include "odt/hull.hpp"
#include "odt/potential.hpp"

#include <Eigen/Eigenvalues>

#include <functional>
#include <vector>

namespace odt {

enum class DepthConvention { PeakToMin, EscapeSaddle };

inline const char* convention_name(DepthConvention c) {
  return c == DepthConvention::PeakToMin ? "peak-to-min" : "escape-saddle";
}

struct TrapReport {
  bool valid = false;
  bool saddle = false;
  std::string reason;
  Vec3 minimum_position = Vec3::Zero();  // m
  double minimum_value = 0;              // J
  DepthConvention convention = DepthConvention::PeakToMin;
  double depth = 0;                      // J, per convention
  double depth_peak_to_min = 0;          // J
  double depth_escape_saddle = 0;        // J
  Vec3 escape_direction = Vec3::Zero();
  std::array<double, 3> frequencies{};   // Hz, ascending
  Mat3 axes = Mat3::Identity();          // column i belongs to frequencies[i]
  double mean_frequency = 0;             // geometric mean, Hz
  double hessian_asymmetry = 0;
  int iterations = 0;

  void require_valid() const {
    if (!valid) throw DomainError("trap characterization failed: " + reason);
  }
};

struct CharacterizeOptions {
  double mass = PhysicalConstants{}.atom_mass;
  double fd_step = 10.42e-6 / 50;
  Box domain{Vec3::Constant(-50e-6), Vec3::Constant(50e-6)};
  double gravity_force = 0;  // m g, removed from the rim reference of peak-to-min
  std::vector<Vec3> escape_axes;
  DepthConvention convention = DepthConvention::PeakToMin;
  int max_iterations = 200;
  int ray_samples = 400;
  double ray_resolution = 1.3e-6;  // finest spacing of escape-ray samples
  bool multi_seed_fallback = true;
  int seed_grid = 7;
};

namespace detail {

template <class F>
Vec3 fd_gradient(const F& U, const Vec3& x, double h) {
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    Vec3 a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (U(a) - U(b)) / (2 * h);
  }
  return g;
}

/// Central-difference Hessian, both triangles evaluated independently.
template <class F>
Mat3 fd_hessian(const F& U, const Vec3& x, double h) {
  Mat3 H;
  double f0 = U(x);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) {
        Vec3 a = x, b = x;
        a[i] += h;
        b[i] -= h;
        H(i, i) = (U(a) - 2 * f0 + U(b)) / (h * h);
      } else {
        Vec3 pp = x, pm = x, mp = x, mm = x;
        pp[i] += h; pp[j] += h;
        pm[i] += h; pm[j] -= h;
        mp[i] -= h; mp[j] += h;
        mm[i] -= h; mm[j] -= h;
        H(i, j) = (U(pp) - U(pm) - U(mp) + U(mm)) / (4 * h * h);
      }
    }
  return H;
}

struct DescentResult {
  bool converged = false;
  bool left_domain = false;
  Vec3 x;
  double value;
  int iterations = 0;
};

/// Saddle-free Newton with backtracking; eigenvalues replaced by their magnitudes.
template <class F>
DescentResult descend(const F& U, Vec3 x, const CharacterizeOptions& o) {
  DescentResult r;
  double h = o.fd_step;
  double trust = 0.125 * o.domain.size().maxCoeff();
  double fx = U(x);
  for (int it = 0; it < o.max_iterations; ++it) {
    r.iterations = it + 1;
    Vec3 g = fd_gradient(U, x, h);
    Mat3 H = fd_hessian(U, x, h);
    H = 0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Mat3> es(H);
    Vec3 lam = es.eigenvalues().cwiseAbs();
    double floor = std::max(1e-12 * lam.maxCoeff(), 1e-300);
    Vec3 gl = es.eigenvectors().transpose() * g;
    Vec3 p = -(es.eigenvectors() * gl.cwiseQuotient(lam.cwiseMax(floor)));
    if (!p.allFinite() || p.norm() == 0) {
      r.converged = true;
      break;
    }
    if (p.norm() > trust) p *= trust / p.norm();
    double slope = g.dot(p);
    if (slope > 0) p = -p, slope = -slope;
    double a = 1.0;
    Vec3 xn = x + p;
    double fn = U(xn);
    int bt = 0;
    while (!(fn <= fx + 1e-4 * a * slope) && bt < 50) {
      a *= 0.5;
      xn = x + a * p;
      fn = U(xn);
      ++bt;
    }
    double step = (a * p).norm();
    if (!o.domain.contains(xn)) {
      r.left_domain = true;
      r.x = xn;
      r.value = fn;
      return r;
    }
    if (fn <= fx) {
      x = xn;
      fx = fn;
    }
    if (step < 1e-5 * h || bt >= 50) {
      r.converged = true;
      break;
    }
  }
  r.x = x;
  r.value = fx;
  return r;
}

/// Golden-section maximisation of f on [a, b].
template <class F>
double golden_max(const F& f, double a, double b, int iters = 40) {
  const double g = 0.6180339887498949;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc > fd) {
      b = d; d = c; fd = fc;
      c = b - g * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + g * (b - a); fd = f(d);
    }
  }
  return std::max(fc, fd);
}

}  // namespace detail

template <class F>
TrapReport characterize(const F& U, const Vec3& seed, const CharacterizeOptions& o) {
  TrapReport rep;
  rep.convention = o.convention;
  if (!(o.mass > 0) || !(o.fd_step > 0)) throw DomainError("characterize needs mass and step > 0");
  if (!o.domain.contains(seed)) throw DomainError("seed point outside the search domain");

  detail::DescentResult d = detail::descend(U, seed, o);
  if (!(d.converged && !d.left_domain) && o.multi_seed_fallback) {
    // coarse grid of seeds, lowest values first
    std::vector<std::pair<double, Vec3>> seeds;
    int n = std::max(2, o.seed_grid);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          Vec3 t((i + 0.5) / n, (j + 0.5) / n, (k + 0.5) / n);
          Vec3 p = o.domain.lo + t.cwiseProduct(o.domain.size());
          seeds.emplace_back(U(p), p);
        }
    std::sort(seeds.begin(), seeds.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t s = 0; s < std::min<std::size_t>(8, seeds.size()); ++s) {
      detail::DescentResult t = detail::descend(U, seeds[s].second, o);
      if (t.converged && !t.left_domain) {
        d = t;
        break;
      }
    }
  }
  rep.iterations = d.iterations;
  rep.minimum_position = d.x;
  rep.minimum_value = d.value;
  if (d.left_domain || !d.converged) {
    rep.reason = d.left_domain ? "no minimum in domain (descent left the search box)"
                               : "descent did not converge";
    return rep;
  }
  const Vec3 x = d.x;
  const double h = o.fd_step;
  Mat3 H = detail::fd_hessian(U, x, h);
  double scale = H.cwiseAbs().maxCoeff();
  rep.hessian_asymmetry = scale > 0 ? (H - H.transpose()).cwiseAbs().maxCoeff() / scale : 0;
  if (rep.hessian_asymmetry > 1e-6) {
    rep.reason = "finite-difference Hessian not symmetric";
    return rep;
  }
  H = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> es(H);
  Vec3 lam = es.eigenvalues();
  rep.axes = es.eigenvectors();
  for (int i = 0; i < 3; ++i)
    rep.frequencies[i] = std::sqrt(std::max(0.0, lam[i]) / o.mass) / (2 * units::pi);
  if (lam.minCoeff() <= 0) {
    rep.saddle = true;
    rep.reason = "saddle detected: non-positive Hessian eigenvalue at the stationary point";
    return rep;
  }
  rep.mean_frequency = std::cbrt(rep.frequencies[0] * rep.frequencies[1] * rep.frequencies[2]);

  // escape barriers along principal and beam axes
  std::vector<Vec3> dirs;
  for (int i = 0; i < 3; ++i) {
    dirs.push_back(rep.axes.col(i));
    dirs.push_back(-rep.axes.col(i));
  }
  for (const auto& a : o.escape_axes) {
    dirs.push_back(a.normalized());
    dirs.push_back(-a.normalized());
  }
  const double U0 = d.value;
  const double Fg = o.gravity_force;
  double ref = U0 - Fg * x.z();  // gravity-free reference, raised by rim and ray samples
  double best = std::numeric_limits<double>::infinity();
  for (const auto& u : dirs) {
    double L = o.domain.exit_distance(x, u);
    if (L <= 0) continue;
    int n = std::max(o.ray_samples, static_cast<int>(std::ceil(L / o.ray_resolution)));
    double mx = U0;
    int arg = 0;
    int last = n;
    for (int k = 1; k <= n; ++k) {
      Vec3 p = x + (L * k / n) * u;
      double v = U(p);
      ref = std::max(ref, v - Fg * p.z());
      if (v > mx) mx = v, arg = k;
      if (v < U0 - 1e-9 * std::abs(U0) && arg > 0) {
        last = k;
        break;
      }
    }
    if (arg > 0 && arg < last) {
      double lo = L * (arg - 1) / n, hi = L * (arg + 1) / n;
      mx = std::max(mx, detail::golden_max([&](double s) { return U(Vec3(x + s * u)); }, lo, hi));
    }
    double barrier = mx - U0;
    if (barrier < best) {
      best = barrier;
      rep.escape_direction = u;
    }
  }
  // rim of the domain
  const int m = 12;
  for (int f = 0; f < 6; ++f) {
    int ax = f / 2;
    for (int i = 0; i <= m; ++i)
      for (int j = 0; j <= m; ++j) {
        Vec3 t;
        t[ax] = (f % 2) ? 1.0 : 0.0;
        t[(ax + 1) % 3] = static_cast<double>(i) / m;
        t[(ax + 2) % 3] = static_cast<double>(j) / m;
        Vec3 p = o.domain.lo + t.cwiseProduct(o.domain.size());
        ref = std::max(ref, U(p) - Fg * p.z());
      }
  }
  rep.depth_escape_saddle = std::max(0.0, best);
  rep.depth_peak_to_min = std::max(0.0, ref - (U0 - Fg * x.z()));
  rep.depth = o.convention == DepthConvention::PeakToMin ? rep.depth_peak_to_min
                                                         : rep.depth_escape_saddle;
  rep.valid = true;
  return rep;
}

/// Defaults for a beam potential: step = waist/50, auto-fit domain, beam axes as escape channels.
inline CharacterizeOptions default_options(const TimeAveragedPotential& U,
                                           DepthConvention conv = DepthConvention::PeakToMin,
                                           double step_waists = 0.02, double margin_waists = 4.0) {
  CharacterizeOptions o;
  double w = U.setup().focused_waist();
  o.mass = U.setup().constants.atom_mass;
  o.fd_step = step_waists * w;
  o.domain = auto_region(U, margin_waists);
  o.gravity_force = U.setup().constants.gravity_force();
  o.escape_axes = U.beam_axes();
  o.convention = conv;
  o.ray_resolution = w / 8;
  return o;
}

inline TrapReport characterize(const TimeAveragedPotential& U, const Vec3& seed) {
  return characterize(U, seed, default_options(U));
}

struct ThermoMetrics {
  double atom_number = 0;
  double temperature = 0;  // K
  double psd = 0;
  double truncation_parameter = 0;
};

inline ThermoMetrics thermo_metrics_from(double mean_frequency_Hz, double depth_J, double N,
                                         double T, const PhysicalConstants& k = {}) {
  if (!(T > 0)) throw DomainError("temperature must be positive");
  if (!(N > 0)) throw DomainError("atom number must be positive");
  if (!(mean_frequency_Hz > 0)) throw DomainError("mean trap frequency must be positive");
  double wbar = 2 * units::pi * mean_frequency_Hz;
  double x = k.reduced_planck * wbar / (k.boltzmann * T);
  ThermoMetrics m;
  m.atom_number = N;
  m.temperature = T;
  m.psd = N * x * x * x;
  m.truncation_parameter = depth_J / (k.boltzmann * T);
  return m;
}

inline ThermoMetrics thermo_metrics(const TrapReport& r, double N, double T,
                                    const PhysicalConstants& k = {}) {
  if (!r.valid) throw DomainError("thermo_metrics needs a valid trap report: " + r.reason);
  return thermo_metrics_from(r.mean_frequency, r.depth, N, T, k);
}

struct ReachableVolume {
  double planar_area = 0;    // m^2
  double vertical_span = 0;  // m
  double prism_volume = 0;   // m^3
  double hull_volume = 0;    // m^3
  std::vector<Vec2> planar_hull;   // m
  std::vector<Vec3> hull_points;   // planar hull at the two vertical extremes
  std::size_t enumerated = 0;
};

/// Convex hull of beam-axis intersections over the full four-channel AOD range.
inline ReachableVolume reachable_volume(const OpticalLayout& layout, const DisplacementModel& model,
                                        int grid = 41) {
  layout.validate();
  if (grid < 2) throw DomainError("reachable_volume needs a grid of at least 2");
  double r = layout.aod_freq_range;
  std::vector<double> H1, H2, Vc;
  for (int i = 0; i < grid; ++i) {
    double f = -r + 2 * r * i / (grid - 1);
    H1.push_back(deflection_to_displacement(layout, model, Channel::H1, f));
    H2.push_back(deflection_to_displacement(layout, model, Channel::H2, f));
  }
  // axes intersect only for equal vertical offsets: common range of V1 and V2
  double v1lo = deflection_to_displacement(layout, model, Channel::V1, -r);
  double v1hi = deflection_to_displacement(layout, model, Channel::V1, r);
  double v2lo = deflection_to_displacement(layout, model, Channel::V2, -r);
  double v2hi = deflection_to_displacement(layout, model, Channel::V2, r);
  double vlo = std::max(std::min(v1lo, v1hi), std::min(v2lo, v2hi));
  double vhi = std::min(std::max(v1lo, v1hi), std::max(v2lo, v2hi));
  for (int i = 0; i < grid; ++i) Vc.push_back(vlo + (vhi - vlo) * i / (grid - 1));

  ReachableVolume out;
  std::vector<Vec2> planar;
  std::vector<Vec3> all;
  for (double a : H1)
    for (double b : H2) {
      Vec3 c = crossing_point(layout, a, b, 0.0);
      planar.emplace_back(c.x(), c.y());
    }
  for (double v : Vc)
    for (const auto& p : planar) all.emplace_back(p.x(), p.y(), v);
  out.enumerated = all.size();
  // near-degenerate inputs (zero range) collapse to a point
  double extent = 0;
  for (const auto& p : planar) extent = std::max(extent, p.norm());
  if (extent > 1e-15) {
    out.planar_hull = convex_hull_2d(planar);
    out.planar_area = polygon_area(out.planar_hull);
  } else {
    out.planar_hull = {Vec2::Zero()};
  }
  out.vertical_span = vhi - vlo;
  out.prism_volume = out.planar_area * out.vertical_span;
  for (double v : {vlo, vhi})
    for (const auto& p : out.planar_hull) out.hull_points.emplace_back(p.x(), p.y(), v);
  out.hull_volume = convex_hull_volume(all);
  return out;
}

struct MisalignmentResult {
  double offset = 0;  // m
  double ratio = 0;
  double depth = 0;
  double reference_depth = 0;
  bool trap_lost = false;
  TrapReport report;
};

enum class MisalignAxis { Vertical, Horizontal };

/// Depth of the unmodulated trap with beam 2 displaced perpendicular to its axis, relative to aligned.
inline MisalignmentResult misalignment_sensitivity(const TrapSetup& setup, double offset,
                                                   MisalignAxis axis = MisalignAxis::Vertical,
                                                   DepthConvention conv = DepthConvention::PeakToMin) {
  BeamPair aligned = setup.beams({0, 0, 0, 0});
  auto run = [&](double off) {
    BeamPair b = aligned;
    Vec3 dir = axis == MisalignAxis::Vertical ? b[1].vertical() : b[1].horizontal;
    b[1].origin += off * dir;
    TimeAveragedPotential U(setup, std::vector<std::pair<BeamPair, double>>{{b, 1.0}});
    CharacterizeOptions o = default_options(U, conv);
    double w = setup.focused_waist();
    o.domain = Box{Vec3::Zero(), Vec3::Zero()}.expanded(4 * w + std::abs(off));
    Vec3 seed = closest_approach(b[0], b[1]).second;
    return characterize(U, seed, o);
  };
  MisalignmentResult res;
  res.offset = offset;
  TrapReport ref = run(0.0);
  res.reference_depth = ref.depth;
  res.report = offset == 0 ? ref : run(offset);
  if (!ref.valid || !res.report.valid || !(ref.depth > 0)) {
    res.trap_lost = true;
    res.ratio = 0;
    return res;
  }
  res.depth = res.report.depth;
  res.ratio = offset == 0 ? 1.0 : res.depth / ref.depth;
  return res;
}

inline std::vector<MisalignmentResult> misalignment_sweep(const TrapSetup& setup, double max_offset,
                                                          int steps,
                                                          MisalignAxis axis = MisalignAxis::Vertical) {
  if (steps < 2) throw DomainError("misalignment sweep needs at least 2 steps");
  std::vector<MisalignmentResult> out;
  for (int i = 0; i < steps; ++i) {
    double off = -max_offset + 2 * max_offset * i / (steps - 1);
    if (std::abs(off) < 1e-9 * max_offset) off = 0;
    out.push_back(misalignment_sensitivity(setup, off, axis));
  }
  return out;
}

/// Characterize a sampled field through tricubic interpolation.
inline TrapReport characterize_field(const ScalarField3D& field, const Vec3& seed,
                                     CharacterizeOptions o) {
  FieldInterpolator F(field);
  Box b = F.bounds();
  o.domain = Box{o.domain.lo.cwiseMax(b.lo), o.domain.hi.cwiseMin(b.hi)};
  return characterize(F, seed, o);
}

}  // namespace odt
