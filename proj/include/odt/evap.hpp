#pragma once

#include "odt/painting.hpp"

#include <boost/numeric/odeint.hpp>
#include <unsupported/Eigen/LevenbergMarquardt>

namespace odt {

// ---------------------------------------------------------------- schedule

struct PowerLaw {
  enum Kind { Constant, Exponential } kind = Constant;
  double p0 = 0, p1 = 0, duration = 1;  // W, W, s

  double tau() const { return kind == Exponential ? duration / std::log(p0 / p1) : 0.0; }
  double at(double t) const {
    if (kind == Constant) return p0;
    if (t >= duration) return p1;
    return p0 * std::exp(-t / tau());
  }
};

/// Exponential approach to a1 with time constant tau; a linear tail over the
/// last 5% of the segment lands exactly on a1.
struct AmplitudeLaw {
  enum Kind { Constant, ExponentialFloor } kind = Constant;
  double a0 = 0, a1 = 0, duration = 1, tau = 0.2;
  static constexpr double tail_fraction = 0.05;

  double at(double t) const {
    if (kind == Constant || a0 == a1) return a0;
    if (t >= duration) return a1;
    double ts = (1 - tail_fraction) * duration;
    auto ex = [&](double s) { return a1 + (a0 - a1) * std::exp(-s / tau); };
    if (t <= ts) return ex(t);
    double u = (t - ts) / (duration - ts);
    return std::lerp(ex(ts), a1, u);
  }
};

struct RampSegment {
  std::string phase;
  double start = 0, end = 0;
  PowerLaw power;
  AmplitudeLaw amplitude;
  double power_offset = 0, amplitude_offset = 0;  // law time at segment start
  bool two_dimensional = false;
};

struct RampSchedule {
  std::vector<RampSegment> segments;

  double total_duration() const { return segments.empty() ? 0.0 : segments.back().end; }
  const RampSegment& segment_at(double t) const {
    if (segments.empty()) throw DomainError("empty schedule");
    for (const auto& s : segments)
      if (t < s.end) return s;
    return segments.back();
  }
  double power(double t) const {
    const auto& s = segment_at(t);
    return s.power.at(t - s.start + s.power_offset);
  }
  double amplitude(double t) const {
    const auto& s = segment_at(t);
    return s.amplitude.at(t - s.start + s.amplitude_offset);
  }
};

struct ScheduleParams {
  double initial_power = 10.0;  // W per beam at the atoms
  double final_power = 0.04;
  double power_duration = 1.0;
  double initial_amplitude = 460e-6;  // m, per-beam displacement
  double final_amplitude = 0;
  double amplitude_duration = 0.2;
  double amplitude_tau = 0.04;
  double hold_duration = 0.1;
  double hold_power_factor = 1.2;
  double reopen_amplitude = 140e-6;
  double reopen_power = 1.0;
  double reopen_duration = 0.05;
  bool reopen_two_dimensional = true;
};

inline RampSchedule build_schedule(const ScheduleParams& p) {
  if (!(p.initial_power > 0 && p.final_power > 0 && p.reopen_power > 0))
    throw DomainError("schedule powers must be positive");
  if (!(p.final_power < p.initial_power))
    throw DomainError("evaporation power ramp must decrease (final_power < initial_power)");
  if (!(p.power_duration > 0 && p.amplitude_duration > 0 && p.amplitude_tau > 0))
    throw DomainError("schedule durations must be positive");
  if (!(p.hold_duration >= 0 && p.reopen_duration >= 0 && p.hold_power_factor > 0))
    throw DomainError("hold/reopen parameters must be non-negative");
  if (!(p.initial_amplitude >= 0 && p.final_amplitude >= 0 && p.reopen_amplitude >= 0))
    throw DomainError("amplitudes must be >= 0");
  if (p.amplitude_duration > p.power_duration)
    throw DomainError("amplitude ramp must end within the power ramp");
  RampSchedule s;
  PowerLaw P{PowerLaw::Exponential, p.initial_power, p.final_power, p.power_duration};
  AmplitudeLaw A{AmplitudeLaw::ExponentialFloor, p.initial_amplitude, p.final_amplitude,
                 p.amplitude_duration, p.amplitude_tau};
  AmplitudeLaw A_end{AmplitudeLaw::Constant, p.final_amplitude, p.final_amplitude, 1, 1};
  s.segments.push_back({"evaporation", 0, p.amplitude_duration, P, A, 0, 0, false});
  if (p.power_duration > p.amplitude_duration)
    s.segments.push_back({"evaporation", p.amplitude_duration, p.power_duration, P, A_end,
                          p.amplitude_duration, 0, false});
  double t = p.power_duration;
  if (p.hold_duration > 0) {
    PowerLaw H{PowerLaw::Constant, p.hold_power_factor * p.final_power, 0, 1};
    s.segments.push_back({"hold", t, t + p.hold_duration, H, A_end, 0, 0, false});
    t += p.hold_duration;
  }
  if (p.reopen_duration > 0) {
    PowerLaw R{PowerLaw::Constant, p.reopen_power, 0, 1};
    AmplitudeLaw RA{AmplitudeLaw::Constant, p.reopen_amplitude, p.reopen_amplitude, 1, 1};
    s.segments.push_back({"reopen", t, t + p.reopen_duration, R, RA, 0, 0, p.reopen_two_dimensional});
  }
  return s;
}

// ---------------------------------------------------------------- timeline

struct TimelineRow {
  double time = 0;
  std::string phase;
  double power = 0, amplitude = 0;
  bool two_dimensional = false;
  bool valid = false;
  std::string reason;
  double depth = 0;  // J
  std::array<double, 3> frequencies{};
  double mean_frequency = 0;
  Vec3 minimum = Vec3::Zero();
};

struct TimelineOptions {
  DepthConvention convention = DepthConvention::PeakToMin;
  SweepShape shape = SweepShape::Parabolic;
  int paint_samples = 256;
};

/// Trap at one schedule instant: per-beam power at the atoms, line-paint amplitude.
inline TrapReport trap_at(const TrapSetup& base, double power, double amplitude, bool two_d,
                          const TimelineOptions& o = {}) {
  TrapSetup s = base;
  for (auto& in : s.inputs) in.power = power / s.layout.power_throughput;
  LinePaintParams lp;
  lp.amplitude = amplitude;
  lp.shape = o.shape;
  lp.two_dimensional = two_d;
  lp.samples = o.paint_samples;
  ModulationWaveform w = synthesize_waveform(s, lp).waveform;
  TimeAveragedPotential U(s, w);
  return characterize(U, Vec3::Zero(), default_options(U, o.convention));
}

inline std::vector<double> timeline_times(const RampSchedule& s, int n) {
  if (n < 2) throw DomainError("timeline needs at least 2 samples");
  std::vector<double> t;
  double T = s.total_duration();
  for (int k = 0; k < n; ++k) t.push_back(T * k / (n - 1));
  for (const auto& seg : s.segments) t.push_back(seg.start);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end(), [&](double a, double b) { return std::abs(a - b) <= 1e-12 * T; }),
          t.end());
  return t;
}

inline std::vector<TimelineRow> timeline(const TrapSetup& setup, const RampSchedule& s, int n_samples,
                                         const TimelineOptions& o = {}) {
  setup.validate();
  std::vector<TimelineRow> rows;
  for (double t : timeline_times(s, n_samples)) {
    const RampSegment& seg = s.segment_at(t);
    TimelineRow r;
    r.time = t;
    r.phase = seg.phase;
    r.power = s.power(t);
    r.amplitude = s.amplitude(t);
    r.two_dimensional = seg.two_dimensional;
    try {
      TrapReport rep = trap_at(setup, r.power, r.amplitude, r.two_dimensional, o);
      r.valid = rep.valid;
      r.reason = rep.reason;
      r.depth = rep.depth;
      r.frequencies = rep.frequencies;
      r.mean_frequency = rep.mean_frequency;
      r.minimum = rep.minimum_position;
    } catch (const Error& e) {
      r.valid = false;
      r.reason = e.what();
    }
    rows.push_back(r);
  }
  return rows;
}

struct TimelineShape {
  bool evaporation_depth_decreasing = true;
  bool reopen_depth_increases = false;
  bool reopen_frequencies_decrease = false;  // two lowest (painted) axes
  bool reopen_mean_frequency_decreases = false;
  int first_increase_row = -1;  // first evaporation row breaking monotone decrease
};

inline TimelineShape timeline_shape(const std::vector<TimelineRow>& rows) {
  TimelineShape sh;
  const TimelineRow* prev = nullptr;
  const TimelineRow* last_pre = nullptr;
  const TimelineRow* first_reopen = nullptr;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!r.valid) continue;
    if (r.phase == "evaporation") {
      if (prev && r.depth > prev->depth && sh.evaporation_depth_decreasing) {
        sh.evaporation_depth_decreasing = false;
        sh.first_increase_row = static_cast<int>(i);
      }
      prev = &r;
    }
    if (r.phase != "reopen") last_pre = &r;
    if (r.phase == "reopen" && !first_reopen) first_reopen = &r;
  }
  if (last_pre && first_reopen) {
    sh.reopen_depth_increases = first_reopen->depth > last_pre->depth;
    sh.reopen_frequencies_decrease = first_reopen->frequencies[0] < last_pre->frequencies[0] &&
                                     first_reopen->frequencies[1] < last_pre->frequencies[1];
    sh.reopen_mean_frequency_decreases = first_reopen->mean_frequency < last_pre->mean_frequency;
  }
  return sh;
}

// ---------------------------------------------------------------- efficiency

struct EfficiencyResult {
  double gamma = 0;
  std::string convention;
};

inline EfficiencyResult evaporation_efficiency(const ThermoMetrics& i, const ThermoMetrics& f) {
  if (!(i.psd > 0 && f.psd > 0 && i.atom_number > 0 && f.atom_number > 0))
    throw DomainError("efficiency needs positive psd and atom numbers");
  if (i.atom_number == f.atom_number)
    throw DomainError("efficiency undefined: initial and final atom numbers are equal");
  EfficiencyResult r;
  r.gamma = -std::log(f.psd / i.psd) / std::log(f.atom_number / i.atom_number);
  r.convention =
      "endpoint: gamma = -ln(psd_f/psd_i) / ln(N_f/N_i) with N_i=" + std::to_string(i.atom_number) +
      ", N_f=" + std::to_string(f.atom_number) + ", psd_i=" + std::to_string(i.psd) +
      ", psd_f=" + std::to_string(f.psd) + " (psd_f not capped)";
  return r;
}

// ---------------------------------------------------------------- expansion

struct ScalingSolution {
  std::vector<double> times;
  std::vector<std::vector<double>> lambda, lambda_dot;
};

/// Scaling equations lambda_i'' = w_i^2 / (lambda_i * prod_j lambda_j), any dimension.
inline ScalingSolution castin_dum(const std::vector<double>& omega, const std::vector<double>& times,
                                  double rtol = 1e-8) {
  namespace ode = boost::numeric::odeint;
  const std::size_t d = omega.size();
  if (d == 0) throw DomainError("castin_dum needs at least one axis");
  for (double w : omega)
    if (!(w > 0) || !std::isfinite(w)) throw DomainError("release frequencies must be positive");
  for (std::size_t k = 0; k < times.size(); ++k)
    if (!(times[k] >= 0) || (k && times[k] < times[k - 1]))
      throw DomainError("expansion times must be non-negative and sorted");
  using State = std::vector<double>;
  auto rhs = [&](const State& x, State& dx, double) {
    double prod = 1;
    for (std::size_t i = 0; i < d; ++i) prod *= x[i];
    for (std::size_t i = 0; i < d; ++i) {
      dx[i] = x[d + i];
      dx[d + i] = omega[i] * omega[i] / (x[i] * prod);
    }
  };
  ScalingSolution sol;
  State x(2 * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) x[i] = 1;
  double wmax = *std::max_element(omega.begin(), omega.end());
  std::vector<double> ts{0.0};
  for (double t : times)
    if (t > ts.back()) ts.push_back(t);
  auto stepper = ode::make_dense_output(rtol * 1e-3, rtol, ode::runge_kutta_dopri5<State>());
  std::vector<State> states;
  ode::integrate_times(stepper, rhs, x, ts.begin(), ts.end(), 1e-3 / wmax,
                       [&](const State& s, double) { states.push_back(s); });
  for (double t : times) {
    std::size_t k = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), t) - ts.begin());
    const State& s = states.at(k);
    for (double v : s)
      if (!std::isfinite(v)) throw DomainError("expansion integration produced a non-finite value (step-size error)");
    sol.times.push_back(t);
    sol.lambda.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(d));
    sol.lambda_dot.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(d), s.end());
  }
  return sol;
}

struct ExpansionState {
  Vec3 frequencies = Vec3(30, 30, 150);  // Hz at release
  Vec3 tf_radii = Vec3::Zero();          // m; zero = from atom number
  double atom_number = 1e4;
  double temperature = 100e-9;  // K, thermal component
  double scattering_length = 98 * 5.29177210903e-11;
  PhysicalConstants constants;
};

/// Thomas-Fermi radii R_i = sqrt(2 mu / (m w_i^2)).
inline Vec3 thomas_fermi_radii(const ExpansionState& s) {
  const auto& k = s.constants;
  Vec3 w = 2 * units::pi * s.frequencies;
  double wbar = std::cbrt(w.prod());
  double aho = std::sqrt(k.reduced_planck / (k.atom_mass * wbar));
  double mu = 0.5 * k.reduced_planck * wbar * std::pow(15 * s.atom_number * s.scattering_length / aho, 0.4);
  Vec3 R;
  for (int i = 0; i < 3; ++i) R[i] = std::sqrt(2 * mu / (k.atom_mass * w[i] * w[i]));
  return R;
}

struct ExpansionSample {
  double time = 0;
  Vec3 lambda = Vec3::Ones();
  Vec3 tf_radius = Vec3::Zero(), thermal_radius = Vec3::Zero();
  double tf_aspect = 1, thermal_aspect = 1;  // axis b over axis a
};

inline std::vector<ExpansionSample> expand(const ExpansionState& s, const std::vector<double>& times,
                                           int axis_a = 0, int axis_b = 2) {
  for (int i = 0; i < 3; ++i)
    if (!(s.frequencies[i] > 0)) throw DomainError("release frequencies must be positive");
  if (!(s.temperature > 0)) throw DomainError("thermal temperature must be positive");
  if (axis_a < 0 || axis_a > 2 || axis_b < 0 || axis_b > 2 || axis_a == axis_b)
    throw DomainError("aspect axes must be two distinct axes in 0..2");
  Vec3 w = 2 * units::pi * s.frequencies;
  Vec3 R0 = s.tf_radii.isZero() ? thomas_fermi_radii(s) : s.tf_radii;
  double v2 = s.constants.boltzmann * s.temperature / s.constants.atom_mass;
  ScalingSolution sol = castin_dum({w[0], w[1], w[2]}, times);
  std::vector<ExpansionSample> out;
  for (std::size_t k = 0; k < times.size(); ++k) {
    ExpansionSample e;
    e.time = times[k];
    for (int i = 0; i < 3; ++i) {
      e.lambda[i] = sol.lambda[k][static_cast<std::size_t>(i)];
      e.tf_radius[i] = R0[i] * e.lambda[i];
      e.thermal_radius[i] = std::sqrt(v2 / (w[i] * w[i]) + v2 * e.time * e.time);
    }
    e.tf_aspect = e.tf_radius[axis_b] / e.tf_radius[axis_a];
    e.thermal_aspect = e.thermal_radius[axis_b] / e.thermal_radius[axis_a];
    out.push_back(e);
  }
  return out;
}

/// First time the TF aspect ratio crosses 1 (linear interpolation), or nullopt.
inline std::optional<double> aspect_inversion_time(const std::vector<ExpansionSample>& s) {
  for (std::size_t k = 1; k < s.size(); ++k) {
    double a = s[k - 1].tf_aspect - 1, b = s[k].tf_aspect - 1;
    if (a == 0) return s[k - 1].time;
    if (a * b < 0) return s[k - 1].time + (s[k].time - s[k - 1].time) * a / (a - b);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- bimodal fit

struct Profile {
  std::vector<double> x, counts, sigma;  // sigma empty = Poisson weights
};

struct BimodalParams {
  double A_th = 0, sigma = 1, A_tf = 0, R = 1, x0 = 0, offset = 0;

  static double tf_shape(double u) { return u < 1 ? (1 - u) * (1 - u) : 0.0; }
  double operator()(double x) const {
    double d = x - x0;
    return A_th * std::exp(-d * d / (2 * sigma * sigma)) + A_tf * tf_shape(d * d / (R * R)) + offset;
  }
  double thermal_atoms() const { return A_th * std::abs(sigma) * std::sqrt(2 * units::pi); }
  double condensate_atoms() const { return A_tf * std::abs(R) * 16.0 / 15.0; }
  double thermal_fraction() const {
    double t = thermal_atoms(), c = condensate_atoms();
    return t + c > 0 ? t / (t + c) : 1.0;
  }
};

struct FitResult {
  BimodalParams params;
  double thermal_fraction = 1;
  double chi2_red = 0;
  double thermal_only_chi2_red = 0;
  BimodalParams thermal_only;
  int dof = 0;
  bool converged = false;
};

namespace detail {

struct BimodalFunctor : Eigen::DenseFunctor<double> {
  const Profile& p;
  const std::vector<double>& sig;
  bool thermal_only;
  BimodalFunctor(const Profile& pr, const std::vector<double>& s, bool th)
      : Eigen::DenseFunctor<double>(th ? 4 : 6, static_cast<int>(pr.x.size())), p(pr), sig(s), thermal_only(th) {}

  BimodalParams unpack(const InputType& v) const {
    BimodalParams b;
    if (thermal_only) {
      b.A_th = v[0], b.sigma = v[1], b.x0 = v[2], b.offset = v[3];
    } else {
      b.A_th = v[0], b.sigma = v[1], b.A_tf = v[2], b.R = v[3], b.x0 = v[4], b.offset = v[5];
    }
    return b;
  }
  int operator()(const InputType& v, ValueType& f) const {
    BimodalParams b = unpack(v);
    for (std::size_t i = 0; i < p.x.size(); ++i)
      f[static_cast<Eigen::Index>(i)] = (b(p.x[i]) - p.counts[i]) / sig[i];
    return 0;
  }
  int df(const InputType& v, JacobianType& J) const {
    BimodalParams b = unpack(v);
    for (std::size_t i = 0; i < p.x.size(); ++i) {
      auto r = static_cast<Eigen::Index>(i);
      double d = p.x[i] - b.x0, s2 = b.sigma * b.sigma;
      double g = std::exp(-d * d / (2 * s2));
      double dg_dsigma = b.A_th * g * d * d / (s2 * b.sigma);
      double dg_dx0 = b.A_th * g * d / s2;
      double u = d * d / (b.R * b.R);
      double t = u < 1 ? (1 - u) * (1 - u) : 0.0;
      double dt_du = u < 1 ? -2 * (1 - u) : 0.0;
      double dt_dR = b.A_tf * dt_du * (-2 * d * d / (b.R * b.R * b.R));
      double dt_dx0 = b.A_tf * dt_du * (-2 * d / (b.R * b.R));
      double w = 1 / sig[i];
      if (thermal_only) {
        J(r, 0) = g * w, J(r, 1) = dg_dsigma * w, J(r, 2) = dg_dx0 * w, J(r, 3) = w;
      } else {
        J(r, 0) = g * w, J(r, 1) = dg_dsigma * w, J(r, 2) = t * w, J(r, 3) = dt_dR * w;
        J(r, 4) = (dg_dx0 + dt_dx0) * w, J(r, 5) = w;
      }
    }
    return 0;
  }
};

inline double chi2(const Profile& p, const std::vector<double>& sig, const BimodalParams& b) {
  double c = 0;
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    double r = (b(p.x[i]) - p.counts[i]) / sig[i];
    c += r * r;
  }
  return c;
}

inline BimodalParams run_lm(const Profile& p, const std::vector<double>& sig, bool thermal_only,
                            const BimodalParams& init, bool& ok) {
  BimodalFunctor f(p, sig, thermal_only);
  Eigen::VectorXd v(thermal_only ? 4 : 6);
  if (thermal_only)
    v << init.A_th, init.sigma, init.x0, init.offset;
  else
    v << init.A_th, init.sigma, init.A_tf, init.R, init.x0, init.offset;
  Eigen::LevenbergMarquardt<BimodalFunctor> lm(f);
  lm.setXtol(1e-14);
  lm.setFtol(1e-14);
  lm.setMaxfev(4000);
  auto status = lm.minimize(v);
  ok = status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters && v.allFinite();
  BimodalParams b = f.unpack(v);
  b.sigma = std::abs(b.sigma);
  b.R = std::abs(b.R);
  return b;
}

}  // namespace detail

inline FitResult fit_bimodal(const Profile& p) {
  const std::size_t n = p.x.size();
  if (n < 20) throw DomainError("bimodal fit needs at least 20 samples");
  if (p.counts.size() != n || (!p.sigma.empty() && p.sigma.size() != n))
    throw DomainError("profile columns have different lengths");
  for (double c : p.counts) {
    if (!std::isfinite(c)) throw DomainError("profile contains non-finite counts");
    if (c < 0) throw DomainError("profile counts must be non-negative");
  }
  auto [lo, hi] = std::minmax_element(p.counts.begin(), p.counts.end());
  if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi)))
    throw ModelValidityError("fit failure: constant profile");
  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = p.sigma.empty() ? std::sqrt(std::max(p.counts[i], 1.0)) : p.sigma[i];
    if (!(sig[i] > 0)) throw DomainError("profile uncertainties must be positive");
  }
  // moment initialisation
  std::size_t edge = std::max<std::size_t>(1, n / 20);
  double off = 0;
  for (std::size_t i = 0; i < edge; ++i) off += p.counts[i] + p.counts[n - 1 - i];
  off /= static_cast<double>(2 * edge);
  double m0 = 0, m1 = 0, m2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double c = std::max(0.0, p.counts[i] - off);
    m0 += c, m1 += c * p.x[i];
  }
  if (!(m0 > 0)) throw ModelValidityError("fit failure: no signal above the background");
  double xc = m1 / m0;
  for (std::size_t i = 0; i < n; ++i) {
    double c = std::max(0.0, p.counts[i] - off);
    m2 += c * (p.x[i] - xc) * (p.x[i] - xc);
  }
  double rms = std::sqrt(m2 / m0);
  double peak = *hi - off;

  FitResult res;
  bool ok = false;
  BimodalParams th0;
  th0.A_th = peak, th0.sigma = rms, th0.x0 = xc, th0.offset = off;
  res.thermal_only = detail::run_lm(p, sig, true, th0, ok);
  res.thermal_only.A_tf = 0;
  if (!ok) throw ModelValidityError("fit failure: thermal-only fit did not converge");
  res.thermal_only_chi2_red = detail::chi2(p, sig, res.thermal_only) / static_cast<double>(n - 4);

  double best = 1e300;
  for (double frac : {0.2, 0.5, 0.8})
    for (double wide : {1.5, 2.5}) {
      BimodalParams b0;
      b0.A_th = frac * peak, b0.sigma = wide * rms, b0.A_tf = (1 - frac) * peak;
      b0.R = std::sqrt(7.0) * rms, b0.x0 = xc, b0.offset = off;
      bool k = false;
      BimodalParams b = detail::run_lm(p, sig, false, b0, k);
      if (!k) continue;
      double c = detail::chi2(p, sig, b);
      if (c < best) best = c, res.params = b, res.converged = true;
    }
  if (!res.converged) throw ModelValidityError("fit failure: bimodal fit did not converge");
  res.dof = static_cast<int>(n) - 6;
  res.chi2_red = best / res.dof;
  res.thermal_fraction = res.params.thermal_fraction();
  return res;
}

}  // namespace odt
