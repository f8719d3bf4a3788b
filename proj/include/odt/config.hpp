#pragma once

// Run configuration: a JSON document with unit-suffixed keys, overlaid on built-in defaults.

#include "odt/evap.hpp"
#include "odt/painting.hpp"
#include "odt/pointing.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>

namespace odt {

using nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "odtk-out";

  TrapSetup setup;
  bool gravity_enabled = true;
  std::array<double, 2> power_at_atoms{10, 10};  // W per beam, after throughput
  DepthConvention convention = DepthConvention::PeakToMin;
  double fd_step_waists = 0.02;
  double margin_waists = 4.0;
  AveragingOptions averaging;

  struct Trap {
    std::string waveform = "static";  // static | line | tones | grid
    StaticOffsetParams static_offsets;
    LinePaintParams line;
    VerticalTonesParams tones;
    double atom_number = 2e6;
    double temperature = 20e-6;
    std::optional<double> reference_depth;  // K
    double reference_tolerance = 0.3;
    bool write_field = false;
    std::array<int, 3> field_dims{48, 48, 48};
    std::string field_encoding = "binary";
    int volume_grid = 41;
    double misalign_max = 10e-6;
    int misalign_steps = 21;
    MisalignAxis misalign_axis = MisalignAxis::Vertical;
  } trap;

  struct Paint {
    GridParams grid;
    CompensationObjective objective = CompensationObjective::EqualDepth;
    int max_iterations = 12;
    double tolerance = 1e-3;
    Vec3 start_spacing{190e-6, 0, 190e-6};
    Vec3 end_spacing{480e-6, 0, 480e-6};
    Vec3 end_center = Vec3::Zero();
    double transport_duration = 20e-3;
    TransportOptions transport;
  } paint;

  struct Evap {
    ScheduleParams schedule;
    int schedule_samples = 231;
    int timeline_samples = 24;
    SweepShape shape = SweepShape::Parabolic;
    int paint_samples = 256;
    double initial_atoms = 2e6, initial_temperature = 20e-6;
    double final_atoms = 1e4, final_psd = 2.612;
  } evap;

  struct Tof {
    ExpansionState state;
    double t_start = 0, t_stop = 30e-3;
    int t_count = 61;
    int axis_a = 0, axis_b = 2;
    std::string profile_csv;
  } tof;

  struct Flight {
    FlightScenario scenario;
    AnalysisOptions analysis;
    std::string input_dir;     // flight analyze: directory written by flight synth
    std::string centroid_csv;  // flight analyze: t_s,x1_um,y1_um,x2_um,y2_um instead of frames
  } flight;

  /// Setup with gravity toggle and per-beam power applied.
  TrapSetup trap_setup() const {
    TrapSetup s = setup;
    if (!gravity_enabled) s.constants.gravity = 0;
    for (int i = 0; i < 2; ++i)
      s.inputs[static_cast<std::size_t>(i)].power =
          power_at_atoms[static_cast<std::size_t>(i)] / s.layout.power_throughput;
    return s;
  }
  SiteOptions site_options() const {
    SiteOptions o;
    o.convention = convention;
    o.fd_step_waists = fd_step_waists;
    o.averaging = averaging;
    return o;
  }
};

namespace detail {

inline std::string dotted(const std::string& ptr) {
  std::string s = ptr.substr(1);
  std::replace(s.begin(), s.end(), '/', '.');
  return s;
}

/// Shortest repr that maps back to the same SI value.
inline double to_display(double si, double scale) {
  double v = si / scale;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  double r = std::strtod(buf, nullptr);
  return r * scale == si ? r : v;
}

template <class E>
using Choices = std::vector<std::pair<const char*, E>>;

/// Moves values between a RunConfig and its JSON form, keyed by JSON pointer.
class Binder {
 public:
  Binder(json& doc, bool reading) : doc_(doc), reading_(reading) {}

  void num(const std::string& p, double& v, double scale = 1) {
    if (!reading_) return put(p, to_display(v, scale));
    v = number(p) * scale;
  }
  void opt_num(const std::string& p, std::optional<double>& v, double scale = 1) {
    if (!reading_) return put(p, v ? json(to_display(*v, scale)) : json(nullptr));
    const json& j = at(p);
    if (j.is_null()) v.reset();
    else v = number(p) * scale;
  }
  template <class I>
  void integer(const std::string& p, I& v) {
    if (!reading_) return put(p, v);
    const json& j = at(p);
    if (!j.is_number_integer() && !j.is_number_unsigned())
      throw ConfigError(dotted(p) + ": expected an integer");
    if constexpr (std::is_unsigned_v<I>) {
      if (j.is_number_integer() && j.get<std::int64_t>() < 0)
        throw ConfigError(dotted(p) + ": expected a non-negative integer");
    }
    v = j.get<I>();
  }
  void boolean(const std::string& p, bool& v) {
    if (!reading_) return put(p, v);
    const json& j = at(p);
    if (!j.is_boolean()) throw ConfigError(dotted(p) + ": expected true or false");
    v = j.get<bool>();
  }
  void str(const std::string& p, std::string& v) {
    if (!reading_) return put(p, v);
    const json& j = at(p);
    if (!j.is_string()) throw ConfigError(dotted(p) + ": expected a string");
    v = j.get<std::string>();
  }
  template <class E>
  void choice(const std::string& p, E& v, const Choices<E>& opts) {
    if (!reading_) {
      for (const auto& [n, e] : opts)
        if (e == v) return put(p, n);
      return;
    }
    std::string s;
    str(p, s);
    std::string names;
    for (const auto& [n, e] : opts) {
      if (s == n) {
        v = e;
        return;
      }
      names += (names.empty() ? "" : ", ") + std::string(n);
    }
    throw ConfigError(dotted(p) + ": '" + s + "' is not one of " + names);
  }
  template <std::size_t N>
  void arr(const std::string& p, std::array<double, N>& v, double scale = 1) {
    if (!reading_) {
      json a = json::array();
      for (double x : v) a.push_back(to_display(x, scale));
      return put(p, a);
    }
    const json& j = at(p);
    if (!j.is_array() || j.size() != N)
      throw ConfigError(dotted(p) + ": expected an array of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) v[i] = number(p + "/" + std::to_string(i)) * scale;
  }
  void vec3(const std::string& p, Vec3& v, double scale = 1) {
    std::array<double, 3> a{v.x(), v.y(), v.z()};
    arr(p, a, scale);
    v = Vec3(a[0], a[1], a[2]);
  }
  void ints3(const std::string& p, std::array<int, 3>& v) {
    if (!reading_) return put(p, v);
    const json& j = at(p);
    if (!j.is_array() || j.size() != 3) throw ConfigError(dotted(p) + ": expected an array of 3 integers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!j[i].is_number_integer()) throw ConfigError(dotted(p) + "." + std::to_string(i) + ": expected an integer");
      v[i] = j[i].get<int>();
    }
  }
  void list(const std::string& p, std::vector<double>& v) {
    if (!reading_) return put(p, v);
    const json& j = at(p);
    if (!j.is_array()) throw ConfigError(dotted(p) + ": expected an array of numbers");
    v.clear();
    for (std::size_t i = 0; i < j.size(); ++i) v.push_back(number(p + "/" + std::to_string(i)));
  }

 private:
  void put(const std::string& p, json v) { doc_[json::json_pointer(p)] = std::move(v); }
  const json& at(const std::string& p) const {
    json::json_pointer jp(p);
    if (!doc_.contains(jp)) throw ConfigError(dotted(p) + ": missing field");
    return doc_.at(jp);
  }
  double number(const std::string& p) const {
    const json& j = at(p);
    if (!j.is_number()) throw ConfigError(dotted(p) + ": expected a number");
    double d = j.get<double>();
    if (!std::isfinite(d)) throw ConfigError(dotted(p) + ": expected a finite number");
    return d;
  }

  json& doc_;
  bool reading_;
};

inline const Choices<DepthConvention> kConventions{{"peak-to-min", DepthConvention::PeakToMin},
                                                    {"escape-saddle", DepthConvention::EscapeSaddle}};
inline const Choices<SweepShape> kShapes{{"triangle", SweepShape::Triangle},
                                         {"parabolic", SweepShape::Parabolic},
                                         {"double-well", SweepShape::DoubleWell}};
inline const Choices<RampProfile> kProfiles{{"linear", RampProfile::Linear},
                                            {"minimum-jerk", RampProfile::MinimumJerk}};

inline void bind(Binder& b, RunConfig& c) {
  using namespace units;
  constexpr double MHz = 1;
  constexpr double us = 1e-6;
  constexpr double nK = 1e-9;
  b.integer("/seed", c.seed);
  b.str("/output_dir", c.output_dir);

  auto& k = c.setup.constants;
  b.num("/constants/atom_mass_kg", k.atom_mass);
  b.num("/constants/polarizability_au", k.polarizability, au_polarizability);
  b.num("/constants/vacuum_permittivity_F_per_m", k.vacuum_permittivity);
  b.num("/constants/speed_of_light_m_per_s", k.speed_of_light);
  b.num("/constants/boltzmann_J_per_K", k.boltzmann);
  b.num("/constants/reduced_planck_J_s", k.reduced_planck);
  b.num("/constants/gravity_m_per_s2", k.gravity);
  b.boolean("/constants/gravity_enabled", c.gravity_enabled);

  auto& L = c.setup.layout;
  b.num("/layout/focal_length_mm", L.focal_length, mm);
  b.num("/layout/lens_diameter_mm", L.lens_diameter, mm);
  b.num("/layout/numerical_aperture", L.numerical_aperture);
  b.num("/layout/beam_separation_mm", L.beam_separation_at_lens, mm);
  b.num("/layout/crossing_angle_deg", L.crossing_full_angle, deg);
  b.num("/layout/window_thickness_mm", L.window_thickness, mm);
  b.num("/layout/window_index", L.window_index);
  b.opt_num("/layout/window_tilt_deg", L.window_tilt, deg);
  b.num("/layout/aod_center_MHz", L.aod_center_freq, MHz);
  b.num("/layout/aod_range_MHz", L.aod_freq_range, MHz);
  b.num("/layout/aod_full_deflection_deg", L.aod_full_deflection, deg);
  b.arr("/layout/aod_aperture_mm", L.aod_aperture, mm);
  b.num("/layout/power_throughput", L.power_throughput);
  b.choice("/layout/crossing_focus", L.crossing_focus,
           Choices<FocusPlacement>{{"sagittal", FocusPlacement::Sagittal},
                                   {"midpoint", FocusPlacement::Midpoint},
                                   {"tangential", FocusPlacement::Tangential}});

  std::array<double, 2> wl{c.setup.inputs[0].wavelength, c.setup.inputs[1].wavelength};
  std::array<double, 2> rad{c.setup.inputs[0].collimated_radius, c.setup.inputs[1].collimated_radius};
  b.arr("/beams/power_at_atoms_W", c.power_at_atoms);
  b.arr("/beams/wavelength_um", wl, um);
  b.arr("/beams/collimated_radius_mm", rad, mm);
  for (std::size_t i = 0; i < 2; ++i) {
    c.setup.inputs[i].wavelength = wl[i];
    c.setup.inputs[i].collimated_radius = rad[i];
  }

  auto& D = c.setup.displacement;
  b.choice("/displacement/mode", D.mode,
           Choices<DisplacementMode>{{"calibrated", DisplacementMode::Calibrated},
                                     {"geometric", DisplacementMode::Geometric}});
  for (Channel ch : kChannels)
    b.num(std::string("/displacement/um_per_MHz/") + channel_name(ch), D.um_per_MHz[idx(ch)]);
  b.boolean("/displacement/off_axis_correction", D.off_axis_correction);
  b.boolean("/displacement/window_correction", D.window_correction);

  b.integer("/averaging/phases", c.averaging.phases);
  b.num("/averaging/max_step_waists", c.averaging.max_step_waists);
  b.choice("/characterize/depth_convention", c.convention, kConventions);
  b.num("/characterize/fd_step_waists", c.fd_step_waists);
  b.num("/characterize/margin_waists", c.margin_waists);

  auto& T = c.trap;
  b.str("/trap/waveform", T.waveform);
  b.arr("/trap/static/offsets_MHz", T.static_offsets.offsets_MHz);
  b.arr("/trap/static/weights", T.static_offsets.weights);
  b.num("/trap/line/amplitude_um", T.line.amplitude, um);
  b.choice("/trap/line/shape", T.line.shape, kShapes);
  b.boolean("/trap/line/two_dimensional", T.line.two_dimensional);
  b.integer("/trap/line/samples", T.line.samples);
  b.integer("/trap/tones/count", T.tones.tones);
  b.num("/trap/tones/spacing_um", T.tones.spacing, um);
  b.num("/trap/tones/center_z_um", T.tones.center_z, um);
  b.num("/trap/period_us", T.line.period, us);
  T.static_offsets.period = T.tones.period = T.line.period;
  b.num("/trap/thermo/atom_number", T.atom_number);
  b.num("/trap/thermo/temperature_uK", T.temperature, uK);
  b.opt_num("/trap/reference/depth_mK", T.reference_depth, mK);
  b.num("/trap/reference/tolerance", T.reference_tolerance);
  b.boolean("/trap/field/write", T.write_field);
  b.ints3("/trap/field/dims", T.field_dims);
  b.str("/trap/field/encoding", T.field_encoding);
  b.integer("/trap/volume/grid", T.volume_grid);
  b.num("/trap/misalign/max_offset_um", T.misalign_max, um);
  b.integer("/trap/misalign/steps", T.misalign_steps);
  b.choice("/trap/misalign/axis", T.misalign_axis,
           Choices<MisalignAxis>{{"vertical", MisalignAxis::Vertical}, {"horizontal", MisalignAxis::Horizontal}});

  auto& P = c.paint;
  b.ints3("/paint/grid/counts", P.grid.grid.counts);
  b.vec3("/paint/grid/spacing_um", P.grid.grid.spacing, um);
  b.vec3("/paint/grid/center_um", P.grid.grid.center, um);
  b.list("/paint/grid/site_weights", P.grid.site_weights);
  b.num("/paint/grid/transition_fraction", P.grid.transition_fraction);
  b.integer("/paint/grid/transition_samples", P.grid.transition_samples);
  b.boolean("/paint/grid/blank_transitions", P.grid.blank_transitions);
  b.num("/paint/grid/period_us", P.grid.period, us);
  b.choice("/paint/compensate/objective", P.objective,
           Choices<CompensationObjective>{{"equal-depth", CompensationObjective::EqualDepth},
                                          {"equal-mean-frequency", CompensationObjective::EqualMeanFrequency}});
  b.integer("/paint/compensate/max_iterations", P.max_iterations);
  b.num("/paint/compensate/tolerance", P.tolerance);
  b.vec3("/paint/transport/start_spacing_um", P.start_spacing, um);
  b.vec3("/paint/transport/end_spacing_um", P.end_spacing, um);
  b.vec3("/paint/transport/end_center_um", P.end_center, um);
  b.num("/paint/transport/duration_ms", P.transport_duration, ms);
  b.choice("/paint/transport/profile", P.transport.profile, kProfiles);
  b.integer("/paint/transport/steps", P.transport.steps);
  P.transport.transition_fraction = P.grid.transition_fraction;
  P.transport.transition_samples = P.grid.transition_samples;
  P.transport.blank_transitions = P.grid.blank_transitions;
  P.transport.period = P.grid.period;

  auto& E = c.evap;
  auto& S = E.schedule;
  b.num("/evap/schedule/initial_power_W", S.initial_power);
  b.num("/evap/schedule/final_power_W", S.final_power);
  b.num("/evap/schedule/power_duration_s", S.power_duration);
  b.num("/evap/schedule/initial_amplitude_um", S.initial_amplitude, um);
  b.num("/evap/schedule/final_amplitude_um", S.final_amplitude, um);
  b.num("/evap/schedule/amplitude_duration_s", S.amplitude_duration);
  b.num("/evap/schedule/amplitude_tau_s", S.amplitude_tau);
  b.num("/evap/schedule/hold_duration_s", S.hold_duration);
  b.num("/evap/schedule/hold_power_factor", S.hold_power_factor);
  b.num("/evap/schedule/reopen_amplitude_um", S.reopen_amplitude, um);
  b.num("/evap/schedule/reopen_power_W", S.reopen_power);
  b.num("/evap/schedule/reopen_duration_s", S.reopen_duration);
  b.boolean("/evap/schedule/reopen_two_dimensional", S.reopen_two_dimensional);
  b.integer("/evap/schedule/samples", E.schedule_samples);
  b.integer("/evap/timeline/samples", E.timeline_samples);
  b.choice("/evap/timeline/shape", E.shape, kShapes);
  b.integer("/evap/timeline/paint_samples", E.paint_samples);
  b.num("/evap/thermo/initial_atoms", E.initial_atoms);
  b.num("/evap/thermo/initial_temperature_uK", E.initial_temperature, uK);
  b.num("/evap/thermo/final_atoms", E.final_atoms);
  b.num("/evap/thermo/final_psd", E.final_psd);

  auto& X = c.tof;
  b.vec3("/tof/frequencies_Hz", X.state.frequencies);
  b.vec3("/tof/tf_radii_um", X.state.tf_radii, um);
  b.num("/tof/atom_number", X.state.atom_number);
  b.num("/tof/temperature_nK", X.state.temperature, nK);
  b.num("/tof/scattering_length_a0", X.state.scattering_length, 5.29177210903e-11);
  b.num("/tof/t_start_ms", X.t_start, ms);
  b.num("/tof/t_stop_ms", X.t_stop, ms);
  b.integer("/tof/t_count", X.t_count);
  b.integer("/tof/aspect_axes/a", X.axis_a);
  b.integer("/tof/aspect_axes/b", X.axis_b);
  b.str("/tof/profile_csv", X.profile_csv);

  auto& F = c.flight.scenario;
  b.num("/flight/fps_Hz", F.fps);
  b.num("/flight/duration_s", F.duration);
  b.num("/flight/phases_s/launch", F.phases.launch);
  b.num("/flight/phases_s/microgravity", F.phases.microgravity);
  b.num("/flight/phases_s/landing", F.phases.landing);
  b.num("/flight/phases_s/post", F.phases.post);
  b.num("/flight/launch_excursion_um", F.launch_excursion_um);
  b.num("/flight/microgravity_offset_um", F.microgravity_offset_um);
  b.num("/flight/interspot_jitter_um", F.interspot_jitter_um);
  b.num("/flight/separation_um", F.separation_um);
  b.integer("/flight/frame/width_px", F.frame.width);
  b.integer("/flight/frame/height_px", F.frame.height);
  b.num("/flight/frame/pixel_pitch_um", F.frame.pixel_pitch_um);
  b.integer("/flight/frame/bit_depth", F.frame.bit_depth);
  b.num("/flight/frame/background_counts", F.frame.background);
  b.num("/flight/frame/noise_counts", F.frame.noise_sigma);
  b.num("/flight/spot/waist_um", F.spot_template.waist_um);
  b.num("/flight/spot/amplitude_counts", F.spot_template.amplitude);
  b.num("/flight/analysis/threshold_fraction", c.flight.analysis.threshold_fraction);
  b.num("/flight/analysis/gate_pixels", c.flight.analysis.gate_pixels);
  b.num("/flight/analysis/inner_fraction", c.flight.analysis.inner_fraction);
  b.str("/flight/input_dir", c.flight.input_dir);
  b.str("/flight/centroid_csv", c.flight.centroid_csv);
}

/// Recursively overlay `user` onto `base`; keys absent from `base` are schema violations.
inline void overlay(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(p + ": unknown field");
    json& b = base[it.key()];
    if (b.is_object()) overlay(b, it.value(), p);
    else b = it.value();
  }
}

}  // namespace detail

inline json config_to_json(const RunConfig& c) {
  json doc = json::object();
  RunConfig copy = c;
  detail::Binder b(doc, false);
  detail::bind(b, copy);
  return doc;
}

inline RunConfig config_from_json(const json& doc) {
  RunConfig c;
  json full = config_to_json(c);
  detail::overlay(full, doc, "");
  detail::Binder b(full, true);
  detail::bind(b, c);
  return c;
}

/// Apply `dotted.path=value`; value is parsed as JSON, falling back to a plain string.
inline void apply_override(json& user, const json& defaults, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like dotted.path=value");
  std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  std::string ptr = "/" + key;
  std::replace(ptr.begin(), ptr.end(), '.', '/');
  json::json_pointer jp(ptr);
  if (!defaults.contains(jp)) throw ConfigError(key + ": unknown field");
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) v = text;
  // array elements are set inside the current (user or default) array
  json::json_pointer parent = jp.parent_pointer();
  if (!parent.empty() && defaults.at(parent).is_array() && !user.contains(parent))
    user[parent] = defaults.at(parent);
  user[jp] = v;
}

inline json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  return j;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace odt
