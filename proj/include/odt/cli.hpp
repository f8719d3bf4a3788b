#pragma once

#include "odt/config.hpp"
#include "odt/field_io.hpp"

#include "CLI11.hpp"

#include <boost/version.hpp>

#include <filesystem>
#include <functional>
#include <iostream>

#ifndef ODT_VERSION
#define ODT_VERSION "0.0.0"
#endif

namespace odt::cli {

namespace fs = std::filesystem;

enum ExitCode { Ok = 0, Failure = 1, ConfigFailure = 2, DomainFailure = 3, ModelFailure = 4 };

inline constexpr const char* kCommands[] = {
    "trap report",  "trap volume",    "trap misalign-sweep", "paint grid", "paint compensate",
    "paint transport", "evap schedule", "evap timeline", "tof expand", "tof fit",
    "flight synth", "flight analyze"};

/// Collects artifact paths so the manifest can list them.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  fs::path path(const std::string& name) {
    files_.push_back(name);
    fs::path p = dir_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }
  void write_json(const std::string& name, const json& j) {
    std::ofstream out(path(name));
    out << j.dump(2) << '\n';
    if (!out) throw DomainError("failed writing " + name);
  }
  std::ofstream open(const std::string& name) {
    std::ofstream out(path(name));
    if (!out) throw DomainError("cannot open " + name + " for writing");
    return out;
  }
  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (v == 0) v = 0;  // no "-0"
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void csv_row(std::ostream& o, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) o << (i ? "," : "") << cells[i];
  o << '\n';
}

inline std::vector<std::string> nums(std::initializer_list<double> v) {
  std::vector<std::string> s;
  for (double x : v) s.push_back(fmt(x));
  return s;
}

inline json vec_um(const Vec3& v) { return {v.x() / units::um, v.y() / units::um, v.z() / units::um}; }

inline double to_uK(const PhysicalConstants& k, double J) { return J / k.boltzmann / units::uK; }

inline json report_json(const TrapReport& r, const PhysicalConstants& k) {
  json j;
  j["valid"] = r.valid;
  if (!r.reason.empty()) j["reason"] = r.reason;
  j["saddle"] = r.saddle;
  j["minimum_position_um"] = vec_um(r.minimum_position);
  j["depth_convention"] = convention_name(r.convention);
  j["depth_J"] = r.depth;
  j["depth_uK"] = to_uK(k, r.depth);
  j["depth_peak_to_min_uK"] = to_uK(k, r.depth_peak_to_min);
  j["depth_escape_saddle_uK"] = to_uK(k, r.depth_escape_saddle);
  j["escape_direction"] = {r.escape_direction.x(), r.escape_direction.y(), r.escape_direction.z()};
  j["frequencies_Hz"] = r.frequencies;
  for (int i = 0; i < 3; ++i)
    j["principal_axes"].push_back({r.axes(0, i), r.axes(1, i), r.axes(2, i)});
  j["mean_frequency_Hz"] = r.mean_frequency;
  j["hessian_asymmetry"] = r.hessian_asymmetry;
  j["iterations"] = r.iterations;
  return j;
}

inline ModulationWaveform trap_waveform(const RunConfig& c, const TrapSetup& s,
                                        std::vector<std::string>& warnings) {
  const auto& w = c.trap.waveform;
  WaveformRequest req;
  if (w == "static") req = c.trap.static_offsets;
  else if (w == "line") req = c.trap.line;
  else if (w == "tones") req = c.trap.tones;
  else if (w == "grid") req = c.paint.grid;
  else throw ConfigError("trap.waveform: '" + w + "' is not one of static, line, tones, grid");
  SynthesisResult r = synthesize_waveform(s, req);
  warnings = r.warnings;
  return r.waveform;
}

inline json waveform_json(const ModulationWaveform& w) {
  json j;
  j["format"] = "odt-waveform";
  j["period_s"] = w.period;
  j["columns"] = {"time_s", "freq_offset_MHz", "weight"};
  for (Channel c : kChannels) {
    json ch = json::array();
    for (const auto& s : w.channel(c)) ch.push_back({s.time, s.freq_offset, s.weight});
    j["channels"][channel_name(c)] = ch;
  }
  return j;
}

inline void site_csv(std::ostream& o, const SiteTable& t, const PhysicalConstants& k) {
  csv_row(o, {"site", "i", "j", "k", "x_um", "y_um", "z_um", "radius_beam1_um", "radius_beam2_um",
              "size_dev_beam1", "size_dev_beam2", "depth_uK", "f1_Hz", "f2_Hz", "f3_Hz",
              "mean_frequency_Hz", "weight", "depth_dev", "mean_freq_dev", "valid"});
  for (std::size_t n = 0; n < t.rows.size(); ++n) {
    const SiteRow& r = t.rows[n];
    std::vector<std::string> cells{std::to_string(n), std::to_string(r.index[0]), std::to_string(r.index[1]),
                                   std::to_string(r.index[2])};
    for (double v : {r.position.x() / units::um, r.position.y() / units::um, r.position.z() / units::um,
                     r.radius_mean[0] / units::um, r.radius_mean[1] / units::um, r.size_dev[0], r.size_dev[1],
                     to_uK(k, r.report.depth), r.report.frequencies[0], r.report.frequencies[1],
                     r.report.frequencies[2], r.report.mean_frequency, r.weight, r.depth_dev, r.mean_freq_dev})
      cells.push_back(fmt(v));
    cells.push_back(r.flagged ? "0" : "1");
    csv_row(o, cells);
  }
}

inline json table_summary(const SiteTable& t) {
  json j;
  j["sites"] = t.rows.size();
  j["any_invalid"] = t.any_flagged();
  j["size_dev_extreme"] = {t.extreme_size_dev(0), t.extreme_size_dev(1)};
  j["max_abs_depth_dev"] = t.max_abs_depth_dev();
  j["max_abs_mean_freq_dev"] = t.max_abs_mean_freq_dev();
  j["max_abs_freq_dev"] = t.max_abs_freq_dev();
  j["depth_spread"] = t.spread([](const SiteRow& r) { return r.report.depth; });
  j["mean_freq_spread"] = t.spread([](const SiteRow& r) { return r.report.mean_frequency; });
  j["individual_freq_spread"] = t.individual_freq_spread();
  j["weights"] = t.weights();
  return j;
}

inline std::vector<double> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<double> v;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cell, &used));
    } catch (const std::exception&) {
      throw DomainError(where + ": non-numeric cell '" + cell + "'");
    }
  }
  return v;
}

/// Numeric CSV with one header line.
inline std::vector<std::vector<double>> read_numeric_csv(const std::string& path, std::size_t min_cols) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot read " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    auto v = split_csv_line(line, path + ":" + std::to_string(n));
    if (v.size() < min_cols) throw DomainError(path + ":" + std::to_string(n) + ": expected " +
                                               std::to_string(min_cols) + " columns");
    rows.push_back(std::move(v));
  }
  return rows;
}

inline json moments_json(const Moments& m) {
  return {{"max_abs", m.max_abs}, {"mean", m.mean}, {"std", m.std}, {"count", m.count}};
}

inline json flight_json(const FlightReport& r) {
  json j;
  j["units"] = "um";
  j["valid_frames"] = r.valid_frames;
  j["skipped_frames"] = r.skipped_frames;
  for (const auto& p : r.phases) {
    json q;
    for (int i = 0; i < 2; ++i) {
      json s;
      s["dx"] = moments_json(p.dx[i]);
      s["dy"] = moments_json(p.dy[i]);
      s["ac"] = moments_json(p.ac[i]);
      q["spots"].push_back(s);
      q["max_axis_displacement_um"].push_back(std::max(p.dx[i].max_abs, p.dy[i].max_abs));
      q["mean_axis_offset_um"].push_back(std::max(std::abs(p.dx[i].mean), std::abs(p.dy[i].mean)));
    }
    q["dc"] = moments_json(p.dc);
    j["phases"][phase_name(p.phase)] = q;
  }
  j["inner_microgravity"] = {{"fraction", r.inner_fraction}, {"dc", moments_json(r.inner_dc)}};
  return j;
}

inline void flight_series_csv(std::ostream& o, const FlightReport& r) {
  csv_row(o, {"t_s", "phase", "x1_um", "y1_um", "x2_um", "y2_um", "ac1_um", "ac2_um", "dc_um"});
  for (const auto& s : r.series) {
    std::vector<std::string> c{fmt(s.t), phase_name(s.phase)};
    for (double v : {s.p[0].x(), s.p[0].y(), s.p[1].x(), s.p[1].y(), s.ac[0], s.ac[1], s.dc})
      c.push_back(fmt(v));
    csv_row(o, c);
  }
}

}  // namespace detail

// ---------------------------------------------------------------- commands

inline void cmd_trap_report(const RunConfig& c, Outputs& out) {
  TrapSetup s = c.trap_setup();
  std::vector<std::string> warn;
  ModulationWaveform wf = detail::trap_waveform(c, s, warn);
  TimeAveragedPotential U(s, wf, c.averaging);
  CharacterizeOptions o = default_options(U, c.convention, c.fd_step_waists, c.margin_waists);
  TrapReport r = characterize(U, Vec3::Zero(), o);
  json j = detail::report_json(r, s.constants);
  j["waveform"] = c.trap.waveform;
  j["gravity_m_per_s2"] = s.constants.gravity;
  j["power_at_atoms_W"] = c.power_at_atoms;
  j["focused_waist_um"] = s.focused_waist() / units::um;
  j["warnings"] = warn;
  if (r.valid) {
    ThermoMetrics m = thermo_metrics(r, c.trap.atom_number, c.trap.temperature, s.constants);
    j["thermo"] = {{"atom_number", m.atom_number}, {"temperature_uK", m.temperature / units::uK},
                   {"psd", m.psd}, {"truncation_parameter", m.truncation_parameter}};
  }
  if (c.trap.reference_depth) {
    double ref = *c.trap.reference_depth * s.constants.boltzmann;
    json q;
    q["depth_uK"] = detail::to_uK(s.constants, ref);
    q["tolerance"] = c.trap.reference_tolerance;
    std::string best;
    double best_dev = 1e300;
    for (auto [name, d] : {std::pair{"peak-to-min", r.depth_peak_to_min},
                           std::pair{"escape-saddle", r.depth_escape_saddle}}) {
      double dev = d / ref - 1;
      q["relative_deviation"][name] = dev;
      if (std::abs(dev) < best_dev) best_dev = std::abs(dev), best = name;
    }
    q["matching_convention"] = best_dev <= c.trap.reference_tolerance ? json(best) : json(nullptr);
    j["reference"] = q;
  }
  if (c.trap.write_field) {
    ScalarField3D f = sample_field(U, o.domain, c.trap.field_dims);
    FieldEncoding enc;
    if (c.trap.field_encoding == "binary") enc = FieldEncoding::Binary;
    else if (c.trap.field_encoding == "text") enc = FieldEncoding::Text;
    else throw ConfigError("trap.field.encoding: expected binary or text");
    write_field(out.path("field.odtf").string(), f, enc);
  }
  if (c.trap.waveform != "static") out.write_json("waveform.json", detail::waveform_json(wf));
  out.write_json("trap_report.json", j);
  if (!r.valid) throw ModelValidityError("no valid trap: " + r.reason);
}

inline void cmd_trap_volume(const RunConfig& c, Outputs& out) {
  ReachableVolume v = reachable_volume(c.setup.layout, c.setup.displacement, c.trap.volume_grid);
  const double mm = units::mm;
  json j;
  j["planar_area_mm2"] = v.planar_area / (mm * mm);
  j["vertical_span_mm"] = v.vertical_span / mm;
  j["prism_volume_mm3"] = v.prism_volume / (mm * mm * mm);
  j["hull_volume_mm3"] = v.hull_volume / (mm * mm * mm);
  j["enumerated_points"] = v.enumerated;
  for (const auto& p : v.planar_hull) j["planar_hull_mm"].push_back({p.x() / mm, p.y() / mm});
  j["displacement_mode"] = c.setup.displacement.mode == DisplacementMode::Calibrated ? "calibrated" : "geometric";
  json reach;
  for (Channel ch : kChannels) reach[channel_name(ch)] = channel_reach(c.setup.layout, c.setup.displacement, ch) / mm;
  j["channel_reach_mm"] = reach;
  out.write_json("volume.json", j);
}

inline void cmd_trap_misalign(const RunConfig& c, Outputs& out) {
  TrapSetup s = c.trap_setup();
  auto rows = misalignment_sweep(s, c.trap.misalign_max, c.trap.misalign_steps, c.trap.misalign_axis);
  auto o = out.open("misalign.csv");
  detail::csv_row(o, {"offset_um", "depth_ratio", "depth_uK", "reference_depth_uK", "trap_lost"});
  json j;
  j["axis"] = c.trap.misalign_axis == MisalignAxis::Vertical ? "vertical" : "horizontal";
  for (const auto& r : rows) {
    auto cells = detail::nums({r.offset / units::um, r.ratio, detail::to_uK(s.constants, r.depth),
                               detail::to_uK(s.constants, r.reference_depth)});
    cells.push_back(r.trap_lost ? "1" : "0");
    detail::csv_row(o, cells);
    j["rows"].push_back({{"offset_um", r.offset / units::um}, {"depth_ratio", r.ratio}, {"trap_lost", r.trap_lost}});
  }
  out.write_json("misalign.json", j);
}

inline SiteTable grid_table(const RunConfig& c, const TrapSetup& s, ModulationWaveform& wf,
                            std::vector<std::string>& warn) {
  SynthesisResult r = synthesize_waveform(s, c.paint.grid);
  wf = r.waveform;
  warn = r.warnings;
  return characterize_sites(s, c.paint.grid.grid, wf, c.paint.grid.site_weights, c.site_options());
}

inline void cmd_paint_grid(const RunConfig& c, Outputs& out) {
  TrapSetup s = c.trap_setup();
  ModulationWaveform wf;
  std::vector<std::string> warn;
  SiteTable t = grid_table(c, s, wf, warn);
  auto o = out.open("sites.csv");
  detail::site_csv(o, t, s.constants);
  json j = detail::table_summary(t);
  j["warnings"] = warn;
  out.write_json("grid_summary.json", j);
  out.write_json("waveform.json", detail::waveform_json(wf));
}

inline void cmd_paint_compensate(const RunConfig& c, Outputs& out) {
  TrapSetup s = c.trap_setup();
  ModulationWaveform wf;
  std::vector<std::string> warn;
  SiteTable t = grid_table(c, s, wf, warn);
  CompensationOptions o;
  o.objective = c.paint.objective;
  o.max_iterations = c.paint.max_iterations;
  o.tolerance = c.paint.tolerance;
  o.grid_params = c.paint.grid;
  o.site = c.site_options();
  CompensationResult r = compensate_powers(s, t, o);
  {
    auto f = out.open("sites_before.csv");
    detail::site_csv(f, r.before, s.constants);
  }
  {
    auto f = out.open("sites_after.csv");
    detail::site_csv(f, r.after, s.constants);
  }
  GridParams gp = c.paint.grid;
  gp.site_weights = r.after.weights();
  json j;
  j["objective"] = o.objective == CompensationObjective::EqualDepth ? "equal-depth" : "equal-mean-frequency";
  j["before"] = detail::table_summary(r.before);
  j["after"] = detail::table_summary(r.after);
  j["individual_freq_spread"] = {{"before", r.before.individual_freq_spread()},
                                 {"after", r.after.individual_freq_spread()}};
  j["objective_spread_history"] = r.spread_history;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["warnings"] = warn;
  out.write_json("compensation.json", j);
  out.write_json("waveform.json", detail::waveform_json(synthesize_waveform(s, gp).waveform));
}

inline void cmd_paint_transport(const RunConfig& c, Outputs& out) {
  TrapSetup s = c.trap_setup();
  GridSpec start = c.paint.grid.grid, end = c.paint.grid.grid;
  start.spacing = c.paint.start_spacing;
  end.spacing = c.paint.end_spacing;
  end.center = c.paint.end_center;
  auto steps = transport_ramp(s, grid_positions(start), grid_positions(end),
                              c.paint.transport_duration, c.paint.transport);
  auto o = out.open("transport.csv");
  detail::csv_row(o, {"step", "time_ms", "site", "x_um", "y_um", "z_um", "H1_MHz", "V1_MHz", "H2_MHz", "V2_MHz"});
  json j;
  j["duration_ms"] = c.paint.transport_duration / units::ms;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto& st = steps[k];
    for (std::size_t i = 0; i < st.positions.size(); ++i) {
      const Vec3& p = st.positions[i];
      ChannelOffsets d = crossing_offsets(s.layout, p);
      std::vector<std::string> cells{std::to_string(k), detail::fmt(st.time / units::ms), std::to_string(i)};
      for (double v : {p.x() / units::um, p.y() / units::um, p.z() / units::um}) cells.push_back(detail::fmt(v));
      for (Channel ch : kChannels) cells.push_back(detail::fmt(odt::detail::to_MHz(s, ch, d[idx(ch)])));
      detail::csv_row(o, cells);
    }
    j["steps"].push_back({{"time_s", st.time}, {"waveform", detail::waveform_json(st.waveform)}});
  }
  out.write_json("transport_waveforms.json", j);
}

inline void cmd_evap_schedule(const RunConfig& c, Outputs& out) {
  RampSchedule sc = build_schedule(c.evap.schedule);
  int n = c.evap.schedule_samples;
  if (n < 2) throw DomainError("evap.schedule.samples must be >= 2");
  auto o = out.open("schedule.csv");
  detail::csv_row(o, {"t_s", "phase", "power_W", "amplitude_um", "two_dimensional"});
  double T = sc.total_duration();
  for (int k = 0; k < n; ++k) {
    double t = T * k / (n - 1);
    const auto& seg = sc.segment_at(t);
    detail::csv_row(o, {detail::fmt(t), seg.phase, detail::fmt(sc.power(t)),
                        detail::fmt(sc.amplitude(t) / units::um), seg.two_dimensional ? "1" : "0"});
  }
  json j;
  for (const auto& seg : sc.segments) {
    json q{{"phase", seg.phase}, {"start_s", seg.start}, {"end_s", seg.end}, {"two_dimensional", seg.two_dimensional}};
    if (seg.power.kind == PowerLaw::Exponential) q["power_tau_s"] = seg.power.tau();
    j["segments"].push_back(q);
  }
  j["total_duration_s"] = T;
  out.write_json("schedule.json", j);
}

inline void cmd_evap_timeline(const RunConfig& c, Outputs& out) {
  TrapSetup s = c.trap_setup();
  RampSchedule sc = build_schedule(c.evap.schedule);
  TimelineOptions to;
  to.convention = c.convention;
  to.shape = c.evap.shape;
  to.paint_samples = c.evap.paint_samples;
  auto rows = timeline(s, sc, c.evap.timeline_samples, to);
  auto o = out.open("timeline.csv");
  detail::csv_row(o, {"t_s", "phase", "power_W", "amplitude_um", "valid", "depth_uK", "f1_Hz", "f2_Hz", "f3_Hz",
                      "mean_frequency_Hz", "min_z_um"});
  for (const auto& r : rows) {
    std::vector<std::string> cells{detail::fmt(r.time), r.phase, detail::fmt(r.power),
                                   detail::fmt(r.amplitude / units::um), r.valid ? "1" : "0"};
    for (double v : {detail::to_uK(s.constants, r.depth), r.frequencies[0], r.frequencies[1], r.frequencies[2],
                     r.mean_frequency, r.minimum.z() / units::um})
      cells.push_back(detail::fmt(v));
    detail::csv_row(o, cells);
  }
  TimelineShape sh = timeline_shape(rows);
  json j;
  j["shape"] = {{"evaporation_depth_decreasing", sh.evaporation_depth_decreasing},
                {"reopen_depth_increases", sh.reopen_depth_increases},
                {"reopen_frequencies_decrease", sh.reopen_frequencies_decrease},
                {"reopen_mean_frequency_decreases", sh.reopen_mean_frequency_decreases},
                {"first_increase_row", sh.first_increase_row}};
  j["rows"] = rows.size();
  j["invalid_rows"] = std::count_if(rows.begin(), rows.end(), [](const TimelineRow& r) { return !r.valid; });
  if (!rows.empty() && rows.front().valid) {
    const auto& r0 = rows.front();
    ThermoMetrics mi = thermo_metrics_from(r0.mean_frequency, r0.depth, c.evap.initial_atoms,
                                           c.evap.initial_temperature, s.constants);
    ThermoMetrics mf = mi;
    mf.atom_number = c.evap.final_atoms;
    mf.psd = c.evap.final_psd;
    EfficiencyResult e = evaporation_efficiency(mi, mf);
    j["initial"] = {{"mean_frequency_Hz", r0.mean_frequency}, {"depth_uK", detail::to_uK(s.constants, r0.depth)},
                    {"psd", mi.psd}, {"truncation_parameter", mi.truncation_parameter}};
    j["efficiency"] = {{"gamma", e.gamma}, {"convention", e.convention}};
  }
  out.write_json("timeline.json", j);
}

inline void cmd_tof_expand(const RunConfig& c, Outputs& out) {
  const auto& X = c.tof;
  if (X.t_count < 2 || !(X.t_stop > X.t_start) || X.t_start < 0)
    throw DomainError("tof times need t_count >= 2 and 0 <= t_start < t_stop");
  std::vector<double> t;
  for (int k = 0; k < X.t_count; ++k) t.push_back(X.t_start + (X.t_stop - X.t_start) * k / (X.t_count - 1));
  if (t.front() > 0) t.insert(t.begin(), 0.0);
  auto samples = expand(X.state, t, X.axis_a, X.axis_b);
  auto o = out.open("expansion.csv");
  detail::csv_row(o, {"t_ms", "lambda_x", "lambda_y", "lambda_z", "tf_rx_um", "tf_ry_um", "tf_rz_um", "th_rx_um",
                      "th_ry_um", "th_rz_um", "tf_aspect", "thermal_aspect"});
  for (const auto& e : samples) {
    detail::csv_row(o, detail::nums({e.time / units::ms, e.lambda.x(), e.lambda.y(), e.lambda.z(),
                                     e.tf_radius.x() / units::um, e.tf_radius.y() / units::um,
                                     e.tf_radius.z() / units::um, e.thermal_radius.x() / units::um,
                                     e.thermal_radius.y() / units::um, e.thermal_radius.z() / units::um,
                                     e.tf_aspect, e.thermal_aspect}));
  }
  json j;
  auto inv = aspect_inversion_time(samples);
  j["tf_aspect_inversion_ms"] = inv ? json(*inv / units::ms) : json(nullptr);
  j["initial_tf_radii_um"] = detail::vec_um(samples.front().tf_radius);
  j["aspect_axes"] = {X.axis_a, X.axis_b};
  out.write_json("expansion.json", j);
}

inline void cmd_tof_fit(const RunConfig& c, Outputs& out) {
  if (c.tof.profile_csv.empty()) throw ConfigError("tof.profile_csv: required for tof fit");
  auto rows = detail::read_numeric_csv(c.tof.profile_csv, 2);
  Profile p;
  bool with_sigma = !rows.empty() && rows.front().size() >= 3;
  for (const auto& r : rows) {
    p.x.push_back(r[0]);
    p.counts.push_back(r[1]);
    if (with_sigma) {
      if (r.size() < 3) throw DomainError(c.tof.profile_csv + ": inconsistent sigma column");
      p.sigma.push_back(r[2]);
    }
  }
  FitResult f = fit_bimodal(p);
  auto params = [](const BimodalParams& b) {
    return json{{"A_th", b.A_th}, {"sigma", b.sigma}, {"A_tf", b.A_tf}, {"R", b.R}, {"x0", b.x0}, {"offset", b.offset}};
  };
  json j;
  j["bimodal"] = params(f.params);
  j["thermal_only"] = params(f.thermal_only);
  j["thermal_fraction"] = f.thermal_fraction;
  j["chi2_red"] = f.chi2_red;
  j["thermal_only_chi2_red"] = f.thermal_only_chi2_red;
  j["dof"] = f.dof;
  j["converged"] = f.converged;
  j["weights"] = with_sigma ? "sigma column" : "poisson";
  out.write_json("fit.json", j);
}

inline void cmd_flight_synth(const RunConfig& c, Outputs& out) {
  const auto& sc = c.flight.scenario;
  FlightTruth tr = flight_truth(sc, c.seed);
  auto frames = flight_frames(sc, tr, c.seed);
  auto idxf = out.open("index.csv");
  detail::csv_row(idxf, {"file", "t_s"});
  for (std::size_t k = 0; k < frames.size(); ++k) {
    char name[48];
    std::snprintf(name, sizeof name, "frames/frame_%05zu.pgm", k);
    write_pgm(out.path(name).string(), frames[k]);
    detail::csv_row(idxf, {name, detail::fmt(frames[k].timestamp)});
  }
  auto tru = out.open("truth.csv");
  detail::csv_row(tru, {"t_s", "x1_um", "y1_um", "x2_um", "y2_um"});
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const auto& p = tr.positions[k];
    detail::csv_row(tru, detail::nums({tr.times[k], p[0].x(), p[0].y(), p[1].x(), p[1].y()}));
  }
  const auto& ph = sc.phases;
  out.write_json("phases.json", {{"launch_s", ph.launch}, {"microgravity_s", ph.microgravity},
                                 {"landing_s", ph.landing}, {"post_s", ph.post},
                                 {"pixel_pitch_um", sc.frame.pixel_pitch_um}});
  out.write_json("truth.json", {{"launch_max_um", tr.launch_max_um},
                                {"microgravity_offset_um", tr.microgravity_offset_um},
                                {"interspot_std_um", tr.interspot_std_um},
                                {"frames", frames.size()}});
}

inline void cmd_flight_analyze(const RunConfig& c, Outputs& out) {
  const auto& a = c.flight.analysis;
  PhaseBoundaries ph = c.flight.scenario.phases;
  FlightReport r;
  if (!c.flight.centroid_csv.empty()) {
    SpotTrackSeries s;
    s.phases = ph;
    for (const auto& row : detail::read_numeric_csv(c.flight.centroid_csv, 5))
      s.frames.push_back({row[0], {Vec2(row[1], row[2]), Vec2(row[3], row[4])}, true});
    r = track_stats(s, a.inner_fraction);
  } else {
    fs::path dir = c.flight.input_dir.empty() ? out.dir() : fs::path(c.flight.input_dir);
    fs::path index = dir / "index.csv";
    std::ifstream in(index);
    if (!in) throw DomainError("cannot read frame index " + index.string());
    double pitch = c.flight.scenario.frame.pixel_pitch_um;
    fs::path phfile = dir / "phases.json";
    if (fs::exists(phfile)) {
      json pj = load_config_json(phfile.string());
      ph = {pj.at("launch_s").get<double>(), pj.at("microgravity_s").get<double>(),
            pj.at("landing_s").get<double>(), pj.at("post_s").get<double>()};
      pitch = pj.value("pixel_pitch_um", pitch);
    }
    std::string line;
    std::getline(in, line);
    std::vector<Frame> frames;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto comma = line.find(',');
      if (comma == std::string::npos) throw DomainError("malformed frame index line: " + line);
      double t = std::stod(line.substr(comma + 1));
      frames.push_back(read_pgm((dir / line.substr(0, comma)).string(), pitch, t));
    }
    r = analyze_frames(frames, ph, a);
  }
  out.write_json("flight_report.json", detail::flight_json(r));
  auto o = out.open("flight_series.csv");
  detail::flight_series_csv(o, r);
}

using Handler = std::function<void(const RunConfig&, Outputs&)>;

inline const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> h{
      {"trap report", cmd_trap_report},       {"trap volume", cmd_trap_volume},
      {"trap misalign-sweep", cmd_trap_misalign}, {"paint grid", cmd_paint_grid},
      {"paint compensate", cmd_paint_compensate}, {"paint transport", cmd_paint_transport},
      {"evap schedule", cmd_evap_schedule},   {"evap timeline", cmd_evap_timeline},
      {"tof expand", cmd_tof_expand},         {"tof fit", cmd_tof_fit},
      {"flight synth", cmd_flight_synth},     {"flight analyze", cmd_flight_analyze}};
  return h;
}

inline json manifest(const std::string& command, const json& config, const RunConfig& c,
                     const std::vector<std::string>& files) {
  std::string canon = config.dump();
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
  json j;
  j["command"] = command;
  j["config_hash_fnv1a64"] = hash;
  j["seed"] = c.seed;
  j["versions"] = {{"odtk", ODT_VERSION},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                 "." + std::to_string(EIGEN_MINOR_VERSION)},
                   {"boost", BOOST_LIB_VERSION},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  j["outputs"] = files;
  j["config"] = config;
  return j;
}

/// Entry point; argv excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Optical dipole trap toolkit"};
  app.name("odtk");
  std::vector<std::string> command;
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool print_config = false;
  app.add_option("command", command, "group and action, e.g. 'trap report'")->expected(0, 2);
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--seed", seed, "random seed (overrides seed)");
  app.add_option("--set", sets, "override a field: dotted.path=value (repeatable)")->allow_extra_args(false);
  app.add_flag("--print-config", print_config, "print the resolved configuration and exit");
  std::string footer = "Commands:";
  for (const char* c : kCommands) footer += std::string("\n  ") + c;
  footer += "\nExit codes: 0 ok, 2 config error, 3 domain error, 4 model-validity error";
  app.footer(footer);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return Ok;
  } catch (const CLI::ParseError& e) {
    err << "odtk: " << e.what() << '\n';
    return ConfigFailure;
  }

  std::string name;
  for (const auto& w : command) name += (name.empty() ? "" : " ") + w;
  try {
    json defaults = config_to_json(RunConfig{});
    json user = config_path.empty() ? json::object() : load_config_json(config_path);
    if (!user.is_object()) throw ConfigError("config root must be an object");
    for (const auto& s : sets) apply_override(user, defaults, s);
    if (!out_dir.empty()) user["output_dir"] = out_dir;
    if (seed) user["seed"] = *seed;
    RunConfig cfg = config_from_json(user);
    json resolved = config_to_json(cfg);
    if (print_config) {
      out << resolved.dump(2) << '\n';
      return Ok;
    }
    auto it = handlers().find(name);
    if (it == handlers().end())
      throw ConfigError(name.empty() ? "no command given (see --help)" : "unknown command '" + name + "'");
    Outputs o(cfg.output_dir);
    int code = Ok;
    std::string failure;
    try {
      it->second(cfg, o);
    } catch (const ModelValidityError& e) {
      code = ModelFailure;
      failure = e.what();
    }
    json m = manifest(name, resolved, cfg, o.files());
    if (code != Ok) m["error"] = failure;
    std::ofstream mf(o.dir() / "manifest.json");
    mf << m.dump(2) << '\n';
    if (code != Ok) err << "odtk: model validity: " << failure << '\n';
    else out << "odtk: " << name << " -> " << o.dir().string() << '\n';
    return code;
  } catch (const ConfigError& e) {
    err << "odtk: config error: " << e.what() << '\n';
    return ConfigFailure;
  } catch (const ModelValidityError& e) {
    err << "odtk: model validity: " << e.what() << '\n';
    return ModelFailure;
  } catch (const DomainError& e) {
    err << "odtk: domain error: " << e.what() << '\n';
    return DomainFailure;
  } catch (const json::exception& e) {
    err << "odtk: config error: " << e.what() << '\n';
    return ConfigFailure;
  } catch (const std::exception& e) {
    err << "odtk: error: " << e.what() << '\n';
    return Failure;
  }
}

}  // namespace odt::cli
