#pragma once

#include "odt/trapchar.hpp"

#include <variant>

namespace odt {

struct GridSpec {
  std::array<int, 3> counts{3, 1, 3};
  Vec3 spacing{480e-6, 0, 480e-6};  // m
  Vec3 center = Vec3::Zero();

  std::size_t size() const {
    return static_cast<std::size_t>(counts[0]) * counts[1] * counts[2];
  }
  Vec3 site(int i, int j, int k) const {
    Vec3 o((i - 0.5 * (counts[0] - 1)) * spacing.x(), (j - 0.5 * (counts[1] - 1)) * spacing.y(),
           (k - 0.5 * (counts[2] - 1)) * spacing.z());
    return center + o;
  }
  std::vector<std::array<int, 3>> indices() const {
    std::vector<std::array<int, 3>> out;
    for (int k = 0; k < counts[2]; ++k)
      for (int j = 0; j < counts[1]; ++j)
        for (int i = 0; i < counts[0]; ++i) out.push_back({i, j, k});
    return out;
  }
  void validate(const TrapSetup& s) const {
    for (int a = 0; a < 3; ++a) {
      if (counts[a] < 1) throw DomainError("grid counts must be positive");
      if (counts[a] > 1 && !(spacing[a] > 0))
        throw DomainError("grid spacing must be positive on axes with more than one site");
    }
    for (auto [i, j, k] : indices()) {
      ChannelOffsets o = crossing_offsets(s.layout, site(i, j, k));
      for (Channel c : kChannels)
        if (std::abs(o[idx(c)]) > channel_reach(s.layout, s.displacement, c) * (1 + 1e-9))
          throw DomainError("grid site outside the reachable volume");
    }
  }
};

/// One in-plane dwell position with its vertical tones.
struct InPlaneSlot {
  Vec2 xy = Vec2::Zero();
  std::vector<double> z;        // m
  std::vector<double> weights;  // per tone
};

/// Time-multiplexed multi-site plan: slots visited in order, tones interleaved within a slot.
struct SitePlan {
  std::vector<InPlaneSlot> slots;
  std::size_t site_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.z.size();
    return n;
  }
};

/// Grid to plan; in-plane slots visited in serpentine order, weights in GridSpec::indices() order.
inline SitePlan plan_from_grid(const GridSpec& g, const std::vector<double>& weights = {}) {
  if (!weights.empty() && weights.size() != g.size())
    throw DomainError("site weight count does not match the grid");
  SitePlan p;
  for (int j = 0; j < g.counts[1]; ++j)
    for (int ii = 0; ii < g.counts[0]; ++ii) {
      int i = (j % 2 == 0) ? ii : g.counts[0] - 1 - ii;
      InPlaneSlot s;
      Vec3 c = g.site(i, j, 0);
      s.xy = Vec2(c.x(), c.y());
      for (int k = 0; k < g.counts[2]; ++k) {
        s.z.push_back(g.site(i, j, k).z());
        std::size_t n = static_cast<std::size_t>(i) +
                        static_cast<std::size_t>(g.counts[0]) * (j + static_cast<std::size_t>(g.counts[1]) * k);
        s.weights.push_back(weights.empty() ? 1.0 : weights[n]);
      }
      p.slots.push_back(s);
    }
  return p;
}

struct StaticOffsetParams {
  std::array<double, 4> offsets_MHz{0, 0, 0, 0};
  std::array<double, 4> weights{1, 1, 1, 1};
  double period = 1e-4;
};

/// DoubleWell dwells at +-A on the same sample grid, so it morphs continuously from a line paint.
enum class SweepShape { Triangle, Parabolic, DoubleWell };

struct LinePaintParams {
  double amplitude = 460e-6;  // per-beam perpendicular displacement, m
  SweepShape shape = SweepShape::Parabolic;
  bool two_dimensional = false;  // beam 2 swept at twice the rate
  int samples = 256;
  double period = 1e-4;
};

struct VerticalTonesParams {
  int tones = 2;
  double spacing = 190e-6;
  double center_z = 0;
  double period = 1e-4;
};

struct GridParams {
  GridSpec grid;
  std::vector<double> site_weights;  // empty = all 1
  double transition_fraction = 0.2;
  int transition_samples = 8;
  bool blank_transitions = true;  // vertical amplitude off while the crossing moves
  double period = 1e-4;
};

using WaveformRequest = std::variant<StaticOffsetParams, LinePaintParams, VerticalTonesParams, GridParams>;

struct SynthesisResult {
  ModulationWaveform waveform;
  std::vector<std::string> warnings;
};

namespace detail {

inline double to_MHz(const TrapSetup& s, Channel c, double d) {
  return displacement_to_deflection(s.layout, s.displacement, c, d);
}

/// Position along a line paint at phase u in [0, 1): -A -> +A -> -A.
inline double sweep_position(SweepShape shape, double A, double u) {
  u -= std::floor(u);
  double tri = u < 0.5 ? 2 * u : 2 - 2 * u;
  if (shape == SweepShape::Triangle) return A * (2 * tri - 1);
  if (shape == SweepShape::DoubleWell) {
    double x = 2 * tri - 1;
    return x > 0 ? A : (x < 0 ? -A : 0.0);
  }
  // dwell density proportional to 1 - x^2/A^2: harmonic painted potential
  return A * 2 * std::sin(std::asin(std::clamp(2 * tri - 1, -1.0, 1.0)) / 3);
}

inline SynthesisResult synthesize_plan(const TrapSetup& s, const SitePlan& plan, double tf,
                                       int tsamples, double period, bool blank = true) {
  if (plan.slots.empty()) throw DomainError("site plan has no slots");
  if (!(tf >= 0 && tf < 1)) throw DomainError("transition_fraction must lie in [0, 1)");
  if (tsamples < 2) tsamples = 2;
  SynthesisResult r;
  ModulationWaveform& w = r.waveform;
  w.period = period;
  for (auto& c : w.channels) c.clear();
  const OpticalLayout& L = s.layout;
  auto [d0, h0] = nominal_axes(L, 0);
  auto [d1, h1] = nominal_axes(L, 1);
  auto hoff = [&](const Vec2& xy) {
    Vec3 p(xy.x(), xy.y(), 0);
    return std::array<double, 2>{to_MHz(s, Channel::H1, p.dot(h0)), to_MHz(s, Channel::H2, p.dot(h1))};
  };
  const std::size_t n = plan.slots.size();
  const double slot = period / static_cast<double>(n);
  bool moving = n > 1 && tf > 0;
  for (std::size_t j = 0; j < n; ++j) {
    const InPlaneSlot& S = plan.slots[j];
    if (S.z.empty() || S.z.size() != S.weights.size())
      throw DomainError("each slot needs matching tones and weights");
    for (double wt : S.weights)
      if (!(wt > 0)) throw DomainError("site weights must be positive");
    double t0 = slot * static_cast<double>(j);
    double tdw = moving ? t0 + tf * slot : t0;
    auto hcur = hoff(S.xy);
    const std::size_t m = S.z.size();
    // blanked moves paint nothing; unblanked moves cycle the tones
    auto tones = [&](double a, double b, double scale) {
      double sub = (b - a) / static_cast<double>(m);
      for (std::size_t k = 0; k < m; ++k) {
        double ta = a + sub * static_cast<double>(k), tb = k + 1 == m ? b : a + sub * static_cast<double>(k + 1);
        double f1 = to_MHz(s, Channel::V1, S.z[k]), f2 = to_MHz(s, Channel::V2, S.z[k]);
        w.channel(Channel::V1).push_back({ta, f1, scale * S.weights[k]});
        w.channel(Channel::V2).push_back({ta, f2, scale * S.weights[k]});
        w.channel(Channel::V1).push_back({tb, f1, scale * S.weights[k]});
        w.channel(Channel::V2).push_back({tb, f2, scale * S.weights[k]});
      }
    };
    if (moving) {
      auto hprev = hoff(plan.slots[(j + n - 1) % n].xy);
      for (int k = 0; k < tsamples; ++k) {
        double u = static_cast<double>(k) / tsamples;
        double e = 0.5 * (1 - std::cos(units::pi * u));
        double t = t0 + u * (tdw - t0);
        w.channel(Channel::H1).push_back({t, hprev[0] + e * (hcur[0] - hprev[0]), 1});
        w.channel(Channel::H2).push_back({t, hprev[1] + e * (hcur[1] - hprev[1]), 1});
      }
      tones(t0, tdw, blank ? 0.0 : 1.0);
    }
    double t1 = t0 + slot;
    w.channel(Channel::H1).push_back({tdw, hcur[0], 1});
    w.channel(Channel::H2).push_back({tdw, hcur[1], 1});
    w.channel(Channel::H1).push_back({t1, hcur[0], 1});
    w.channel(Channel::H2).push_back({t1, hcur[1], 1});
    tones(tdw, t1, 1.0);
  }
  // stationary single slot: two samples at the same offset are one constant
  for (auto& c : w.channels) {
    bool constant = std::all_of(c.begin(), c.end(), [&](const WaveformSample& x) {
      return x.freq_offset == c.front().freq_offset && x.weight == c.front().weight;
    });
    if (constant) c = {{0.0, c.front().freq_offset, c.front().weight}};
  }
  // keep within the power budget
  for (Channel c : {Channel::V1, Channel::V2}) {
    double mw = w.mean_weight(c);
    if (mw > 1 + 1e-12) {
      for (auto& x : w.channel(c)) x.weight /= mw;
      r.warnings.push_back(std::string("site weights rescaled by 1/") + std::to_string(mw) +
                           " on " + channel_name(c) + " to keep the mean amplitude weight <= 1");
    }
  }
  // collisions: closer than two local waists
  double wz = s.focused_waist();
  std::vector<Vec3> sites;
  for (const auto& S : plan.slots)
    for (double z : S.z) sites.emplace_back(S.xy.x(), S.xy.y(), z);
  for (std::size_t a = 0; a < sites.size(); ++a)
    for (std::size_t b = a + 1; b < sites.size(); ++b)
      if ((sites[a] - sites[b]).norm() < 2 * wz)
        r.warnings.push_back("site collision: sites " + std::to_string(a) + " and " +
                             std::to_string(b) + " closer than two waists");
  w.validate(L);
  return r;
}

}  // namespace detail

struct PaintSynth {
  const TrapSetup& s;
  SynthesisResult operator()(const StaticOffsetParams& p) const {
    SynthesisResult r{ModulationWaveform::constant(p.offsets_MHz, p.weights, p.period), {}};
    r.waveform.validate(s.layout);
    return r;
  }
  SynthesisResult operator()(const LinePaintParams& p) const {
    if (!(p.amplitude >= 0)) throw DomainError("line-paint amplitude must be >= 0");
    SynthesisResult r;
    ModulationWaveform& w = r.waveform;
    w.period = p.period;
    w.channel(Channel::V1) = {{0, 0, 1}};
    w.channel(Channel::V2) = {{0, 0, 1}};
    if (p.amplitude == 0) {
      w.channel(Channel::H1) = {{0, 0, 1}};
      w.channel(Channel::H2) = {{0, 0, 1}};
      return r;
    }
    for (Channel c : {Channel::H1, Channel::H2})
      if (p.amplitude > channel_reach(s.layout, s.displacement, c) * (1 + 1e-9))
        throw DomainError("line-paint amplitude beyond the AOD reach");
    int n = p.shape == SweepShape::Triangle ? 2 : std::max(4, p.samples - p.samples % 2);
    for (int k = 0; k < n; ++k) {
      double u = static_cast<double>(k) / n;
      double x1 = detail::sweep_position(p.shape, p.amplitude, u);
      double x2 = p.two_dimensional ? detail::sweep_position(p.shape, p.amplitude, 2 * u) : x1;
      w.channel(Channel::H1).push_back({u * p.period, detail::to_MHz(s, Channel::H1, x1), 1});
      if (!p.two_dimensional)
        w.channel(Channel::H2).push_back({u * p.period, detail::to_MHz(s, Channel::H2, x2), 1});
    }
    if (p.two_dimensional) {
      int m = p.shape == SweepShape::Triangle ? 4 : 2 * n;
      for (int k = 0; k < m; ++k) {
        double u = static_cast<double>(k) / m;
        double x2 = detail::sweep_position(p.shape, p.amplitude, 2 * u);
        w.channel(Channel::H2).push_back({u * p.period, detail::to_MHz(s, Channel::H2, x2), 1});
      }
    }
    w.validate(s.layout);
    return r;
  }
  SynthesisResult operator()(const VerticalTonesParams& p) const {
    if (p.tones < 1) throw DomainError("need at least one vertical tone");
    if (p.tones > 1 && !(p.spacing > 0)) throw DomainError("tone spacing must be positive");
    SitePlan plan;
    InPlaneSlot sl;
    for (int k = 0; k < p.tones; ++k) {
      sl.z.push_back(p.center_z + (k - 0.5 * (p.tones - 1)) * p.spacing);
      sl.weights.push_back(1.0);
    }
    plan.slots.push_back(sl);
    return detail::synthesize_plan(s, plan, 0.0, 2, p.period);
  }
  SynthesisResult operator()(const GridParams& p) const {
    p.grid.validate(s);
    return detail::synthesize_plan(s, plan_from_grid(p.grid, p.site_weights), p.transition_fraction,
                                   p.transition_samples, p.period, p.blank_transitions);
  }
};

inline SynthesisResult synthesize_waveform(const TrapSetup& setup, const WaveformRequest& req) {
  setup.validate();
  return std::visit(PaintSynth{setup}, req);
}

/// Resample every channel at n uniform times (drops jumps; for smooth waveforms).
inline ModulationWaveform resample(const ModulationWaveform& w, int n) {
  if (n < 1) throw DomainError("resample needs n >= 1");
  ModulationWaveform r;
  r.period = w.period;
  for (Channel c : kChannels)
    for (int k = 0; k < n; ++k) {
      double t = w.period * k / n;
      WaveformSample v = w.at(c, t);
      r.channel(c).push_back({t, v.freq_offset, v.weight});
    }
  return r;
}

inline std::vector<ModulationWaveform> split_ramp(const ModulationWaveform& a,
                                                  const ModulationWaveform& b, double duration,
                                                  int steps) {
  if (steps < 2) throw DomainError("split_ramp needs at least 2 steps");
  if (!(duration > 0)) throw DomainError("split_ramp duration must be positive");
  if (a.period != b.period) throw DomainError("split_ramp: waveform periods differ");
  for (std::size_t c = 0; c < 4; ++c) {
    if (a.channels[c].size() != b.channels[c].size())
      throw DomainError("split_ramp: mismatched channel structure");
    for (std::size_t i = 0; i < a.channels[c].size(); ++i)
      if (a.channels[c][i].time != b.channels[c][i].time)
        throw DomainError("split_ramp: mismatched sample times");
  }
  std::vector<ModulationWaveform> out;
  for (int k = 0; k < steps; ++k) {
    if (k == 0) { out.push_back(a); continue; }
    if (k == steps - 1) { out.push_back(b); continue; }
    double s = static_cast<double>(k) / (steps - 1);
    ModulationWaveform w = a;
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < w.channels[c].size(); ++i) {
        w.channels[c][i].freq_offset = std::lerp(a.channels[c][i].freq_offset, b.channels[c][i].freq_offset, s);
        w.channels[c][i].weight = std::lerp(a.channels[c][i].weight, b.channels[c][i].weight, s);
      }
    out.push_back(w);
  }
  return out;
}

enum class RampProfile { Linear, MinimumJerk };

inline double ramp_profile(RampProfile p, double s) {
  s = std::clamp(s, 0.0, 1.0);
  if (p == RampProfile::Linear) return s;
  return s * s * s * (10 - 15 * s + 6 * s * s);
}

struct TransportStep {
  double time = 0;
  std::vector<Vec3> positions;
  ModulationWaveform waveform;
};

struct TransportOptions {
  RampProfile profile = RampProfile::MinimumJerk;
  int steps = 11;
  double transition_fraction = 0.2;
  int transition_samples = 8;
  bool blank_transitions = true;
  double period = 1e-4;
};

/// Group sites sharing an in-plane position at both ends into one slot.
inline SitePlan plan_from_positions(const std::vector<Vec3>& now, const std::vector<Vec3>& start,
                                    const std::vector<Vec3>& end) {
  SitePlan p;
  std::vector<std::pair<Vec2, Vec2>> keys;
  for (std::size_t i = 0; i < now.size(); ++i) {
    std::pair<Vec2, Vec2> key{start[i].head<2>(), end[i].head<2>()};
    std::size_t slot = keys.size();
    for (std::size_t k = 0; k < keys.size(); ++k)
      if (keys[k].first == key.first && keys[k].second == key.second) slot = k;
    if (slot == keys.size()) {
      keys.push_back(key);
      InPlaneSlot s;
      s.xy = now[i].head<2>();
      p.slots.push_back(s);
    }
    p.slots[slot].z.push_back(now[i].z());
    p.slots[slot].weights.push_back(1.0);
  }
  return p;
}

inline std::vector<TransportStep> transport_ramp(const TrapSetup& setup, const std::vector<Vec3>& start,
                                                 const std::vector<Vec3>& end, double duration,
                                                 const TransportOptions& o = {}) {
  if (start.empty() || start.size() != end.size())
    throw DomainError("transport needs equal, non-empty start and end site lists");
  if (!(duration > 0)) throw DomainError("transport duration must be positive");
  if (o.steps < 2) throw DomainError("transport needs at least 2 steps");
  std::vector<TransportStep> out;
  for (int k = 0; k < o.steps; ++k) {
    double s = static_cast<double>(k) / (o.steps - 1);
    double e = ramp_profile(o.profile, s);
    TransportStep st;
    st.time = duration * s;
    for (std::size_t i = 0; i < start.size(); ++i) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = std::lerp(start[i][a], end[i][a], e);
      ChannelOffsets off = crossing_offsets(setup.layout, p);
      for (Channel c : kChannels)
        if (std::abs(off[idx(c)]) > channel_reach(setup.layout, setup.displacement, c) * (1 + 1e-9))
          throw DomainError("transport waypoint unreachable at t = " + std::to_string(st.time) + " s");
      st.positions.push_back(p);
    }
    SitePlan plan = plan_from_positions(st.positions, start, end);
    st.waveform = detail::synthesize_plan(setup, plan, o.transition_fraction, o.transition_samples,
                                          o.period, o.blank_transitions).waveform;
    out.push_back(std::move(st));
  }
  return out;
}

inline std::vector<Vec3> grid_positions(const GridSpec& g) {
  std::vector<Vec3> v;
  for (auto [i, j, k] : g.indices()) v.push_back(g.site(i, j, k));
  return v;
}

/// Strict local minima (26-neighbourhood, interior nodes) at least `fraction` as deep as the global minimum.
inline std::vector<Vec3> minima_census(const ScalarField3D& f, double fraction = 0.05) {
  f.validate();
  double gmin = *std::min_element(f.values.begin(), f.values.end());
  std::vector<Vec3> out;
  if (!(gmin < 0)) return out;
  for (int k = 1; k + 1 < f.dims[2]; ++k)
    for (int j = 1; j + 1 < f.dims[1]; ++j)
      for (int i = 1; i + 1 < f.dims[0]; ++i) {
        double v = f(i, j, k);
        if (v > fraction * gmin) continue;
        bool is_min = true;
        for (int dk = -1; dk <= 1 && is_min; ++dk)
          for (int dj = -1; dj <= 1 && is_min; ++dj)
            for (int di = -1; di <= 1 && is_min; ++di) {
              if (!di && !dj && !dk) continue;
              if (f(i + di, j + dj, k + dk) <= v) is_min = false;
            }
        if (is_min) out.push_back(f.node(i, j, k));
      }
  return out;
}

struct SiteRow {
  std::array<int, 3> index{};
  Vec3 position = Vec3::Zero();
  TrapReport report;
  std::array<double, 2> radius_h{}, radius_v{}, radius_mean{};  // per beam, geometric mean
  double weight = 1;
  double depth_dev = 0, mean_freq_dev = 0;
  std::array<double, 3> freq_dev{};
  std::array<double, 2> size_dev{};
  bool flagged = false;
};

struct SiteTable {
  GridSpec grid;
  std::vector<SiteRow> rows;
  std::size_t center = 0;

  std::vector<double> weights() const {
    std::vector<double> w;
    for (const auto& r : rows) w.push_back(r.weight);
    return w;
  }
  void compute_deviations() {
    const SiteRow& c = rows[center];
    for (auto& r : rows) {
      if (r.flagged || c.flagged) continue;
      r.depth_dev = r.report.depth / c.report.depth - 1;
      r.mean_freq_dev = r.report.mean_frequency / c.report.mean_frequency - 1;
      for (int i = 0; i < 3; ++i) r.freq_dev[i] = r.report.frequencies[i] / c.report.frequencies[i] - 1;
      for (int b = 0; b < 2; ++b) r.size_dev[b] = r.radius_mean[b] / c.radius_mean[b] - 1;
    }
  }
  double max_abs(double SiteRow::*m) const {
    double v = 0;
    for (const auto& r : rows) v = std::max(v, std::abs(r.*m));
    return v;
  }
  double max_abs_depth_dev() const { return max_abs(&SiteRow::depth_dev); }
  double max_abs_mean_freq_dev() const { return max_abs(&SiteRow::mean_freq_dev); }
  double max_abs_freq_dev() const {
    double v = 0;
    for (const auto& r : rows)
      for (double d : r.freq_dev) v = std::max(v, std::abs(d));
    return v;
  }
  /// Signed deviation of largest magnitude for beam b.
  double extreme_size_dev(int b) const {
    double v = 0;
    for (const auto& r : rows)
      if (std::abs(r.size_dev[b]) > std::abs(v)) v = r.size_dev[b];
    return v;
  }
  /// (max - min) / mean of a per-site quantity over valid rows.
  template <class F>
  double spread(F get) const {
    double lo = 1e300, hi = -1e300, s = 0;
    int n = 0;
    for (const auto& r : rows) {
      if (r.flagged) continue;
      double v = get(r);
      lo = std::min(lo, v), hi = std::max(hi, v), s += v, ++n;
    }
    return n ? (hi - lo) / (s / n) : 0.0;
  }
  double individual_freq_spread() const {
    double v = 0;
    for (int i = 0; i < 3; ++i)
      v = std::max(v, spread([i](const SiteRow& r) { return r.report.frequencies[i]; }));
    return v;
  }
  bool any_flagged() const {
    return std::any_of(rows.begin(), rows.end(), [](const SiteRow& r) { return r.flagged; });
  }
};

/// Local 1/e^2 radii of both beams with their axes crossing at p.
inline std::array<std::array<double, 2>, 2> local_radii(const TrapSetup& s, const Vec3& p) {
  ChannelOffsets o = crossing_offsets(s.layout, p);
  BeamPair b = build_beamlines(s.layout, s.inputs, o, s.displacement);
  std::array<std::array<double, 2>, 2> r;
  for (int i = 0; i < 2; ++i) {
    double z = (p - b[i].origin).dot(b[i].direction);
    r[i] = {b[i].radius_h(z), b[i].radius_v(z)};
  }
  return r;
}

struct SiteOptions {
  DepthConvention convention = DepthConvention::PeakToMin;
  double fd_step_waists = 0.02;
  AveragingOptions averaging;
};

inline SiteTable characterize_sites(const TrapSetup& setup, const GridSpec& g,
                                    const ModulationWaveform& wf, const std::vector<double>& weights = {},
                                    const SiteOptions& so = {}) {
  g.validate(setup);
  TimeAveragedPotential U(setup, wf, so.averaging);
  CharacterizeOptions base = default_options(U, so.convention, so.fd_step_waists);
  double w = setup.focused_waist();
  double minsp = 1e300;
  for (int a = 0; a < 3; ++a)
    if (g.counts[a] > 1) minsp = std::min(minsp, g.spacing[a]);
  Vec3 half;
  for (int a = 0; a < 3; ++a)
    half[a] = g.counts[a] > 1 ? 0.5 * g.spacing[a] : std::max(4 * w, minsp < 1e299 ? 0.5 * minsp : 4 * w);
  SiteTable t;
  t.grid = g;
  double best = 1e300;
  for (auto idx3 : g.indices()) {
    SiteRow r;
    r.index = idx3;
    r.position = g.site(idx3[0], idx3[1], idx3[2]);
    std::size_t n = t.rows.size();
    r.weight = weights.empty() ? 1.0 : weights.at(n);
    auto rad = local_radii(setup, r.position);
    for (int b = 0; b < 2; ++b) {
      r.radius_h[b] = rad[b][0];
      r.radius_v[b] = rad[b][1];
      r.radius_mean[b] = std::sqrt(rad[b][0] * rad[b][1]);
    }
    CharacterizeOptions o = base;
    o.domain = Box{r.position - half, r.position + half};
    o.multi_seed_fallback = true;
    r.report = characterize(U, r.position, o);
    r.flagged = !r.report.valid;
    double dc = (r.position - g.center).norm();
    if (dc < best) best = dc, t.center = n;
    t.rows.push_back(r);
  }
  t.compute_deviations();
  return t;
}

enum class CompensationObjective { EqualDepth, EqualMeanFrequency };

/// One rescaling step: depth proportional to power, frequency to sqrt(power). Mean weight 1.
inline std::vector<double> rescale_weights(const std::vector<double>& w, const std::vector<double>& value,
                                           CompensationObjective obj, double exponent = 1.0) {
  if (w.size() != value.size() || w.empty()) throw DomainError("weight/value size mismatch");
  double target = 0;
  for (double v : value) target += v;
  target /= static_cast<double>(value.size());
  std::vector<double> out(w.size());
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(value[i] > 0)) throw DomainError("objective values must be positive");
    double ratio = target / value[i];
    if (obj == CompensationObjective::EqualMeanFrequency) ratio *= ratio;
    out[i] = w[i] * std::pow(ratio, exponent);
    s += out[i];
  }
  for (double& x : out) x *= static_cast<double>(out.size()) / s;
  return out;
}

struct CompensationOptions {
  CompensationObjective objective = CompensationObjective::EqualDepth;
  int max_iterations = 12;
  double tolerance = 1e-3;
  GridParams grid_params;  // waveform synthesis parameters (weights replaced)
  SiteOptions site;
};

struct CompensationResult {
  SiteTable before, after;
  std::vector<double> spread_history;  // accepted iterates
  int iterations = 0;
  bool converged = false;
};

inline double objective_spread(const SiteTable& t, CompensationObjective obj) {
  return obj == CompensationObjective::EqualDepth
             ? t.spread([](const SiteRow& r) { return r.report.depth; })
             : t.spread([](const SiteRow& r) { return r.report.mean_frequency; });
}

inline CompensationResult compensate_powers(const TrapSetup& setup, const SiteTable& table,
                                            const CompensationOptions& o) {
  if (table.rows.empty()) throw DomainError("empty site table");
  if (table.any_flagged()) throw DomainError("compensation needs a table without invalid sites");
  CompensationResult res;
  res.before = table;
  SiteTable cur = table;
  double spread = objective_spread(cur, o.objective);
  res.spread_history.push_back(spread);
  auto values = [&](const SiteTable& t) {
    std::vector<double> v;
    for (const auto& r : t.rows)
      v.push_back(o.objective == CompensationObjective::EqualDepth ? r.report.depth
                                                                   : r.report.mean_frequency);
    return v;
  };
  auto evaluate = [&](const std::vector<double>& w) {
    GridParams gp = o.grid_params;
    gp.grid = table.grid;
    gp.site_weights = w;
    ModulationWaveform wf = synthesize_waveform(setup, gp).waveform;
    return characterize_sites(setup, table.grid, wf, w, o.site);
  };
  while (spread >= o.tolerance && res.iterations < o.max_iterations) {
    ++res.iterations;
    bool accepted = false;
    for (double ex : {1.0, 0.5, 0.25}) {
      std::vector<double> w = rescale_weights(cur.weights(), values(cur), o.objective, ex);
      SiteTable next = evaluate(w);
      if (next.any_flagged()) continue;
      double s = objective_spread(next, o.objective);
      if (s <= spread) {
        cur = next;
        spread = s;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    res.spread_history.push_back(spread);
  }
  res.converged = spread < o.tolerance;
  res.after = cur;
  return res;
}

}  // namespace odt
