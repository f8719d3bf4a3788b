#pragma once

#include "odt/optics.hpp"

#include <map>
#include <vector>

namespace odt {

struct WaveformSample {
  double time = 0;         // s, in [0, period]
  double freq_offset = 0;  // MHz relative to the AOD center
  double weight = 1;       // amplitude weight, >= 0
  bool operator==(const WaveformSample&) const = default;
};

/// Periodic four-channel drive. Each channel is piecewise linear in time; two samples with
/// the same timestamp encode a jump. The segment after the last sample wraps to the first.
struct ModulationWaveform {
  double period = 1e-4;
  std::array<std::vector<WaveformSample>, 4> channels;

  bool operator==(const ModulationWaveform&) const = default;

  const std::vector<WaveformSample>& channel(Channel c) const { return channels[idx(c)]; }
  std::vector<WaveformSample>& channel(Channel c) { return channels[idx(c)]; }

  static ModulationWaveform constant(const std::array<double, 4>& offsets_MHz,
                                     const std::array<double, 4>& weights = {1, 1, 1, 1},
                                     double period = 1e-4) {
    ModulationWaveform w;
    w.period = period;
    for (std::size_t c = 0; c < 4; ++c) w.channels[c] = {{0.0, offsets_MHz[c], weights[c]}};
    return w;
  }

  /// Right-continuous value at time t (wrapped into [0, period)).
  WaveformSample at(Channel c, double t) const {
    const auto& s = channel(c);
    t = std::fmod(t, period);
    if (t < 0) t += period;
    if (s.size() == 1) return {t, s[0].freq_offset, s[0].weight};
    // last index with time <= t
    std::size_t k = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i].time <= t) k = i;
    if (t < s.front().time) {
      // inside the wrap segment, from last sample to first + period
      return interp(s.back(), s.back().time - period, s.front(), s.front().time, t);
    }
    const WaveformSample& a = s[k];
    if (k + 1 < s.size()) return interp(a, a.time, s[k + 1], s[k + 1].time, t);
    return interp(a, a.time, s.front(), s.front().time + period, t);
  }

  double mean_weight(Channel c) const {
    const auto& s = channel(c);
    if (s.size() == 1) return s[0].weight;
    double acc = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& a = s[i];
      const auto& b = s[(i + 1) % s.size()];
      double tb = (i + 1 < s.size()) ? b.time : b.time + period;
      acc += 0.5 * (a.weight + b.weight) * (tb - a.time);
    }
    return acc / period;
  }

  void validate(const OpticalLayout& layout) const {
    if (!(period > 0)) throw DomainError("waveform period must be positive");
    for (Channel c : kChannels) {
      const auto& s = channel(c);
      std::string name = channel_name(c);
      if (s.empty()) throw DomainError("waveform channel " + name + " has no samples");
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!(s[i].time >= 0 && s[i].time <= period))
          throw DomainError("waveform channel " + name + " sample time outside [0, period]");
        if (i > 0 && s[i].time < s[i - 1].time)
          throw DomainError("waveform channel " + name + " samples not time-sorted");
        if (!(std::abs(s[i].freq_offset) <= layout.aod_freq_range * (1 + 1e-12)))
          throw DomainError("waveform channel " + name + " frequency offset outside AOD range");
        if (!(s[i].weight >= 0)) throw DomainError("waveform channel " + name + " negative weight");
      }
      if (mean_weight(c) > 1 + 1e-9)
        throw DomainError("waveform channel " + name + " mean amplitude weight exceeds 1");
    }
  }

 private:
  static WaveformSample interp(const WaveformSample& a, double ta, const WaveformSample& b,
                               double tb, double t) {
    if (tb <= ta) return {t, a.freq_offset, a.weight};
    double s = (t - ta) / (tb - ta);
    return {t, a.freq_offset + s * (b.freq_offset - a.freq_offset),
            a.weight + s * (b.weight - a.weight)};
  }
};

/// Everything needed to turn a channel state into two beams.
struct TrapSetup {
  PhysicalConstants constants;
  OpticalLayout layout;
  std::array<InputBeam, 2> inputs;
  DisplacementModel displacement;

  void validate() const {
    constants.validate();
    layout.validate();
    displacement.validate();
  }
  /// Beam pair for given channel offsets (MHz) and weights; power_i scales by wH_i * wV_i.
  BeamPair beams(const std::array<double, 4>& offsets_MHz,
                 const std::array<double, 4>& weights = {1, 1, 1, 1}) const {
    ChannelOffsets d;
    for (Channel c : kChannels)
      d[idx(c)] = deflection_to_displacement(layout, displacement, c, offsets_MHz[idx(c)]);
    BeamPair b = build_beamlines(layout, inputs, d, displacement);
    b[0].power *= weights[idx(Channel::H1)] * weights[idx(Channel::V1)];
    b[1].power *= weights[idx(Channel::H2)] * weights[idx(Channel::V2)];
    return b;
  }
  double focused_waist() const { return focus_input_beam(layout, inputs[0]).waist_h; }
};

/// Light-shift intensity sum of two beams, without gravity.
inline double optical_potential_at(const PhysicalConstants& k, const BeamPair& beams,
                                   const Vec3& p) {
  return -k.light_shift_coefficient() * (beam_intensity(beams[0], p) + beam_intensity(beams[1], p));
}

inline double dipole_potential_at(const PhysicalConstants& k, const BeamPair& beams,
                                  const Vec3& p) {
  return optical_potential_at(k, beams, p) + k.gravity_force() * p.z();
}

namespace detail {

/// Flattened beam for repeated evaluation; same arithmetic as beam_intensity.
struct PackedBeam {
  Vec3 origin, h, v, d;
  double power, waist_h, waist_v, zrh, zrv, fh, fv;

  explicit PackedBeam(const AstigmaticBeam& b)
      : origin(b.origin), h(b.horizontal), v(b.vertical()), d(b.direction), power(b.power),
        waist_h(b.waist_h), waist_v(b.waist_v), zrh(b.rayleigh_h()), zrv(b.rayleigh_v()),
        fh(b.focus_h), fv(b.focus_v) {}

  double intensity(const Vec3& p) const {
    Vec3 r = p - origin;
    double x = r.dot(h), y = r.dot(v), z = r.dot(d);
    double sh = (z - fh) / zrh, sv = (z - fv) / zrv;
    return gaussian_intensity(power, x, y, waist_h * std::sqrt(1 + sh * sh),
                              waist_v * std::sqrt(1 + sv * sv));
  }
};

struct PackedState {
  PackedBeam b0, b1;
  double fraction;
};

}  // namespace detail

struct AveragingOptions {
  int phases = 256;                 // minimum nodes per period
  double max_step_waists = 0.125;   // largest beam move between nodes, in waists
};

/// Channel state at one averaging node.
struct PhaseState {
  std::array<double, 4> offsets{};  // MHz
  std::array<double, 4> weights{1, 1, 1, 1};
  auto operator<=>(const PhaseState&) const = default;
};

/// Time-averaged potential of a waveform, evaluated on demand.
class TimeAveragedPotential {
 public:
  TimeAveragedPotential(const TrapSetup& setup, const ModulationWaveform& wf,
                        const AveragingOptions& opt = {})
      : setup_(setup) {
    setup.validate();
    wf.validate(setup.layout);
    if (opt.phases < 1) throw DomainError("averaging needs at least one phase");
    std::map<PhaseState, double> nodes;
    build_nodes(wf, opt, nodes);
    double total = 0;
    for (auto& [s, w] : nodes) total += w;
    for (auto& [s, w] : nodes) {
      BeamPair b = setup.beams(s.offsets, s.weights);
      double frac = w / total;
      states_.push_back({s, frac});
      packed_.push_back({detail::PackedBeam(b[0]), detail::PackedBeam(b[1]), frac});
    }
  }

  /// Explicit beam configurations with time fractions (normalized here).
  TimeAveragedPotential(const TrapSetup& setup,
                        const std::vector<std::pair<BeamPair, double>>& configs)
      : setup_(setup) {
    setup.validate();
    double total = 0;
    for (auto& c : configs) total += c.second;
    if (configs.empty() || !(total > 0)) throw DomainError("no beam configurations to average");
    for (auto& [b, w] : configs) {
      for (const auto& beam : b) beam.validate();
      explicit_.push_back(b);
      packed_.push_back({detail::PackedBeam(b[0]), detail::PackedBeam(b[1]), w / total});
    }
  }

  /// Static trap for fixed offsets and weights.
  static TimeAveragedPotential unmodulated(const TrapSetup& setup,
                                           const std::array<double, 4>& offsets_MHz = {0, 0, 0, 0},
                                           const std::array<double, 4>& weights = {1, 1, 1, 1}) {
    return TimeAveragedPotential(setup, ModulationWaveform::constant(offsets_MHz, weights));
  }

  double optical(const Vec3& p) const {
    double s = 0;
    for (const auto& st : packed_) s += st.fraction * (st.b0.intensity(p) + st.b1.intensity(p));
    return -setup_.constants.light_shift_coefficient() * s;
  }
  double operator()(const Vec3& p) const {
    return optical(p) + setup_.constants.gravity_force() * p.z();
  }

  const TrapSetup& setup() const { return setup_; }
  /// Distinct averaging nodes with their time fractions (sum to 1).
  const std::vector<std::pair<PhaseState, double>>& states() const { return states_; }

  /// Bounding box of beam-axis crossings over the product of per-channel displacement ranges.
  Box crossing_box(double margin) const {
    std::array<double, 4> lo, hi;
    lo.fill(1e300);
    hi.fill(-1e300);
    auto add = [&](const BeamPair& bp) {
      for (int i = 0; i < 2; ++i) {
        double h = bp[i].origin.dot(bp[i].horizontal), v = bp[i].origin.dot(bp[i].vertical());
        std::size_t ch = i == 0 ? 0 : 2;
        lo[ch] = std::min(lo[ch], h), hi[ch] = std::max(hi[ch], h);
        lo[ch + 1] = std::min(lo[ch + 1], v), hi[ch + 1] = std::max(hi[ch + 1], v);
      }
    };
    for (auto& [s, w] : states_) add(setup_.beams(s.offsets, s.weights));
    for (auto& bp : explicit_) add(bp);
    Box b{Vec3::Constant(1e300), Vec3::Constant(-1e300)};
    double vlo = std::min(lo[1], lo[3]), vhi = std::max(hi[1], hi[3]);
    for (double h1 : {lo[0], hi[0]})
      for (double h2 : {lo[2], hi[2]})
        for (double v : {vlo, vhi}) {
          Vec3 c = crossing_point(setup_.layout, h1, h2, v);
          b.lo = b.lo.cwiseMin(c);
          b.hi = b.hi.cwiseMax(c);
        }
    return b.expanded(margin);
  }

  /// Beam axes of the unmodulated configuration (used as escape directions).
  std::vector<Vec3> beam_axes() const {
    return {nominal_axes(setup_.layout, 0).first, nominal_axes(setup_.layout, 1).first};
  }

 private:
  void build_nodes(const ModulationWaveform& wf, const AveragingOptions& opt,
                   std::map<PhaseState, double>& nodes) const {
    const double T = wf.period;
    std::vector<double> breaks;
    for (int k = 0; k <= opt.phases; ++k) breaks.push_back(T * k / opt.phases);
    for (const auto& ch : wf.channels)
      for (const auto& s : ch) breaks.push_back(s.time);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    double step = opt.max_step_waists * setup_.focused_waist();
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
      double a = breaks[k], b = breaks[k + 1];
      if (b <= a) continue;
      PhaseState sa = state_right(wf, a), sb = state_left(wf, b);
      double move = 0;
      for (Channel c : kChannels) {
        double da = deflection_to_displacement(setup_.layout, setup_.displacement, c,
                                               sa.offsets[idx(c)]);
        double db = deflection_to_displacement(setup_.layout, setup_.displacement, c,
                                               sb.offsets[idx(c)]);
        move = std::max(move, std::abs(db - da));
      }
      int n = std::max(1, static_cast<int>(std::ceil(move / step)));
      double dt = (b - a) / n;
      for (int j = 0; j <= n; ++j) {
        double wt = (j == 0 || j == n) ? 0.5 * dt : dt;
        PhaseState s;
        double u = static_cast<double>(j) / n;
        for (std::size_t c = 0; c < 4; ++c) {
          s.offsets[c] = j == n ? sb.offsets[c] : sa.offsets[c] + u * (sb.offsets[c] - sa.offsets[c]);
          s.weights[c] = j == n ? sb.weights[c] : sa.weights[c] + u * (sb.weights[c] - sa.weights[c]);
        }
        nodes[s] += wt;
      }
    }
  }

  static PhaseState state_right(const ModulationWaveform& wf, double t) {
    PhaseState s;
    for (Channel c : kChannels) {
      auto v = wf.at(c, t);
      s.offsets[idx(c)] = v.freq_offset;
      s.weights[idx(c)] = v.weight;
    }
    return s;
  }
  /// Left limit: the value of the piece that ends at t.
  static PhaseState state_left(const ModulationWaveform& wf, double t) {
    PhaseState s;
    for (Channel c : kChannels) {
      const auto& smp = wf.channel(c);
      WaveformSample v = wf.at(c, t);
      if (smp.size() > 1) {
        // first sample at t: for a jump this is the value before it
        bool found = false;
        for (const auto& x : smp)
          if (x.time == t) {
            v = x;
            found = true;
            break;
          }
        if (!found && t == wf.period) v = smp.front().time == 0 ? smp.front() : wf.at(c, 0.0);
      }
      s.offsets[idx(c)] = v.freq_offset;
      s.weights[idx(c)] = v.weight;
    }
    return s;
  }

  TrapSetup setup_;
  std::vector<detail::PackedState> packed_;
  std::vector<BeamPair> explicit_;
  std::vector<std::pair<PhaseState, double>> states_;
};

struct ScalarField3D {
  Vec3 origin = Vec3::Zero();
  std::array<Vec3, 3> axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};  // step vectors
  std::array<int, 3> dims{1, 1, 1};
  std::vector<double> values;  // J, x index fastest

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (j + static_cast<std::size_t>(dims[1]) * k);
  }
  double operator()(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 node(int i, int j, int k) const { return origin + i * axes[0] + j * axes[1] + k * axes[2]; }
  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  void validate() const {
    for (int d : dims)
      if (d < 1) throw DomainError("field dims must be positive");
    if (values.size() != size()) throw DomainError("field value count does not match dims");
    Mat3 A;
    for (int i = 0; i < 3; ++i) A.col(i) = axes[i];
    if (std::abs(A.determinant()) < 1e-30 * std::pow(A.norm(), 3))
      throw DomainError("field axes are linearly dependent");
  }
};

/// Sample any potential on a regular grid spanning `region` (inclusive corners).
template <class F>
ScalarField3D sample_field(const F& potential, const Box& region, const std::array<int, 3>& dims) {
  ScalarField3D f;
  f.dims = dims;
  f.origin = region.lo;
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw DomainError("field dims must be positive");
    Vec3 step = Vec3::Zero();
    step[a] = dims[a] > 1 ? (region.hi[a] - region.lo[a]) / (dims[a] - 1) : 1.0;
    f.axes[a] = step;
  }
  f.values.resize(f.size());
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) f.values[f.index(i, j, k)] = potential(f.node(i, j, k));
  return f;
}

/// Auto-fit region: crossing hull of the waveform plus `margin_waists` focused waists.
inline Box auto_region(const TimeAveragedPotential& U, double margin_waists = 4.0) {
  return U.crossing_box(margin_waists * U.setup().focused_waist());
}

inline ScalarField3D time_averaged_field(const TrapSetup& setup, const ModulationWaveform& wf,
                                         const std::optional<Box>& region,
                                         const std::array<int, 3>& dims = {96, 96, 96},
                                         const AveragingOptions& opt = {}) {
  TimeAveragedPotential U(setup, wf, opt);
  Box r = region.value_or(auto_region(U));
  return sample_field(U, r, dims);
}

}  // namespace odt
