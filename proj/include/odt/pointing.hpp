#pragma once

// Camera-plane quantities in this header are in micrometres.

#include "odt/core.hpp"

#include <cstdint>
#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <queue>
#include <random>
#include <sstream>

namespace odt {

struct Frame {
  int width = 0, height = 0;
  double pixel_pitch_um = 1;
  int bit_depth = 8;
  std::vector<std::uint16_t> values;  // row-major, x fastest
  double timestamp = 0;

  int max_count() const { return bit_depth == 8 ? 255 : 65535; }
  std::uint16_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  void validate() const {
    if (width < 1 || height < 1) throw DomainError("frame dimensions must be positive");
    if (bit_depth != 8 && bit_depth != 16) throw DomainError("bit depth must be 8 or 16");
    if (!(pixel_pitch_um > 0)) throw DomainError("pixel pitch must be positive");
    if (values.size() != static_cast<std::size_t>(width) * height)
      throw DomainError("frame value count does not match width x height");
    for (auto v : values)
      if (v > max_count()) throw DomainError("frame count exceeds bit depth");
  }
};

struct SpotSpec {
  double x_um = 0, y_um = 0;
  double waist_um = 15;  // 1/e^2 intensity radius
  double amplitude = 200;
};

struct FrameSpec {
  int width = 160, height = 120;
  double pixel_pitch_um = 2.2;
  int bit_depth = 8;
  double background = 20;
  double noise_sigma = 2;  // counts
  double timestamp = 0;
  std::vector<SpotSpec> spots;
};

inline Frame synth_frame(const FrameSpec& s, std::uint64_t seed) {
  Frame f;
  f.width = s.width, f.height = s.height, f.pixel_pitch_um = s.pixel_pitch_um;
  f.bit_depth = s.bit_depth, f.timestamp = s.timestamp;
  if (s.width < 1 || s.height < 1 || !(s.pixel_pitch_um > 0)) throw DomainError("invalid frame geometry");
  if (s.bit_depth != 8 && s.bit_depth != 16) throw DomainError("bit depth must be 8 or 16");
  for (const auto& sp : s.spots)
    if (sp.x_um < 0 || sp.y_um < 0 || sp.x_um > s.width * s.pixel_pitch_um ||
        sp.y_um > s.height * s.pixel_pitch_um)
      throw DomainError("spot outside frame");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0, 1);
  f.values.resize(static_cast<std::size_t>(s.width) * s.height);
  const double top = f.max_count();
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      double px = (x + 0.5) * s.pixel_pitch_um, py = (y + 0.5) * s.pixel_pitch_um;
      double v = s.background;
      for (const auto& sp : s.spots) {
        double r2 = (px - sp.x_um) * (px - sp.x_um) + (py - sp.y_um) * (py - sp.y_um);
        v += sp.amplitude * std::exp(-2 * r2 / (sp.waist_um * sp.waist_um));
      }
      if (s.noise_sigma > 0) v += s.noise_sigma * N(rng);
      f.values[static_cast<std::size_t>(y) * s.width + x] =
          static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, top));
    }
  return f;
}

// ---------------------------------------------------------------- PGM

inline void write_pgm(const std::string& path, const Frame& f) {
  f.validate();
  std::ofstream o(path, std::ios::binary);
  if (!o) throw DomainError("cannot write " + path);
  o << "P5\n" << f.width << ' ' << f.height << '\n' << f.max_count() << '\n';
  for (auto v : f.values) {
    if (f.bit_depth == 8) {
      o.put(static_cast<char>(v));
    } else {
      o.put(static_cast<char>(v >> 8));
      o.put(static_cast<char>(v & 0xff));
    }
  }
}

inline Frame read_pgm(const std::string& path, double pixel_pitch_um, double timestamp = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (in >> std::ws && in.peek() == '#') std::getline(in, t);
    in >> t;
    return t;
  };
  if (token() != "P5") throw DomainError(path + ": not a binary PGM (P5)");
  Frame f;
  f.pixel_pitch_um = pixel_pitch_um;
  f.timestamp = timestamp;
  try {
    f.width = std::stoi(token());
    f.height = std::stoi(token());
    int maxv = std::stoi(token());
    if (maxv < 1 || maxv > 65535) throw DomainError(path + ": invalid maxval");
    f.bit_depth = maxv < 256 ? 8 : 16;
  } catch (const std::logic_error&) {
    throw DomainError(path + ": malformed PGM header");
  }
  in.get();
  f.values.resize(static_cast<std::size_t>(f.width) * f.height);
  for (auto& v : f.values) {
    int a = in.get();
    if (f.bit_depth == 16) a = (a << 8) | in.get();
    if (!in) throw DomainError(path + ": truncated PGM data");
    v = static_cast<std::uint16_t>(a);
  }
  f.validate();
  return f;
}

// ---------------------------------------------------------------- detection

struct Spot {
  Vec2 position_um = Vec2::Zero();
  int area_px = 0;
  double total = 0;
};

struct Detection {
  std::vector<Spot> spots;
  bool truncated = false;  // more components than requested
};

inline Detection detect_spots(const Frame& f, double threshold_fraction = 0.2, std::size_t max_spots = 2) {
  f.validate();
  if (!(threshold_fraction > 0 && threshold_fraction < 1))
    throw DomainError("threshold_fraction must lie in (0, 1)");
  Detection d;
  std::uint16_t mx = *std::max_element(f.values.begin(), f.values.end());
  if (mx == 0) return d;
  const double thr = threshold_fraction * mx;
  std::vector<int> label(f.values.size(), -1);
  std::vector<Spot> comps;
  for (int y0 = 0; y0 < f.height; ++y0)
    for (int x0 = 0; x0 < f.width; ++x0) {
      std::size_t i0 = static_cast<std::size_t>(y0) * f.width + x0;
      if (label[i0] >= 0 || f.values[i0] < thr) continue;
      int id = static_cast<int>(comps.size());
      double sx = 0, sy = 0, sw = 0;
      int area = 0;
      std::queue<std::pair<int, int>> q;
      q.push({x0, y0});
      label[i0] = id;
      while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop();
        double v = f.at(x, y);
        sx += v * x, sy += v * y, sw += v, ++area;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int nx = x + dx, ny = y + dy;
            if ((!dx && !dy) || nx < 0 || ny < 0 || nx >= f.width || ny >= f.height) continue;
            std::size_t j = static_cast<std::size_t>(ny) * f.width + nx;
            if (label[j] >= 0 || f.values[j] < thr) continue;
            label[j] = id;
            q.push({nx, ny});
          }
      }
      Spot s;
      s.position_um = Vec2((sx / sw + 0.5) * f.pixel_pitch_um, (sy / sw + 0.5) * f.pixel_pitch_um);
      s.area_px = area;
      s.total = sw;
      comps.push_back(s);
    }
  std::stable_sort(comps.begin(), comps.end(), [](const Spot& a, const Spot& b) { return a.total > b.total; });
  if (comps.size() > max_spots) {
    d.truncated = true;
    comps.resize(max_spots);
  }
  d.spots = std::move(comps);
  return d;
}

// ---------------------------------------------------------------- tracking

enum class FlightPhase { Pre, Launch, Microgravity, Landing, Post };
inline constexpr std::array<FlightPhase, 5> kFlightPhases{FlightPhase::Pre, FlightPhase::Launch,
                                                          FlightPhase::Microgravity, FlightPhase::Landing,
                                                          FlightPhase::Post};

inline const char* phase_name(FlightPhase p) {
  switch (p) {
    case FlightPhase::Pre: return "pre";
    case FlightPhase::Launch: return "launch";
    case FlightPhase::Microgravity: return "microgravity";
    case FlightPhase::Landing: return "landing";
    case FlightPhase::Post: return "post";
  }
  return "?";
}

/// Start times of launch, microgravity, landing, post (s).
struct PhaseBoundaries {
  double launch = 2.0, microgravity = 2.75, landing = 6.75, post = 7.5;
  FlightPhase at(double t) const {
    if (t < launch) return FlightPhase::Pre;
    if (t < microgravity) return FlightPhase::Launch;
    if (t < landing) return FlightPhase::Microgravity;
    if (t < post) return FlightPhase::Landing;
    return FlightPhase::Post;
  }
  void validate() const {
    if (!(launch < microgravity && microgravity < landing && landing < post))
      throw DomainError("phase boundaries must be strictly increasing");
  }
};

struct TrackFrame {
  double time = 0;
  std::array<Vec2, 2> position{Vec2::Zero(), Vec2::Zero()};
  bool valid = false;
};

struct SpotTrackSeries {
  std::vector<TrackFrame> frames;
  PhaseBoundaries phases;
  int skipped = 0;
};

/// Nearest-neighbour identity assignment; first valid frame orders spots by x.
inline SpotTrackSeries track_spots(const std::vector<Detection>& dets, const std::vector<double>& times,
                                   const PhaseBoundaries& phases, double gate_um) {
  if (dets.size() != times.size()) throw DomainError("detections and timestamps differ in length");
  SpotTrackSeries s;
  s.phases = phases;
  std::optional<std::array<Vec2, 2>> prev;
  for (std::size_t k = 0; k < dets.size(); ++k) {
    if (k && !(times[k] > times[k - 1])) throw DomainError("timestamps must be strictly increasing");
    TrackFrame tf;
    tf.time = times[k];
    if (dets[k].spots.size() == 2) {
      Vec2 a = dets[k].spots[0].position_um, b = dets[k].spots[1].position_um;
      if (!prev) {
        if (b.x() < a.x()) std::swap(a, b);
        tf.position = {a, b};
        tf.valid = true;
      } else {
        const auto& p = *prev;
        double keep = (a - p[0]).norm() + (b - p[1]).norm();
        double swap = (b - p[0]).norm() + (a - p[1]).norm();
        if (swap < keep) std::swap(a, b);
        tf.position = {a, b};
        tf.valid = (a - p[0]).norm() <= gate_um && (b - p[1]).norm() <= gate_um;
      }
    }
    if (tf.valid)
      prev = tf.position;
    else
      ++s.skipped;
    s.frames.push_back(tf);
  }
  return s;
}

// ---------------------------------------------------------------- statistics

struct Moments {
  double max_abs = 0, mean = 0, std = 0;
  int count = 0;
};

inline Moments moments(const std::vector<double>& v) {
  Moments m;
  m.count = static_cast<int>(v.size());
  if (v.empty()) return m;
  for (double x : v) m.mean += x, m.max_abs = std::max(m.max_abs, std::abs(x));
  m.mean /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m.mean) * (x - m.mean);
  m.std = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
  return m;
}

struct PhaseStats {
  FlightPhase phase = FlightPhase::Pre;
  std::array<Moments, 2> dx, dy, ac;  // per spot
  Moments dc;
};

struct FlightSeriesRow {
  double t = 0;
  std::array<Vec2, 2> p;
  std::array<double, 2> ac{};  // NaN for the first valid frame
  double dc = 0;
  FlightPhase phase = FlightPhase::Pre;
};

struct FlightReport {
  std::vector<PhaseStats> phases;
  Moments inner_dc;  // central sub-interval of microgravity
  double inner_fraction = 0.75;
  int valid_frames = 0, skipped_frames = 0;
  std::vector<FlightSeriesRow> series;  // displacement relative to pre-launch mean

  const PhaseStats& phase(FlightPhase p) const {
    for (const auto& s : phases)
      if (s.phase == p) return s;
    throw DomainError("phase missing from report");
  }
};

inline FlightReport track_stats(const SpotTrackSeries& s, double inner_fraction = 0.75) {
  s.phases.validate();
  if (!(inner_fraction > 0 && inner_fraction <= 1)) throw DomainError("inner_fraction must lie in (0, 1]");
  std::vector<const TrackFrame*> v;
  for (const auto& f : s.frames)
    if (f.valid) v.push_back(&f);
  if (v.size() < 2) throw DomainError("flight statistics need at least 2 valid frames");
  FlightReport r;
  r.inner_fraction = inner_fraction;
  r.valid_frames = static_cast<int>(v.size());
  r.skipped_frames = static_cast<int>(s.frames.size() - v.size());
  // pre-launch reference (all frames if no pre-launch data)
  std::array<Vec2, 2> ref{Vec2::Zero(), Vec2::Zero()};
  double dref = 0;
  int n = 0;
  for (auto* f : v)
    if (s.phases.at(f->time) == FlightPhase::Pre) {
      for (int i = 0; i < 2; ++i) ref[i] += f->position[i];
      dref += (f->position[1] - f->position[0]).norm();
      ++n;
    }
  if (n == 0) {
    for (auto* f : v) {
      for (int i = 0; i < 2; ++i) ref[i] += f->position[i];
      dref += (f->position[1] - f->position[0]).norm();
    }
    n = static_cast<int>(v.size());
  }
  for (auto& x : ref) x /= n;
  dref /= n;
  const TrackFrame* last = nullptr;
  for (auto* f : v) {
    FlightSeriesRow row;
    row.t = f->time;
    row.phase = s.phases.at(f->time);
    for (int i = 0; i < 2; ++i) {
      row.p[i] = f->position[i] - ref[i];
      row.ac[i] = last ? (f->position[i] - last->position[i]).norm() : std::nan("");
    }
    row.dc = (f->position[1] - f->position[0]).norm() - dref;
    r.series.push_back(row);
    last = f;
  }
  double mg0 = s.phases.microgravity, mg1 = s.phases.landing;
  double mid = 0.5 * (mg0 + mg1), half = 0.5 * inner_fraction * (mg1 - mg0);
  std::vector<double> inner;
  for (FlightPhase ph : kFlightPhases) {
    PhaseStats st;
    st.phase = ph;
    std::array<std::vector<double>, 2> dx, dy, ac;
    std::vector<double> dc;
    for (const auto& row : r.series) {
      if (row.phase != ph) continue;
      for (int i = 0; i < 2; ++i) {
        dx[i].push_back(row.p[i].x());
        dy[i].push_back(row.p[i].y());
        if (!std::isnan(row.ac[i])) ac[i].push_back(row.ac[i]);
      }
      dc.push_back(row.dc);
    }
    for (int i = 0; i < 2; ++i) {
      st.dx[i] = moments(dx[i]);
      st.dy[i] = moments(dy[i]);
      st.ac[i] = moments(ac[i]);
    }
    st.dc = moments(dc);
    r.phases.push_back(st);
  }
  for (const auto& row : r.series)
    if (row.phase == FlightPhase::Microgravity && std::abs(row.t - mid) <= half) inner.push_back(row.dc);
  r.inner_dc = moments(inner);
  return r;
}

/// Largest per-axis |displacement| of spot i in phase p.
inline double max_axis_displacement(const FlightReport& r, FlightPhase p, int i) {
  const auto& s = r.phase(p);
  return std::max(s.dx[i].max_abs, s.dy[i].max_abs);
}

/// Largest per-axis |mean displacement| of spot i in phase p.
inline double mean_axis_offset(const FlightReport& r, FlightPhase p, int i) {
  const auto& s = r.phase(p);
  return std::max(std::abs(s.dx[i].mean), std::abs(s.dy[i].mean));
}

// ---------------------------------------------------------------- flight synthesis

struct FlightScenario {
  double fps = 24;
  double duration = 9.5;
  PhaseBoundaries phases;
  double launch_excursion_um = 75;   // per-axis peak, both axes (diagonal)
  double microgravity_offset_um = 12;  // per-axis settled offset
  double interspot_jitter_um = 1.2;  // std of the two-spot distance in microgravity
  double separation_um = 60;
  FrameSpec frame;  // spots ignored; geometry, noise, waist from spot template
  SpotSpec spot_template;
};

struct FlightTruth {
  std::vector<double> times;
  std::vector<std::array<Vec2, 2>> positions;
  double launch_max_um = 0, microgravity_offset_um = 0, interspot_std_um = 0;
};

namespace detail {

inline double raised(double u) { return 0.5 * (1 - std::cos(units::pi * std::clamp(u, 0.0, 1.0))); }

/// Common-mode per-axis displacement: bump to the excursion, settle at the offset, bump, return to 0.
inline double common_path(const FlightScenario& sc, double t) {
  const auto& ph = sc.phases;
  double E = sc.launch_excursion_um, O = sc.microgravity_offset_um;
  switch (ph.at(t)) {
    case FlightPhase::Pre:
    case FlightPhase::Post: return 0.0;
    case FlightPhase::Microgravity: return O;
    case FlightPhase::Launch: {
      double u = (t - ph.launch) / (ph.microgravity - ph.launch);
      return u < 0.5 ? E * raised(2 * u) : E + (O - E) * raised(2 * u - 1);
    }
    case FlightPhase::Landing: {
      double u = (t - ph.landing) / (ph.post - ph.landing);
      return u < 0.5 ? O + (E - O) * raised(2 * u) : E * (1 - raised(2 * u - 1));
    }
  }
  return 0.0;
}

inline double sample_std(const std::vector<double>& v) { return moments(v).std; }

}  // namespace detail

/// Ground-truth spot positions; spot 1 carries the relative jitter, rescaled so the
/// microgravity inter-spot distance std equals the requested value.
inline FlightTruth flight_truth(const FlightScenario& sc, std::uint64_t seed) {
  sc.phases.validate();
  if (!(sc.fps > 0 && sc.duration > 0)) throw DomainError("fps and duration must be positive");
  if (!(sc.interspot_jitter_um >= 0)) throw DomainError("jitter must be >= 0");
  FlightTruth tr;
  int n = static_cast<int>(std::floor(sc.duration * sc.fps)) + 1;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> N(0, 1);
  std::vector<Vec2> raw;
  for (int k = 0; k < n; ++k) {
    tr.times.push_back(k / sc.fps);
    double a = N(rng), b = N(rng);
    raw.emplace_back(a, b);
  }
  Vec2 c(0.5 * sc.frame.width * sc.frame.pixel_pitch_um, 0.5 * sc.frame.height * sc.frame.pixel_pitch_um);
  Vec2 p0 = c - Vec2(0.5 * sc.separation_um, 0), p1 = c + Vec2(0.5 * sc.separation_um, 0);
  auto build = [&](double scale) {
    std::vector<std::array<Vec2, 2>> pos;
    for (int k = 0; k < n; ++k) {
      double d = detail::common_path(sc, tr.times[static_cast<std::size_t>(k)]);
      Vec2 cm(d, d);
      pos.push_back({p0 + cm, p1 + cm + scale * raw[static_cast<std::size_t>(k)]});
    }
    return pos;
  };
  auto mg_std = [&](const std::vector<std::array<Vec2, 2>>& pos) {
    std::vector<double> d;
    for (int k = 0; k < n; ++k)
      if (sc.phases.at(tr.times[static_cast<std::size_t>(k)]) == FlightPhase::Microgravity)
        d.push_back((pos[static_cast<std::size_t>(k)][1] - pos[static_cast<std::size_t>(k)][0]).norm());
    return detail::sample_std(d);
  };
  double scale = sc.interspot_jitter_um;
  if (scale > 0)
    for (int it = 0; it < 30; ++it) {
      double s = mg_std(build(scale));
      if (!(s > 0)) break;
      double next = scale * sc.interspot_jitter_um / s;
      if (std::abs(next - scale) <= 1e-15 * scale) break;
      scale = next;
    }
  tr.positions = build(scale);
  tr.interspot_std_um = mg_std(tr.positions);
  tr.launch_max_um = sc.launch_excursion_um;
  tr.microgravity_offset_um = sc.microgravity_offset_um;
  return tr;
}

inline std::vector<Frame> flight_frames(const FlightScenario& sc, const FlightTruth& tr, std::uint64_t seed) {
  std::vector<Frame> out;
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    FrameSpec fs = sc.frame;
    fs.timestamp = tr.times[k];
    fs.spots.clear();
    for (int i = 0; i < 2; ++i) {
      SpotSpec sp = sc.spot_template;
      sp.x_um = tr.positions[k][static_cast<std::size_t>(i)].x();
      sp.y_um = tr.positions[k][static_cast<std::size_t>(i)].y();
      fs.spots.push_back(sp);
    }
    out.push_back(synth_frame(fs, seed + 1000003ULL * (k + 1)));
  }
  return out;
}

struct AnalysisOptions {
  double threshold_fraction = 0.2;
  double gate_pixels = 10;
  double inner_fraction = 0.75;
};

inline FlightReport analyze_frames(const std::vector<Frame>& frames, const PhaseBoundaries& ph,
                                   const AnalysisOptions& o = {}) {
  if (frames.empty()) throw DomainError("no frames to analyze");
  std::vector<Detection> dets;
  std::vector<double> times;
  for (const auto& f : frames) {
    dets.push_back(detect_spots(f, o.threshold_fraction, 2));
    times.push_back(f.timestamp);
  }
  SpotTrackSeries s = track_spots(dets, times, ph, o.gate_pixels * frames.front().pixel_pitch_um);
  return track_stats(s, o.inner_fraction);
}

}  // namespace odt
