#include "odt/pointing.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace odt;

namespace {

FrameSpec two_spot_spec(double x0, double y0, double sep, double noise = 0) {
  FrameSpec s;
  s.noise_sigma = noise;
  s.spots = {{x0, y0, 15, 200}, {x0 + sep, y0, 15, 200}};
  return s;
}

Frame shift(const Frame& f, int sx, int sy) {
  Frame g = f;
  std::fill(g.values.begin(), g.values.end(), 0);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      int nx = x + sx, ny = y + sy;
      if (nx >= 0 && ny >= 0 && nx < f.width && ny < f.height)
        g.values[static_cast<std::size_t>(ny) * f.width + nx] = f.at(x, y);
    }
  return g;
}

SpotTrackSeries series_from(const std::vector<double>& t, const std::vector<std::array<Vec2, 2>>& p) {
  SpotTrackSeries s;
  for (std::size_t k = 0; k < t.size(); ++k) s.frames.push_back({t[k], p[k], true});
  return s;
}

}  // namespace

TEST(Synth, SpotAtPixelCenterIsTheMaximum) {
  FrameSpec s;
  s.noise_sigma = 0;
  s.spots = {{(40 + 0.5) * 2.2, (30 + 0.5) * 2.2, 12, 200}};
  Frame f = synth_frame(s, 1);
  auto it = std::max_element(f.values.begin(), f.values.end());
  std::size_t i = static_cast<std::size_t>(it - f.values.begin());
  EXPECT_EQ(i % 160, 40u);
  EXPECT_EQ(i / 160, 30u);
}

TEST(Synth, DeterministicAndErrors) {
  FrameSpec s = two_spot_spec(150, 130, 60, 3);
  EXPECT_EQ(synth_frame(s, 42).values, synth_frame(s, 42).values);
  EXPECT_NE(synth_frame(s, 42).values, synth_frame(s, 43).values);
  s.spots[0].x_um = -1;
  EXPECT_THROW(synth_frame(s, 1), DomainError);
}

TEST(Detect, UniformSquareCentroidExact) {
  Frame f;
  f.width = 40, f.height = 30, f.pixel_pitch_um = 2.0, f.bit_depth = 8;
  f.values.assign(40 * 30, 0);
  for (int y = 10; y < 15; ++y)
    for (int x = 20; x < 26; ++x) f.values[static_cast<std::size_t>(y) * 40 + x] = 100;
  Detection d = detect_spots(f);
  ASSERT_EQ(d.spots.size(), 1u);
  EXPECT_DOUBLE_EQ(d.spots[0].position_um.x(), 23.0 * 2.0);
  EXPECT_DOUBLE_EQ(d.spots[0].position_um.y(), 12.5 * 2.0);
  EXPECT_EQ(d.spots[0].area_px, 30);
}

TEST(Detect, SubPixelGaussianAtSnr50) {
  FrameSpec s;
  s.background = 0;
  s.noise_sigma = 4;  // amplitude 200 -> SNR 50
  s.spots = {{123.37, 97.91, 15, 200}};
  Detection d = detect_spots(synth_frame(s, 9));
  ASSERT_EQ(d.spots.size(), 1u);
  EXPECT_LT(std::abs(d.spots[0].position_um.x() - 123.37), 0.1 * 2.2);
  EXPECT_LT(std::abs(d.spots[0].position_um.y() - 97.91), 0.1 * 2.2);
}

TEST(Detect, TwoSpotsSixtyMicronsApart) {
  Frame f = synth_frame(two_spot_spec(140.3, 131.1, 60, 2), 5);
  Detection d = detect_spots(f);
  ASSERT_EQ(d.spots.size(), 2u);
  EXPECT_FALSE(d.truncated);
  EXPECT_NEAR((d.spots[0].position_um - d.spots[1].position_um).norm(), 60, 1.0);
  // rendered separation in pixels
  Frame z = synth_frame(two_spot_spec(140.3, 131.1, 60, 0), 5);
  Detection dz = detect_spots(z);
  EXPECT_NEAR(std::abs(dz.spots[0].position_um.x() - dz.spots[1].position_um.x()) / 2.2, 60 / 2.2, 0.1);
}

TEST(Detect, KeepsBrightestAndFlagsTruncation) {
  FrameSpec s;
  s.noise_sigma = 0;
  s.spots = {{60, 60, 10, 100}, {150, 60, 10, 220}, {250, 60, 10, 160}};
  Detection d = detect_spots(synth_frame(s, 1), 0.2, 2);
  ASSERT_EQ(d.spots.size(), 2u);
  EXPECT_TRUE(d.truncated);
  EXPECT_NEAR(d.spots[0].position_um.x(), 150, 0.5);
  EXPECT_NEAR(d.spots[1].position_um.x(), 250, 0.5);
  Frame blank = synth_frame(FrameSpec{}, 1);
  std::fill(blank.values.begin(), blank.values.end(), 0);
  EXPECT_TRUE(detect_spots(blank).spots.empty());
  EXPECT_THROW(detect_spots(blank, 1.0), DomainError);
}

TEST(Detect, IntegerShiftEquivariance) {
  Frame f = synth_frame(two_spot_spec(120, 110, 60, 2), 3);
  Detection a = detect_spots(f);
  Frame g = shift(f, 7, -4);
  Detection b = detect_spots(g);
  ASSERT_EQ(a.spots.size(), 2u);
  ASSERT_EQ(b.spots.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(b.spots[static_cast<std::size_t>(i)].position_um.x() - a.spots[static_cast<std::size_t>(i)].position_um.x(), 7 * 2.2, 1e-9);
    EXPECT_NEAR(b.spots[static_cast<std::size_t>(i)].position_um.y() - a.spots[static_cast<std::size_t>(i)].position_um.y(), -4 * 2.2, 1e-9);
  }
}

TEST(Detect, IntensityScaleInvariance) {
  FrameSpec s = two_spot_spec(120, 110, 60, 2);
  s.bit_depth = 16;
  Frame f = synth_frame(s, 3);
  Frame g = f;
  for (auto& v : g.values) v = static_cast<std::uint16_t>(v * 4);
  Detection a = detect_spots(f), b = detect_spots(g);
  ASSERT_EQ(a.spots.size(), b.spots.size());
  for (std::size_t i = 0; i < a.spots.size(); ++i) EXPECT_EQ(a.spots[i].position_um, b.spots[i].position_um);
}

TEST(Pgm, RoundTrip8And16Bit) {
  auto dir = std::filesystem::temp_directory_path() / "odt_pgm_test";
  std::filesystem::create_directories(dir);
  for (int bits : {8, 16}) {
    FrameSpec s = two_spot_spec(100, 100, 60, 2);
    s.bit_depth = bits;
    if (bits == 16) s.spots[0].amplitude = 40000;
    Frame f = synth_frame(s, 11);
    std::string path = (dir / ("f" + std::to_string(bits) + ".pgm")).string();
    write_pgm(path, f);
    Frame g = read_pgm(path, 2.2, 0);
    EXPECT_EQ(g.values, f.values);
    EXPECT_EQ(g.bit_depth, bits);
  }
  EXPECT_THROW(read_pgm((dir / "missing.pgm").string(), 2.2), DomainError);
}

TEST(Track, ConstantSeriesGivesZeroStatistics) {
  std::vector<double> t;
  std::vector<std::array<Vec2, 2>> p;
  for (int k = 0; k < 216; ++k) {
    t.push_back(k / 24.0);
    p.push_back({Vec2(100, 100), Vec2(160, 100)});
  }
  FlightReport r = track_stats(series_from(t, p));
  for (const auto& ph : r.phases) {
    for (int i = 0; i < 2; ++i) {
      EXPECT_EQ(ph.dx[i].max_abs, 0.0);
      EXPECT_EQ(ph.ac[i].max_abs, 0.0);
    }
    EXPECT_EQ(ph.dc.max_abs, 0.0);
  }
}

TEST(Track, ConstructedStepsReportedExactly) {
  PhaseBoundaries ph;
  std::vector<double> t;
  std::vector<std::array<Vec2, 2>> p;
  for (int k = 0; k < 228; ++k) {
    double tk = k / 24.0;
    t.push_back(tk);
    double d = 0;
    if (ph.at(tk) == FlightPhase::Launch) d = (k == 57 ? 75 : 30);
    if (ph.at(tk) == FlightPhase::Microgravity) d = 12;
    p.push_back({Vec2(100 + d, 100), Vec2(160 + d, 100 - 0.5 * d)});
  }
  FlightReport r = track_stats(series_from(t, p));
  EXPECT_DOUBLE_EQ(max_axis_displacement(r, FlightPhase::Launch, 0), 75.0);
  EXPECT_DOUBLE_EQ(max_axis_displacement(r, FlightPhase::Microgravity, 0), 12.0);
  EXPECT_DOUBLE_EQ(mean_axis_offset(r, FlightPhase::Microgravity, 0), 12.0);
  EXPECT_DOUBLE_EQ(r.phase(FlightPhase::Pre).dc.max_abs, 0.0);
}

TEST(Track, AcInvariantUnderGlobalOffsetAndDeterministic) {
  std::vector<double> t;
  std::vector<std::array<Vec2, 2>> p, q;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N(0, 1);
  for (int k = 0; k < 216; ++k) {
    t.push_back(k / 24.0);
    std::array<Vec2, 2> x{Vec2(100 + N(rng), 100 + N(rng)), Vec2(160 + N(rng), 100 + N(rng))};
    p.push_back(x);
    q.push_back({x[0] + Vec2(0.25, -0.5), x[1] + Vec2(0.25, -0.5)});
  }
  FlightReport a = track_stats(series_from(t, p)), b = track_stats(series_from(t, q));
  for (std::size_t k = 0; k < a.phases.size(); ++k)
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(a.phases[k].ac[i].mean, b.phases[k].ac[i].mean, 1e-12);
  FlightReport c = track_stats(series_from(t, p));
  EXPECT_EQ(a.inner_dc.std, c.inner_dc.std);
  EXPECT_EQ(a.phase(FlightPhase::Microgravity).dc.std, c.phase(FlightPhase::Microgravity).dc.std);
}

TEST(Track, GatingAndIdentity) {
  Detection d0, d1, d2;
  d0.spots = {{Vec2(160, 100), 1, 2}, {Vec2(100, 100), 1, 1}};
  d1.spots = {{Vec2(101, 100), 1, 2}, {Vec2(161, 100), 1, 1}};  // swapped order
  d2.spots = {{Vec2(200, 100), 1, 2}, {Vec2(161, 100), 1, 1}};  // jump beyond gate
  SpotTrackSeries s = track_spots({d0, d1, d2}, {0, 1, 2}, {}, 22);
  EXPECT_EQ(s.frames[0].position[0], Vec2(100, 100));
  EXPECT_EQ(s.frames[1].position[0], Vec2(101, 100));
  EXPECT_FALSE(s.frames[2].valid);
  EXPECT_EQ(s.skipped, 1);
  EXPECT_THROW(track_spots({d0, d1}, {1, 1}, {}, 22), DomainError);
  SpotTrackSeries one;
  one.frames = {s.frames[0]};
  EXPECT_THROW(track_stats(one), DomainError);
}

TEST(Flight, SyntheticFlightRecovered) {
  FlightScenario sc;
  FlightTruth tr = flight_truth(sc, 2024);
  EXPECT_NEAR(tr.interspot_std_um, 1.2, 1e-9);
  std::vector<Frame> frames = flight_frames(sc, tr, 2024);
  FlightReport r = analyze_frames(frames, sc.phases);
  EXPECT_EQ(r.skipped_frames, 0);
  EXPECT_NEAR(max_axis_displacement(r, FlightPhase::Launch, 0) / 75, 1.0, 0.10);
  EXPECT_NEAR(mean_axis_offset(r, FlightPhase::Microgravity, 0) / 12, 1.0, 0.10);
  EXPECT_NEAR(r.phase(FlightPhase::Microgravity).dc.std / 1.2, 1.0, 0.10);
  EXPECT_GE(r.phase(FlightPhase::Microgravity).dc.count, 96);
}
