#include "odt/trapchar.hpp"

#include <gtest/gtest.h>

using namespace odt;
using units::mm;
using units::um;

namespace {

const PhysicalConstants K{};

struct Bowl {
  Vec3 w2;  // m omega_i^2
  double operator()(const Vec3& p) const { return 0.5 * (w2.array() * p.array().square()).sum(); }
};

Bowl make_bowl(double fx, double fy, double fz) {
  auto k = [](double f) { return K.atom_mass * std::pow(2 * units::pi * f, 2); };
  return Bowl{Vec3(k(fx), k(fy), k(fz))};
}

TrapSetup setup_no_gravity(double power_at_focus = 10.0) {
  TrapSetup s;
  s.constants.gravity = 0;
  for (auto& in : s.inputs) in.power = power_at_focus / s.layout.power_throughput;
  return s;
}

TrapReport crossed_report(const TrapSetup& s, double step_waists = 0.02) {
  auto U = TimeAveragedPotential::unmodulated(s);
  return characterize(U, Vec3::Zero(), default_options(U, DepthConvention::PeakToMin, step_waists));
}

}  // namespace

TEST(Characterize, AnalyticHarmonicBowl) {
  Bowl U = make_bowl(80, 100, 120);
  CharacterizeOptions o;
  o.domain = Box{Vec3::Constant(-50 * um), Vec3::Constant(50 * um)};
  o.fd_step = 0.2 * um;
  TrapReport r = characterize(U, Vec3(3 * um, -2 * um, 1 * um), o);
  ASSERT_TRUE(r.valid) << r.reason;
  EXPECT_NEAR(r.frequencies[0], 80, 80e-6);
  EXPECT_NEAR(r.frequencies[1], 100, 100e-6);
  EXPECT_NEAR(r.frequencies[2], 120, 120e-6);
  EXPECT_NEAR(r.mean_frequency, std::cbrt(80.0 * 100 * 120), 1e-3);
  EXPECT_LT(r.minimum_position.norm(), 1e-9);
  // escape: rim value along the softest axis; peak: the box corner
  double rim = 0.5 * U.w2.x() * 50 * um * 50 * um;
  EXPECT_NEAR(r.depth_escape_saddle / rim, 1.0, 1e-6);
  EXPECT_NEAR(r.depth_peak_to_min / U(Vec3::Constant(50 * um)), 1.0, 1e-6);
  EXPECT_GE(r.depth_peak_to_min, r.depth_escape_saddle);
  // principal axes orthonormal
  EXPECT_LT((r.axes.transpose() * r.axes - Mat3::Identity()).norm(), 1e-12);
}

TEST(Characterize, SampledFieldOfBowl) {
  Bowl U = make_bowl(90, 90, 140);
  ScalarField3D f = sample_field(U, Box{Vec3::Constant(-40 * um), Vec3::Constant(40 * um)}, {17, 17, 17});
  CharacterizeOptions o;
  o.fd_step = 0.5 * um;
  o.domain = Box{Vec3::Constant(-40 * um), Vec3::Constant(40 * um)};
  TrapReport r = characterize_field(f, Vec3(5 * um, 5 * um, -5 * um), o);
  ASSERT_TRUE(r.valid) << r.reason;
  EXPECT_NEAR(r.frequencies[0], 90, 1e-4);
  EXPECT_NEAR(r.frequencies[2], 140, 1e-4);
}

TEST(Characterize, SingleStigmaticBeamMatchesGaussianTrapFormulas) {
  TrapSetup s = setup_no_gravity();
  s.layout.window_tilt = 0.0;
  BeamPair b = s.beams({0, 0, 0, 0});
  b[0].direction = Vec3::UnitY();
  b[0].horizontal = -Vec3::UnitX();
  b[0].power = 10;
  b[1].power = 0;
  TimeAveragedPotential U(s, std::vector<std::pair<BeamPair, double>>{{b, 1.0}});
  double w = b[0].waist_h, zr = b[0].rayleigh_h();
  CharacterizeOptions o;
  o.fd_step = w / 50;
  o.domain = Box{Vec3(-4 * w, -3 * zr, -4 * w), Vec3(4 * w, 3 * zr, 4 * w)};
  TrapReport r = characterize(U, Vec3(1 * um, 20 * um, -1 * um), o);
  ASSERT_TRUE(r.valid) << r.reason;
  double U0 = K.light_shift_coefficient() * 2 * 10 / (units::pi * w * w);
  double fr = std::sqrt(4 * U0 / (K.atom_mass * w * w)) / (2 * units::pi);
  double fz = std::sqrt(2 * U0 / (K.atom_mass * zr * zr)) / (2 * units::pi);
  EXPECT_NEAR(r.frequencies[0] / fz, 1.0, 0.01);
  EXPECT_NEAR(r.frequencies[1] / fr, 1.0, 0.01);
  EXPECT_NEAR(r.frequencies[2] / fr, 1.0, 0.01);
  EXPECT_NEAR(r.depth_peak_to_min / U0, 1.0, 1e-3);
}

TEST(Characterize, CrossedTrapDepthNearEstimate) {
  TrapReport r = crossed_report(setup_no_gravity());
  ASSERT_TRUE(r.valid) << r.reason;
  double mK = r.depth_peak_to_min / K.boltzmann / units::mK;
  EXPECT_NEAR(mK / 11.9, 1.0, 0.30);
  EXPECT_GE(r.depth_peak_to_min, r.depth_escape_saddle);
  EXPECT_LT(r.hessian_asymmetry, 1e-6);
  for (double f : r.frequencies) EXPECT_GT(f, 0);
}

TEST(Characterize, StepRobustness) {
  TrapSetup s = setup_no_gravity();
  TrapReport a = crossed_report(s, 0.02), b = crossed_report(s, 0.01);
  ASSERT_TRUE(a.valid && b.valid);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.frequencies[i] / a.frequencies[i], 1.0, 5e-3);
}

TEST(Characterize, PowerScaling) {
  TrapReport a = crossed_report(setup_no_gravity(10)), b = crossed_report(setup_no_gravity(2.5));
  ASSERT_TRUE(a.valid && b.valid);
  EXPECT_NEAR(b.depth_peak_to_min / a.depth_peak_to_min, 0.25, 0.25 * 5e-3);
  EXPECT_NEAR(b.depth_escape_saddle / a.depth_escape_saddle, 0.25, 0.25 * 5e-3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.frequencies[i] / a.frequencies[i], 0.5, 0.5 * 5e-3);
}

TEST(Characterize, GravityOpensWeakTrap) {
  TrapSetup s = setup_no_gravity(2e-4);
  s.constants.gravity = 9.81;
  auto U = TimeAveragedPotential::unmodulated(s);
  TrapReport r = characterize(U, Vec3::Zero());
  EXPECT_FALSE(r.valid);
  EXPECT_FALSE(r.reason.empty());
  EXPECT_THROW(r.require_valid(), DomainError);
  // with gravity the strong trap still holds and sags below the crossing
  TrapSetup g = setup_no_gravity(10);
  g.constants.gravity = 9.81;
  auto V = TimeAveragedPotential::unmodulated(g);
  TrapReport q = characterize(V, Vec3::Zero());
  ASSERT_TRUE(q.valid);
  EXPECT_LT(q.minimum_position.z(), 0);
}

TEST(Characterize, SaddleDetected) {
  auto U = [](const Vec3& p) { return p.x() * p.x() - p.y() * p.y() + p.z() * p.z(); };
  CharacterizeOptions o;
  o.fd_step = 1e-7;
  o.multi_seed_fallback = false;
  TrapReport r = characterize(U, Vec3::Zero(), o);
  EXPECT_FALSE(r.valid);
  EXPECT_TRUE(r.saddle);
}

TEST(Characterize, SeedOutsideDomain) {
  Bowl U = make_bowl(50, 50, 50);
  CharacterizeOptions o;
  EXPECT_THROW(characterize(U, Vec3(1, 0, 0), o), DomainError);
}

TEST(Volume, CalibratedDiamondMatchesLineIntersectionOracle) {
  OpticalLayout L;
  auto m = DisplacementModel::calibrated(92, 88);
  ReachableVolume v = reachable_volume(L, m, 21);
  double H = 15 * 92 * um;
  EXPECT_NEAR(H / mm, 1.38, 1e-12);
  double c = std::cos(15 * units::deg), s = std::sin(15 * units::deg);
  // oracle: rhombus with vertices (+-H/cos, 0), (0, +-H/sin)
  std::vector<Vec2> rh{{H / c, 0}, {0, H / s}, {-H / c, 0}, {0, -H / s}};
  double area = polygon_area(rh);
  EXPECT_NEAR(v.planar_area / area, 1.0, 1e-9);
  EXPECT_NEAR(area / (mm * mm), 15.24, 0.01);
  EXPECT_NEAR(v.vertical_span / mm, 2.64, 1e-12);
  EXPECT_NEAR(v.prism_volume / (area * 2.64 * mm), 1.0, 1e-9);
  EXPECT_NEAR(v.hull_volume / v.prism_volume, 1.0, 1e-9);
  EXPECT_EQ(v.planar_hull.size(), 4u);
}

TEST(Volume, ZeroRangeIsDegenerate) {
  OpticalLayout L;
  L.aod_freq_range = 0;
  ReachableVolume v = reachable_volume(L, DisplacementModel{}, 5);
  EXPECT_EQ(v.planar_area, 0.0);
  EXPECT_EQ(v.prism_volume, 0.0);
  EXPECT_EQ(v.hull_volume, 0.0);
}

TEST(Volume, HullOfCube) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) pts.emplace_back(i, j, 2.0 * k);
  EXPECT_NEAR(convex_hull_volume(pts), 16.0, 1e-12);
}

TEST(Thermo, PsdAndTruncation) {
  ThermoMetrics m = thermo_metrics_from(347.0, 240 * units::uK * K.boltzmann, 2e6, 20 * units::uK);
  EXPECT_NEAR(m.psd / 1.15e-3, 1.0, 0.01);
  EXPECT_NEAR(m.truncation_parameter, 12.0, 1e-9);
  ThermoMetrics d = thermo_metrics_from(347.0, 1.0, 4e6, 20 * units::uK);
  EXPECT_NEAR(d.psd / m.psd, 2.0, 1e-12);
  TrapReport bad;
  EXPECT_THROW(thermo_metrics(bad, 2e6, 20e-6), DomainError);
  EXPECT_THROW(thermo_metrics_from(347, 1, 2e6, 0), DomainError);
}

TEST(Misalignment, UnityEvenAndNonIncreasing) {
  TrapSetup s = setup_no_gravity();
  EXPECT_EQ(misalignment_sensitivity(s, 0.0).ratio, 1.0);
  double w = s.focused_waist();
  double prev = 1.0;
  for (double d = 1 * um; d <= w; d += 1 * um) {
    MisalignmentResult p = misalignment_sensitivity(s, d), n = misalignment_sensitivity(s, -d);
    ASSERT_FALSE(p.trap_lost);
    EXPECT_NEAR(p.ratio, n.ratio, 1e-6) << d;
    EXPECT_LE(p.ratio, prev + 1e-9) << d;
    prev = p.ratio;
  }
  EXPECT_LT(prev, 1.0);
}
