#include "odt/field_io.hpp"
#include "odt/potential.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace odt;
using units::um;

namespace {

TrapSetup setup_no_gravity(double power_at_focus = 10.0) {
  TrapSetup s;
  s.constants.gravity = 0;
  for (auto& in : s.inputs) in.power = power_at_focus / s.layout.power_throughput;
  return s;
}

ModulationWaveform two_vertical_tones(double sep_MHz) {
  ModulationWaveform w;
  w.period = 1e-4;
  double T = w.period;
  for (Channel c : {Channel::V1, Channel::V2})
    w.channel(c) = {{0, -0.5 * sep_MHz, 1}, {0.5 * T, -0.5 * sep_MHz, 1},
                    {0.5 * T, 0.5 * sep_MHz, 1}, {T, 0.5 * sep_MHz, 1}};
  w.channel(Channel::H1) = {{0, 0, 1}};
  w.channel(Channel::H2) = {{0, 0, 1}};
  return w;
}

}  // namespace

TEST(Dipole, VanishesFarFromBeams) {
  TrapSetup s = setup_no_gravity();
  BeamPair b = s.beams({0, 0, 0, 0});
  EXPECT_EQ(dipole_potential_at(s.constants, b, Vec3(0, 0, 2e-3)), 0.0);
  EXPECT_LT(std::abs(dipole_potential_at(s.constants, b, Vec3(5e-3, 0, 0))), 1e-40);
}

TEST(Dipole, SingleBeamPeakInMillikelvinRange) {
  PhysicalConstants k;
  AstigmaticBeam b;
  b.power = 10;
  b.waist_h = b.waist_v = 10.5e-6;
  double U = -k.light_shift_coefficient() * beam_intensity(b, Vec3::Zero());
  double closed = k.polarizability / (2 * k.vacuum_permittivity * k.speed_of_light) * 2 * 10 /
                  (units::pi * 10.5e-6 * 10.5e-6);
  EXPECT_NEAR(-U / closed, 1.0, 1e-12);
  double mK = -U / k.boltzmann * 1e3;
  EXPECT_GT(mK, 8.0);
  EXPECT_LT(mK, 9.0);
}

TEST(Dipole, CrossedCenterIsSumOfSinglePeaks) {
  TrapSetup s = setup_no_gravity();
  s.layout.window_tilt = 0.0;
  BeamPair b = s.beams({0, 0, 0, 0});
  double single = s.constants.light_shift_coefficient() * 2 * b[0].power /
                  (units::pi * b[0].waist_h * b[0].waist_h);
  double U = dipole_potential_at(s.constants, b, Vec3::Zero());
  EXPECT_NEAR(-U / (2 * single), 1.0, 5e-3);
}

TEST(Dipole, GravityToggleAddsLinearTerm) {
  TrapSetup s = setup_no_gravity();
  TrapSetup g = s;
  g.constants.gravity = 9.81;
  BeamPair b = s.beams({0, 0, 0, 0});
  for (Vec3 p : {Vec3(0, 0, 0), Vec3(1e-6, 2e-6, -3e-6), Vec3(0, 0, 1e-4)}) {
    double d = dipole_potential_at(g.constants, b, p) - dipole_potential_at(s.constants, b, p);
    EXPECT_NEAR(d, g.constants.atom_mass * 9.81 * p.z(), 1e-40);
  }
}

TEST(Dipole, OpticalPartLinearInPower) {
  TrapSetup s = setup_no_gravity();
  TrapSetup t = s;
  for (auto& in : t.inputs) in.power *= 2.5;
  auto Us = TimeAveragedPotential::unmodulated(s), Ut = TimeAveragedPotential::unmodulated(t);
  for (Vec3 p : {Vec3(0, 0, 0), Vec3(3e-6, -4e-6, 2e-6), Vec3(20e-6, 0, 5e-6)})
    EXPECT_NEAR(Ut.optical(p) / Us.optical(p), 2.5, 1e-12);
}

TEST(Dipole, MirrorSymmetricThroughVerticalPlane) {
  TrapSetup s = setup_no_gravity();
  auto U = TimeAveragedPotential::unmodulated(s);
  for (Vec3 p : {Vec3(2e-6, 1e-6, 3e-6), Vec3(15e-6, -30e-6, -4e-6), Vec3(0.4e-3, 0.1e-3, 0)}) {
    Vec3 q(-p.x(), p.y(), p.z());
    double a = U(p), b = U(q);
    EXPECT_NEAR(a, b, 1e-12 * std::abs(a) + 1e-45);
  }
}

TEST(Waveform, ConstantWaveformEqualsStaticPotentialExactly) {
  TrapSetup s = setup_no_gravity();
  s.constants.gravity = 9.81;
  std::array<double, 4> off{0.5, -0.3, -0.2, -0.3};
  BeamPair b = s.beams(off);
  TimeAveragedPotential U(s, ModulationWaveform::constant(off));
  Box r{Vec3(-30e-6, -30e-6, -60e-6), Vec3(30e-6, 30e-6, 0)};
  ScalarField3D f = time_averaged_field(s, ModulationWaveform::constant(off), r, {9, 9, 9});
  for (int k = 0; k < 9; ++k)
    for (int j = 0; j < 9; ++j)
      for (int i = 0; i < 9; ++i) {
        Vec3 p = f.node(i, j, k);
        ASSERT_EQ(f(i, j, k), dipole_potential_at(s.constants, b, p));
        ASSERT_EQ(U(p), f(i, j, k));
      }
}

TEST(Waveform, TwoVerticalTonesGiveTwoHalfWeightCrossings) {
  TrapSetup s = setup_no_gravity();
  double sep = 190.0 / 86.0;
  ModulationWaveform w = two_vertical_tones(sep);
  TimeAveragedPotential U(s, w);
  ASSERT_EQ(U.states().size(), 2u);
  // direct two-phase oracle
  BeamPair lo = s.beams({0, -0.5 * sep, 0, -0.5 * sep});
  BeamPair hi = s.beams({0, 0.5 * sep, 0, 0.5 * sep});
  for (Vec3 p : {Vec3(0, 0, 95e-6), Vec3(1e-6, 2e-6, -95e-6), Vec3(0, 0, 88e-6)}) {
    double oracle = 0.5 * (dipole_potential_at(s.constants, lo, p) +
                           dipole_potential_at(s.constants, hi, p));
    EXPECT_NEAR(U(p) / oracle, 1.0, 1e-12);
  }
  double single = TimeAveragedPotential::unmodulated(s)(Vec3::Zero());
  double top = U(Vec3(0, 0, 95e-6)), bottom = U(Vec3(0, 0, -95e-6));
  EXPECT_NEAR(top / single, 0.5, 0.01);
  EXPECT_NEAR(bottom / top, 1.0, 1e-12);
  // tone exchange: swapping the two halves reproduces the field
  ModulationWaveform x = two_vertical_tones(-sep);
  TimeAveragedPotential V(s, x);
  for (Vec3 p : {Vec3(0, 0, 95e-6), Vec3(3e-6, 1e-6, -50e-6)})
    EXPECT_NEAR(V(p) / U(p), 1.0, 1e-12);
}

TEST(Waveform, AveragingConvergesWithPhaseCount) {
  TrapSetup s = setup_no_gravity();
  ModulationWaveform w;
  w.period = 1e-4;
  for (int i = 0; i < 64; ++i) {
    double t = w.period * i / 64;
    double f = 3.0 * std::sin(2 * units::pi * i / 64.0);
    w.channel(Channel::H1).push_back({t, f, 1});
    w.channel(Channel::H2).push_back({t, f, 1});
  }
  w.channel(Channel::V1) = {{0, 0, 1}};
  w.channel(Channel::V2) = {{0, 0, 1}};
  AveragingOptions a{256, 0.125}, b{512, 0.125};
  TimeAveragedPotential Ua(s, w, a), Ub(s, w, b);
  for (double x = 0; x <= 300e-6; x += 10e-6) {
    Vec3 p(x, 0, 0);
    EXPECT_LT(std::abs(Ua(p) - Ub(p)), 1e-3 * std::abs(Ua(p))) << x;
  }
}

TEST(Waveform, ValidationErrors) {
  OpticalLayout L;
  ModulationWaveform w = ModulationWaveform::constant({0, 0, 0, 0});
  EXPECT_NO_THROW(w.validate(L));
  w.channel(Channel::H1) = {{0, 16.0, 1}};
  EXPECT_THROW(w.validate(L), DomainError);
  w = ModulationWaveform::constant({0, 0, 0, 0}, {1.2, 1, 1, 1});
  EXPECT_THROW(w.validate(L), DomainError);
  w = ModulationWaveform::constant({0, 0, 0, 0});
  w.channel(Channel::V2) = {{5e-5, 0, 1}, {1e-5, 0, 1}};
  EXPECT_THROW(w.validate(L), DomainError);
  TrapSetup s;
  ModulationWaveform bad = ModulationWaveform::constant({0, 0, 20, 0});
  EXPECT_THROW(TimeAveragedPotential(s, bad), DomainError);
}

TEST(Waveform, PiecewiseLinearWithJumps) {
  ModulationWaveform w = two_vertical_tones(2.0);
  EXPECT_DOUBLE_EQ(w.at(Channel::V1, 0.25e-4).freq_offset, -1.0);
  EXPECT_DOUBLE_EQ(w.at(Channel::V1, 0.5e-4).freq_offset, 1.0);
  EXPECT_DOUBLE_EQ(w.at(Channel::V1, 0.75e-4).freq_offset, 1.0);
  EXPECT_DOUBLE_EQ(w.mean_weight(Channel::V1), 1.0);
  ModulationWaveform r;
  r.period = 1.0;
  r.channel(Channel::H1) = {{0, 0, 1}, {0.5, 2, 0}};
  EXPECT_DOUBLE_EQ(r.at(Channel::H1, 0.25).freq_offset, 1.0);
  EXPECT_DOUBLE_EQ(r.at(Channel::H1, 0.75).freq_offset, 1.0);  // wraps back to the first sample
  EXPECT_DOUBLE_EQ(r.mean_weight(Channel::H1), 0.5);
}

TEST(Field, BinaryAndTextRoundTrip) {
  TrapSetup s = setup_no_gravity();
  Box r{Vec3(-10e-6, -10e-6, -10e-6), Vec3(10e-6, 12e-6, 10e-6)};
  ScalarField3D f = time_averaged_field(s, ModulationWaveform::constant({0, 0, 0, 0}), r, {5, 6, 7});
  auto dir = std::filesystem::temp_directory_path() / "odt_field_test";
  std::filesystem::create_directories(dir);
  for (auto enc : {FieldEncoding::Binary, FieldEncoding::Text}) {
    std::string path = (dir / (enc == FieldEncoding::Binary ? "f.bin" : "f.txt")).string();
    write_field(path, f, enc);
    ScalarField3D g = read_field(path);
    EXPECT_EQ(g.dims, f.dims);
    EXPECT_EQ(g.values, f.values);
    EXPECT_EQ(g.origin, f.origin);
    for (int a = 0; a < 3; ++a) EXPECT_EQ(g.axes[a], f.axes[a]);
  }
  EXPECT_THROW(read_field((dir / "missing.bin").string()), DomainError);
}

TEST(Field, InterpolatorExactForQuadratics) {
  auto q = [](const Vec3& p) { return 3 * p.x() * p.x() - 2 * p.x() * p.y() + p.z() * p.z() + 0.5 * p.y(); };
  ScalarField3D f = sample_field(q, Box{Vec3(-1, -1, -1), Vec3(1, 1, 1)}, {9, 9, 9});
  FieldInterpolator F(f);
  for (Vec3 p : {Vec3(0.1, -0.33, 0.5), Vec3(-0.71, 0.2, 0.05), Vec3(0.9, 0.9, -0.9)})
    EXPECT_NEAR(F(p), q(p), 1e-12);
}
