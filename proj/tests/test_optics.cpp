#include "odt/optics.hpp"

#include <gtest/gtest.h>

using namespace odt;
using units::deg;
using units::mm;
using units::um;

namespace {

OpticalLayout stigmatic_layout() {
  OpticalLayout L;
  L.window_tilt = 0.0;
  return L;
}

// Independent 2D midpoint quadrature of the transverse intensity.
double transverse_power(const AstigmaticBeam& b, double z, int n = 600) {
  double wh = b.radius_h(z), wv = b.radius_v(z);
  double ax = 5 * wh, ay = 5 * wv;
  double dx = 2 * ax / n, dy = 2 * ay / n;
  double s = 0;
  Vec3 h = b.horizontal, v = b.vertical();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double x = -ax + (i + 0.5) * dx, y = -ay + (j + 0.5) * dy;
      s += beam_intensity(b, b.origin + z * b.direction + x * h + y * v);
    }
  return s * dx * dy;
}

}  // namespace

TEST(Focus, WaistAndRayleighRange) {
  OpticalLayout L;
  AstigmaticBeam b = focus_input_beam(L, InputBeam{});
  double w = 60 * mm * 1.064 * um / (units::pi * 1.95 * mm);
  EXPECT_DOUBLE_EQ(b.waist_h, w);
  EXPECT_NEAR(b.waist_h / (10.5 * um), 1.0, 0.02);
  EXPECT_NEAR(b.rayleigh_h() / (320 * um), 1.0, 0.02);
  EXPECT_DOUBLE_EQ(b.power, InputBeam{}.power * 0.75);
}

TEST(Focus, RayleighRangeOfTenPointFiveMicronWaist) {
  AstigmaticBeam b;
  b.waist_h = b.waist_v = 10.5 * um;
  EXPECT_NEAR(b.rayleigh_h() / (325.7 * um), 1.0, 1e-3);  // quoted to 4 digits
}

TEST(Focus, DoublingInputRadiusHalvesWaistQuartersRange) {
  OpticalLayout L;
  InputBeam a, b;
  b.collimated_radius = 2 * a.collimated_radius;
  L.aod_aperture = {20 * mm, 20 * mm};
  AstigmaticBeam fa = focus_input_beam(L, a), fb = focus_input_beam(L, b);
  EXPECT_NEAR(fb.waist_h, 0.5 * fa.waist_h, 1e-18);
  EXPECT_NEAR(fb.rayleigh_h(), 0.25 * fa.rayleigh_h(), 1e-15);
}

TEST(Focus, Errors) {
  OpticalLayout L;
  InputBeam in;
  in.collimated_radius = 0;
  EXPECT_THROW(focus_input_beam(L, in), DomainError);
  in.collimated_radius = 1.95 * mm;
  in.wavelength = -1;
  EXPECT_THROW(focus_input_beam(L, in), DomainError);
  in.wavelength = 1.064 * um;
  in.collimated_radius = 50 * mm;  // w0 ~ 0.4 um < lambda/2
  EXPECT_THROW(focus_input_beam(L, in), ModelValidityError);
}

TEST(Focus, TiltedPlateSplitsFocus) {
  OpticalLayout L;
  // sagittal/tangential longitudinal shifts computed by hand for t=10 mm, n=1.45, 15 deg
  auto [ds, dt] = plate_focal_shifts(10 * mm, 1.45, 15 * deg);
  EXPECT_NEAR(ds / mm, 3.34364, 1e-4);
  EXPECT_NEAR(dt / mm, 3.59802, 1e-4);
  AstigmaticBeam b = focus_input_beam(L, InputBeam{});
  EXPECT_NEAR((b.focus_h - b.focus_v) / um, 254.38, 0.1);
  EXPECT_DOUBLE_EQ(b.focus_v, 0.0);
  L.crossing_focus = FocusPlacement::Midpoint;
  b = focus_input_beam(L, InputBeam{});
  EXPECT_NEAR(b.focus_h, -b.focus_v, 1e-18);
}

TEST(Focus, StigmaticLimit) {
  AstigmaticBeam b = focus_input_beam(stigmatic_layout(), InputBeam{});
  EXPECT_EQ(b.focus_h, b.focus_v);
  EXPECT_EQ(b.waist_h, b.waist_v);
  EXPECT_TRUE(b.stigmatic());
}

TEST(Intensity, PeakClosedForm) {
  AstigmaticBeam b;
  b.power = 10;
  b.waist_h = b.waist_v = 10.5 * um;
  double I = beam_intensity(b, Vec3::Zero());
  EXPECT_NEAR(I / 5.7745e10, 1.0, 1e-3);
  EXPECT_DOUBLE_EQ(I, 2 * 10 / (units::pi * 10.5 * um * 10.5 * um));
}

TEST(Intensity, OneOverESquaredAtWaistRadius) {
  AstigmaticBeam b;
  b.power = 1;
  b.waist_h = b.waist_v = 10 * um;
  double I0 = beam_intensity(b, Vec3::Zero());
  EXPECT_NEAR(beam_intensity(b, b.horizontal * 10 * um) / I0, std::exp(-2.0), 1e-14);
  EXPECT_NEAR(beam_intensity(b, b.vertical() * 10 * um) / I0, std::exp(-2.0), 1e-14);
}

TEST(Intensity, PowerConservedAtAnyAxialPosition) {
  OpticalLayout L;
  AstigmaticBeam b = focus_input_beam(L, InputBeam{});
  for (double k : {-2.0, 0.0, 0.5, 2.0}) {
    double z = k * b.rayleigh_h();
    EXPECT_NEAR(transverse_power(b, z) / b.power, 1.0, 1e-3) << "z = " << z;
  }
  EXPECT_NEAR(transverse_power(b, 2 * b.rayleigh_h()), InputBeam{}.power * 0.75,
              1e-3 * b.power);
}

TEST(Intensity, BeamGrowthEvenAndMonotone) {
  AstigmaticBeam b = focus_input_beam(OpticalLayout{}, InputBeam{});
  for (double s : {1e-6, 50e-6, 300e-6, 2e-3}) {
    EXPECT_DOUBLE_EQ(b.radius_h(b.focus_h + s), b.radius_h(b.focus_h - s));
    EXPECT_DOUBLE_EQ(b.radius_v(b.focus_v + s), b.radius_v(b.focus_v - s));
  }
  double prev = b.radius_v(b.focus_v);
  for (int i = 1; i < 200; ++i) {
    double w = b.radius_v(b.focus_v + i * 10e-6);
    EXPECT_GT(w, prev);
    prev = w;
  }
}

TEST(Deflection, IdealThinLensScale) {
  OpticalLayout L;
  auto m = DisplacementModel::geometric(false, false);
  double d = deflection_to_displacement(L, m, Channel::V1, 1.0);
  EXPECT_NEAR(d / (97.8 * um), 1.0, 1e-3);  // quoted to 3 digits
  EXPECT_NEAR(d, 60 * mm * std::tan(1.4 * deg / 15), 1e-15);
}

TEST(Deflection, CalibratedChannelsExact) {
  OpticalLayout L;
  DisplacementModel m;
  EXPECT_DOUBLE_EQ(deflection_to_displacement(L, m, Channel::V1, 1.0), 86 * um);
  EXPECT_DOUBLE_EQ(deflection_to_displacement(L, m, Channel::H2, 1.0), 92 * um);
  EXPECT_EQ(deflection_to_displacement(L, m, Channel::H1, 0.0), 0.0);
  for (double f : {-15.0, -3.3, 0.7, 2.0, 15.0})
    EXPECT_DOUBLE_EQ(deflection_to_displacement(L, m, Channel::V2, f), 86 * um * f);
}

TEST(Deflection, RangeError) {
  OpticalLayout L;
  EXPECT_THROW(deflection_to_displacement(L, DisplacementModel{}, Channel::H1, 15.01), DomainError);
  EXPECT_THROW(deflection_to_displacement(L, DisplacementModel::geometric(), Channel::V2, -16),
               DomainError);
}

TEST(Deflection, GeometricModelInsideBands) {
  OpticalLayout L;
  auto m = DisplacementModel::geometric();
  for (Channel c : kChannels) {
    double s = 0;
    int n = 0;
    for (int i = -30; i <= 30; ++i) {
      if (i == 0) continue;
      double f = 0.5 * i;
      double scale = deflection_to_displacement(L, m, c, f) / f / um;
      EXPECT_GT(scale, 80);
      EXPECT_LT(scale, 100);
      s += scale;
      ++n;
    }
    double mean = s / n;
    if (is_horizontal(c)) EXPECT_NEAR(mean, 92, 4) << channel_name(c);
    else EXPECT_NEAR(mean, 88, 5) << channel_name(c);
  }
  EXPECT_EQ(deflection_to_displacement(L, m, Channel::H1, 0.0), 0.0);
}

TEST(Deflection, InverseRoundTrip) {
  OpticalLayout L;
  for (auto m : {DisplacementModel{}, DisplacementModel::geometric()})
    for (Channel c : kChannels)
      for (double f : {-12.0, -1.0, 0.25, 7.5}) {
        double d = deflection_to_displacement(L, m, c, f);
        EXPECT_NEAR(displacement_to_deflection(L, m, c, d), f, 1e-9);
      }
  EXPECT_THROW(displacement_to_deflection(L, DisplacementModel{}, Channel::V1, 2 * mm),
               DomainError);
}

TEST(Layout, DefaultsValidAndInvariants) {
  OpticalLayout L;
  EXPECT_NO_THROW(L.validate());
  EXPECT_NEAR(L.angle_per_MHz() * L.aod_freq_range, L.aod_full_deflection, 1e-18);
  L.crossing_full_angle = 40 * deg;
  EXPECT_THROW(L.validate(), DomainError);
  L = OpticalLayout{};
  L.power_throughput = 1.2;
  EXPECT_THROW(L.validate(), DomainError);
}

TEST(Beamlines, ZeroOffsetsIntersectAtFocus) {
  OpticalLayout L;
  BeamPair b = build_beamlines(L, {InputBeam{}, InputBeam{}}, {0, 0, 0, 0});
  auto [dist, mid] = closest_approach(b[0], b[1]);
  EXPECT_LT(dist, 1e-9);
  EXPECT_LT(mid.norm(), 1e-9);
  EXPECT_NEAR(std::acos(b[0].direction.dot(b[1].direction)), 30 * deg, 1e-12);
  for (const auto& beam : b) {
    EXPECT_NO_THROW(beam.validate());
    EXPECT_NEAR(beam.horizontal.cross(beam.vertical()).dot(beam.direction), 1.0, 1e-15);
    EXPECT_NEAR(beam.vertical().z(), 1.0, 1e-15);
  }
}

TEST(Beamlines, HorizontalOffsetMovesCrossingInPlane) {
  OpticalLayout L;
  BeamPair b = build_beamlines(L, {InputBeam{}, InputBeam{}}, {86 * um, 0, 0, 0});
  auto [dist, mid] = closest_approach(b[0], b[1]);
  // in-plane offsets keep the axes coplanar, so they still meet; the crossing moves per the map
  EXPECT_LT(dist, 1e-12);
  Vec3 expect = crossing_point(L, 86 * um, 0, 0);
  EXPECT_LT((mid - expect).norm(), 1e-12);
  EXPECT_NEAR(mid.dot(b[0].horizontal), 86 * um, 1e-12);
  EXPECT_NEAR(mid.dot(b[1].horizontal), 0.0, 1e-12);
}

TEST(Beamlines, DifferentialVerticalOffsetGivesClosestApproach) {
  OpticalLayout L;
  BeamPair b = build_beamlines(L, {InputBeam{}, InputBeam{}}, {0, 86 * um, 0, 0});
  EXPECT_NEAR(closest_approach(b[0], b[1]).first, 86 * um, 1e-12);
}

TEST(Beamlines, CommonVerticalOffsetTranslates) {
  OpticalLayout L;
  BeamPair b = build_beamlines(L, {InputBeam{}, InputBeam{}}, {0, 86 * um, 0, 86 * um});
  auto [dist, mid] = closest_approach(b[0], b[1]);
  EXPECT_LT(dist, 1e-12);
  EXPECT_NEAR(mid.z(), 86 * um, 1e-12);
  EXPECT_NEAR(mid.x(), 0, 1e-12);
  EXPECT_NEAR(mid.y(), 0, 1e-12);
}

TEST(Beamlines, CrossingOffsetsInvertCrossingPoint) {
  OpticalLayout L;
  Vec3 p(120 * um, -340 * um, 55 * um);
  ChannelOffsets o = crossing_offsets(L, p);
  Vec3 q = crossing_point(L, o[0], o[2], o[1]);
  EXPECT_LT((p - q).norm(), 1e-15);
  BeamPair b = build_beamlines(L, {InputBeam{}, InputBeam{}}, o);
  auto [dist, mid] = closest_approach(b[0], b[1]);
  EXPECT_LT(dist, 1e-12);
  EXPECT_LT((mid - p).norm(), 1e-12);
}

TEST(Beamlines, OutOfRange) {
  OpticalLayout L;
  EXPECT_THROW(build_beamlines(L, {InputBeam{}, InputBeam{}}, {2 * mm, 0, 0, 0}), DomainError);
  InputBeam wide;
  wide.collimated_radius = 4 * mm;
  EXPECT_THROW(build_beamlines(L, {wide, InputBeam{}}, {0, 0, 0, 0}), DomainError);
}
