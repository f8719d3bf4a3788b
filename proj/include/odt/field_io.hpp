#pragma once

#include "odt/potential.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace odt {

enum class FieldEncoding { Binary, Text };

/// Grid file: one JSON header line, then values (x fastest) as little-endian f64 or text.
inline void write_field(const std::string& path, const ScalarField3D& f,
                        FieldEncoding enc = FieldEncoding::Binary) {
  f.validate();
  nlohmann::json h;
  h["format"] = "odt-field";
  h["version"] = 1;
  h["origin_m"] = {f.origin.x(), f.origin.y(), f.origin.z()};
  for (int a = 0; a < 3; ++a) h["axes_m"].push_back({f.axes[a].x(), f.axes[a].y(), f.axes[a].z()});
  h["dims"] = f.dims;
  h["units"] = "J";
  h["order"] = "x-fastest";
  h["encoding"] = enc == FieldEncoding::Binary ? "f64le" : "text";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot open field file for writing: " + path);
  out << h.dump() << '\n';
  if (enc == FieldEncoding::Binary) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
    out.write(reinterpret_cast<const char*>(f.values.data()),
              static_cast<std::streamsize>(f.values.size() * sizeof(double)));
  } else {
    out << std::setprecision(17);
    for (double v : f.values) out << v << '\n';
  }
  if (!out) throw DomainError("failed writing field file: " + path);
}

inline ScalarField3D read_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open field file: " + path);
  std::string line;
  std::getline(in, line);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("bad field header in " + path + ": " + e.what());
  }
  if (h.value("format", "") != "odt-field") throw DomainError("not a field file: " + path);
  ScalarField3D f;
  auto o = h.at("origin_m");
  f.origin = Vec3(o[0], o[1], o[2]);
  for (int a = 0; a < 3; ++a) {
    auto ax = h.at("axes_m")[a];
    f.axes[a] = Vec3(ax[0], ax[1], ax[2]);
  }
  f.dims = h.at("dims").get<std::array<int, 3>>();
  for (int d : f.dims)
    if (d < 1) throw DomainError("field dims must be positive");
  f.values.resize(f.size());
  if (h.value("encoding", "") == "f64le") {
    in.read(reinterpret_cast<char*>(f.values.data()),
            static_cast<std::streamsize>(f.values.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(f.values.size() * sizeof(double)))
      throw DomainError("truncated field payload in " + path);
  } else {
    for (auto& v : f.values)
      if (!(in >> v)) throw DomainError("truncated field payload in " + path);
  }
  f.validate();
  return f;
}

/// Catmull-Rom tricubic interpolation on a sampled field (exact for quadratics).
class FieldInterpolator {
 public:
  explicit FieldInterpolator(ScalarField3D f) : f_(std::move(f)) {
    f_.validate();
    for (int a = 0; a < 3; ++a) {
      if (f_.dims[a] < 4) throw DomainError("interpolation needs at least 4 nodes per axis");
      A_.col(a) = f_.axes[a];
    }
    inv_ = A_.inverse();
  }

  double operator()(const Vec3& p) const {
    Vec3 g = inv_ * (p - f_.origin);
    int base[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
      double c = std::clamp(g[a], 0.0, static_cast<double>(f_.dims[a] - 1));
      int i = static_cast<int>(std::floor(c));
      i = std::clamp(i, 1, f_.dims[a] - 3);
      base[a] = i - 1;
      t[a] = g[a] - i;  // may extend outside [0,1] at the borders (extrapolation)
    }
    double wx[4], wy[4], wz[4];
    weights(t[0], wx);
    weights(t[1], wy);
    weights(t[2], wz);
    double s = 0;
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < 4; ++j) {
        double row = 0;
        for (int i = 0; i < 4; ++i) row += wx[i] * f_(base[0] + i, base[1] + j, base[2] + k);
        s += wz[k] * wy[j] * row;
      }
    return s;
  }

  Box bounds() const {
    Vec3 far = f_.node(f_.dims[0] - 1, f_.dims[1] - 1, f_.dims[2] - 1);
    return {f_.origin.cwiseMin(far), f_.origin.cwiseMax(far)};
  }
  const ScalarField3D& field() const { return f_; }

 private:
  static void weights(double t, double w[4]) {
    double t2 = t * t, t3 = t2 * t;
    w[0] = 0.5 * (-t3 + 2 * t2 - t);
    w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
    w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
    w[3] = 0.5 * (t3 - t2);
  }
  ScalarField3D f_;
  Mat3 A_, inv_;
};

}  // namespace odt
