#include "lpmap/harness.h"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

namespace lpmap {
namespace {

using Rng = std::mt19937_64;

double Uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Matrix3 Yaw(double yaw) {
  return Eigen::AngleAxisd(yaw, Vector3::UnitZ()).toRotationMatrix();
}

Vector3 Horizontal(double heading) { return {std::cos(heading), std::sin(heading), 0}; }

Landmark SurfaceLandmark(const Surface& s) {
  Landmark lm;
  lm.kind = s.kind;
  lm.label = s.label;
  std::vector<Vector3> support;
  if (s.kind == LandmarkKind::kLine) {
    support = {s.center - s.u * s.half_u, s.center + s.u * s.half_u};
  } else {
    for (double a : {-1.0, 1.0}) {
      for (double b : {-1.0, 1.0}) support.push_back(s.center + a * s.half_u * s.u + b * s.half_v * s.v);
    }
  }
  FitLandmark(support, &lm);
  return lm;
}

Rng SeededRng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

int Draws(Rng& rng, double expected) {
  const double whole = std::floor(expected);
  return static_cast<int>(whole) + (Uniform(rng, 0, 1) < expected - whole);
}

}  // namespace

World GenWorld(const WorldSpec& spec) {
  World world;
  world.spec = spec;
  Rng rng(spec.seed);
  const Vector3 up = Vector3::UnitZ();
  for (int k = 0; k < spec.streets; ++k) {
    Street street;
    street.heading = spec.heading + k * spec.street_turn;
    street.length = spec.street_length;
    street.origin = k * spec.street_spacing * Vector3(0.6, -0.8, 0);
    world.streets.push_back(street);
    const Vector3 d = Horizontal(street.heading);
    const Vector3 l = up.cross(d);

    Surface road;
    road.label = Label::kRoad;
    road.center = street.origin + d * (street.length / 2);
    road.u = d;
    road.v = l;
    road.half_u = street.length / 2 + 10;
    road.half_v = spec.facade_offset;
    world.surfaces.push_back(road);

    for (double side : {1.0, -1.0}) {
      double s = Uniform(rng, 0, spec.gap_max);
      while (s < street.length) {
        const double e = std::min(s + Uniform(rng, spec.building_min, spec.building_max), street.length);
        if (e - s < 5) break;
        const double offset = spec.facade_offset + Uniform(rng, -spec.facade_jitter, spec.facade_jitter);
        const double yaw = Uniform(rng, -spec.facade_yaw_jitter, spec.facade_yaw_jitter);
        Surface facade;
        facade.center = street.origin + d * ((s + e) / 2) + l * (side * offset) + up * (spec.wall_height / 2);
        facade.u = Yaw(yaw) * d;
        facade.v = up;
        facade.half_u = (e - s) / 2;
        facade.half_v = spec.wall_height / 2;
        world.surfaces.push_back(facade);
        for (double end : {s, e}) {
          Surface wall;
          wall.center = street.origin + d * end + l * (side * (offset + spec.building_depth / 2)) +
                        up * (spec.wall_height / 2);
          wall.u = l;
          wall.v = up;
          wall.half_u = spec.building_depth / 2;
          wall.half_v = spec.wall_height / 2;
          world.surfaces.push_back(wall);
        }
        const double gap = Uniform(rng, spec.gap_min, spec.gap_max);
        if (Uniform(rng, 0, 1) < spec.fence_probability && e + gap < street.length) {
          Surface fence;
          fence.label = Label::kFence;
          fence.center = street.origin + d * (e + gap / 2) + l * (side * spec.facade_offset) +
                         up * (spec.fence_height / 2);
          fence.u = d;
          fence.v = up;
          fence.half_u = gap / 2 - 0.5;
          fence.half_v = spec.fence_height / 2;
          world.surfaces.push_back(fence);
        }
        s = e + gap;
      }
    }
  }
  for (int k = 0; k < spec.streets; ++k) {
    const Street& street = world.streets[k];
    const Vector3 d = Horizontal(street.heading);
    const Vector3 l = up.cross(d);
    const int count = spec.poles / spec.streets + (k < spec.poles % spec.streets);
    for (int i = 0; i < count; ++i) {
      const double spacing = street.length / count;
      const double s = (i + 0.5 + Uniform(rng, -0.3, 0.3)) * spacing;
      const double side = Uniform(rng, 0, 1) < 0.5 ? 1.0 : -1.0;
      const double offset = spec.pole_offset + Uniform(rng, -0.3, 0.3);
      const double tilt = Uniform(rng, 0, spec.max_tilt);
      const double azimuth = Uniform(rng, 0, 2 * std::numbers::pi);
      Surface pole;
      pole.kind = LandmarkKind::kLine;
      pole.label = Label::kPole;
      pole.u = {std::sin(tilt) * std::cos(azimuth), std::sin(tilt) * std::sin(azimuth), std::cos(tilt)};
      pole.v = pole.u.cross(d).normalized();
      pole.half_u = spec.pole_height / 2;
      pole.radius = spec.pole_radius;
      pole.center = street.origin + d * s + l * (side * offset) + pole.u * pole.half_u;
      world.surfaces.push_back(pole);
    }
  }
  for (const auto& s : world.surfaces) world.landmarks.push_back(SurfaceLandmark(s));
  return world;
}

SessionData GenSession(const World& world, int id, const SessionSpec& spec, const NoiseSpec& noise) {
  if (spec.street < 0 || spec.street >= static_cast<int>(world.streets.size()) || spec.step <= 0) {
    throw Error(ErrorCode::kValidationError, "session references a missing street or has no step");
  }
  SessionData data;
  data.id = id;
  data.spec = spec;
  const Street& street = world.streets[spec.street];
  const Vector3 d = Horizontal(street.heading);
  const Vector3 l = Vector3::UnitZ().cross(d);
  const double sign = spec.end >= spec.start ? 1 : -1;
  const int n = static_cast<int>(std::floor(std::abs(spec.end - spec.start) / spec.step)) + 1;
  const double wavelength = 40;
  for (int i = 0; i < n; ++i) {
    const double s = spec.start + sign * i * spec.step;
    const double phase = 2 * std::numbers::pi * s / wavelength;
    const double lateral = spec.lateral + spec.wobble * std::sin(phase);
    const double slope = spec.wobble * 2 * std::numbers::pi / wavelength * std::cos(phase);
    const double yaw = street.heading + std::atan2(sign * slope, sign);
    data.ground_truth.push_back(
        {Yaw(yaw), street.origin + d * s + l * lateral + Vector3::UnitZ() * spec.sensor_height});
  }

  Rng rng = SeededRng({world.spec.seed, 7919, static_cast<std::uint64_t>(id)});
  RigidPose anchor = data.ground_truth.front();
  if (id != 0) {
    const double limit = std::cos(2.0 * std::numbers::pi / 180);
    while (true) {
      anchor = {Yaw(Uniform(rng, 0, 2 * std::numbers::pi)),
                Vector3(Uniform(rng, -100, 100), Uniform(rng, -100, 100), 0)};
      const Matrix3 to_session = (data.ground_truth.front() * anchor.Inverse()).rotation.transpose();
      bool safe = true;
      for (const auto& lm : world.landmarks) safe &= std::abs((to_session * lm.normal).x()) < limit;
      if (safe) break;
    }
  }
  std::normal_distribution<double> gauss;
  data.odometry.push_back(anchor);
  for (int i = 0; i + 1 < n; ++i) {
    Vector6 delta;
    for (int a = 0; a < 3; ++a) delta(a) = noise.odometry_sigma_r * gauss(rng);
    for (int a = 3; a < 6; ++a) delta(a) = noise.odometry_sigma_t * gauss(rng);
    const RigidPose step = data.ground_truth[i].Inverse() * data.ground_truth[i + 1];
    data.odometry.push_back(data.odometry.back() * Retract(step, delta));
  }
  return data;
}

LabeledCloud GenerateScan(const World& world, const SessionData& session, int index,
                          const NoiseSpec& noise) {
  Rng rng = SeededRng({world.spec.seed, static_cast<std::uint64_t>(session.id),
                       static_cast<std::uint64_t>(index), 17});
  Rng noise_rng = SeededRng({world.spec.seed, static_cast<std::uint64_t>(session.id),
                             static_cast<std::uint64_t>(index), 29});
  const RigidPose& pose = session.ground_truth.at(index);
  const RigidPose to_sensor = pose.Inverse();
  const Vector3 p = pose.translation;
  const double range = noise.range;
  std::normal_distribution<double> gauss(0, noise.point_sigma);
  LabeledCloud cloud;
  auto emit = [&](const Vector3& x, Label label) {
    const double r = (x - p).norm();
    if (r > range) return;
    const double keep = std::min(1.0, noise.density_range * noise.density_range / (r * r));
    if (Uniform(rng, 0, 1) >= keep) return;
    if (Uniform(noise_rng, 0, 1) < noise.label_corruption) {
      int other = std::uniform_int_distribution<int>(0, 3)(noise_rng);
      if (other >= static_cast<int>(label)) ++other;
      label = static_cast<Label>(other);
    }
    const Vector3 jitter(gauss(noise_rng), gauss(noise_rng), gauss(noise_rng));
    cloud.Add(to_sensor * x + jitter, label);
  };
  for (const Surface& s : world.surfaces) {
    const Vector3 rel = p - s.center;
    const double pu = rel.dot(s.u);
    const double u0 = std::max(-s.half_u, pu - range), u1 = std::min(s.half_u, pu + range);
    if (u0 >= u1) continue;
    if (s.kind == LandmarkKind::kLine) {
      if ((rel - pu * s.u).norm() > range + s.radius) continue;
      const Vector3 e1 = s.v, e2 = s.u.cross(s.v);
      const int count = Draws(rng, noise.density * 2 * std::numbers::pi * s.radius * (u1 - u0));
      for (int i = 0; i < count; ++i) {
        const double t = Uniform(rng, u0, u1);
        const double phi = Uniform(rng, 0, 2 * std::numbers::pi);
        emit(s.center + t * s.u + s.radius * (std::cos(phi) * e1 + std::sin(phi) * e2), s.label);
      }
    } else {
      const Vector3 n = s.u.cross(s.v);
      if (std::abs(rel.dot(n)) > range) continue;
      const double pv = rel.dot(s.v);
      const double v0 = std::max(-s.half_v, pv - range), v1 = std::min(s.half_v, pv + range);
      if (v0 >= v1) continue;
      const int count = Draws(rng, noise.density * (u1 - u0) * (v1 - v0));
      for (int i = 0; i < count; ++i) {
        const double a = Uniform(rng, u0, u1);
        const double b = Uniform(rng, v0, v1);
        emit(s.center + a * s.u + b * s.v, s.label);
      }
    }
  }
  return cloud;
}

ExtractedSession ExtractSession(const World& world, const SessionData& data, const NoiseSpec& noise,
                                const ExtractConfig& config) {
  ExtractedSession out;
  std::vector<Keyframe> keyframes;
  for (int index : SelectKeyframes(data.odometry, config)) {
    const LabeledCloud cloud = GenerateScan(world, data, index, noise);
    keyframes.push_back(ExtractKeyframe(static_cast<int>(keyframes.size()), index, data.odometry[index],
                                        cloud, config));
    out.ground_truth.push_back(data.ground_truth[index]);
  }
  out.session = BuildSession(data.id, std::move(keyframes), config);
  return out;
}

Scenario DefaultScenario() {
  Scenario scenario;
  scenario.sessions = {
      {.street = 0, .start = 0, .end = 120, .lateral = 2},
      {.street = 0, .start = 200, .end = 70, .lateral = -2},
      {.street = 0, .start = 40, .end = 170, .lateral = 0},
      {.street = 1, .start = 0, .end = 100, .lateral = 1},
  };
  return scenario;
}

RigidPose AlignTrajectories(const std::vector<RigidPose>& estimate,
                            const std::vector<RigidPose>& truth) {
  if (estimate.size() != truth.size()) {
    throw Error(ErrorCode::kLengthMismatch, "trajectories differ in length");
  }
  const int n = static_cast<int>(estimate.size());
  if (n == 0) return {};
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (int i = 0; i < n; ++i) {
    src.col(i) = estimate[i].translation;
    dst.col(i) = truth[i].translation;
  }
  if ((src.array() == dst.array()).all()) return {};
  if (n < 3) return {Matrix3::Identity(), (dst.rowwise().mean() - src.rowwise().mean()).eval()};
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  return {t.topLeftCorner<3, 3>(), t.topRightCorner<3, 1>()};
}

namespace {

// Chordal form of the rotation angle between a and b; exactly zero when equal.
double RotationAngle(const Matrix3& a, const Matrix3& b) {
  return 2 * std::asin(std::min(1.0, (a - b).norm() / (2 * std::numbers::sqrt2)));
}

}  // namespace

MetricReport Evaluate(const std::vector<RigidPose>& estimate, const std::vector<RigidPose>& truth) {
  const RigidPose align = AlignTrajectories(estimate, truth);
  MetricReport report;
  const size_t n = estimate.size();
  if (n == 0) return report;
  constexpr double kDegrees = 180 / std::numbers::pi;
  double rot = 0, trans = 0;
  for (size_t i = 0; i < n; ++i) {
    const RigidPose e = align * estimate[i];
    rot += std::pow(RotationAngle(e.rotation, truth[i].rotation), 2);
    trans += (e.translation - truth[i].translation).squaredNorm();
  }
  report.ape_rotation = std::sqrt(rot / n) * kDegrees;
  report.ape_translation = std::sqrt(trans / n);
  if (n < 2) return report;
  rot = trans = 0;
  for (size_t i = 0; i + 1 < n; ++i) {
    const RigidPose de = estimate[i].Inverse() * estimate[i + 1];
    const RigidPose dt = truth[i].Inverse() * truth[i + 1];
    rot += std::pow(RotationAngle(de.rotation, dt.rotation), 2);
    trans += (de.translation - dt.translation).squaredNorm();
  }
  report.rpe_rotation = std::sqrt(rot / (n - 1)) * kDegrees;
  report.rpe_translation = std::sqrt(trans / (n - 1));
  return report;
}


}  // namespace lpmap
