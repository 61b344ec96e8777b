#ifndef LPMAP_HARNESS_H_
#define LPMAP_HARNESS_H_

#include <cstdint>
#include <numbers>
#include <vector>

#include "lpmap/extract.h"
#include "lpmap/server.h"

namespace lpmap {

// Procedural streets: a road strip with building facades and side walls on
// both sides, fences in some gaps and tilted poles along the kerbs.
struct WorldSpec {
  std::uint64_t seed = 1;
  int streets = 2;
  double heading = 20.0 * std::numbers::pi / 180;
  double street_length = 200;
  double facade_offset = 9;   // lateral distance of the facades
  double facade_jitter = 0.5;
  double facade_yaw_jitter = 2.0 * std::numbers::pi / 180;
  double building_min = 15;
  double building_max = 30;
  double gap_min = 4;
  double gap_max = 10;
  double building_depth = 8;
  double wall_height = 8;
  double fence_probability = 0.5;
  double fence_height = 1.5;
  int poles = 40;  // over all streets
  double pole_offset = 6.5;
  double pole_height = 6;
  double pole_radius = 0.15;
  double max_tilt = 5.0 * std::numbers::pi / 180;
  // Street k > 0 starts this far from the previous one, turned by this much.
  double street_spacing = 1000;
  double street_turn = 35.0 * std::numbers::pi / 180;
};

// A rectangle (planes) or a cylinder (poles).
struct Surface {
  LandmarkKind kind = LandmarkKind::kPlane;
  Label label = Label::kBuilding;
  Vector3 center = Vector3::Zero();
  Vector3 u = Vector3::UnitX();  // pole axis for lines
  Vector3 v = Vector3::UnitY();
  double half_u = 0;
  double half_v = 0;
  double radius = 0;
};

struct Street {
  Vector3 origin = Vector3::Zero();
  double heading = 0;
  double length = 0;
};

struct World {
  WorldSpec spec;
  std::vector<Street> streets;
  std::vector<Surface> surfaces;
  std::vector<Landmark> landmarks;  // one per surface, no observations
};

World GenWorld(const WorldSpec& spec);

struct SessionSpec {
  int street = 0;
  double start = 0;  // arc length along the street; end < start drives back
  double end = 100;
  double lateral = 0;
  double step = 2.0;
  double wobble = 0.5;  // lateral sine amplitude
  double sensor_height = 1.8;
};

struct NoiseSpec {
  double point_sigma = 0.04;
  double label_corruption = 0.2;
  double odometry_sigma_t = 0.02;  // per step and axis
  double odometry_sigma_r = 0.2 * std::numbers::pi / 180;
  double range = 40;
  double density = 40;       // points per square meter up close
  double density_range = 10; // density falls off with the squared range beyond this
};

struct SessionData {
  int id = 0;
  SessionSpec spec;
  std::vector<RigidPose> ground_truth;  // world frame
  std::vector<RigidPose> odometry;      // session frame
};

// Odometry starts from a random frame, kept clear of the line/plane chart
// singularity for every landmark; session 0 starts in the world frame.
SessionData GenSession(const World& world, int id, const SessionSpec& spec, const NoiseSpec& noise);

// Labelled scan in the sensor frame; deterministic in (world seed, session, index).
LabeledCloud GenerateScan(const World& world, const SessionData& session, int index,
                          const NoiseSpec& noise);

struct ExtractedSession {
  Session session;
  std::vector<RigidPose> ground_truth;  // per keyframe
};

ExtractedSession ExtractSession(const World& world, const SessionData& data, const NoiseSpec& noise,
                                const ExtractConfig& config = {});

struct Scenario {
  WorldSpec world;
  NoiseSpec noise;
  std::vector<SessionSpec> sessions;
};

// Three overlapping drives along street 0 and one on street 1.
Scenario DefaultScenario();

struct MetricReport {
  double ape_rotation = 0;     // degrees
  double ape_translation = 0;  // meters
  double rpe_rotation = 0;
  double rpe_translation = 0;
};

// APE after closed-form rigid alignment of the positions; RPE over
// consecutive poses. Throws kLengthMismatch.
MetricReport Evaluate(const std::vector<RigidPose>& estimate, const std::vector<RigidPose>& truth);

// Rigid transform minimizing the squared distance from aligned estimate
// positions to the truth positions.
RigidPose AlignTrajectories(const std::vector<RigidPose>& estimate,
                            const std::vector<RigidPose>& truth);

}  // namespace lpmap

#endif  // LPMAP_HARNESS_H_
