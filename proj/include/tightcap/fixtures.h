#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tightcap/template.h"

namespace tightcap {

// A synthetic clothed subject: a body built from its own spec (and topology),
// posed, then dressed by pushing garment regions outward.
struct FixtureSpec {
  SynthSpec body = default_subject();
  double offset = 0.03;     // clothing gap, meters
  std::string pose = "T";   // "T", "A" or "W"
  double noise = 0;         // std dev of normal jitter on the scan, meters
  std::uint64_t seed = 0;
  int smoothing = 8;        // Laplacian passes over the garment indicator and normals

  static SynthSpec default_subject();
};

void validate(const FixtureSpec& spec);

struct Fixture {
  TriMesh scan;  // clothed, with colors
  TriMesh body;  // ground truth
  std::vector<int> body_garment;   // per body vertex: Garment
  std::vector<double> gap;         // per body vertex clothing gap, meters
  std::map<std::string, Vec3> joints;
  JointRig pose;
};

// Pose by name applied to `rest` (theta only; scales stay 1).
JointRig named_pose(const JointRig& rest, const std::string& pose);

Fixture make_fixture(const FixtureSpec& spec);

// Posed joint positions keyed by joint name.
std::map<std::string, Vec3> joint_map(const JointRig& rig);

}  // namespace tightcap
