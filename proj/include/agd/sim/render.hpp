#pragma once

// Column-raycast renderer for the surround camera rig.
//
// Three pinhole cameras (yaw -60/0/+60 degrees, 60-degree horizontal FOV)
// share the ego position at 1.5 m height. Each image column casts one ray:
// scripted agents and roadside fixtures are billboard sprites, the road
// surface is sampled by ground-plane intersection, everything else is sky.
// Per-pixel output is RGB in [0,1], a semantic class id, and metric depth
// (range along the ray; sky and far terrain use a 500 m sentinel).
//
// Environment conditions (tint, brightness, additive noise) affect RGB only.
// Rendering is a pure function of (world, ego, frame_seed): equal inputs give
// byte-identical images.

#include <cstdint>
#include <vector>

#include "agd/sim/world.hpp"
#include "agd/types.hpp"

namespace agd {

inline const std::vector<double>& camera_yaws() {
    static const std::vector<double> yaws = {-M_PI / 3.0, 0.0, M_PI / 3.0};
    return yaws;
}
constexpr int kNumCameras = 3;
constexpr double kCameraFovRad = M_PI / 3.0;
constexpr double kCameraHeight = 1.5;
constexpr float kFarDepth = 500.0f;

struct RenderOutput {
    std::vector<RgbImage> rgb;        // one per camera, left/center/right
    std::vector<SemanticImage> sem;   // classes are condition-independent
    std::vector<DepthImage> depth;    // metres, > 0
};

RenderOutput render(const World& world, const EgoState& ego, int width, int height,
                    uint64_t frame_seed);

// Semantic class of the ground plane at a world point (road surface, dashed
// centre marking, road border band, or off-road background).
SemClass classify_ground(const TownMap& town, const Vec2& p);

// Pack a rendered frame plus ego speed and the active command into a
// 3-channel network observation.
Observation make_observation(const RenderOutput& r, double speed_norm, Command cmd);

}  // namespace agd
