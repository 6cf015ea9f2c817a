#pragma once

// Ground-truth attention masks: binary saliency from semantics + depth,
// pooling/flattening into token-space distributions, and depth-aware noise
// corruption. Every public entry point bumps a global invocation counter so
// mask-free inference paths can prove they never touched this module.

#include <atomic>
#include <cstdint>
#include <set>
#include <vector>

#include "agd/types.hpp"

namespace agd {

// Counts calls to build_mask / to_distribution / corrupt_mask since the last
// reset. Inference with the plain model must leave this at zero.
std::atomic<uint64_t>& mask_pipeline_invocations();
void reset_mask_pipeline_invocations();

// Classes the ground-truth mask highlights: safety-critical dynamic objects
// plus the static guidance infrastructure.
const std::set<SemClass>& default_salient_classes();

// pixel = 1 iff class is salient and depth <= d_max (meters).
AttentionMask build_mask(const SemanticImage& sem, const DepthImage& depth,
                         const std::set<SemClass>& salient, double d_max);

// Average-pool each camera mask to w x h, flatten row-major, concatenate in
// camera order, normalize to sum 1. All-zero input falls back to the uniform
// distribution so downstream losses stay defined.
std::vector<double> to_distribution(const std::vector<AttentionMask>& masks, int w, int h);

struct NoiseParams {
    uint64_t seed = 0;
    double base_wavelength = 16.0;     // pixels per base-octave cell
    double granular_wavelength = 4.0;  // pixels per granular-octave cell
    double tau_max = 0.45;             // blob threshold at depth 0
    double tau_min = 0.10;             // blob threshold floor (far away)
    double granular_tau = 0.20;        // threshold for the high-frequency octave
    double d_max = 20.0;               // meters; scales the threshold ramp
    int area_big = 60;                 // components above this get granular dropouts
    int thin_side = 3;                 // components with min bbox side below this are kept
    std::set<SemClass> excluded = {SemClass::LaneMarking, SemClass::RoadBorder};
};

// Threshold for the base blob field; decreasing in depth so distant objects
// degrade more. tau(d) = tau_max * (1 - d / (2 d_max)), clamped to
// [tau_min, tau_max].
double blob_threshold(double depth, const NoiseParams& p);

// Depth-aware corruption. Removes (never adds) mask mass:
//   1. base field: zero pixels where low-frequency noise exceeds tau(depth);
//   2. components with area > area_big also get a high-frequency octave of
//      granular dropouts;
//   3. excluded classes and thin components (min bbox side < thin_side) pass
//      through untouched.
AttentionMask corrupt_mask(const AttentionMask& mask, const SemanticImage& sem,
                           const DepthImage& depth, const NoiseParams& p);

}  // namespace agd
