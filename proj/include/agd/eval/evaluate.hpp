#pragma once

// Online closed-loop evaluation: a policy (trained model or the rule-based
// expert) drives fixture routes under scripted traffic; per-route results
// carry completion, infractions, and a replayable step log; aggregates
// follow the success-rate / route-completion / infraction-score /
// driving-score scheme with mean +- stdev over repeated seeds.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "agd/model/policy.hpp"
#include "agd/model/variant.hpp"
#include "agd/sim/town.hpp"
#include "agd/types.hpp"

namespace agd {

enum class EvalMode { NoCrash, Leaderboard };

EvalMode parse_eval_mode(const std::string& s);
const char* eval_mode_name(EvalMode m);

// Multiplicative infraction penalties (leaderboard convention).
struct InfractionPenalties {
    double pedestrian = 0.50;
    double vehicle = 0.60;
    double static_obstacle = 0.65;
    double red_light = 0.70;
};

struct EvalConfig {
    EvalMode mode = EvalMode::NoCrash;
    std::string density = "busy";
    InputVariant variant = InputVariant::None;
    bool corrupted_masks = false;  // corrupt the masks fed to SM/HM inputs
    InfractionPenalties penalties;
    double goal_radius = 2.0;        // metres to the final waypoint
    double timeout_factor = 3.0;     // timeout = factor * length / target speed
    double blocked_speed = 0.1;      // m/s
    double blocked_after_s = 20.0;   // stationary this long ends the episode
    double collision_debounce_s = 3.0;  // same-agent contacts within this window count once
    int render_width = 64, render_height = 64;
};

struct Infraction {
    std::string kind;  // collision-pedestrian | collision-vehicle | collision-static | red-light
    double time_s = 0.0;
    int agent_id = -1;
};

struct RouteResult {
    std::string route_id;
    std::string town;
    std::string condition;
    uint64_t seed = 0;
    bool completed = false;
    double completion_pct = 0.0;     // 0..100
    double infraction_score = 1.0;   // product of penalties, in [0,1]
    double driving_score = 0.0;      // completion_pct * infraction_score / 1
    std::vector<Infraction> infractions;
    std::string termination;  // goal | collision | timeout | blocked
    double duration_s = 0.0;
    std::vector<std::string> log;  // JSONL: header, one line per step, footer
};

// One aggregate block: SR/RC/IS/DS means with stdev over seeds (sample
// stdev; zero when only one seed ran).
struct EvalAggregate {
    double sr_mean = 0.0, sr_std = 0.0;  // SR in percent
    double rc_mean = 0.0, rc_std = 0.0;  // RC in percent
    double is_mean = 0.0, is_std = 0.0;  // IS in [0,1]
    double ds_mean = 0.0, ds_std = 0.0;  // DS in [0,100]
    int seeds = 0;
    int routes_per_seed = 0;
};

struct EvalReport {
    std::vector<RouteResult> results;
    EvalAggregate aggregate;

    std::string to_csv() const;          // aggregate table
    nlohmann::ordered_json to_json() const;  // per-route detail + aggregate
};

// Drives one route closed-loop at 10 Hz. policy == nullptr runs the
// rule-based expert (no rendering, no masks). With a model, frames are
// rendered each step; SM/HM variants additionally build per-camera masks and
// feed them as input. Terminates on goal, collision (NoCrash mode), timeout,
// or sustained standstill. Raises ConfigError when the model's input
// channels do not match the requested variant.
RouteResult run_route(const DrivingPolicy<float>* policy, const TownMap& town,
                      const RouteSpec& route, const std::string& condition, uint64_t seed,
                      const EvalConfig& cfg);

// Aggregates per-route results into SR/RC/IS/DS with mean +- stdev over the
// seed axis. Requires at least one result.
EvalAggregate aggregate_results(const std::vector<RouteResult>& results);

// Recomputes a route's metrics purely from its JSONL step log; used to prove
// log-derived metrics equal the live ones.
RouteResult metrics_from_log(const std::vector<std::string>& log_lines,
                             const EvalConfig& cfg);

// Full protocol: routes x seeds x conditions (seed values base_seed..+n-1).
EvalReport evaluate(const DrivingPolicy<float>* policy, const TownMap& town,
                    const std::vector<RouteSpec>& routes, int seeds, uint64_t base_seed,
                    const std::vector<std::string>& conditions, const EvalConfig& cfg);

// Average attention of the last layer rendered as heat overlays, one per
// camera: token weights reshaped to the encoder grid, bilinearly upscaled,
// color-mapped, and alpha-blended onto the input RGB. Intensities are
// normalized by the maximum over all cameras so relative mass is preserved.
std::vector<RgbImage> export_attention_overlay(const DrivingPolicy<float>& policy,
                                               const Observation& obs);

// Overlay builder on raw token weights (camera-major blocks, row-major grid
// within each camera — the same layout to_distribution/average_attention
// use). Exposed so the block-to-camera mapping is testable in isolation.
std::vector<RgbImage> overlay_from_weights(const std::vector<double>& weights, int cameras,
                                           int grid_w, int grid_h, const Observation& obs);

}  // namespace agd
