#pragma once

// Closed-loop world state and dynamics.
//
// The ego vehicle follows a kinematic bicycle model at dt = 0.1 s. Scripted
// vehicles drive their own routes with the same controller as the expert;
// pedestrians shuttle across marked road crossings. Everything is
// deterministic given the spawn seed: no hidden global state, the world owns
// every RNG it uses.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agd/sim/conditions.hpp"
#include "agd/sim/town.hpp"
#include "agd/types.hpp"

namespace agd {

// Vehicle dynamics constants (shared by ego and scripted vehicles).
struct Dynamics {
    static constexpr double dt = 0.1;             // control period [s]
    static constexpr double wheelbase = 2.5;      // bicycle model [m]
    static constexpr double max_speed = 8.0;      // [m/s]
    static constexpr double max_accel = 3.0;      // throttle full scale [m/s^2]
    static constexpr double max_decel = 6.0;      // brake full scale [m/s^2]
    static constexpr double max_yaw_rate = 1.2;   // [rad/s]
    static constexpr double max_steer_angle = 0.5;  // front-wheel angle at steer=1 [rad]
};

// Collision radii per participant kind [m].
struct Radii {
    static constexpr double ego = 0.9;
    static constexpr double vehicle = 0.9;
    static constexpr double pedestrian = 0.35;
    static constexpr double fixture = 0.25;  // sign / light poles
};

struct EgoState {
    Vec2 pos;
    double heading = 0.0;  // radians, CCW from +x
    double speed = 0.0;    // forward speed, >= 0
    RoutePlan route;
    size_t next_wp = 0;       // next un-consumed waypoint
    double progress_s = 0.0;  // consumed route arclength

    Command current_command() const {
        if (route.empty() || next_wp >= route.wps.size()) return Command::Follow;
        return route.wps[next_wp].cmd;
    }
    double speed_norm() const { return speed / Dynamics::max_speed; }
};

struct VehicleAgent {
    int id = 0;
    Vec2 pos;
    double heading = 0.0;
    double speed = 0.0;
    double cruise = 5.0;  // individual target speed
    RoutePlan route;
    size_t next_wp = 0;
};

// Walks a -> b -> a ... across the road, pausing at the kerb and yielding to
// oncoming vehicles before stepping onto the carriageway.
struct PedestrianAgent {
    int id = 0;
    Vec2 a, b;          // kerb endpoints of the crossing
    double t = 0.0;     // position parameter in [0,1] along a->b
    int dir = 1;        // +1 toward b, -1 toward a
    double walk_speed = 1.0;
    double wait_s = 0.0;  // remaining kerb dwell time
    double dwell = 4.0;   // dwell duration when a crossing completes

    Vec2 pos() const { return a + (b - a) * t; }
};

struct LightState {
    int spec = -1;  // index into town.lights
    double extra_offset = 0.0;
};

// One step's observable outcomes.
struct CollisionEvent {
    SemClass with = SemClass::Background;
    int agent_id = -1;  // -1 for static fixtures
};

struct StepEvents {
    std::vector<CollisionEvent> collisions;
    bool red_light_crossed = false;
    int waypoints_consumed = 0;
    bool off_road = false;
    bool route_finished = false;
};

class World {
  public:
    TownMap town;
    Condition condition;
    uint64_t scenario_seed = 0;
    double time_s = 0.0;
    std::vector<VehicleAgent> vehicles;
    std::vector<PedestrianAgent> pedestrians;
    std::vector<LightState> lights;
    bool auto_extend_ego_route = false;  // endless route during data collection

    // Light phase for the light at town.lights[i].
    bool light_is_red(size_t i) const;
    // Seconds since the current red phase began, or a negative value on
    // green. Crossings inside the first kRedGrace seconds are excused (the
    // flip caught traffic past the point of no return).
    double red_phase_seconds(size_t i) const;
    static constexpr double kRedGrace = 1.5;
    // Red light relevant to a position on `edge` (i.e. governing that edge),
    // if any.
    std::optional<size_t> light_on_edge(int edge) const;

    // Advance ego with `action` and all scripted agents by one control period.
    StepEvents step(EgoState& ego, const Action& action);

    // Deterministic world serialization (canonical JSON, byte-stable).
    std::string serialize(const EgoState& ego) const;

    uint64_t extension_counter = 0;  // feeds route-extension choices
};

struct ScenarioConfig {
    std::string town_fixture;           // path to the town JSON
    std::string condition = "clear-day";
    std::string density = "busy";       // "empty" or "busy"
    uint64_t seed = 0;
    // Optional fixed route (node ids). Empty -> sample a random route.
    std::vector<std::string> route_nodes;
};

struct Scenario {
    World world;
    EgoState ego;
};

// Build a deterministic scenario: load the town, place ego at the route
// start, spawn scripted traffic ("busy" targets 8-16 agents, "empty" none),
// and randomize light phase offsets.
Scenario spawn_scenario(const ScenarioConfig& cfg);
Scenario spawn_scenario(const TownMap& town, const std::string& condition,
                        const std::string& density, uint64_t seed,
                        const std::vector<std::string>& route_nodes = {});

// Scripted driving controller: pure pursuit toward a speed-scaled lookahead
// waypoint, proportional speed control toward `cruise`, and a full-brake
// override when a red light's stop line or another participant sits inside
// the forward corridor within the current stopping margin.
Action drive_controller(const World& world, const Vec2& pos, double heading, double speed,
                        const RoutePlan& route, size_t next_wp, double cruise,
                        int self_vehicle_id);

// The demonstration expert: drive_controller for the ego.
Action expert_policy(const World& world, const EgoState& ego);

// Stopping margin [m] used by the brake overrides.
inline double stop_margin(double speed) { return 5.0 + speed * speed / 6.0; }

}  // namespace agd
