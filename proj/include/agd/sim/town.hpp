#pragma once

// Road-network town maps.
//
// A town is a directed road graph: nodes are 2-D points, edges are one-way
// straight road segments of uniform lane width.  Junctions (nodes with more
// than one outgoing edge) branch by high-level command; traffic lights guard
// selected junction approaches and signs are static roadside props.
//
// Town fixture grammar (JSON, version 1):
//   {
//     "version": 1,
//     "name": "toytown-A",
//     "lane_width": 5.0,          // full road width in metres
//     "d_max": 20.0,              // salient-depth cutoff used for masks
//     "target_speed": 6.0,        // cruise speed for the scripted expert
//     "nodes": [{"id": "c00", "x": 0.0, "y": 0.0}, ...],
//     "edges": [{"from": "c00", "to": "ms"}, ...],
//     "lights": [{"node": "ctr", "approach": "ms", "red": 8.0,
//                 "green": 8.0, "offset": 0.0}, ...],
//     "signs": [{"x": 38.0, "y": -4.0}, ...]
//   }
// A light's stop line sits on the approach edge 3 m before the junction node.

#include <cstdint>
#include <string>
#include <vector>

#include "agd/sim/geometry.hpp"
#include "agd/types.hpp"

namespace agd {

inline Command parse_command(const std::string& s) {
    if (s == "follow") return Command::Follow;
    if (s == "left") return Command::Left;
    if (s == "right") return Command::Right;
    if (s == "straight") return Command::Straight;
    throw ConfigError("unknown command: " + s);
}

struct TownNode {
    std::string id;
    Vec2 pos;
};

struct TownEdge {
    int from = -1, to = -1;
    double length = 0.0;
    Vec2 dir;  // unit vector from -> to
};

struct LightSpec {
    int node = -1;           // junction node
    int approach_edge = -1;  // edge this light governs (edge.to == node)
    double red_s = 8.0, green_s = 8.0, offset_s = 0.0;
    Vec2 stop_pos;   // on the approach edge, stop_offset before the node
    Vec2 head_pos;   // roadside fixture position (for rendering/collision)
    double stop_offset = 3.0;
};

struct SignSpec {
    Vec2 pos;
};

struct TownMap {
    int version = 1;
    std::string name;
    double lane_width = 5.0;
    double d_max = 20.0;
    double target_speed = 6.0;
    std::vector<TownNode> nodes;
    std::vector<TownEdge> edges;
    std::vector<LightSpec> lights;
    std::vector<SignSpec> signs;
    std::vector<std::vector<int>> out_edges;  // outgoing edge indices per node
    std::vector<std::vector<int>> in_edges;   // incoming edge indices per node

    double half_width() const { return lane_width / 2.0; }

    int node_index(const std::string& id) const {
        for (size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].id == id) return static_cast<int>(i);
        throw ConfigError("town '" + name + "': unknown node id '" + id + "'");
    }

    int edge_between(int from, int to) const {
        for (int e : out_edges[static_cast<size_t>(from)])
            if (edges[static_cast<size_t>(e)].to == to) return e;
        throw ConfigError("town '" + name + "': no edge " + nodes[static_cast<size_t>(from)].id +
                          " -> " + nodes[static_cast<size_t>(to)].id);
    }

    bool is_junction(int node) const { return out_edges[static_cast<size_t>(node)].size() > 1; }

    // Command selecting edge `out` when arriving via edge `in` at their shared
    // node.  Turns are classified by signed heading change; +/-30 degrees is
    // the straight band.  Single-exit nodes are Follow.
    Command branch_command(int in_edge, int out_edge) const {
        const TownEdge& ei = edges[static_cast<size_t>(in_edge)];
        const TownEdge& eo = edges[static_cast<size_t>(out_edge)];
        if (out_edges[static_cast<size_t>(ei.to)].size() <= 1) return Command::Follow;
        const double d = wrap_angle(eo.dir.angle() - ei.dir.angle());
        if (std::abs(d) <= M_PI / 6.0) return Command::Straight;
        return d > 0 ? Command::Left : Command::Right;
    }

    // Lateral distance from p to the nearest edge centreline.
    double nearest_edge_distance(const Vec2& p, int* edge_out = nullptr, double* t_out = nullptr) const {
        double best = 1e18;
        int best_e = -1;
        double best_t = 0.0;
        for (size_t e = 0; e < edges.size(); ++e) {
            double t;
            const double d =
                seg_distance(p, nodes[static_cast<size_t>(edges[e].from)].pos,
                             nodes[static_cast<size_t>(edges[e].to)].pos, &t);
            if (d < best) {
                best = d;
                best_e = static_cast<int>(e);
                best_t = t;
            }
        }
        if (edge_out) *edge_out = best_e;
        if (t_out) *t_out = best_t;
        return best;
    }

    static TownMap from_json_text(const std::string& text);
    static TownMap load(const std::string& path);
    std::string to_json_text() const;  // canonical, byte-stable serialization
};

// A route is a node walk through the town graph, densified into waypoints.
struct Waypoint {
    Vec2 pos;
    double s = 0.0;  // arclength from route start
    int edge = -1;
    Command cmd = Command::Follow;
};

struct RoutePlan {
    std::vector<Waypoint> wps;
    std::vector<int> node_seq;  // original node walk
    std::vector<int> edge_seq;
    double total_length = 0.0;

    bool empty() const { return wps.empty(); }
};

// Densify a node walk into ~2 m spaced waypoints with branch commands active
// within `command_radius` metres before each junction.
RoutePlan build_route(const TownMap& town, const std::vector<int>& node_seq,
                      double spacing = 2.0, double command_radius = 15.0);

// Append one more randomly chosen edge to the walk (uniform over exits,
// avoiding an immediate U-turn when possible) and rebuild the plan.
void extend_route(const TownMap& town, RoutePlan& plan, uint64_t pick);

struct RouteSpec {
    std::string id;
    std::vector<std::string> node_ids;
};

// Route fixture file: {"version":1, "town": "...", "routes":[{"id": "r0",
// "nodes": ["a","b",...]}, ...]}
std::vector<RouteSpec> load_routes(const std::string& path, std::string* town_name = nullptr);

}  // namespace agd
