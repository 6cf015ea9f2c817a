#include "agd/sim/world.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

namespace agd {

using ojson = nlohmann::ordered_json;

namespace {

double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// A traffic participant as seen by the driving controller. Lower rank has
// priority (the ego is rank 0); pedestrians always cause braking.
struct Participant {
    Vec2 pos;
    double heading = 0.0;
    double speed = 0.0;
    double radius = 0.0;
    int rank = 0;
    bool pedestrian = false;
};

struct BodyState {
    Vec2 pos;
    double heading = 0.0;
    double speed = 0.0;
};

// Kinematic bicycle update shared by ego and scripted vehicles.
void integrate(BodyState& b, const Action& raw) {
    const Action a = clip_action(raw);
    const double steer_angle = a.steer * Dynamics::max_steer_angle;
    double yaw_rate = b.speed / Dynamics::wheelbase * std::tan(steer_angle);
    yaw_rate = clampd(yaw_rate, -Dynamics::max_yaw_rate, Dynamics::max_yaw_rate);
    const double accel = a.accel >= 0.0 ? a.accel * Dynamics::max_accel
                                        : a.accel * Dynamics::max_decel;
    b.heading = wrap_angle(b.heading + yaw_rate * Dynamics::dt);
    b.speed = clampd(b.speed + accel * Dynamics::dt, 0.0, Dynamics::max_speed);
    b.pos = b.pos + from_angle(b.heading) * (b.speed * Dynamics::dt);
}

// Advance next_wp past every waypoint the body has reached or passed.
// Returns the number of consumed waypoints.
int consume_waypoints(const RoutePlan& route, const Vec2& pos, size_t& next_wp,
                      double& progress_s) {
    int consumed = 0;
    while (next_wp < route.wps.size()) {
        const Waypoint& w = route.wps[next_wp];
        Vec2 tangent;
        if (next_wp + 1 < route.wps.size())
            tangent = (route.wps[next_wp + 1].pos - w.pos).normalized();
        else if (next_wp > 0)
            tangent = (w.pos - route.wps[next_wp - 1].pos).normalized();
        else
            tangent = Vec2{1, 0};
        const Vec2 d = pos - w.pos;
        const bool reached = d.norm() < 2.0;
        const bool passed = d.dot(tangent) > 0.3 && std::abs(d.cross(tangent)) < 3.0;
        if (!reached && !passed) break;
        progress_s = w.s;
        ++next_wp;
        ++consumed;
    }
    return consumed;
}

Action controller(const World& world, const Vec2& pos, double heading, double speed,
                  const RoutePlan& route, size_t next_wp, double cruise, int my_rank,
                  const std::vector<Participant>& others) {
    if (route.empty() || next_wp >= route.wps.size()) return {0.0, -1.0};

    // --- pure pursuit steering ---
    const double ld = clampd(1.5 + 0.7 * speed, 2.5, 7.0);
    size_t target = next_wp;
    while (target + 1 < route.wps.size() && (route.wps[target].pos - pos).norm() < ld) ++target;
    const Vec2 to_target = route.wps[target].pos - pos;
    const double dist = std::max(to_target.norm(), 1e-6);
    const double alpha = wrap_angle(to_target.angle() - heading);
    const double curvature = 2.0 * std::sin(alpha) / dist;
    const double steer_angle = std::atan(curvature * Dynamics::wheelbase);
    const double steer = clampd(steer_angle / Dynamics::max_steer_angle, -1.0, 1.0);

    // --- speed target: slow for curvature and near the route end ---
    double v_t = cruise * (1.0 - 0.65 * std::min(1.0, std::abs(steer)));
    const double progress = next_wp > 0 ? route.wps[next_wp - 1].s : 0.0;
    const double remaining = route.total_length - progress;
    if (remaining < 6.0) v_t = std::min(v_t, 2.5);
    double accel = clampd((v_t - speed) * 0.8, -1.0, 1.0);

    // --- brake overrides ---
    const double margin = stop_margin(speed);
    bool brake = false;

    // Red lights with a stop line on the forward route within the margin.
    // If the light flipped after the point of no return (remaining distance
    // under the physical stopping distance), continue through instead of
    // stopping inside the junction.
    for (size_t li = 0; li < world.town.lights.size() && !brake; ++li) {
        if (!world.light_is_red(li)) continue;
        const LightSpec& ls = world.town.lights[li];
        const TownEdge& ae = world.town.edges[static_cast<size_t>(ls.approach_edge)];
        const Vec2 to_stop = ls.stop_pos - pos;
        if (to_stop.dot(ae.dir) <= 0.2) continue;  // already past the line
        const double d_stop = to_stop.norm();
        if (d_stop > margin) continue;
        if (d_stop < speed * speed / (2.0 * Dynamics::max_decel) + 0.2) continue;
        for (size_t i = next_wp; i < route.wps.size() && route.wps[i].s - progress <= margin + 4.0; ++i) {
            if (route.wps[i].edge == ls.approach_edge) {
                brake = true;
                break;
            }
        }
    }

    // Other participants. Two layers:
    //  1. a hold zone directly ahead of the body, which is what actually
    //     guarantees contact-free queueing, and
    //  2. corridor braking along the upcoming route within the stopping
    //     margin.
    // Stand-offs (a stopped pair holding for each other at a junction or
    // merge) are broken geometrically: whichever body sits further ahead in
    // the other's frame is the front of the queue and is released to crawl
    // on; the rear party keeps holding. The release lapses above crawl
    // speed, and pedestrians are never crawled past.
    const Vec2 fwd = from_angle(heading);
    const bool crawling = speed < 1.2;
    for (const Participant& o : others) {
        if (brake) break;
        const Vec2 d = o.pos - pos;
        const double o_ahead_of_me = d.dot(fwd);
        const double lateral = std::abs(d.cross(fwd));
        bool released = false;
        if (!o.pedestrian && crawling && o.speed < 0.15) {
            const double me_ahead_of_o = (pos - o.pos).dot(from_angle(o.heading));
            released = me_ahead_of_o > o_ahead_of_me ||
                       (me_ahead_of_o == o_ahead_of_me && my_rank < o.rank);
        }
        if (released) continue;
        if (o_ahead_of_me > -0.2 && o_ahead_of_me < 4.5 && lateral < 2.4) {  // hold zone
            brake = true;
            break;
        }
        const double corridor = 1.5 + o.radius;
        for (size_t i = next_wp; i < route.wps.size() && route.wps[i].s - progress <= margin; ++i) {
            if ((o.pos - route.wps[i].pos).norm() < corridor) {
                brake = true;
                break;
            }
        }
    }

    if (brake) accel = -1.0;
    return {steer, accel};
}

std::vector<Participant> gather(const World& world, int self_vehicle_id,
                                const BodyState* ego) {
    std::vector<Participant> out;
    if (ego) out.push_back({ego->pos, ego->heading, ego->speed, Radii::ego, 0, false});
    for (const VehicleAgent& v : world.vehicles)
        if (v.id != self_vehicle_id)
            out.push_back({v.pos, v.heading, v.speed, Radii::vehicle, v.id + 1, false});
    for (const PedestrianAgent& p : world.pedestrians) {
        // A pedestrian waiting on the kerb is not a road hazard.
        const bool on_road = p.t > 0.02 && p.t < 0.98;
        if (on_road) out.push_back({p.pos(), 0.0, p.walk_speed, Radii::pedestrian, 1 << 20, true});
    }
    return out;
}

}  // namespace

double World::red_phase_seconds(size_t i) const {
    const LightSpec& ls = town.lights[lights[i].spec >= 0 ? static_cast<size_t>(lights[i].spec) : i];
    const double cycle = ls.red_s + ls.green_s;
    const double phase = std::fmod(time_s + ls.offset_s + lights[i].extra_offset, cycle);
    return phase < ls.red_s ? phase : -1.0;
}

bool World::light_is_red(size_t i) const { return red_phase_seconds(i) >= 0.0; }

std::optional<size_t> World::light_on_edge(int edge) const {
    for (size_t i = 0; i < town.lights.size(); ++i)
        if (town.lights[i].approach_edge == edge) return i;
    return std::nullopt;
}

Action expert_policy(const World& world, const EgoState& ego) {
    return clip_action(controller(world, ego.pos, ego.heading, ego.speed, ego.route,
                                  ego.next_wp, world.town.target_speed, 0,
                                  gather(world, -1, nullptr)));
}

Action drive_controller(const World& world, const Vec2& pos, double heading, double speed,
                        const RoutePlan& route, size_t next_wp, double cruise,
                        int self_vehicle_id) {
    const int rank = self_vehicle_id < 0 ? 0 : self_vehicle_id + 1;
    return clip_action(controller(world, pos, heading, speed, route, next_wp, cruise, rank,
                                  gather(world, self_vehicle_id, nullptr)));
}

StepEvents World::step(EgoState& ego, const Action& action) {
    StepEvents ev;
    const Vec2 ego_before = ego.pos;
    time_s += Dynamics::dt;

    // --- ego ---
    BodyState eb{ego.pos, ego.heading, ego.speed};
    integrate(eb, action);
    ego.pos = eb.pos;
    ego.heading = eb.heading;
    ego.speed = eb.speed;
    ev.waypoints_consumed = consume_waypoints(ego.route, ego.pos, ego.next_wp, ego.progress_s);
    if (auto_extend_ego_route && ego.route.wps.size() - ego.next_wp < 30)
        extend_route(town, ego.route, splitmix64(scenario_seed ^ ++extension_counter));
    if (!auto_extend_ego_route && ego.next_wp >= ego.route.wps.size()) ev.route_finished = true;

    // --- scripted vehicles (in id order; each sees already-updated peers) ---
    for (VehicleAgent& v : vehicles) {
        const Action va = clip_action(controller(*this, v.pos, v.heading, v.speed, v.route,
                                                 v.next_wp, v.cruise, v.id + 1,
                                                 gather(*this, v.id, &eb)));
        BodyState vb{v.pos, v.heading, v.speed};
        integrate(vb, va);
        v.pos = vb.pos;
        v.heading = vb.heading;
        v.speed = vb.speed;
        double dummy_progress = v.next_wp > 0 ? v.route.wps[v.next_wp - 1].s : 0.0;
        consume_waypoints(v.route, v.pos, v.next_wp, dummy_progress);
        if (v.route.wps.size() - v.next_wp < 30)
            extend_route(town, v.route, splitmix64(scenario_seed ^ ++extension_counter));
    }

    // --- pedestrians ---
    for (PedestrianAgent& p : pedestrians) {
        if (p.wait_s > 0.0) {
            p.wait_s = std::max(0.0, p.wait_s - Dynamics::dt);
            continue;
        }
        const bool at_kerb = (p.dir > 0 && p.t <= 0.0) || (p.dir < 0 && p.t >= 1.0);
        if (at_kerb) {
            // Yield before stepping off: wait for approaching traffic and for
            // anything physically parked on the crossing.
            bool blocked = false;
            auto consider = [&](const Vec2& pos, double speed, double radius) {
                double t;
                const double d = seg_distance(pos, p.a, p.b, &t);
                if (d < radius + 0.7) blocked = true;                  // on the crossing
                else if (d < 9.0 && speed > 0.5) blocked = true;       // approaching
            };
            consider(ego.pos, ego.speed, Radii::ego);
            for (const VehicleAgent& v : vehicles) consider(v.pos, v.speed, Radii::vehicle);
            if (blocked) continue;
        } else {
            // Mid-cross: if a body is parked on the walkway just ahead, turn
            // around and head back to the kerb instead of walking into it.
            const Vec2 cur = p.pos();
            const Vec2 wdir = (p.b - p.a).normalized() * static_cast<double>(p.dir);
            const Vec2 probe = cur + wdir * 1.6;
            bool path_blocked = false;
            auto body_on_path = [&](const Vec2& bp, double r) {
                if (seg_distance(bp, cur, probe) < r + 0.5) path_blocked = true;
            };
            body_on_path(ego.pos, Radii::ego);
            for (const VehicleAgent& v : vehicles) body_on_path(v.pos, Radii::vehicle);
            if (path_blocked) p.dir = -p.dir;
        }
        const double len = std::max((p.b - p.a).norm(), 1e-6);
        p.t += p.dir * p.walk_speed * Dynamics::dt / len;
        if (p.t >= 1.0) {
            p.t = 1.0;
            p.dir = -1;
            p.wait_s = p.dwell;
        } else if (p.t <= 0.0) {
            p.t = 0.0;
            p.dir = 1;
            p.wait_s = p.dwell;
        }
    }

    // --- events ---
    for (const VehicleAgent& v : vehicles)
        if ((v.pos - ego.pos).norm() < Radii::ego + Radii::vehicle)
            ev.collisions.push_back({SemClass::Vehicle, v.id});
    for (size_t i = 0; i < pedestrians.size(); ++i)
        if ((pedestrians[i].pos() - ego.pos).norm() < Radii::ego + Radii::pedestrian)
            ev.collisions.push_back({SemClass::Pedestrian, static_cast<int>(i)});
    for (const SignSpec& s : town.signs)
        if ((s.pos - ego.pos).norm() < Radii::ego + Radii::fixture)
            ev.collisions.push_back({SemClass::TrafficSign, -1});
    for (const LightSpec& l : town.lights)
        if ((l.head_pos - ego.pos).norm() < Radii::ego + Radii::fixture)
            ev.collisions.push_back({SemClass::TrafficLight, -1});

    for (size_t li = 0; li < town.lights.size(); ++li) {
        if (red_phase_seconds(li) < kRedGrace) continue;
        const LightSpec& ls = town.lights[li];
        const TownEdge& ae = town.edges[static_cast<size_t>(ls.approach_edge)];
        const double before = (ego_before - ls.stop_pos).dot(ae.dir);
        const double after = (ego.pos - ls.stop_pos).dot(ae.dir);
        const Vec2 a = town.nodes[static_cast<size_t>(ae.from)].pos;
        const Vec2 b = town.nodes[static_cast<size_t>(ae.to)].pos;
        const double lat = seg_distance(ego.pos, a, b);
        if (before < 0.0 && after >= 0.0 && lat < town.half_width() + 0.5)
            ev.red_light_crossed = true;
    }

    ev.off_road = town.nearest_edge_distance(ego.pos) > town.half_width() + 0.5;
    return ev;
}

Scenario spawn_scenario(const TownMap& town, const std::string& condition,
                        const std::string& density, uint64_t seed,
                        const std::vector<std::string>& route_nodes) {
    if (density != "busy" && density != "empty")
        throw ConfigError("density must be 'busy' or 'empty', got '" + density + "'");
    Scenario sc;
    sc.world.town = town;
    sc.world.condition = condition_by_name(condition);
    sc.world.scenario_seed = seed;
    std::mt19937_64 rng(splitmix64(seed));

    // 1) light phases: one random shift per junction so that the fixture's
    // relative offsets (complementary approaches) are preserved
    std::vector<double> node_shift(town.nodes.size(), -1.0);
    for (size_t i = 0; i < town.lights.size(); ++i) {
        const size_t node = static_cast<size_t>(town.lights[i].node);
        if (node_shift[node] < 0.0) {
            const double cycle = town.lights[i].red_s + town.lights[i].green_s;
            std::uniform_real_distribution<double> u(0.0, cycle);
            node_shift[node] = u(rng);
        }
        sc.world.lights.push_back({static_cast<int>(i), node_shift[node]});
    }

    // 2) ego route
    std::vector<int> seq;
    if (!route_nodes.empty()) {
        for (const std::string& id : route_nodes) seq.push_back(town.node_index(id));
    } else {
        int n = static_cast<int>(rng() % town.nodes.size());
        while (town.out_edges[static_cast<size_t>(n)].empty())
            n = static_cast<int>(rng() % town.nodes.size());
        seq.push_back(n);
        for (int k = 0; k < 6; ++k) {
            const auto& outs = town.out_edges[static_cast<size_t>(seq.back())];
            std::vector<int> choices;
            for (int e : outs)
                if (seq.size() < 2 || town.edges[static_cast<size_t>(e)].to != seq[seq.size() - 2])
                    choices.push_back(e);
            if (choices.empty()) choices.assign(outs.begin(), outs.end());
            seq.push_back(town.edges[static_cast<size_t>(choices[rng() % choices.size()])].to);
        }
    }
    sc.ego.route = build_route(town, seq);
    sc.ego.pos = sc.ego.route.wps[0].pos;
    sc.ego.heading = town.edges[static_cast<size_t>(sc.ego.route.edge_seq[0])].dir.angle();
    sc.ego.speed = 0.0;
    sc.ego.next_wp = 1;
    sc.ego.progress_s = 0.0;

    if (density == "empty") return sc;

    // 3) scripted traffic: 8..16 participants, about one third pedestrians
    const int n_total = 8 + static_cast<int>(rng() % 9);
    const int n_ped = n_total / 3;
    const int n_veh = n_total - n_ped;

    for (int i = 0; i < n_veh; ++i) {
        VehicleAgent v;
        v.id = i;
        std::uniform_real_distribution<double> ut(0.15, 0.85);
        std::uniform_real_distribution<double> uc(3.5, 6.0);
        bool placed = false;
        for (int attempt = 0; attempt < 80 && !placed; ++attempt) {
            const int e = static_cast<int>(rng() % town.edges.size());
            const TownEdge& ed = town.edges[static_cast<size_t>(e)];
            const double t = ut(rng);
            const Vec2 pos = town.nodes[static_cast<size_t>(ed.from)].pos + ed.dir * (t * ed.length);
            if ((pos - sc.ego.pos).norm() < 14.0) continue;
            bool clash = false;
            for (const VehicleAgent& o : sc.world.vehicles)
                if ((pos - o.pos).norm() < 7.0) clash = true;
            if (clash) continue;
            v.pos = pos;
            v.heading = ed.dir.angle();
            v.speed = 0.0;
            v.cruise = uc(rng);
            std::vector<int> vseq{ed.from, ed.to};
            for (int k = 0; k < 4; ++k) {
                const auto& outs = town.out_edges[static_cast<size_t>(vseq.back())];
                std::vector<int> choices;
                for (int oe : outs)
                    if (town.edges[static_cast<size_t>(oe)].to != vseq[vseq.size() - 2])
                        choices.push_back(oe);
                if (choices.empty()) choices.assign(outs.begin(), outs.end());
                vseq.push_back(town.edges[static_cast<size_t>(choices[rng() % choices.size()])].to);
            }
            v.route = build_route(town, vseq);
            v.next_wp = 0;
            double prog = 0.0;
            consume_waypoints(v.route, v.pos, v.next_wp, prog);
            placed = true;
        }
        if (placed) sc.world.vehicles.push_back(v);
    }

    // Crossing sites: a few metres before each junction entry on long edges.
    std::vector<std::pair<Vec2, Vec2>> sites;
    for (const TownEdge& e : town.edges) {
        if (e.length < 16.0) continue;
        const Vec2 node = town.nodes[static_cast<size_t>(e.to)].pos;
        const Vec2 c = node - e.dir * 6.5;
        const Vec2 perp{-e.dir.y, e.dir.x};
        const double half = town.half_width() + 1.2;
        sites.emplace_back(c - perp * half, c + perp * half);
    }
    std::shuffle(sites.begin(), sites.end(), rng);
    std::uniform_real_distribution<double> uw(0.8, 1.3), ud(0.0, 4.0);
    for (int i = 0; i < n_ped && i < static_cast<int>(sites.size()); ++i) {
        PedestrianAgent p;
        p.id = i;
        p.a = sites[static_cast<size_t>(i)].first;
        p.b = sites[static_cast<size_t>(i)].second;
        p.t = 0.0;
        p.dir = 1;
        p.walk_speed = uw(rng);
        p.wait_s = ud(rng);
        sc.world.pedestrians.push_back(p);
    }
    return sc;
}

Scenario spawn_scenario(const ScenarioConfig& cfg) {
    return spawn_scenario(TownMap::load(cfg.town_fixture), cfg.condition, cfg.density,
                          cfg.seed, cfg.route_nodes);
}

std::string World::serialize(const EgoState& ego) const {
    ojson j;
    j["version"] = 1;
    j["town"] = town.name;
    j["condition"] = condition.name;
    j["seed"] = scenario_seed;
    j["time"] = time_s;
    ojson je;
    je["x"] = ego.pos.x;
    je["y"] = ego.pos.y;
    je["heading"] = ego.heading;
    je["speed"] = ego.speed;
    je["next_wp"] = ego.next_wp;
    je["progress"] = ego.progress_s;
    je["route"] = ojson::array();
    for (int n : ego.route.node_seq) je["route"].push_back(town.nodes[static_cast<size_t>(n)].id);
    j["ego"] = je;
    j["vehicles"] = ojson::array();
    for (const VehicleAgent& v : vehicles) {
        ojson jv;
        jv["id"] = v.id;
        jv["x"] = v.pos.x;
        jv["y"] = v.pos.y;
        jv["heading"] = v.heading;
        jv["speed"] = v.speed;
        jv["cruise"] = v.cruise;
        jv["next_wp"] = v.next_wp;
        jv["route"] = ojson::array();
        for (int n : v.route.node_seq) jv["route"].push_back(town.nodes[static_cast<size_t>(n)].id);
        j["vehicles"].push_back(jv);
    }
    j["pedestrians"] = ojson::array();
    for (const PedestrianAgent& p : pedestrians) {
        ojson jp;
        jp["id"] = p.id;
        jp["ax"] = p.a.x;
        jp["ay"] = p.a.y;
        jp["bx"] = p.b.x;
        jp["by"] = p.b.y;
        jp["t"] = p.t;
        jp["dir"] = p.dir;
        jp["walk_speed"] = p.walk_speed;
        jp["wait"] = p.wait_s;
        j["pedestrians"].push_back(jp);
    }
    j["lights"] = ojson::array();
    for (const LightState& l : lights)
        j["lights"].push_back({{"spec", l.spec}, {"extra_offset", l.extra_offset}});
    return j.dump(2) + "\n";
}

}  // namespace agd
