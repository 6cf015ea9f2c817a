#include "agd/eval/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "agd/mask/pipeline.hpp"
#include "agd/sim/render.hpp"
#include "agd/sim/world.hpp"

namespace agd {

using ojson = nlohmann::ordered_json;

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    return splitmix64(seed ^ (0x517CC1B727220A95ULL * (salt + 1)));
}

const char* collision_kind(SemClass with) {
    switch (with) {
        case SemClass::Pedestrian: return "collision-pedestrian";
        case SemClass::Vehicle: return "collision-vehicle";
        default: return "collision-static";
    }
}

double penalty_for(const std::string& kind, const InfractionPenalties& p) {
    if (kind == "collision-pedestrian") return p.pedestrian;
    if (kind == "collision-vehicle") return p.vehicle;
    if (kind == "collision-static") return p.static_obstacle;
    if (kind == "red-light") return p.red_light;
    throw ConfigError("unknown infraction kind: " + kind);
}

// Shared between the live path and the log replay so both apply identical
// debounce and scoring rules.
struct InfractionAccumulator {
    const EvalConfig* cfg = nullptr;
    double score = 1.0;
    std::vector<Infraction> list;
    std::map<std::pair<std::string, int>, double> last_hit;

    void collision(SemClass with, int agent_id, double t) {
        add(collision_kind(with), agent_id, t);
    }
    void collision(const std::string& kind, int agent_id, double t) { add(kind, agent_id, t); }
    void red_light(double t) {
        score *= cfg->penalties.red_light;
        list.push_back({"red-light", t, -1});
    }

private:
    void add(const std::string& kind, int agent_id, double t) {
        const auto key = std::make_pair(kind, agent_id);
        auto it = last_hit.find(key);
        if (it != last_hit.end() && t - it->second < cfg->collision_debounce_s) {
            it->second = t;  // ongoing contact extends the window
            return;
        }
        last_hit[key] = t;
        score *= penalty_for(kind, cfg->penalties);
        list.push_back({kind, t, agent_id});
    }
};

double sample_stdev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mu = 0.0;
    for (double x : xs) mu += x;
    mu /= double(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / double(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
    double mu = 0.0;
    for (double x : xs) mu += x;
    return xs.empty() ? 0.0 : mu / double(xs.size());
}

// The distance-to-goal completion clause only arms near the end of the
// route's arclength; otherwise loop routes (goal == start) would complete
// instantly at spawn.
constexpr double kGoalWindow = 10.0;  // metres of remaining arclength

bool goal_reached(bool route_finished, const Vec2& pos, const Vec2& goal, double progress_s,
                  double total_length, double goal_radius) {
    if (route_finished) return true;
    if (total_length - progress_s > kGoalWindow) return false;
    return (pos - goal).norm() < goal_radius;
}

}  // namespace

EvalMode parse_eval_mode(const std::string& s) {
    if (s == "nocrash") return EvalMode::NoCrash;
    if (s == "leaderboard") return EvalMode::Leaderboard;
    throw ConfigError("unknown eval mode '" + s + "' (expected nocrash or leaderboard)");
}
const char* eval_mode_name(EvalMode m) {
    return m == EvalMode::NoCrash ? "nocrash" : "leaderboard";
}

RouteResult run_route(const DrivingPolicy<float>* policy, const TownMap& town,
                      const RouteSpec& route, const std::string& condition, uint64_t seed,
                      const EvalConfig& cfg) {
    if (policy) {
        const int want = cfg.variant == InputVariant::SM ? 4 : 3;
        if (policy->config().channels != want)
            throw ConfigError(std::string("model has ") +
                              std::to_string(policy->config().channels) +
                              " input channels but variant " + variant_name(cfg.variant) +
                              " needs " + std::to_string(want));
        if (policy->config().cameras != kNumCameras)
            throw ConfigError("model camera count does not match the renderer rig");
    }

    Scenario sc = spawn_scenario(town, condition, cfg.density, seed, route.node_ids);
    World& world = sc.world;
    EgoState& ego = sc.ego;
    const double total_length = ego.route.total_length;
    const Vec2 goal = ego.route.wps.back().pos;
    const double timeout_s = cfg.timeout_factor * total_length / town.target_speed;

    RouteResult rr;
    rr.route_id = route.id;
    rr.town = town.name;
    rr.condition = condition;
    rr.seed = seed;

    {
        ojson h;
        h["type"] = "header";
        h["route"] = route.id;
        h["town"] = town.name;
        h["condition"] = condition;
        h["seed"] = seed;
        h["mode"] = eval_mode_name(cfg.mode);
        h["total_length"] = total_length;
        h["timeout_s"] = timeout_s;
        h["goal"] = {goal.x, goal.y};
        rr.log.push_back(h.dump());
    }

    InfractionAccumulator acc;
    acc.cfg = &cfg;
    double stall_s = 0.0;
    std::string termination;
    bool completed = false;

    int step = 0;
    while (world.time_s < timeout_s) {
        Action a;
        if (!policy) {
            a = clip_action(expert_policy(world, ego));
        } else {
            RenderOutput r = render(world, ego, cfg.render_width, cfg.render_height,
                                    mix_seed(seed, uint64_t(step)));
            Observation obs = make_observation(r, ego.speed_norm(), ego.current_command());
            if (cfg.variant != InputVariant::None) {
                std::vector<AttentionMask> masks;
                for (int k = 0; k < kNumCameras; ++k) {
                    AttentionMask m = build_mask(r.sem[size_t(k)], r.depth[size_t(k)],
                                                 default_salient_classes(), town.d_max);
                    if (cfg.corrupted_masks) {
                        NoiseParams np;
                        np.d_max = town.d_max;
                        np.seed = mix_seed(seed, uint64_t(step) * kNumCameras + uint64_t(k));
                        m = corrupt_mask(m, r.sem[size_t(k)], r.depth[size_t(k)], np);
                    }
                    masks.push_back(std::move(m));
                }
                obs = apply_input_variant(obs, masks, cfg.variant);
            }
            a = policy->predict(obs);
        }

        StepEvents ev = world.step(ego, a);
        const bool at_goal = goal_reached(ev.route_finished, ego.pos, goal, ego.progress_s,
                                          total_length, cfg.goal_radius);

        {
            ojson l;
            l["t"] = step;
            l["time"] = world.time_s;
            l["action"] = {a.steer, a.accel};
            l["pos"] = {ego.pos.x, ego.pos.y};
            l["speed"] = ego.speed;
            l["progress"] = ego.progress_s;
            ojson cols = ojson::array();
            for (const auto& c : ev.collisions)
                cols.push_back({collision_kind(c.with), c.agent_id});
            l["collisions"] = std::move(cols);
            l["red"] = ev.red_light_crossed;
            l["off_road"] = ev.off_road;
            l["route_finished"] = ev.route_finished;
            rr.log.push_back(l.dump());
        }

        for (const auto& c : ev.collisions) acc.collision(c.with, c.agent_id, world.time_s);
        if (ev.red_light_crossed) acc.red_light(world.time_s);

        if (!ev.collisions.empty() && cfg.mode == EvalMode::NoCrash) {
            termination = "collision";
            break;
        }
        if (at_goal) {
            termination = "goal";
            completed = true;
            break;
        }
        if (ego.speed < cfg.blocked_speed) {
            stall_s += Dynamics::dt;
            if (stall_s > cfg.blocked_after_s) {
                termination = "blocked";
                break;
            }
        } else {
            stall_s = 0.0;
        }
        ++step;
    }
    if (termination.empty()) termination = "timeout";

    rr.completed = completed;
    rr.completion_pct =
        completed ? 100.0 : std::min(100.0, 100.0 * ego.progress_s / std::max(1e-9, total_length));
    rr.infraction_score = acc.score;
    rr.driving_score = rr.completion_pct * rr.infraction_score;
    rr.infractions = std::move(acc.list);
    rr.termination = termination;
    rr.duration_s = world.time_s;

    {
        ojson f;
        f["type"] = "end";
        f["termination"] = termination;
        f["completed"] = completed;
        f["duration_s"] = world.time_s;
        rr.log.push_back(f.dump());
    }
    return rr;
}

RouteResult metrics_from_log(const std::vector<std::string>& log_lines, const EvalConfig& cfg) {
    if (log_lines.size() < 2) throw ConfigError("metrics_from_log: log too short");
    RouteResult rr;
    double total_length = 0.0;
    Vec2 goal;
    double goal_radius = cfg.goal_radius;
    InfractionAccumulator acc;
    acc.cfg = &cfg;
    double progress = 0.0;
    bool completed = false;
    try {
        const nlohmann::json h = nlohmann::json::parse(log_lines.front());
        if (h.at("type") != "header") throw ConfigError("metrics_from_log: missing header");
        rr.route_id = h.at("route");
        rr.town = h.at("town");
        rr.condition = h.at("condition");
        rr.seed = h.at("seed");
        total_length = h.at("total_length").get<double>();
        goal = {h.at("goal").at(0).get<double>(), h.at("goal").at(1).get<double>()};
        const EvalMode mode = parse_eval_mode(h.at("mode").get<std::string>());
        const nlohmann::json f = nlohmann::json::parse(log_lines.back());
        if (f.at("type") != "end") throw ConfigError("metrics_from_log: missing footer");
        rr.termination = f.at("termination");
        rr.duration_s = f.at("duration_s");
        for (size_t i = 1; i + 1 < log_lines.size(); ++i) {
            const nlohmann::json l = nlohmann::json::parse(log_lines[i]);
            const double t = l.at("time").get<double>();
            progress = l.at("progress").get<double>();
            for (const auto& c : l.at("collisions"))
                acc.collision(c.at(0).get<std::string>(), c.at(1).get<int>(), t);
            if (l.at("red").get<bool>()) acc.red_light(t);
            // same priority as the live loop: a collision under no-crash rules
            // ends the episode before the goal test can fire
            if (l.at("collisions").size() > 0 && mode == EvalMode::NoCrash) break;
            const Vec2 pos{l.at("pos").at(0).get<double>(), l.at("pos").at(1).get<double>()};
            if (goal_reached(l.at("route_finished").get<bool>(), pos, goal, progress,
                             total_length, goal_radius)) {
                completed = true;
                break;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("metrics_from_log: malformed log: ") + e.what());
    }
    rr.completed = completed;
    rr.completion_pct =
        completed ? 100.0 : std::min(100.0, 100.0 * progress / std::max(1e-9, total_length));
    rr.infraction_score = acc.score;
    rr.driving_score = rr.completion_pct * rr.infraction_score;
    rr.infractions = acc.list;
    return rr;
}

EvalAggregate aggregate_results(const std::vector<RouteResult>& results) {
    if (results.empty()) throw ConfigError("aggregate_results: no results");
    std::map<uint64_t, std::vector<const RouteResult*>> by_seed;
    for (const auto& r : results) by_seed[r.seed].push_back(&r);

    std::vector<double> sr, rc, is, ds;
    for (const auto& [seed, rs] : by_seed) {
        double n_done = 0, rc_sum = 0, is_sum = 0, ds_sum = 0;
        for (const RouteResult* r : rs) {
            n_done += r->completed ? 1.0 : 0.0;
            rc_sum += r->completion_pct;
            is_sum += r->infraction_score;
            ds_sum += r->driving_score;
        }
        const double n = double(rs.size());
        sr.push_back(100.0 * n_done / n);
        rc.push_back(rc_sum / n);
        is.push_back(is_sum / n);
        ds.push_back(ds_sum / n);
    }
    EvalAggregate a;
    a.sr_mean = mean_of(sr);
    a.sr_std = sample_stdev(sr);
    a.rc_mean = mean_of(rc);
    a.rc_std = sample_stdev(rc);
    a.is_mean = mean_of(is);
    a.is_std = sample_stdev(is);
    a.ds_mean = mean_of(ds);
    a.ds_std = sample_stdev(ds);
    a.seeds = int(by_seed.size());
    a.routes_per_seed = int(by_seed.begin()->second.size());
    return a;
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "metric,mean,stdev\n";
    os << "success_rate," << aggregate.sr_mean << "," << aggregate.sr_std << "\n";
    os << "route_completion," << aggregate.rc_mean << "," << aggregate.rc_std << "\n";
    os << "infraction_score," << aggregate.is_mean << "," << aggregate.is_std << "\n";
    os << "driving_score," << aggregate.ds_mean << "," << aggregate.ds_std << "\n";
    return os.str();
}

ojson EvalReport::to_json() const {
    ojson j;
    j["results"] = ojson::array();
    for (const auto& r : results) {
        ojson e;
        e["route"] = r.route_id;
        e["town"] = r.town;
        e["condition"] = r.condition;
        e["seed"] = r.seed;
        e["completed"] = r.completed;
        e["completion_pct"] = r.completion_pct;
        e["infraction_score"] = r.infraction_score;
        e["driving_score"] = r.driving_score;
        e["termination"] = r.termination;
        e["duration_s"] = r.duration_s;
        ojson infs = ojson::array();
        for (const auto& inf : r.infractions) {
            ojson i;
            i["kind"] = inf.kind;
            i["time_s"] = inf.time_s;
            i["agent_id"] = inf.agent_id;
            infs.push_back(std::move(i));
        }
        e["infractions"] = std::move(infs);
        j["results"].push_back(std::move(e));
    }
    ojson a;
    a["seeds"] = aggregate.seeds;
    a["routes_per_seed"] = aggregate.routes_per_seed;
    a["success_rate"] = {{"mean", aggregate.sr_mean}, {"stdev", aggregate.sr_std}};
    a["route_completion"] = {{"mean", aggregate.rc_mean}, {"stdev", aggregate.rc_std}};
    a["infraction_score"] = {{"mean", aggregate.is_mean}, {"stdev", aggregate.is_std}};
    a["driving_score"] = {{"mean", aggregate.ds_mean}, {"stdev", aggregate.ds_std}};
    j["aggregate"] = std::move(a);
    return j;
}

EvalReport evaluate(const DrivingPolicy<float>* policy, const TownMap& town,
                    const std::vector<RouteSpec>& routes, int seeds, uint64_t base_seed,
                    const std::vector<std::string>& conditions, const EvalConfig& cfg) {
    if (routes.empty()) throw ConfigError("evaluate: no routes");
    if (seeds < 1) throw ConfigError("evaluate: seeds must be >= 1");
    if (conditions.empty()) throw ConfigError("evaluate: no conditions");
    EvalReport rep;
    for (const std::string& cond : conditions)
        for (int s = 0; s < seeds; ++s)
            for (const RouteSpec& r : routes)
                rep.results.push_back(run_route(policy, town, r, cond, base_seed + uint64_t(s), cfg));
    rep.aggregate = aggregate_results(rep.results);
    return rep;
}

// ---------------------------------------------------------------------------

std::vector<RgbImage> overlay_from_weights(const std::vector<double>& weights, int cameras,
                                           int grid_w, int grid_h, const Observation& obs) {
    if (int(weights.size()) != cameras * grid_w * grid_h)
        throw ShapeError("overlay_from_weights: weight count does not match the token grid");
    if (obs.cameras != cameras) throw ShapeError("overlay_from_weights: camera mismatch");
    const int W = obs.width, H = obs.height;
    double maxv = 0.0;
    for (double w : weights) maxv = std::max(maxv, w);

    std::vector<RgbImage> out;
    const size_t cam_px = size_t(W) * H;
    for (int k = 0; k < cameras; ++k) {
        RgbImage img;
        img.width = W;
        img.height = H;
        img.rgb.resize(cam_px * 3);
        const double* block = weights.data() + size_t(k) * grid_w * grid_h;
        const float* base = obs.camera(k);  // planar CHW, first 3 channels are RGB
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                // bilinear sample of the token grid at the pixel centre
                const double sx = (double(x) + 0.5) * grid_w / W - 0.5;
                const double sy = (double(y) + 0.5) * grid_h / H - 0.5;
                const int x0 = std::clamp(int(std::floor(sx)), 0, grid_w - 1);
                const int y0 = std::clamp(int(std::floor(sy)), 0, grid_h - 1);
                const int x1 = std::min(x0 + 1, grid_w - 1);
                const int y1 = std::min(y0 + 1, grid_h - 1);
                const double fx = std::clamp(sx - double(x0), 0.0, 1.0);
                const double fy = std::clamp(sy - double(y0), 0.0, 1.0);
                const double v00 = block[y0 * grid_w + x0], v10 = block[y0 * grid_w + x1];
                const double v01 = block[y1 * grid_w + x0], v11 = block[y1 * grid_w + x1];
                const double v = (1 - fy) * ((1 - fx) * v00 + fx * v10) +
                                 fy * ((1 - fx) * v01 + fx * v11);
                const double t = maxv > 0.0 ? v / maxv : 0.0;
                // heat ramp black -> red -> yellow -> white
                const double hr = std::min(1.0, 3.0 * t);
                const double hg = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
                const double hb = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
                const size_t i = size_t(y) * W + x;
                const float r0 = base[i], g0 = base[cam_px + i], b0 = base[2 * cam_px + i];
                img.rgb[i * 3] = float(0.5 * r0 + 0.5 * hr);
                img.rgb[i * 3 + 1] = float(0.5 * g0 + 0.5 * hg);
                img.rgb[i * 3 + 2] = float(0.5 * b0 + 0.5 * hb);
            }
        }
        out.push_back(std::move(img));
    }
    return out;
}

std::vector<RgbImage> export_attention_overlay(const DrivingPolicy<float>& policy,
                                               const Observation& obs) {
    NoGrad ng;
    auto batch = policy.make_batch({obs});
    ForwardResult<float> r = policy.forward(batch);
    Tensor<float> abar = policy.average_attention(r, policy.config().layers);
    std::vector<double> w(abar.values().begin(), abar.values().end());
    return overlay_from_weights(w, policy.config().cameras, policy.config().grid_w(),
                                policy.config().grid_h(), obs);
}

}  // namespace agd
