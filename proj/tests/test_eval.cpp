// Closed-loop evaluation: route rollouts for the expert and for models,
// infraction scoring with debounce, SR/RC/IS/DS aggregation, log replay
// equality, and attention-overlay export.

#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "agd/eval/evaluate.hpp"
#include "agd/mask/pipeline.hpp"
#include "agd/sim/render.hpp"
#include "agd/sim/world.hpp"

using namespace agd;
using ojson = nlohmann::ordered_json;

namespace {

std::string asset(const std::string& rel) { return std::string(AGD_SOURCE_DIR "/assets/") + rel; }

TownMap town_a() { return TownMap::load(asset("towns/toytown-A.json")); }

RouteSpec route_a(const std::string& id) {
    for (const RouteSpec& r : load_routes(asset("routes/toytown-A.json")))
        if (r.id == id) return r;
    throw std::runtime_error("no such route fixture: " + id);
}

ModelConfig tiny_cfg(int channels = 3, int wh = 32) {
    ModelConfig mc;
    mc.width = wh;
    mc.height = wh;
    mc.channels = channels;
    mc.token_dim = 16;
    mc.layers = 1;
    mc.heads = 2;
    mc.ffn_hidden = 32;
    mc.head_hidden = 16;
    return mc;
}

// With every parameter zeroed the network's raw output equals the final
// bias, so this agent emits one constant action forever.
DrivingPolicy<float> constant_agent(double steer, double accel, int channels = 3) {
    DrivingPolicy<float> p(tiny_cfg(channels), 1);
    for (auto& t : p.params().tensors())
        for (auto& v : t.values()) v = 0.f;
    auto b = p.params().get("head.fc2.b").values();
    b[0] = float(steer);
    b[1] = float(accel);
    return p;
}

EvalConfig small_eval() {
    EvalConfig cfg;
    cfg.render_width = 32;
    cfg.render_height = 32;
    return cfg;
}

Observation black_obs(int cameras, int channels, int w, int h) {
    Observation o;
    o.cameras = cameras;
    o.channels = channels;
    o.width = w;
    o.height = h;
    o.images.assign(size_t(cameras) * channels * w * h, 0.f);
    o.command.assign(size_t(kCommandCount), 0.0);
    o.command[0] = 1.0;
    return o;
}

double camera_brightness(const RgbImage& img) {
    double s = 0.0;
    for (float v : img.rgb) s += v;
    return s;
}

void check_same_result(const RouteResult& a, const RouteResult& b) {
    CHECK(a.route_id == b.route_id);
    CHECK(a.completed == b.completed);
    CHECK(a.completion_pct == doctest::Approx(b.completion_pct).epsilon(1e-12));
    CHECK(a.infraction_score == doctest::Approx(b.infraction_score).epsilon(1e-12));
    CHECK(a.driving_score == doctest::Approx(b.driving_score).epsilon(1e-12));
    REQUIRE(a.infractions.size() == b.infractions.size());
    for (size_t i = 0; i < a.infractions.size(); ++i) {
        CHECK(a.infractions[i].kind == b.infractions[i].kind);
        CHECK(a.infractions[i].time_s == doctest::Approx(b.infractions[i].time_s));
        CHECK(a.infractions[i].agent_id == b.infractions[i].agent_id);
    }
}

}  // namespace

TEST_CASE("eval mode names round-trip and reject unknowns") {
    CHECK(parse_eval_mode("nocrash") == EvalMode::NoCrash);
    CHECK(parse_eval_mode("leaderboard") == EvalMode::Leaderboard);
    CHECK(std::string(eval_mode_name(EvalMode::NoCrash)) == "nocrash");
    CHECK(std::string(eval_mode_name(EvalMode::Leaderboard)) == "leaderboard");
    CHECK_THROWS_AS(parse_eval_mode("freeride"), ConfigError);
}

TEST_CASE("infraction scoring and debounce recompute exactly from a synthetic log") {
    // Hand-built episode: vehicle 3 is hit at t=1.0 and again at t=2.0
    // (inside the 3 s debounce window -> one infraction), then again at
    // t=6.0 (outside -> second infraction). A red light is crossed at
    // t=7.0 and pedestrian 0 is hit at t=8.0. Final progress is 42 of 100 m.
    // Expected: IS = 0.60 * 0.60 * 0.70 * 0.50 = 0.126
    //           RC = 42,  DS = 42 * 0.126 = 5.292
    auto step = [](int t, double time, double progress, ojson cols, bool red) {
        ojson l;
        l["t"] = t;
        l["time"] = time;
        l["action"] = {0.0, 1.0};
        l["pos"] = {double(t), 0.0};
        l["speed"] = 5.0;
        l["progress"] = progress;
        l["collisions"] = std::move(cols);
        l["red"] = red;
        l["off_road"] = false;
        l["route_finished"] = false;
        return l.dump();
    };
    ojson h;
    h["type"] = "header";
    h["route"] = "synthetic";
    h["town"] = "toytown-A";
    h["condition"] = "clear-day";
    h["seed"] = 9;
    h["mode"] = "leaderboard";
    h["total_length"] = 100.0;
    h["timeout_s"] = 50.0;
    h["goal"] = {1000.0, 1000.0};
    ojson f;
    f["type"] = "end";
    f["termination"] = "timeout";
    f["completed"] = false;
    f["duration_s"] = 9.0;

    std::vector<std::string> log;
    log.push_back(h.dump());
    log.push_back(step(0, 1.0, 10.0, ojson::array({{"collision-vehicle", 3}}), false));
    log.push_back(step(1, 2.0, 15.0, ojson::array({{"collision-vehicle", 3}}), false));
    log.push_back(step(2, 6.0, 30.0, ojson::array({{"collision-vehicle", 3}}), false));
    log.push_back(step(3, 7.0, 35.0, ojson::array(), true));
    log.push_back(step(4, 8.0, 42.0, ojson::array({{"collision-pedestrian", 0}}), false));
    log.push_back(f.dump());

    EvalConfig cfg;
    RouteResult rr = metrics_from_log(log, cfg);
    CHECK_FALSE(rr.completed);
    CHECK(rr.completion_pct == doctest::Approx(42.0));
    CHECK(rr.infraction_score == doctest::Approx(0.126));
    CHECK(rr.driving_score == doctest::Approx(5.292));
    REQUIRE(rr.infractions.size() == 4);
    CHECK(rr.infractions[0].kind == "collision-vehicle");
    CHECK(rr.infractions[1].kind == "collision-vehicle");
    CHECK(rr.infractions[1].time_s == doctest::Approx(6.0));
    CHECK(rr.infractions[2].kind == "red-light");
    CHECK(rr.infractions[3].kind == "collision-pedestrian");
    CHECK(rr.termination == "timeout");

    // sustained contact: repeated hits every second keep extending the
    // window, so a 5 s grind on the same agent is still one infraction
    std::vector<std::string> grind;
    grind.push_back(h.dump());
    for (int t = 0; t < 6; ++t)
        grind.push_back(step(t, 1.0 + t, 10.0 + t, ojson::array({{"collision-vehicle", 3}}), false));
    grind.push_back(f.dump());
    RouteResult gr = metrics_from_log(grind, cfg);
    REQUIRE(gr.infractions.size() == 1);
    CHECK(gr.infraction_score == doctest::Approx(0.60));

    CHECK_THROWS_AS(metrics_from_log({"{}"}, cfg), ConfigError);
    CHECK_THROWS_AS(metrics_from_log({h.dump(), "not json", f.dump()}, cfg), ConfigError);
}

TEST_CASE("aggregate metrics: means and sample stdev across seeds") {
    auto mk = [](uint64_t seed, bool done, double rc, double is) {
        RouteResult r;
        r.seed = seed;
        r.completed = done;
        r.completion_pct = rc;
        r.infraction_score = is;
        r.driving_score = rc * is;
        return r;
    };
    // seed 1: SR 50, RC 70, IS 0.75, DS 60 ; seed 2: SR 100, RC 100, IS 0.9, DS 90
    std::vector<RouteResult> rs = {
        mk(1, true, 100.0, 1.0), mk(1, false, 40.0, 0.5),
        mk(2, true, 100.0, 1.0), mk(2, true, 100.0, 0.8),
    };
    EvalAggregate a = aggregate_results(rs);
    CHECK(a.seeds == 2);
    CHECK(a.routes_per_seed == 2);
    CHECK(a.sr_mean == doctest::Approx(75.0));
    CHECK(a.rc_mean == doctest::Approx(85.0));
    CHECK(a.is_mean == doctest::Approx(0.825));
    CHECK(a.ds_mean == doctest::Approx(75.0));
    // sample stdev of two points is |x - y| / sqrt(2)
    CHECK(a.sr_std == doctest::Approx(50.0 / std::sqrt(2.0)));
    CHECK(a.rc_std == doctest::Approx(30.0 / std::sqrt(2.0)));
    CHECK(a.is_std == doctest::Approx(0.15 / std::sqrt(2.0)));
    CHECK(a.ds_std == doctest::Approx(30.0 / std::sqrt(2.0)));

    // one seed -> stdev pinned to zero, not NaN
    EvalAggregate one = aggregate_results({mk(5, true, 80.0, 1.0), mk(5, false, 20.0, 0.7)});
    CHECK(one.seeds == 1);
    CHECK(one.sr_std == 0.0);
    CHECK(one.ds_std == 0.0);
    CHECK(one.sr_mean == doctest::Approx(50.0));

    CHECK_THROWS_AS(aggregate_results({}), ConfigError);
}

TEST_CASE("expert completes fixture routes under scripted traffic with a perfect score") {
    TownMap town = town_a();
    std::vector<RouteSpec> routes = {route_a("a0"), route_a("a6"), route_a("a8")};
    EvalConfig cfg;  // busy traffic, nocrash
    EvalReport rep = evaluate(nullptr, town, routes, 2, 101, {"clear-day"}, cfg);
    REQUIRE(rep.results.size() == 6);
    for (const RouteResult& r : rep.results) {
        CAPTURE(r.route_id);
        CAPTURE(r.seed);
        CHECK(r.completed);
        CHECK(r.termination == "goal");
        CHECK(r.completion_pct == 100.0);
        CHECK(r.infraction_score == 1.0);
        CHECK(r.driving_score == 100.0);
        CHECK(r.infractions.empty());
    }
    CHECK(rep.aggregate.sr_mean == doctest::Approx(100.0));
    CHECK(rep.aggregate.ds_mean == doctest::Approx(100.0));
    CHECK(rep.aggregate.sr_std == doctest::Approx(0.0));
    CHECK(rep.aggregate.seeds == 2);
    CHECK(rep.aggregate.routes_per_seed == 3);

    std::string csv = rep.to_csv();
    CHECK(csv.rfind("metric,mean,stdev\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    ojson j = rep.to_json();
    CHECK(j.at("results").size() == 6);
    CHECK(j.at("aggregate").at("driving_score").at("mean").get<double>() ==
          doctest::Approx(100.0));
}

TEST_CASE("route metrics recomputed from the step log equal the live result") {
    TownMap town = town_a();

    // clean expert run (no infractions, reaches goal)
    EvalConfig cfg;
    RouteResult live = run_route(nullptr, town, route_a("a0"), "clear-day", 101, cfg);
    CHECK(live.completed);
    check_same_result(live, metrics_from_log(live.log, cfg));

    // crashing run with infractions, leaderboard rules
    DrivingPolicy<float> agent = constant_agent(0.0, 1.0);
    EvalConfig lb = small_eval();
    lb.mode = EvalMode::Leaderboard;
    RouteResult crash = run_route(&agent, town, route_a("a4"), "clear-day", 2, lb);
    CHECK(crash.infraction_score < 1.0);
    check_same_result(crash, metrics_from_log(crash.log, lb));

    // collision-terminated run under nocrash rules
    EvalConfig nc = small_eval();
    RouteResult ncr = run_route(&agent, town, route_a("a0"), "clear-day", 0, nc);
    CHECK(ncr.termination == "collision");
    check_same_result(ncr, metrics_from_log(ncr.log, nc));
}

TEST_CASE("nocrash mode ends at the first collision; leaderboard drives on") {
    TownMap town = town_a();
    DrivingPolicy<float> agent = constant_agent(0.0, 1.0);

    // seed picked so the straight-line full-throttle agent rear-ends traffic
    EvalConfig nc = small_eval();
    RouteResult r_nc = run_route(&agent, town, route_a("a0"), "clear-day", 0, nc);
    EvalConfig lb = small_eval();
    lb.mode = EvalMode::Leaderboard;
    RouteResult r_lb = run_route(&agent, town, route_a("a0"), "clear-day", 0, lb);

    CHECK(r_nc.termination == "collision");
    CHECK_FALSE(r_nc.completed);
    REQUIRE(r_nc.infractions.size() >= 1);
    CHECK(r_nc.infractions.size() == 1);  // episode ends right at the first one
    CHECK(r_lb.termination == "timeout");
    CHECK(r_lb.duration_s > r_nc.duration_s);
    // both rollouts are identical up to the collision step
    CHECK(r_lb.infractions[0].kind == r_nc.infractions[0].kind);
    CHECK(r_lb.infractions[0].time_s == doctest::Approx(r_nc.infractions[0].time_s));
    CHECK(r_lb.infractions[0].agent_id == r_nc.infractions[0].agent_id);

    // seed picked so that continuing past the first collision accrues more
    // penalties than stopping there
    RouteResult m_nc = run_route(&agent, town, route_a("a4"), "clear-day", 2, nc);
    RouteResult m_lb = run_route(&agent, town, route_a("a4"), "clear-day", 2, lb);
    CHECK(m_nc.infractions.size() == 1);
    CHECK(m_lb.infractions.size() > m_nc.infractions.size());
    CHECK(m_lb.infraction_score < m_nc.infraction_score);
}

TEST_CASE("a stationary policy is cut off as blocked with near-zero completion") {
    TownMap town = town_a();
    DrivingPolicy<float> agent = constant_agent(0.0, 0.0);
    EvalConfig cfg = small_eval();
    RouteResult rr = run_route(&agent, town, route_a("a0"), "clear-day", 1, cfg);
    CHECK(rr.termination == "blocked");
    CHECK_FALSE(rr.completed);
    CHECK(rr.completion_pct < 5.0);
    CHECK(rr.driving_score < 5.0);
    CHECK(rr.duration_s == doctest::Approx(cfg.blocked_after_s + 0.1).epsilon(0.02));
    CHECK(rr.infraction_score == 1.0);
}

TEST_CASE("model input variant must match the model's channel count") {
    TownMap town = town_a();
    DrivingPolicy<float> rgb = constant_agent(0.0, 0.0, 3);
    DrivingPolicy<float> rgbm = constant_agent(0.0, 0.0, 4);

    EvalConfig cfg = small_eval();
    cfg.variant = InputVariant::SM;
    CHECK_THROWS_AS(run_route(&rgb, town, route_a("a0"), "clear-day", 1, cfg), ConfigError);
    cfg.variant = InputVariant::None;
    CHECK_THROWS_AS(run_route(&rgbm, town, route_a("a0"), "clear-day", 1, cfg), ConfigError);
    cfg.variant = InputVariant::HM;  // mask-modulated RGB keeps 3 channels
    CHECK_THROWS_AS(run_route(&rgbm, town, route_a("a0"), "clear-day", 1, cfg), ConfigError);
}

TEST_CASE("mask pipeline is untouched for plain input and engages for masked variants") {
    TownMap town = town_a();
    EvalConfig cfg = small_eval();
    cfg.blocked_after_s = 5.0;  // keep the rollouts short

    DrivingPolicy<float> rgb = constant_agent(0.0, 0.0, 3);
    reset_mask_pipeline_invocations();
    RouteResult plain = run_route(&rgb, town, route_a("a0"), "clear-day", 1, cfg);
    CHECK(plain.log.size() > 40);  // a real rollout happened
    CHECK(mask_pipeline_invocations().load() == 0);

    DrivingPolicy<float> rgbm = constant_agent(0.0, 0.0, 4);
    cfg.variant = InputVariant::SM;
    reset_mask_pipeline_invocations();
    run_route(&rgbm, town, route_a("a0"), "clear-day", 1, cfg);
    const uint64_t sm_calls = mask_pipeline_invocations().load();
    CHECK(sm_calls > 0);

    // corrupted-mask evaluation does strictly more pipeline work
    cfg.corrupted_masks = true;
    reset_mask_pipeline_invocations();
    run_route(&rgbm, town, route_a("a0"), "clear-day", 1, cfg);
    CHECK(mask_pipeline_invocations().load() > sm_calls);
}

TEST_CASE("evaluation reports are deterministic and protocol-shaped") {
    TownMap town = town_a();
    DrivingPolicy<float> model(tiny_cfg(), 7);  // random init
    EvalConfig cfg = small_eval();
    cfg.blocked_after_s = 5.0;
    std::vector<RouteSpec> routes = {route_a("a0"), route_a("a6")};

    EvalReport r1 = evaluate(&model, town, routes, 2, 11, {"clear-day"}, cfg);
    EvalReport r2 = evaluate(&model, town, routes, 2, 11, {"clear-day"}, cfg);
    REQUIRE(r1.results.size() == 4);
    CHECK(r1.to_json().dump() == r2.to_json().dump());
    for (size_t i = 0; i < r1.results.size(); ++i) {
        REQUIRE(r1.results[i].log.size() == r2.results[i].log.size());
        CHECK(r1.results[i].log == r2.results[i].log);
    }
    // seed axis: base_seed..base_seed+1, routes in listed order
    CHECK(r1.results[0].seed == 11);
    CHECK(r1.results[0].route_id == "a0");
    CHECK(r1.results[1].route_id == "a6");
    CHECK(r1.results[2].seed == 12);
    CHECK(r1.aggregate.seeds == 2);
    CHECK(r1.aggregate.routes_per_seed == 2);

    CHECK_THROWS_AS(evaluate(&model, town, {}, 1, 0, {"clear-day"}, cfg), ConfigError);
    CHECK_THROWS_AS(evaluate(&model, town, routes, 0, 0, {"clear-day"}, cfg), ConfigError);
    CHECK_THROWS_AS(evaluate(&model, town, routes, 1, 0, {}, cfg), ConfigError);
}

TEST_CASE("attention overlays: normalization, camera block order, bilinear upscale") {
    const int cams = 3, gw = 2, gh = 2, W = 16, H = 16;
    Observation obs = black_obs(cams, 3, W, H);

    // uniform weights -> identical mid-gray heat on every camera
    std::vector<double> uni(size_t(cams) * gw * gh, 1.0 / 12.0);
    auto flat = overlay_from_weights(uni, cams, gw, gh, obs);
    REQUIRE(flat.size() == 3);
    for (const RgbImage& img : flat) {
        REQUIRE(img.width == W);
        REQUIRE(img.height == H);
        for (size_t i = 0; i < img.rgb.size(); i += 3) {
            CHECK(img.rgb[i] == doctest::Approx(0.5));      // full heat, alpha 0.5
            CHECK(img.rgb[i + 1] == doctest::Approx(0.5));
            CHECK(img.rgb[i + 2] == doctest::Approx(0.5));
        }
    }

    // all mass on camera 1, grid cell (x=1, y=0): the hottest pixel must land
    // in camera 1's upper-right quadrant; other cameras stay dark
    std::vector<double> delta(size_t(cams) * gw * gh, 0.0);
    delta[size_t(1) * gw * gh + 0 * gw + 1] = 1.0;
    auto spot = overlay_from_weights(delta, cams, gw, gh, obs);
    double best = -1.0;
    int bx = -1, by = -1;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float* p = spot[1].px(x, y);
            const double v = p[0] + p[1] + p[2];
            if (v > best) best = v, bx = x, by = y;
        }
    CHECK(bx >= W / 2);
    CHECK(by < H / 2);
    CHECK(camera_brightness(spot[1]) > camera_brightness(spot[0]));
    CHECK(camera_brightness(spot[1]) > camera_brightness(spot[2]));
    CHECK(camera_brightness(spot[0]) == doctest::Approx(0.0));
    CHECK(camera_brightness(spot[2]) == doctest::Approx(0.0));

    // per-camera mass {0.2, 1.0, 0.5} -> brightness ordered 1 > 2 > 0
    std::vector<double> blocks(size_t(cams) * gw * gh, 0.0);
    const double mass[3] = {0.2, 1.0, 0.5};
    for (int k = 0; k < cams; ++k)
        for (int i = 0; i < gw * gh; ++i) blocks[size_t(k) * gw * gh + i] = mass[k] / (gw * gh);
    auto ord = overlay_from_weights(blocks, cams, gw, gh, obs);
    CHECK(camera_brightness(ord[1]) > camera_brightness(ord[2]));
    CHECK(camera_brightness(ord[2]) > camera_brightness(ord[0]));

    CHECK_THROWS_AS(overlay_from_weights({1.0, 2.0}, cams, gw, gh, obs), ShapeError);
}

TEST_CASE("overlay export from a live model is shaped and deterministic") {
    DrivingPolicy<float> model(tiny_cfg(), 3);
    TownMap town = town_a();
    Scenario sc = spawn_scenario(town, "clear-day", "busy", 4, {"c00", "ms", "c10"});
    RenderOutput r = render(sc.world, sc.ego, 32, 32, 99);
    Observation obs = make_observation(r, sc.ego.speed_norm(), sc.ego.current_command());

    auto ov1 = export_attention_overlay(model, obs);
    auto ov2 = export_attention_overlay(model, obs);
    REQUIRE(ov1.size() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(ov1[k].width == 32);
        CHECK(ov1[k].height == 32);
        REQUIRE(ov1[k].rgb.size() == size_t(32) * 32 * 3);
        CHECK(ov1[k].rgb == ov2[k].rgb);
        for (float v : ov1[k].rgb) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }
}
