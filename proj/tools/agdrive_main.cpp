// Command-line entry point: wires data collection, training, the guidance
// sweep, closed-loop evaluation, mask corruption, attention visualization,
// and end-to-end experiment reproduction into one tool.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "agd/eval/evaluate.hpp"
#include "agd/exp/experiments.hpp"
#include "agd/mask/pipeline.hpp"
#include "agd/model/policy.hpp"
#include "agd/sim/render.hpp"
#include "agd/sim/world.hpp"
#include "agd/train/sweep.hpp"
#include "agd/train/trainer.hpp"
#include "agd/util/hashing.hpp"
#include "agd/util/kv_config.hpp"
#include "agd/util/manifest.hpp"
#include "agd/util/pnm.hpp"
#include "agd/version.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using steady = std::chrono::steady_clock;

namespace {

double secs_since(steady::time_point t0) {
    return std::chrono::duration<double>(steady::now() - t0).count();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    for (const std::string& it : split_list(s)) out.push_back(std::stod(it));
    return out;
}

std::vector<long> split_longs(const std::string& s) {
    std::vector<long> out;
    for (const std::string& it : split_list(s)) out.push_back(std::stol(it));
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    for (const std::string& it : split_list(s)) out.push_back(std::stoi(it));
    return out;
}

ojson kv_to_json(const agd::KvConfig& kv) {
    ojson j = ojson::object();
    for (const auto& [k, v] : kv.entries()) j[k] = v;
    return j;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw agd::IoError("cannot write " + p.string());
    f << text;
}

agd::pnm::Image8 to_image8(const agd::RgbImage& img) {
    agd::pnm::Image8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = 3;
    out.data.resize(img.rgb.size());
    for (size_t i = 0; i < img.rgb.size(); ++i) {
        float v = img.rgb[i];
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        out.data[i] = uint8_t(v * 255.f + 0.5f);
    }
    return out;
}

// Loads --config (if given) and lays CLI --set key=value pairs over it.
agd::KvConfig resolve_kv(const std::string& config_file,
                         const std::vector<std::string>& sets) {
    agd::KvConfig kv;
    if (!config_file.empty()) kv = agd::KvConfig::from_file(config_file);
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw agd::ConfigError("--set expects key=value, got '" + s + "'");
        kv.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return kv;
}

// ---------------------------------------------------------------- collect

struct CollectArgs {
    std::string config_file, out, town, density = "busy", condition = "clear-day";
    uint64_t seed = 0;
    int steps = 1000, width = 64, height = 64, episodes = 1;
};

int cmd_collect(const CollectArgs& a) {
    const auto t0 = steady::now();
    agd::KvConfig kv;
    if (!a.config_file.empty()) kv = agd::KvConfig::from_file(a.config_file);
    const std::string town = kv.get_str("town", a.town);
    const std::vector<std::string> densities = split_list(kv.get_str("density", a.density));
    const std::vector<std::string> conditions = split_list(kv.get_str("condition", a.condition));
    const uint64_t seed = uint64_t(kv.get_long("seed", long(a.seed)));
    const int steps = int(kv.get_long("steps", a.steps));
    const int width = int(kv.get_long("width", a.width));
    const int height = int(kv.get_long("height", a.height));
    const int episodes = int(kv.get_long("episodes", a.episodes));
    if (town.empty()) throw agd::ConfigError("collect: --town (or config key town) is required");
    if (episodes < 1) throw agd::ConfigError("collect: episodes must be >= 1");
    if (densities.empty() || conditions.empty())
        throw agd::ConfigError("collect: density/condition lists must be nonempty");

    fs::create_directories(a.out);
    for (int i = 0; i < episodes; ++i) {
        agd::CollectConfig cc;
        cc.town_fixture = town;
        cc.density = densities[size_t(i) % densities.size()];
        cc.condition = conditions[size_t(i) % conditions.size()];
        cc.seed = seed + uint64_t(i);
        cc.steps = steps;
        cc.width = width;
        cc.height = height;
        const std::string dir = agd::collect_to_dir(cc, a.out);
        std::printf("collected %s (%s, %s, seed %llu)\n", dir.c_str(), cc.density.c_str(),
                    cc.condition.c_str(), (unsigned long long)cc.seed);
    }
    agd::Catalog cat = agd::build_catalog(a.out);
    agd::save_catalog(cat, fs::path(a.out) / "catalog.json");

    agd::ExperimentManifest m;
    m.command = "collect";
    m.config = {{"town", town},
                {"density", kv.get_str("density", a.density)},
                {"condition", kv.get_str("condition", a.condition)},
                {"seed", seed},
                {"steps", steps},
                {"width", width},
                {"height", height},
                {"episodes", episodes}};
    m.input_hashes["town_fixture"] = agd::sha256_file(town);
    if (!a.config_file.empty())
        m.input_hashes["config_file"] = agd::sha256_file(a.config_file);
    m.wall_s = secs_since(t0);
    agd::write_manifest(a.out, m);
    std::printf("catalog: %zu episodes, %ld steps\n", cat.episodes.size(), cat.total_steps());
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string data, config_file, out;
    std::vector<std::string> sets;
    long budget = 0;  // 0 = whole dataset
    std::string subset_conditions;
    uint64_t subset_seed = 1;
};

agd::DatasetView make_view(const std::string& data, long budget,
                           const std::string& conditions, uint64_t subset_seed) {
    agd::Catalog cat = agd::build_catalog(data);
    const long total = cat.total_steps();
    return agd::sample_subset(cat, budget > 0 ? budget : total, split_list(conditions),
                              subset_seed);
}

int cmd_train(const TrainArgs& a) {
    const auto t0 = steady::now();
    agd::KvConfig kv = resolve_kv(a.config_file, a.sets);
    agd::TrainConfig cfg = agd::TrainConfig::from_kv(kv);
    agd::DatasetView view = make_view(a.data, a.budget, a.subset_conditions, a.subset_seed);
    std::printf("training on %ld steps across %zu episodes (subset hash %.12s...)\n",
                view.total_steps, view.episodes.size(), view.catalog_hash.c_str());
    agd::TrainResult tr = agd::train(view, cfg, a.out);
    std::printf("best epoch %d, validation action loss %.6f -> %s\n", tr.best_epoch,
                tr.best_val_action, tr.best_checkpoint.string().c_str());

    agd::ExperimentManifest m;
    m.command = "train";
    m.config = kv_to_json(cfg.to_kv());
    m.config["budget_steps"] = a.budget;
    m.config["subset_conditions"] = a.subset_conditions;
    m.config["subset_seed"] = a.subset_seed;
    m.input_hashes["dataset_subset"] = view.catalog_hash;
    if (!a.config_file.empty())
        m.input_hashes["config_file"] = agd::sha256_file(a.config_file);
    m.unhashed = {"train_log.csv"};
    m.wall_s = secs_since(t0);
    agd::write_manifest(a.out, m);
    return 0;
}

// ------------------------------------------------------------------ sweep

struct SweepArgs {
    TrainArgs train;
    std::string grid = "0.1,0.25,0.5,1.0,2.5,5.0,10.0";
    std::string eval_town, routes_file, eval_conditions = "clear-day";
    int eval_seeds = 3;
    uint64_t eval_base_seed = 0;
    std::string mode = "nocrash", eval_density = "busy";
};

int cmd_sweep(const SweepArgs& a) {
    const auto t0 = steady::now();
    agd::KvConfig kv = resolve_kv(a.train.config_file, a.train.sets);
    agd::TrainConfig cfg = agd::TrainConfig::from_kv(kv);
    agd::DatasetView view =
        make_view(a.train.data, a.train.budget, a.train.subset_conditions, a.train.subset_seed);

    agd::SweepEvalSpec es;
    es.town = agd::TownMap::load(a.eval_town);
    es.routes = agd::load_routes(a.routes_file);
    es.conditions = split_list(a.eval_conditions);
    es.seeds = a.eval_seeds;
    es.base_seed = a.eval_base_seed;
    es.eval.mode = agd::parse_eval_mode(a.mode);
    es.eval.density = a.eval_density;

    agd::SweepTable tab =
        agd::sweep_lambda_att(view, cfg, split_doubles(a.grid), es, a.train.out);
    std::printf("%s", tab.to_csv().c_str());

    agd::ExperimentManifest m;
    m.command = "sweep";
    m.config = kv_to_json(cfg.to_kv());
    m.config["grid"] = a.grid;
    m.config["eval_town"] = a.eval_town;
    m.config["routes_file"] = a.routes_file;
    m.config["eval_conditions"] = a.eval_conditions;
    m.config["eval_seeds"] = a.eval_seeds;
    m.input_hashes["dataset_subset"] = view.catalog_hash;
    m.input_hashes["eval_town_fixture"] = agd::sha256_file(a.eval_town);
    m.input_hashes["eval_routes_file"] = agd::sha256_file(a.routes_file);
    m.unhashed = {"train_log.csv"};
    m.wall_s = secs_since(t0);
    agd::write_manifest(a.train.out, m);
    return 0;
}

// --------------------------------------------------------------- evaluate

struct EvalArgs {
    std::string checkpoint, town, routes_file, out;
    int seeds = 3;
    uint64_t base_seed = 0;
    std::string variant = "none", mode = "nocrash", density = "busy";
    std::string conditions = "clear-day";
    bool corrupted_masks = false;
};

int cmd_evaluate(const EvalArgs& a) {
    const auto t0 = steady::now();
    agd::DrivingPolicy<float> policy = agd::DrivingPolicy<float>::load(a.checkpoint);
    agd::TownMap town = agd::TownMap::load(a.town);
    std::vector<agd::RouteSpec> routes = agd::load_routes(a.routes_file);

    agd::EvalConfig ec;
    ec.mode = agd::parse_eval_mode(a.mode);
    ec.density = a.density;
    ec.variant = agd::parse_variant(a.variant);
    ec.corrupted_masks = a.corrupted_masks;
    ec.render_width = policy.config().width;
    ec.render_height = policy.config().height;

    agd::EvalReport rep = agd::evaluate(&policy, town, routes, a.seeds, a.base_seed,
                                        split_list(a.conditions), ec);
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "report.csv", rep.to_csv());
    write_text(fs::path(a.out) / "report.json", rep.to_json().dump(2) + "\n");
    fs::create_directories(fs::path(a.out) / "logs");
    for (const agd::RouteResult& r : rep.results) {
        std::ostringstream name;
        name << r.route_id << "_" << r.condition << "_s" << r.seed << ".jsonl";
        std::ostringstream body;
        for (const std::string& line : r.log) body << line << "\n";
        write_text(fs::path(a.out) / "logs" / name.str(), body.str());
    }
    std::printf("%s", rep.to_csv().c_str());

    agd::ExperimentManifest m;
    m.command = "evaluate";
    m.config = {{"checkpoint", a.checkpoint}, {"town", a.town},
                {"routes_file", a.routes_file}, {"seeds", a.seeds},
                {"base_seed", a.base_seed},     {"variant", a.variant},
                {"mode", a.mode},               {"density", a.density},
                {"conditions", a.conditions},   {"corrupted_masks", a.corrupted_masks}};
    m.input_hashes["checkpoint"] = agd::sha256_file(a.checkpoint);
    m.input_hashes["town_fixture"] = agd::sha256_file(a.town);
    m.input_hashes["routes_file"] = agd::sha256_file(a.routes_file);
    m.wall_s = secs_since(t0);
    agd::write_manifest(a.out, m);
    return 0;
}

// ----------------------------------------------------------- corrupt-masks

struct CorruptArgs {
    std::string data;
    uint64_t seed = 1;
};

int cmd_corrupt(const CorruptArgs& a) {
    const auto t0 = steady::now();
    agd::Catalog cat = agd::build_catalog(a.data);
    if (cat.episodes.empty()) throw agd::ConfigError("corrupt-masks: empty dataset");
    for (const agd::CatalogEntry& e : cat.episodes) {
        agd::corrupt_episode_masks(fs::path(a.data) / e.dir, a.seed);
        std::printf("corrupted masks in %s\n", e.dir.c_str());
    }
    cat = agd::build_catalog(a.data);  // refresh flags + hashes
    agd::save_catalog(cat, fs::path(a.data) / "catalog.json");

    agd::ExperimentManifest prev;
    bool had_manifest = fs::exists(fs::path(a.data) / "manifest.json");
    if (had_manifest) prev = agd::load_manifest(a.data);
    agd::ExperimentManifest m;
    m.command = "corrupt-masks";
    m.config = {{"data", a.data}, {"seed", a.seed}};
    if (had_manifest)
        m.input_hashes["previous_manifest"] =
            agd::sha256_hex(prev.to_json().dump());
    m.wall_s = secs_since(t0);
    agd::write_manifest(a.data, m);
    return 0;
}

// -------------------------------------------------------------- visualize

struct VisArgs {
    std::string checkpoint, town, out;
    std::string condition = "clear-day", density = "busy", variant = "none";
    uint64_t seed = 0;
    int warmup_steps = 40;
    bool corrupted_masks = false;
};

int cmd_visualize(const VisArgs& a) {
    const auto t0 = steady::now();
    agd::DrivingPolicy<float> policy = agd::DrivingPolicy<float>::load(a.checkpoint);
    agd::TownMap town = agd::TownMap::load(a.town);
    const agd::InputVariant variant = agd::parse_variant(a.variant);
    const int want = variant == agd::InputVariant::SM ? 4 : 3;
    if (policy.config().channels != want)
        throw agd::ConfigError("visualize: checkpoint channels do not match --variant");

    agd::Scenario sc = agd::spawn_scenario(town, a.condition, a.density, a.seed);
    for (int i = 0; i < a.warmup_steps; ++i)
        sc.world.step(sc.ego, agd::clip_action(agd::expert_policy(sc.world, sc.ego)));

    const int W = policy.config().width, H = policy.config().height;
    agd::RenderOutput r = agd::render(sc.world, sc.ego, W, H, a.seed);
    agd::Observation obs =
        agd::make_observation(r, sc.ego.speed_norm(), sc.ego.current_command());
    if (variant != agd::InputVariant::None) {
        std::vector<agd::AttentionMask> masks;
        for (int k = 0; k < agd::kNumCameras; ++k) {
            agd::AttentionMask mk = agd::build_mask(r.sem[size_t(k)], r.depth[size_t(k)],
                                                    agd::default_salient_classes(), town.d_max);
            if (a.corrupted_masks) {
                agd::NoiseParams np;
                np.d_max = town.d_max;
                np.seed = a.seed + uint64_t(k);
                mk = agd::corrupt_mask(mk, r.sem[size_t(k)], r.depth[size_t(k)], np);
            }
            masks.push_back(std::move(mk));
        }
        obs = agd::apply_input_variant(obs, masks, variant);
    }

    std::vector<agd::RgbImage> overlays = agd::export_attention_overlay(policy, obs);
    fs::create_directories(a.out);
    for (int k = 0; k < agd::kNumCameras; ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "camera%d_input.ppm", k);
        agd::pnm::write(fs::path(a.out) / name, to_image8(r.rgb[size_t(k)]));
        std::snprintf(name, sizeof name, "camera%d_attention.ppm", k);
        agd::pnm::write(fs::path(a.out) / name, to_image8(overlays[size_t(k)]));
    }
    std::printf("wrote %d input + %d attention overlays to %s\n", agd::kNumCameras,
                agd::kNumCameras, a.out.c_str());

    agd::ExperimentManifest m;
    m.command = "visualize";
    m.config = {{"checkpoint", a.checkpoint}, {"town", a.town},
                {"condition", a.condition},   {"density", a.density},
                {"variant", a.variant},       {"seed", a.seed},
                {"warmup_steps", a.warmup_steps}};
    m.input_hashes["checkpoint"] = agd::sha256_file(a.checkpoint);
    m.input_hashes["town_fixture"] = agd::sha256_file(a.town);
    m.wall_s = secs_since(t0);
    agd::write_manifest(a.out, m);
    return 0;
}

// ------------------------------------------------------------------ repro

struct ReproArgs {
    std::string target;  // fig3 | fig4
    std::string out;
    std::string verify_dir;
    std::string train_town, eval_town, routes_file;
    std::string budgets, epochs, lambdas, grid;
    long budget = 0;
    int pool_busy = -1, pool_empty = -1, episode_steps = 0, eval_seeds = 0;
    double lr = 0.0;
    int size = 0;
};

int cmd_repro(ReproArgs& a) {
    if (!a.verify_dir.empty()) {
        // verify this directory and every nested artifact directory
        std::vector<fs::path> dirs;
        if (fs::exists(fs::path(a.verify_dir) / "manifest.json")) dirs.push_back(a.verify_dir);
        for (const auto& e : fs::recursive_directory_iterator(a.verify_dir))
            if (e.is_regular_file() && e.path().filename() == "manifest.json")
                if (e.path().parent_path() != fs::path(a.verify_dir))
                    dirs.push_back(e.path().parent_path());
        if (dirs.empty()) throw agd::IoError("no manifest.json under " + a.verify_dir);
        int bad_total = 0;
        for (const fs::path& d : dirs) {
            const std::vector<std::string> bad = agd::verify_manifest(d);
            if (bad.empty()) {
                std::printf("verified %s\n", d.string().c_str());
            } else {
                bad_total += int(bad.size());
                for (const std::string& b : bad)
                    std::fprintf(stderr, "MISMATCH %s: %s\n", d.string().c_str(), b.c_str());
            }
        }
        if (bad_total) {
            std::fprintf(stderr, "verification failed: %d mismatches\n", bad_total);
            return 1;
        }
        std::printf("all %zu manifests verified\n", dirs.size());
        return 0;
    }

    agd::LowDataConfig cfg;
    cfg.train_town_fixture = a.train_town;
    cfg.eval_town_fixture = a.eval_town;
    cfg.eval_routes_file = a.routes_file;
    if (a.pool_busy >= 0) cfg.pool_busy = a.pool_busy;
    if (a.pool_empty >= 0) cfg.pool_empty = a.pool_empty;
    if (a.episode_steps > 0) cfg.episode_steps = a.episode_steps;
    if (a.eval_seeds > 0) cfg.eval_seeds = a.eval_seeds;
    if (a.lr > 0) cfg.lr = a.lr;
    if (!a.budgets.empty()) cfg.budgets = split_longs(a.budgets);
    if (!a.epochs.empty()) cfg.epochs = split_ints(a.epochs);
    if (!a.lambdas.empty()) cfg.lambdas = split_doubles(a.lambdas);
    if (a.size > 0) {
        cfg.width = cfg.height = a.size;
        cfg.model.width = cfg.model.height = a.size;
    }

    if (a.target == "fig3") {
        agd::LowDataResult res = agd::run_lowdata(cfg, a.out);
        std::printf("%s", res.to_csv().c_str());
        return 0;
    }
    if (a.target == "fig4") {
        agd::SweepReproConfig sc;
        sc.base = cfg;
        if (a.budget > 0) sc.budget = a.budget;
        if (!a.grid.empty()) sc.grid = split_doubles(a.grid);
        if (!a.epochs.empty())
            sc.base.epochs.assign(sc.base.budgets.size(), split_ints(a.epochs).front());
        agd::SweepTable tab = agd::run_sweep_repro(sc, a.out);
        std::printf("%s", tab.to_csv().c_str());
        return 0;
    }
    throw agd::ConfigError("repro: unknown target '" + a.target + "' (fig3 or fig4)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-guided driving: data, training, evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(agd::version()));

    CollectArgs ca;
    CLI::App* collect = app.add_subcommand("collect", "record expert demonstration episodes");
    collect->add_option("--config", ca.config_file, "key=value config file");
    collect->add_option("--out", ca.out, "dataset directory")->required();
    collect->add_option("--town", ca.town, "town fixture JSON");
    collect->add_option("--density", ca.density, "traffic density (comma list rotates)");
    collect->add_option("--condition", ca.condition, "condition (comma list rotates)");
    collect->add_option("--seed", ca.seed, "first episode seed");
    collect->add_option("--steps", ca.steps, "steps per episode");
    collect->add_option("--width", ca.width, "camera width");
    collect->add_option("--height", ca.height, "camera height");
    collect->add_option("--episodes", ca.episodes, "number of episodes");

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "train a policy on a dataset");
    train->add_option("--data", ta.data, "dataset directory")->required();
    train->add_option("--config", ta.config_file, "key=value training config");
    train->add_option("--out", ta.out, "output directory")->required();
    train->add_option("--set", ta.sets, "override a config key (key=value, repeatable)");
    train->add_option("--budget-steps", ta.budget, "subset size in steps (0 = all)");
    train->add_option("--subset-conditions", ta.subset_conditions,
                      "comma list restricting episode conditions");
    train->add_option("--subset-seed", ta.subset_seed, "episode subset sampling seed");

    SweepArgs sa;
    CLI::App* sweep = app.add_subcommand("sweep", "train + evaluate across lambda_att values");
    sweep->add_option("--data", sa.train.data, "dataset directory")->required();
    sweep->add_option("--config", sa.train.config_file, "key=value training config");
    sweep->add_option("--out", sa.train.out, "output directory")->required();
    sweep->add_option("--set", sa.train.sets, "override a config key (repeatable)");
    sweep->add_option("--budget-steps", sa.train.budget, "subset size in steps (0 = all)");
    sweep->add_option("--subset-seed", sa.train.subset_seed, "subset sampling seed");
    sweep->add_option("--grid", sa.grid, "comma list of lambda_att values");
    sweep->add_option("--eval-town", sa.eval_town, "evaluation town fixture")->required();
    sweep->add_option("--routes-file", sa.routes_file, "evaluation routes JSON")->required();
    sweep->add_option("--eval-conditions", sa.eval_conditions, "comma list of conditions");
    sweep->add_option("--eval-seeds", sa.eval_seeds, "seeds per route");
    sweep->add_option("--eval-base-seed", sa.eval_base_seed, "first evaluation seed");
    sweep->add_option("--mode", sa.mode, "nocrash | leaderboard");
    sweep->add_option("--density", sa.eval_density, "evaluation traffic density");

    EvalArgs ea;
    CLI::App* eval = app.add_subcommand("evaluate", "drive a checkpoint on fixture routes");
    eval->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
    eval->add_option("--town", ea.town, "town fixture JSON")->required();
    eval->add_option("--routes-file", ea.routes_file, "routes JSON")->required();
    eval->add_option("--out-dir", ea.out, "report directory")->required();
    eval->add_option("--seeds", ea.seeds, "seeds per route");
    eval->add_option("--base-seed", ea.base_seed, "first seed");
    eval->add_option("--variant", ea.variant, "none | sm | hm");
    eval->add_option("--mode", ea.mode, "nocrash | leaderboard");
    eval->add_option("--density", ea.density, "traffic density");
    eval->add_option("--conditions", ea.conditions, "comma list of conditions");
    eval->add_flag("--corrupted-masks", ea.corrupted_masks, "feed corrupted masks to SM/HM");

    CorruptArgs cra;
    CLI::App* corrupt = app.add_subcommand("corrupt-masks", "add corrupted masks to a dataset");
    corrupt->add_option("--data", cra.data, "dataset directory")->required();
    corrupt->add_option("--seed", cra.seed, "corruption seed");

    VisArgs va;
    CLI::App* vis = app.add_subcommand("visualize", "export attention overlays as PPM images");
    vis->add_option("--checkpoint", va.checkpoint, "model checkpoint")->required();
    vis->add_option("--town", va.town, "town fixture JSON")->required();
    vis->add_option("--out-dir", va.out, "output directory")->required();
    vis->add_option("--condition", va.condition, "rendering condition");
    vis->add_option("--density", va.density, "traffic density");
    vis->add_option("--variant", va.variant, "none | sm | hm");
    vis->add_option("--seed", va.seed, "scenario seed");
    vis->add_option("--warmup-steps", va.warmup_steps, "expert steps before the snapshot");
    vis->add_flag("--corrupted-masks", va.corrupted_masks, "corrupt the input masks");

    ReproArgs ra;
    CLI::App* repro = app.add_subcommand("repro", "run composed experiments / verify manifests");
    repro->add_option("target", ra.target, "fig3 (low-data grid) or fig4 (lambda sweep)");
    repro->add_option("--out", ra.out, "output directory");
    repro->add_option("--verify", ra.verify_dir, "verify manifests under this directory");
    repro->add_option("--train-town", ra.train_town, "collection town fixture");
    repro->add_option("--eval-town", ra.eval_town, "evaluation town fixture");
    repro->add_option("--routes-file", ra.routes_file, "evaluation routes JSON");
    repro->add_option("--budgets", ra.budgets, "comma list of step budgets (fig3)");
    repro->add_option("--epochs", ra.epochs, "comma list of epochs per budget");
    repro->add_option("--lambdas", ra.lambdas, "comma list of lambda_att values (fig3)");
    repro->add_option("--grid", ra.grid, "comma list of lambda_att values (fig4)");
    repro->add_option("--budget", ra.budget, "subset size in steps (fig4)");
    repro->add_option("--pool-busy", ra.pool_busy, "busy episodes in the pool");
    repro->add_option("--pool-empty", ra.pool_empty, "empty episodes in the pool");
    repro->add_option("--episode-steps", ra.episode_steps, "steps per pool episode");
    repro->add_option("--eval-seeds", ra.eval_seeds, "evaluation seeds");
    repro->add_option("--lr", ra.lr, "learning rate");
    repro->add_option("--size", ra.size, "camera + model input size (square)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the error + usage hint to stderr
        return 2;
    }

    try {
        if (collect->parsed()) return cmd_collect(ca);
        if (train->parsed()) return cmd_train(ta);
        if (sweep->parsed()) return cmd_sweep(sa);
        if (eval->parsed()) return cmd_evaluate(ea);
        if (corrupt->parsed()) return cmd_corrupt(cra);
        if (vis->parsed()) return cmd_visualize(va);
        if (repro->parsed()) {
            if (ra.verify_dir.empty()) {
                if (ra.target.empty()) {
                    std::fprintf(stderr, "repro: give a target (fig3|fig4) or --verify DIR\n");
                    return 2;
                }
                if (ra.out.empty()) {
                    std::fprintf(stderr, "repro: --out is required for experiment targets\n");
                    return 2;
                }
                if (ra.train_town.empty() || ra.eval_town.empty() || ra.routes_file.empty()) {
                    std::fprintf(stderr,
                                 "repro: --train-town, --eval-town, --routes-file are required\n");
                    return 2;
                }
            }
            return cmd_repro(ra);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
