#include "agd/exp/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "agd/model/policy.hpp"
#include "agd/util/hashing.hpp"
#include "agd/util/manifest.hpp"

namespace agd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using clock_t_ = std::chrono::steady_clock;

namespace {

double secs_since(clock_t_::time_point t0) {
    return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
}

std::string cell_dir_name(long budget, double lambda) {
    std::ostringstream os;
    os << "b" << budget << "_l" << lambda;
    return os.str();
}

ojson kv_to_json(const KvConfig& kv) {
    ojson j = ojson::object();
    for (const auto& [k, v] : kv.entries()) j[k] = v;
    return j;
}

ojson lowdata_config_json(const LowDataConfig& c) {
    ojson j;
    j["train_town_fixture"] = c.train_town_fixture;
    j["pool_busy"] = c.pool_busy;
    j["pool_empty"] = c.pool_empty;
    j["episode_steps"] = c.episode_steps;
    j["collect_conditions"] = c.collect_conditions;
    j["collect_seed"] = c.collect_seed;
    j["width"] = c.width;
    j["height"] = c.height;
    j["budgets"] = c.budgets;
    j["epochs"] = c.epochs;
    j["lambdas"] = c.lambdas;
    j["lr"] = c.lr;
    j["batch_size"] = c.batch_size;
    j["val_split"] = c.val_split;
    j["train_seed"] = c.train_seed;
    j["subset_seed"] = c.subset_seed;
    j["eval_town_fixture"] = c.eval_town_fixture;
    j["eval_routes_file"] = c.eval_routes_file;
    j["eval_conditions"] = c.eval_conditions;
    j["eval_seeds"] = c.eval_seeds;
    j["eval_base_seed"] = c.eval_base_seed;
    return j;
}

// Collects the pool if the directory does not already hold exactly the
// expected episodes; returns its catalog.
Catalog ensure_pool(const LowDataConfig& cfg, const fs::path& data_dir) {
    const size_t want = size_t(cfg.pool_busy + cfg.pool_empty);
    if (fs::is_directory(data_dir)) {
        try {
            Catalog cat = build_catalog(data_dir);
            if (cat.episodes.size() == want &&
                cat.total_steps() == long(want) * cfg.episode_steps)
                return cat;
        } catch (const std::exception&) {
            // fall through to a fresh collection
        }
        fs::remove_all(data_dir);
    }
    fs::create_directories(data_dir);
    const auto t0 = clock_t_::now();
    for (int i = 0; i < int(want); ++i) {
        CollectConfig cc;
        cc.town_fixture = cfg.train_town_fixture;
        cc.density = i < cfg.pool_busy ? "busy" : "empty";
        cc.condition = cfg.collect_conditions[size_t(i) % cfg.collect_conditions.size()];
        cc.seed = cfg.collect_seed + uint64_t(i);
        cc.steps = cfg.episode_steps;
        cc.width = cfg.width;
        cc.height = cfg.height;
        collect_to_dir(cc, data_dir);
        std::printf("[lowdata] collected episode %d/%zu (%s, %s) %.0f s\n", i + 1, want,
                    cc.density.c_str(), cc.condition.c_str(), secs_since(t0));
        std::fflush(stdout);
    }
    Catalog cat = build_catalog(data_dir);

    ExperimentManifest pm;
    pm.command = "collect-pool";
    pm.config = lowdata_config_json(cfg);
    pm.input_hashes["train_town_fixture"] = sha256_file(cfg.train_town_fixture);
    pm.wall_s = secs_since(t0);
    write_manifest(data_dir, pm);
    return cat;
}

}  // namespace

void LowDataConfig::validate() const {
    if (budgets.empty() || lambdas.empty()) throw ConfigError("lowdata: empty grid");
    if (budgets.size() != epochs.size())
        throw ConfigError("lowdata: epochs list must align with budgets");
    if (collect_conditions.empty()) throw ConfigError("lowdata: no collection conditions");
    if (pool_busy < 0 || pool_empty < 0 || pool_busy + pool_empty < 1)
        throw ConfigError("lowdata: pool must hold at least one episode");
    const long pool_steps = long(pool_busy + pool_empty) * episode_steps;
    for (long b : budgets)
        if (b > pool_steps)
            throw ConfigError("lowdata: budget " + std::to_string(b) +
                              " exceeds the pool (" + std::to_string(pool_steps) + " steps)");
    if (model.width != width || model.height != height)
        throw ConfigError("lowdata: model input size must match collection size");
    if (train_town_fixture.empty() || eval_town_fixture.empty() || eval_routes_file.empty())
        throw ConfigError("lowdata: town/route fixtures must be set");
}

std::string LowDataResult::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "budget_steps,lambda_att,best_epoch,best_val_action,sr_mean,sr_std,rc_mean,rc_std,"
          "is_mean,is_std,ds_mean,ds_std,dataset_hash\n";
    for (const LowDataCell& c : cells) {
        os << c.budget << "," << c.lambda_att << "," << c.best_epoch << ","
           << c.best_val_action << "," << c.sr_mean << "," << c.sr_std << "," << c.rc_mean
           << "," << c.rc_std << "," << c.is_mean << "," << c.is_std << "," << c.ds_mean
           << "," << c.ds_std << "," << c.dataset_hash << "\n";
    }
    return os.str();
}

const LowDataCell& LowDataResult::cell(long budget, double lambda) const {
    for (const LowDataCell& c : cells)
        if (c.budget == budget && c.lambda_att == lambda) return c;
    throw ConfigError("lowdata: no cell for budget " + std::to_string(budget));
}

LowDataResult run_lowdata(const LowDataConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const auto t0 = clock_t_::now();
    fs::create_directories(out_dir);
    Catalog pool = ensure_pool(cfg, out_dir / "data");

    TownMap eval_town = TownMap::load(cfg.eval_town_fixture);
    std::string routes_town;
    std::vector<RouteSpec> routes = load_routes(cfg.eval_routes_file, &routes_town);
    if (!routes_town.empty() && routes_town != eval_town.name)
        throw ConfigError("lowdata: routes file is for town '" + routes_town + "', not '" +
                          eval_town.name + "'");

    LowDataResult out;
    out.pool_hash = sha256_hex(catalog_canonical_text(pool));
    for (size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
        const long budget = cfg.budgets[bi];
        DatasetView view = sample_subset(pool, budget, {}, cfg.subset_seed);
        for (double lambda : cfg.lambdas) {
            const fs::path cell_dir = out_dir / cell_dir_name(budget, lambda);
            TrainConfig tc;
            tc.epochs = cfg.epochs[bi];
            tc.batch_size = cfg.batch_size;
            tc.lr = cfg.lr;
            tc.loss.lambda_att = lambda;
            tc.model = cfg.model;
            tc.seed = cfg.train_seed;
            tc.val_split = cfg.val_split;

            std::printf("[lowdata] training budget=%ld lambda=%g (%d epochs)\n", budget,
                        lambda, tc.epochs);
            std::fflush(stdout);
            const auto tt = clock_t_::now();
            TrainResult tr = train(view, tc, cell_dir);
            const double train_wall = secs_since(tt);

            DrivingPolicy<float> policy = DrivingPolicy<float>::load(tr.best_checkpoint);
            EvalConfig ec = cfg.eval;
            ec.variant = InputVariant::None;
            ec.render_width = cfg.model.width;
            ec.render_height = cfg.model.height;
            const auto te = clock_t_::now();
            EvalReport rep = evaluate(&policy, eval_town, routes, cfg.eval_seeds,
                                      cfg.eval_base_seed, cfg.eval_conditions, ec);
            const double eval_wall = secs_since(te);
            write_text(cell_dir / "report.csv", rep.to_csv());
            write_text(cell_dir / "report.json", rep.to_json().dump(2) + "\n");

            LowDataCell c;
            c.budget = budget;
            c.lambda_att = lambda;
            c.best_epoch = tr.best_epoch;
            c.best_val_action = tr.best_val_action;
            c.sr_mean = rep.aggregate.sr_mean;
            c.sr_std = rep.aggregate.sr_std;
            c.rc_mean = rep.aggregate.rc_mean;
            c.rc_std = rep.aggregate.rc_std;
            c.is_mean = rep.aggregate.is_mean;
            c.is_std = rep.aggregate.is_std;
            c.ds_mean = rep.aggregate.ds_mean;
            c.ds_std = rep.aggregate.ds_std;
            c.dataset_hash = view.catalog_hash;
            c.train_wall_s = train_wall;
            c.eval_wall_s = eval_wall;
            out.cells.push_back(c);
            std::printf("[lowdata] budget=%ld lambda=%g: SR %.1f±%.1f RC %.1f IS %.3f DS %.1f "
                        "(train %.0f s, eval %.0f s)\n",
                        budget, lambda, c.sr_mean, c.sr_std, c.rc_mean, c.is_mean, c.ds_mean,
                        train_wall, eval_wall);
            std::fflush(stdout);

            ExperimentManifest cm;
            cm.command = "lowdata-cell";
            cm.config = kv_to_json(tc.to_kv());
            cm.config["budget_steps"] = budget;
            cm.input_hashes["dataset_subset"] = view.catalog_hash;
            cm.input_hashes["eval_town_fixture"] = sha256_file(cfg.eval_town_fixture);
            cm.input_hashes["eval_routes_file"] = sha256_file(cfg.eval_routes_file);
            cm.unhashed = {"train_log.csv"};
            cm.wall_s = train_wall + eval_wall;
            write_manifest(cell_dir, cm);
        }
    }
    write_text(out_dir / "lowdata.csv", out.to_csv());

    ExperimentManifest m;
    m.command = "repro-lowdata";
    m.config = lowdata_config_json(cfg);
    m.input_hashes["train_town_fixture"] = sha256_file(cfg.train_town_fixture);
    m.input_hashes["eval_town_fixture"] = sha256_file(cfg.eval_town_fixture);
    m.input_hashes["eval_routes_file"] = sha256_file(cfg.eval_routes_file);
    m.unhashed = {"train_log.csv"};
    m.wall_s = secs_since(t0);
    write_manifest(out_dir, m);
    return out;
}

SweepTable run_sweep_repro(const SweepReproConfig& cfg, const fs::path& out_dir) {
    cfg.base.validate();
    if (cfg.grid.empty()) throw ConfigError("sweep repro: empty grid");
    const auto t0 = clock_t_::now();
    fs::create_directories(out_dir);
    Catalog pool = ensure_pool(cfg.base, out_dir / "data");
    DatasetView view = sample_subset(pool, cfg.budget, {}, cfg.base.subset_seed);

    TrainConfig tc;
    tc.epochs = cfg.base.epochs.front();
    tc.batch_size = cfg.base.batch_size;
    tc.lr = cfg.base.lr;
    tc.model = cfg.base.model;
    tc.seed = cfg.base.train_seed;
    tc.val_split = cfg.base.val_split;

    SweepEvalSpec es;
    es.town = TownMap::load(cfg.base.eval_town_fixture);
    es.routes = load_routes(cfg.base.eval_routes_file);
    es.conditions = cfg.base.eval_conditions;
    es.seeds = cfg.base.eval_seeds;
    es.base_seed = cfg.base.eval_base_seed;
    es.eval = cfg.base.eval;

    SweepTable tab = sweep_lambda_att(view, tc, cfg.grid, es, out_dir);

    ExperimentManifest m;
    m.command = "repro-sweep";
    m.config = lowdata_config_json(cfg.base);
    m.config["budget_steps"] = cfg.budget;
    m.config["grid"] = cfg.grid;
    m.input_hashes["train_town_fixture"] = sha256_file(cfg.base.train_town_fixture);
    m.input_hashes["eval_town_fixture"] = sha256_file(cfg.base.eval_town_fixture);
    m.input_hashes["eval_routes_file"] = sha256_file(cfg.base.eval_routes_file);
    m.unhashed = {"train_log.csv"};
    m.wall_s = secs_since(t0);
    write_manifest(out_dir, m);
    return tab;
}

}  // namespace agd
