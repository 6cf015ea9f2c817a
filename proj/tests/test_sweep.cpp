// Attention-weight sweep: one training + closed-loop evaluation per grid
// value, provenance-stamped CSV rows, degenerate-grid equivalence.

#include <filesystem>
#include <string>

#include <doctest.h>

#include "agd/train/sweep.hpp"

using namespace agd;
namespace fs = std::filesystem;

namespace {

std::string asset(const std::string& rel) { return std::string(AGD_SOURCE_DIR "/assets/") + rel; }

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("agd_sweep_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DatasetView tiny_view(const fs::path& root) {
    for (int i = 0; i < 2; ++i) {
        CollectConfig cfg;
        cfg.town_fixture = asset("towns/toytown-A.json");
        cfg.density = "empty";
        cfg.condition = "clear-day";
        cfg.seed = 400 + uint64_t(i);
        cfg.steps = 60;
        cfg.width = 32;
        cfg.height = 32;
        collect_to_dir(cfg, root);
    }
    return sample_subset(build_catalog(root), 120, {}, 1);
}

TrainConfig tiny_train() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.lr = 1e-3;
    cfg.model.width = 32;
    cfg.model.height = 32;
    cfg.model.token_dim = 16;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.model.ffn_hidden = 32;
    cfg.model.head_hidden = 16;
    cfg.seed = 5;
    cfg.val_split = 0.5;  // 2 episodes -> 1 train / 1 val
    return cfg;
}

SweepEvalSpec tiny_espec() {
    SweepEvalSpec es;
    es.town = TownMap::load(asset("towns/toytown-A.json"));
    for (const RouteSpec& r : load_routes(asset("routes/toytown-A.json")))
        if (r.id == "a0") es.routes.push_back(r);
    es.conditions = {"clear-day"};
    es.seeds = 1;
    es.base_seed = 3;
    es.eval.blocked_after_s = 4.0;  // barely-trained models stall; keep rollouts short
    return es;
}

}  // namespace

TEST_CASE("sweep trains and evaluates one model per grid value with provenance") {
    fs::path root = fresh_dir("grid");
    DatasetView view = tiny_view(root / "data");
    fs::path out = root / "sweep";

    SweepTable tab = sweep_lambda_att(view, tiny_train(), {0.0, 10.0}, tiny_espec(), out);
    REQUIRE(tab.rows.size() == 2);
    CHECK(tab.rows[0].lambda_att == 0.0);
    CHECK(tab.rows[1].lambda_att == 10.0);
    for (const SweepRow& r : tab.rows) {
        CHECK(r.dataset_hash == view.catalog_hash);
        CHECK(r.dataset_hash.size() == 64);  // hex sha256
        CHECK(r.best_epoch >= 1);
        CHECK(r.rc_mean >= 0.0);
        CHECK(r.is_mean > 0.0);
        CHECK(r.is_mean <= 1.0);
    }
    // the two trainings genuinely differ (guidance weight changes the loss)
    CHECK(tab.rows[0].best_val_action != tab.rows[1].best_val_action);

    // per-value artifacts and the top-level table
    for (const char* d : {"lambda_0", "lambda_10"}) {
        CHECK(fs::exists(out / d / "best.ckpt"));
        CHECK(fs::exists(out / d / "train_log.csv"));
        CHECK(fs::exists(out / d / "report.csv"));
        CHECK(fs::exists(out / d / "report.json"));
    }
    REQUIRE(fs::exists(out / "sweep.csv"));
    std::string csv = tab.to_csv();
    CHECK(csv.rfind("lambda_att,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows

    // degenerate single-value grid reproduces the matching row exactly
    SweepTable base = sweep_lambda_att(view, tiny_train(), {0.0}, tiny_espec(), root / "base");
    REQUIRE(base.rows.size() == 1);
    CHECK(base.rows[0].best_val_action == tab.rows[0].best_val_action);
    CHECK(base.rows[0].best_epoch == tab.rows[0].best_epoch);
    CHECK(base.rows[0].sr_mean == tab.rows[0].sr_mean);
    CHECK(base.rows[0].rc_mean == tab.rows[0].rc_mean);
    CHECK(base.rows[0].is_mean == tab.rows[0].is_mean);
    CHECK(base.rows[0].ds_mean == tab.rows[0].ds_mean);

    CHECK_THROWS_AS(sweep_lambda_att(view, tiny_train(), {}, tiny_espec(), root / "x"),
                    ConfigError);
    fs::remove_all(root);
}
