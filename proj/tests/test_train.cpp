// Training engine: config mapping, seeded determinism, mask-source
// handling, loss accounting, and small overfit runs on collected fixtures.

#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "agd/data/dataset.hpp"
#include "agd/mask/pipeline.hpp"
#include "agd/model/policy.hpp"
#include "agd/sim/render.hpp"
#include "agd/train/trainer.hpp"
#include "agd/util/hashing.hpp"

using namespace agd;
namespace fs = std::filesystem;

namespace {

std::string town_a() { return AGD_SOURCE_DIR "/assets/towns/toytown-A.json"; }

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("agd_train_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// A small dataset at 32x32 so training iterations stay cheap.
DatasetView tiny_view(const fs::path& root, int episodes, int steps,
                      const std::string& density, uint64_t seed0) {
    for (int i = 0; i < episodes; ++i) {
        CollectConfig cfg;
        cfg.town_fixture = town_a();
        cfg.density = density;
        cfg.condition = "clear-day";
        cfg.seed = seed0 + uint64_t(i);
        cfg.steps = steps;
        cfg.width = 32;
        cfg.height = 32;
        collect_to_dir(cfg, root);
    }
    Catalog cat = build_catalog(root);
    return sample_subset(cat, long(episodes) * steps, {}, 1);
}

// Model sized for the 32x32 fixtures.
ModelConfig tiny_model() {
    ModelConfig m;
    m.width = 32;
    m.height = 32;
    m.token_dim = 32;
    m.layers = 1;
    m.heads = 2;
    m.ffn_hidden = 64;
    m.head_hidden = 32;
    return m;
}

}  // namespace

TEST_CASE("train config maps to and from key=value form") {
    TrainConfig c;
    c.epochs = 7;
    c.batch_size = 12;
    c.lr = 3e-4;
    c.loss.lambda_att = 2.5;
    c.variant = InputVariant::SM;
    c.model = tiny_model();
    c.model.channels = 4;
    c.corrupted_masks = true;
    c.seed = 99;
    c.val_split = 0.25;

    TrainConfig back = TrainConfig::from_kv(c.to_kv());
    CHECK(back.epochs == 7);
    CHECK(back.batch_size == 12);
    CHECK(back.lr == doctest::Approx(3e-4));
    CHECK(back.loss.lambda_att == doctest::Approx(2.5));
    CHECK(back.variant == InputVariant::SM);
    CHECK(back.model.channels == 4);  // derived from the variant
    CHECK(back.corrupted_masks);
    CHECK(back.seed == 99);
    CHECK(back.val_split == doctest::Approx(0.25));
    CHECK(back.model.token_dim == 32);

    SUBCASE("unknown keys are rejected") {
        KvConfig kv = c.to_kv();
        kv.set("learning_rate", "0.1");  // typo for lr
        CHECK_THROWS_AS(TrainConfig::from_kv(kv), ConfigError);
    }
    SUBCASE("invalid values are rejected") {
        TrainConfig bad;
        bad.epochs = 0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = TrainConfig{};
        bad.val_split = 1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = TrainConfig{};
        bad.variant = InputVariant::SM;  // channels stays 3
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        KvConfig kv;
        kv.set("mask_source", "sometimes");
        CHECK_THROWS_AS(TrainConfig::from_kv(kv), ConfigError);
    }
}

TEST_CASE("a tiny dataset is memorized when only the action term is active") {
    const fs::path root = fresh_dir("overfit");
    DatasetView view = tiny_view(root, 1, 32, "empty", 50);

    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.loss.lambda_att = 0.0;
    cfg.epochs = 400;
    cfg.batch_size = 8;
    cfg.lr = 2e-3;
    cfg.seed = 3;
    cfg.val_split = 0.1;

    reset_mask_pipeline_invocations();
    TrainResult r = train(view, cfg, root / "run");
    REQUIRE(int(r.log.epochs.size()) == 400);
    CHECK(r.log.epochs.back().train_action < 0.02);
    CHECK(r.log.epochs.back().train_action < r.log.epochs.front().train_action);

    // Without attention guidance the mask pipeline must never run.
    CHECK(mask_pipeline_invocations() == 0);

    // The selected checkpoint is loadable and drives the inference path.
    DrivingPolicy<float> policy = DrivingPolicy<float>::load(r.best_checkpoint);
    CHECK(policy.config().width == 32);
    Episode ep = read_episode(view.episode_path(0));
    RenderOutput ro;
    ro.rgb = ep.frames[0].rgb;
    ro.sem = ep.frames[0].sem;
    ro.depth = ep.frames[0].depth;
    Observation obs = make_observation(ro, 0.25, Command::Follow);
    Action a = policy.predict(obs);
    CHECK(a.steer >= -1.0);
    CHECK(a.steer <= 1.0);
}

TEST_CASE("attention-only training drives the guidance loss toward the mask") {
    const fs::path root = fresh_dir("attention");
    DatasetView view = tiny_view(root, 1, 24, "busy", 11);

    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.loss.lambda_act = 0.0;
    cfg.loss.lambda_att = 10.0;
    cfg.epochs = 250;
    cfg.batch_size = 24;
    cfg.lr = 1e-2;
    cfg.seed = 5;
    cfg.val_split = 0.1;

    TrainResult r = train(view, cfg, root / "run");
    const double first = r.log.epochs.front().train_attention;
    const double last = r.log.epochs.back().train_attention;
    REQUIRE(first > 0.05);  // fixture guard: masks are informative, not uniform
    CHECK(last < 0.10 * first);

    SUBCASE("loss accounting holds on every logged epoch") {
        for (const auto& e : r.log.epochs) {
            const double want = cfg.loss.lambda_act * e.train_action +
                                cfg.loss.lambda_att * e.train_attention;
            CHECK(std::abs(e.train_total - want) <= 1e-6 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST_CASE("training is deterministic: same seed, same bytes") {
    const fs::path root = fresh_dir("deterministic");
    DatasetView view = tiny_view(root, 2, 12, "empty", 70);

    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 21;
    cfg.val_split = 0.5;

    TrainResult a = train(view, cfg, root / "a");
    TrainResult b = train(view, cfg, root / "b");
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(sha256_file(a.best_checkpoint) == sha256_file(b.best_checkpoint));
    CHECK(sha256_file(root / "a" / "epoch_001.ckpt") == sha256_file(root / "b" / "epoch_001.ckpt"));

    cfg.seed = 22;
    TrainResult c = train(view, cfg, root / "c");
    CHECK(sha256_file(a.best_checkpoint) != sha256_file(c.best_checkpoint));

    SUBCASE("the selected checkpoint minimizes validation action loss") {
        double best = a.log.epochs.front().val_action;
        for (const auto& e : a.log.epochs) best = std::min(best, e.val_action);
        CHECK(a.best_val_action == doctest::Approx(best));
        CHECK(fs::exists(root / "a" / "train_log.csv"));
        CHECK(fs::exists(root / "a" / "epoch_004.ckpt"));
    }
}

TEST_CASE("mask-dependent configs fail fast when masks are absent") {
    const fs::path root = fresh_dir("maskless");
    DatasetView view = tiny_view(root, 1, 8, "empty", 90);

    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.epochs = 1;
    cfg.seed = 1;

    SUBCASE("corrupted source without a corruption pass") {
        cfg.corrupted_masks = true;
        CHECK_THROWS_AS(train(view, cfg, root / "run"), ConfigError);
    }
    SUBCASE("corrupted source works after the corruption pass") {
        corrupt_episode_masks(view.episode_path(0), 4);
        Catalog cat = build_catalog(root);
        DatasetView fresh = sample_subset(cat, 8, {}, 1);
        cfg.corrupted_masks = true;
        cfg.epochs = 1;
        TrainResult r = train(fresh, cfg, root / "run2");
        CHECK(r.best_epoch == 1);
    }
}

TEST_CASE("mask-as-input variants train end-to-end") {
    const fs::path root = fresh_dir("variants");
    DatasetView view = tiny_view(root, 1, 16, "busy", 33);

    for (InputVariant v : {InputVariant::SM, InputVariant::HM}) {
        CAPTURE(variant_name(v));
        TrainConfig cfg;
        cfg.model = tiny_model();
        cfg.model.channels = v == InputVariant::SM ? 4 : 3;
        cfg.variant = v;
        cfg.loss.lambda_att = 0.0;
        cfg.epochs = 30;
        cfg.batch_size = 16;
        cfg.lr = 1e-2;
        cfg.seed = 2;
        TrainResult r = train(view, cfg, root / variant_name(v));
        CHECK(r.log.epochs.back().train_action < r.log.epochs.front().train_action);
    }
}
