#include "agd/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "agd/core/optim.hpp"
#include "agd/mask/pipeline.hpp"
#include "agd/model/policy.hpp"

namespace agd {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "epochs",     "batch_size", "lr",        "lambda_act", "lambda_att", "lambda_s",
        "lambda_acc", "kl_epsilon", "att_layer", "variant",    "mask_source", "seed",
        "val_split",  "width",      "height",    "token_dim",  "layers",     "heads",
        "ffn_hidden", "head_hidden", "commands", "cameras",    "max_speed"};
    return keys;
}

// Per-frame training content in model-ready precision.
struct LoadedEpisode {
    PackedEpisode packed;
    std::vector<float> att_target;  // frames * N, empty when unused
};

}  // namespace

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
    for (const auto& [k, v] : kv.entries())
        if (!known_keys().count(k)) throw ConfigError("unknown training config key: " + k);

    TrainConfig c;
    c.epochs = int(kv.get_long("epochs", c.epochs));
    c.batch_size = int(kv.get_long("batch_size", c.batch_size));
    c.lr = kv.get_double("lr", c.lr);
    c.loss.lambda_act = kv.get_double("lambda_act", c.loss.lambda_act);
    c.loss.lambda_att = kv.get_double("lambda_att", c.loss.lambda_att);
    c.loss.lambda_s = kv.get_double("lambda_s", c.loss.lambda_s);
    c.loss.lambda_acc = kv.get_double("lambda_acc", c.loss.lambda_acc);
    c.loss.kl_epsilon = kv.get_double("kl_epsilon", c.loss.kl_epsilon);
    c.loss.att_layer = int(kv.get_long("att_layer", c.loss.att_layer));
    c.variant = parse_variant(kv.get_str("variant", variant_name(c.variant)));
    const std::string src = kv.get_str("mask_source", c.corrupted_masks ? "corrupted" : "clean");
    if (src == "clean")
        c.corrupted_masks = false;
    else if (src == "corrupted")
        c.corrupted_masks = true;
    else
        throw ConfigError("mask_source must be clean or corrupted, got '" + src + "'");
    c.seed = uint64_t(kv.get_long("seed", long(c.seed)));
    c.val_split = kv.get_double("val_split", c.val_split);
    c.model.width = int(kv.get_long("width", c.model.width));
    c.model.height = int(kv.get_long("height", c.model.height));
    c.model.token_dim = int(kv.get_long("token_dim", c.model.token_dim));
    c.model.layers = int(kv.get_long("layers", c.model.layers));
    c.model.heads = int(kv.get_long("heads", c.model.heads));
    c.model.ffn_hidden = int(kv.get_long("ffn_hidden", c.model.ffn_hidden));
    c.model.head_hidden = int(kv.get_long("head_hidden", c.model.head_hidden));
    c.model.commands = int(kv.get_long("commands", c.model.commands));
    c.model.cameras = int(kv.get_long("cameras", c.model.cameras));
    c.model.max_speed = kv.get_double("max_speed", c.model.max_speed);
    c.model.channels = c.variant == InputVariant::SM ? 4 : 3;
    c.validate();
    return c;
}

KvConfig TrainConfig::to_kv() const {
    KvConfig kv;
    kv.set("epochs", std::to_string(epochs));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("lr", fmt_double(lr));
    kv.set("lambda_act", fmt_double(loss.lambda_act));
    kv.set("lambda_att", fmt_double(loss.lambda_att));
    kv.set("lambda_s", fmt_double(loss.lambda_s));
    kv.set("lambda_acc", fmt_double(loss.lambda_acc));
    kv.set("kl_epsilon", fmt_double(loss.kl_epsilon));
    kv.set("att_layer", std::to_string(loss.att_layer));
    kv.set("variant", variant_name(variant));
    kv.set("mask_source", corrupted_masks ? "corrupted" : "clean");
    kv.set("seed", std::to_string(seed));
    kv.set("val_split", fmt_double(val_split));
    kv.set("width", std::to_string(model.width));
    kv.set("height", std::to_string(model.height));
    kv.set("token_dim", std::to_string(model.token_dim));
    kv.set("layers", std::to_string(model.layers));
    kv.set("heads", std::to_string(model.heads));
    kv.set("ffn_hidden", std::to_string(model.ffn_hidden));
    kv.set("head_hidden", std::to_string(model.head_hidden));
    kv.set("commands", std::to_string(model.commands));
    kv.set("cameras", std::to_string(model.cameras));
    kv.set("max_speed", fmt_double(model.max_speed));
    return kv;
}

std::string TrainLog::to_csv() const {
    std::ostringstream os;
    os << "epoch,train_action_loss,train_attention_loss,train_total_loss,val_action_loss,"
          "wall_s\n";
    os.precision(10);
    for (const auto& e : epochs)
        os << e.epoch << "," << e.train_action << "," << e.train_attention << ","
           << e.train_total << "," << e.val_action << "," << e.wall_s << "\n";
    return os.str();
}

namespace {

using Policy = DrivingPolicy<float>;

struct FrameRef {
    int ep = 0;
    int frame = 0;
};

// Fills a model batch straight from packed episode bytes (planar CHW floats,
// variant applied inline).
Policy::Batch build_batch(const std::vector<LoadedEpisode>& data,
                          const std::vector<FrameRef>& refs, size_t begin, size_t count,
                          const TrainConfig& cfg, std::vector<float>* att_target_out,
                          Tensor<float>* action_target_out) {
    static float lut[256];
    static bool lut_ready = false;
    if (!lut_ready) {
        for (int i = 0; i < 256; ++i) lut[i] = float(i) / 255.f;
        lut_ready = true;
    }

    const int B = int(count);
    const int K = cfg.model.cameras, C = cfg.model.channels;
    const int H = cfg.model.height, W = cfg.model.width;
    const int N = cfg.model.tokens();
    const size_t cam_px = size_t(H) * W;
    const bool with_mask_input = cfg.variant != InputVariant::None;
    const bool with_att_target = cfg.loss.lambda_att > 0.0;

    std::vector<float> img(size_t(B) * K * C * cam_px, 0.f);
    std::vector<float> spd(size_t(B), 0.f);
    std::vector<float> cmd(size_t(B) * cfg.model.commands, 0.f);
    std::vector<float> act(size_t(B) * 2);
    if (with_att_target) att_target_out->assign(size_t(B) * size_t(N), 0.f);

    for (int b = 0; b < B; ++b) {
        const FrameRef& r = refs[begin + size_t(b)];
        const LoadedEpisode& le = data[size_t(r.ep)];
        const PackedEpisode& p = le.packed;
        const uint8_t* rgb = &p.rgb[size_t(r.frame) * p.rgb_stride()];
        const uint8_t* msk =
            p.masks.empty() ? nullptr : &p.masks[size_t(r.frame) * p.mask_stride()];
        for (int k = 0; k < K; ++k) {
            const uint8_t* cam_rgb = rgb + size_t(k) * cam_px * 3;
            const uint8_t* cam_msk = msk ? msk + size_t(k) * cam_px : nullptr;
            float* dst = &img[(size_t(b) * K + size_t(k)) * C * cam_px];
            switch (cfg.variant) {
                case InputVariant::None:
                    for (size_t i = 0; i < cam_px; ++i) {
                        dst[i] = lut[cam_rgb[i * 3]];
                        dst[cam_px + i] = lut[cam_rgb[i * 3 + 1]];
                        dst[2 * cam_px + i] = lut[cam_rgb[i * 3 + 2]];
                    }
                    break;
                case InputVariant::SM:
                    for (size_t i = 0; i < cam_px; ++i) {
                        dst[i] = lut[cam_rgb[i * 3]];
                        dst[cam_px + i] = lut[cam_rgb[i * 3 + 1]];
                        dst[2 * cam_px + i] = lut[cam_rgb[i * 3 + 2]];
                        dst[3 * cam_px + i] = lut[cam_msk[i]];
                    }
                    break;
                case InputVariant::HM:
                    for (size_t i = 0; i < cam_px; ++i) {
                        const float m = lut[cam_msk[i]];
                        dst[i] = lut[cam_rgb[i * 3]] * m;
                        dst[cam_px + i] = lut[cam_rgb[i * 3 + 1]] * m;
                        dst[2 * cam_px + i] = lut[cam_rgb[i * 3 + 2]] * m;
                    }
                    break;
            }
        }
        spd[size_t(b)] = p.speed[size_t(r.frame)] / float(cfg.model.max_speed);
        cmd[size_t(b) * cfg.model.commands + p.command[size_t(r.frame)]] = 1.f;
        act[size_t(b) * 2] = p.action[size_t(r.frame) * 2];
        act[size_t(b) * 2 + 1] = p.action[size_t(r.frame) * 2 + 1];
        if (with_att_target)
            std::copy(le.att_target.begin() + ptrdiff_t(size_t(r.frame) * size_t(N)),
                      le.att_target.begin() + ptrdiff_t((size_t(r.frame) + 1) * size_t(N)),
                      att_target_out->begin() + ptrdiff_t(size_t(b) * size_t(N)));
    }

    Policy::Batch bt;
    bt.images = Tensor<float>::from({B * K, C, H, W}, std::move(img));
    bt.speed = Tensor<float>::from({B, 1}, std::move(spd));
    bt.command = Tensor<float>::from({B, cfg.model.commands}, std::move(cmd));
    bt.size = B;
    (void)with_mask_input;
    *action_target_out = Tensor<float>::from({B, 2}, std::move(act));
    return bt;
}

double weighted_val_action_loss(const Policy& policy, const std::vector<LoadedEpisode>& data,
                                const std::vector<FrameRef>& refs, const TrainConfig& cfg) {
    NoGrad ng;
    double sum = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < refs.size(); i += size_t(cfg.batch_size)) {
        const size_t cnt = std::min(size_t(cfg.batch_size), refs.size() - i);
        std::vector<float> att_unused;
        Tensor<float> target;
        Policy::Batch bt = build_batch(data, refs, i, cnt, cfg, &att_unused, &target);
        ForwardResult<float> r = policy.forward(bt);
        Tensor<float> act = action_loss(r.actions_raw, target, cfg.loss);
        sum += double(act.values()[0]) * double(cnt);
        n += cnt;
    }
    return n ? sum / double(n) : 0.0;
}

}  // namespace

TrainResult train(const DatasetView& data, const TrainConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    if (data.episodes.empty()) throw ConfigError("train: dataset view is empty");

    // Mask availability is a configuration property; fail before any work.
    if (cfg.needs_masks()) {
        for (const auto& e : data.episodes) {
            if (cfg.corrupted_masks && !e.has_corrupted)
                throw ConfigError("train: corrupted masks requested but episode " + e.dir +
                                  " has none (run the corruption pass first)");
            if (!cfg.corrupted_masks && !fs::exists(data.root / e.dir / "f000000_c0_mask.pgm"))
                throw ConfigError("train: attention guidance needs masks but episode " + e.dir +
                                  " has none");
        }
    }

    fs::create_directories(out_dir);

    // ---- load ------------------------------------------------------------
    const int N = cfg.model.tokens();
    const int gw = cfg.model.grid_w(), gh = cfg.model.grid_h();
    std::vector<LoadedEpisode> loaded;
    loaded.reserve(data.episodes.size());
    for (size_t i = 0; i < data.episodes.size(); ++i) {
        LoadedEpisode le;
        le.packed = load_packed_episode(data.episode_path(i), cfg.needs_masks(),
                                        cfg.corrupted_masks);
        const PackedEpisode& p = le.packed;
        if (p.cameras != cfg.model.cameras || p.width != cfg.model.width ||
            p.height != cfg.model.height)
            throw ConfigError("train: episode " + data.episodes[i].dir +
                              " geometry does not match the model config");
        if (cfg.loss.lambda_att > 0.0) {
            le.att_target.resize(size_t(p.frames) * size_t(N));
            const size_t cam_px = size_t(p.width) * p.height;
            std::vector<AttentionMask> masks(size_t(p.cameras), AttentionMask{});
            for (auto& m : masks) {
                m.width = p.width;
                m.height = p.height;
                m.v.resize(cam_px);
            }
            for (int t = 0; t < p.frames; ++t) {
                const uint8_t* src = &p.masks[size_t(t) * p.mask_stride()];
                for (int k = 0; k < p.cameras; ++k)
                    for (size_t j = 0; j < cam_px; ++j)
                        masks[size_t(k)].v[j] = float(src[size_t(k) * cam_px + j]) / 255.f;
                const std::vector<double> dist = to_distribution(masks, gw, gh);
                for (int j = 0; j < N; ++j)
                    le.att_target[size_t(t) * size_t(N) + size_t(j)] = float(dist[size_t(j)]);
            }
            if (cfg.variant == InputVariant::None) {
                le.packed.masks.clear();
                le.packed.masks.shrink_to_fit();
            }
        }
        loaded.push_back(std::move(le));
    }

    // ---- split -----------------------------------------------------------
    std::vector<FrameRef> train_refs, val_refs;
    {
        std::mt19937_64 split_rng(cfg.seed ^ 0x5EEDF00D5EEDF00DULL);
        const int E = int(loaded.size());
        if (E >= 2) {
            std::vector<int> order(size_t(E), 0);
            for (int i = 0; i < E; ++i) order[size_t(i)] = i;
            std::shuffle(order.begin(), order.end(), split_rng);
            int n_val = int(std::lround(cfg.val_split * double(E)));
            n_val = std::max(1, std::min(E - 1, n_val));
            std::vector<bool> is_val(size_t(E), false);
            for (int i = 0; i < n_val; ++i) is_val[size_t(order[size_t(i)])] = true;
            for (int e = 0; e < E; ++e)
                for (int t = 0; t < loaded[size_t(e)].packed.frames; ++t)
                    (is_val[size_t(e)] ? val_refs : train_refs).push_back({e, t});
        } else {
            // Single episode: episode-level disjointness is vacuous; carve
            // frames instead so tiny fixtures still have a validation set.
            const int F = loaded[0].packed.frames;
            std::vector<int> order(size_t(F), 0);
            for (int i = 0; i < F; ++i) order[size_t(i)] = i;
            std::shuffle(order.begin(), order.end(), split_rng);
            int n_val = int(std::lround(cfg.val_split * double(F)));
            n_val = std::max(1, std::min(F - 1, n_val));
            for (int i = 0; i < F; ++i)
                (i < n_val ? val_refs : train_refs).push_back({0, order[size_t(i)]});
            std::sort(val_refs.begin(), val_refs.end(),
                      [](const FrameRef& a, const FrameRef& b) { return a.frame < b.frame; });
            std::sort(train_refs.begin(), train_refs.end(),
                      [](const FrameRef& a, const FrameRef& b) { return a.frame < b.frame; });
        }
    }
    if (train_refs.empty()) throw ConfigError("train: no training frames after the split");

    // ---- optimize --------------------------------------------------------
    Policy policy(cfg.model, cfg.seed);
    AdamConfig ac;
    ac.lr = cfg.lr;
    Adam<float> opt(policy.params(), ac);
    const int att_layer =
        cfg.loss.lambda_att > 0.0 ? cfg.loss.resolve_layer(cfg.model.layers) : 0;

    TrainResult result;
    std::mt19937_64 rng(cfg.seed);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(train_refs.begin(), train_refs.end(), rng);

        double sum_act = 0.0, sum_att = 0.0, sum_tot = 0.0;
        size_t n_seen = 0;
        for (size_t i = 0; i < train_refs.size(); i += size_t(cfg.batch_size)) {
            const size_t cnt = std::min(size_t(cfg.batch_size), train_refs.size() - i);
            std::vector<float> att_target;
            Tensor<float> action_target;
            Policy::Batch bt =
                build_batch(loaded, train_refs, i, cnt, cfg, &att_target, &action_target);

            ForwardResult<float> r = policy.forward(bt);
            Tensor<float> act = action_loss(r.actions_raw, action_target, cfg.loss);
            Tensor<float> att;
            if (cfg.loss.lambda_att > 0.0) {
                Tensor<float> abar = policy.average_attention(r, att_layer);
                Tensor<float> m =
                    Tensor<float>::from({int(cnt), N}, std::move(att_target));
                att = attention_loss(m, abar, cfg.loss.kl_epsilon);
            } else {
                att = Tensor<float>::zeros(act.shape());
            }
            Tensor<float> total = total_loss(act, att, cfg.loss);

            const double av = double(act.values()[0]);
            const double tv = double(att.values()[0]);
            const double want = cfg.loss.lambda_act * av + cfg.loss.lambda_att * tv;
            const double got = double(total.values()[0]);
            if (std::abs(got - want) > 1e-6 * std::max(1.0, std::abs(want)))
                throw std::runtime_error("train: loss accounting drift (" + fmt_double(got) +
                                         " vs " + fmt_double(want) + ")");

            policy.params().zero_grad();
            total.backward();
            opt.step();

            sum_act += av * double(cnt);
            sum_att += tv * double(cnt);
            sum_tot += got * double(cnt);
            n_seen += cnt;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_action = sum_act / double(n_seen);
        rec.train_attention = sum_att / double(n_seen);
        rec.train_total = sum_tot / double(n_seen);
        rec.val_action = weighted_val_action_loss(policy, loaded, val_refs, cfg);

        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
        json meta;
        meta["epoch"] = epoch;
        meta["val_action"] = rec.val_action;
        policy.save(out_dir / name, meta);

        rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(rec);
        if (epoch == 1 || rec.val_action < result.best_val_action) {
            result.best_val_action = rec.val_action;
            result.best_epoch = epoch;
        }
    }

    char best_name[32];
    std::snprintf(best_name, sizeof(best_name), "epoch_%03d.ckpt", result.best_epoch);
    result.best_checkpoint = out_dir / "best.ckpt";
    fs::copy_file(out_dir / best_name, result.best_checkpoint,
                  fs::copy_options::overwrite_existing);

    std::ofstream csv(out_dir / "train_log.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (out_dir / "train_log.csv").string());
    csv << result.log.to_csv();
    return result;
}

}  // namespace agd
