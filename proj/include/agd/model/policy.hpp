#pragma once

// The driving policy: a shared-weight strided conv encoder turns K camera
// images into K*w*h tokens; speed and command are linearly projected and
// broadcast-added to every token (keeping N fixed so attention and mask
// distributions share a length); a pre-LN transformer encoder runs L layers
// of multi-head self-attention + FFN; a global-average-pool head regresses
// steering and acceleration. Per-layer attention maps stay in the autodiff
// graph so a loss can be attached to them.

#include <cmath>
#include <string>
#include <vector>

#include "agd/core/checkpoint.hpp"
#include "agd/core/params.hpp"
#include "agd/core/tensor.hpp"
#include "agd/model/config.hpp"
#include "agd/types.hpp"

namespace agd {

template <typename T>
struct ForwardResult {
    Tensor<T> encoder_out;               // (B, N, c)
    Tensor<T> actions_raw;               // (B, 2) unclipped
    std::vector<Tensor<T>> attention;    // one per layer: (B, heads, N, N)
};

template <typename T>
class DrivingPolicy {
public:
    explicit DrivingPolicy(ModelConfig cfg, uint64_t init_seed = 1) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng(init_seed);
        const int c = cfg_.token_dim;

        auto lin = [&](const std::string& name, int in, int out) {
            auto& w = params_.add(name + ".w", Tensor<T>::zeros({in, out}));
            init_uniform(w, rng, 1.0 / std::sqrt(double(in)));
            params_.add(name + ".b", Tensor<T>::zeros({out}));
        };
        auto conv = [&](const std::string& name, int cout, int cin) {
            auto& w = params_.add(name + ".w", Tensor<T>::zeros({cout, cin, 3, 3}));
            init_uniform(w, rng, 1.0 / std::sqrt(double(cin) * 9.0));
            params_.add(name + ".b", Tensor<T>::zeros({cout}));
        };

        conv("enc.conv1", 16, cfg_.channels);
        conv("enc.conv2", 32, 16);
        conv("enc.conv3", c, 32);
        lin("enc.speed", 1, c);
        lin("enc.cmd", cfg_.commands, c);
        auto& pos = params_.add("enc.pos", Tensor<T>::zeros({cfg_.tokens(), c}));
        init_uniform(pos, rng, 0.02);

        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string p = "tf.l" + std::to_string(l);
            params_.add(p + ".ln1.g", Tensor<T>::full({c}, T(1)));
            params_.add(p + ".ln1.b", Tensor<T>::zeros({c}));
            lin(p + ".attn.q", c, c);
            lin(p + ".attn.k", c, c);
            lin(p + ".attn.v", c, c);
            lin(p + ".attn.o", c, c);
            params_.add(p + ".ln2.g", Tensor<T>::full({c}, T(1)));
            params_.add(p + ".ln2.b", Tensor<T>::zeros({c}));
            lin(p + ".ffn.1", c, cfg_.ffn_hidden);
            lin(p + ".ffn.2", cfg_.ffn_hidden, c);
        }
        lin("head.fc1", c, cfg_.head_hidden);
        lin("head.fc2", cfg_.head_hidden, 2);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // -- batching ----------------------------------------------------------

    struct Batch {
        Tensor<T> images;   // (B*K, channels, H, W)
        Tensor<T> speed;    // (B, 1)
        Tensor<T> command;  // (B, M)
        int size = 0;
    };

    Batch make_batch(const std::vector<Observation>& obs) const {
        if (obs.empty()) throw ConfigError("make_batch: empty batch");
        const int B = int(obs.size());
        const int K = cfg_.cameras, C = cfg_.channels, H = cfg_.height, W = cfg_.width;
        const size_t per_obs = size_t(K) * C * H * W;
        std::vector<T> img(size_t(B) * per_obs, T(0));
        std::vector<T> spd(size_t(B), T(0));
        std::vector<T> cmd(size_t(B) * cfg_.commands, T(0));
        for (int b = 0; b < B; ++b) {
            const auto& o = obs[size_t(b)];
            if (o.cameras != K || o.channels != C || o.width != W || o.height != H)
                throw ConfigError("make_batch: observation does not match model config");
            if (int(o.command.size()) != cfg_.commands)
                throw ConfigError("make_batch: command length mismatch");
            o.validate();
            for (size_t i = 0; i < per_obs; ++i) img[size_t(b) * per_obs + i] = T(o.images[i]);
            spd[size_t(b)] = T(o.speed_norm);
            for (int m = 0; m < cfg_.commands; ++m)
                cmd[size_t(b) * cfg_.commands + m] = T(o.command[size_t(m)]);
        }
        Batch bt;
        bt.images = Tensor<T>::from({B * K, C, H, W}, std::move(img));
        bt.speed = Tensor<T>::from({B, 1}, std::move(spd));
        bt.command = Tensor<T>::from({B, cfg_.commands}, std::move(cmd));
        bt.size = B;
        return bt;
    }

    // -- encoder -----------------------------------------------------------

    // (B*K, C, H, W) images + (B,1) speed + (B,M) command -> (B, N, c) tokens
    Tensor<T> encode_views(const Tensor<T>& images, const Tensor<T>& speed,
                           const Tensor<T>& command) const {
        const int c = cfg_.token_dim, K = cfg_.cameras;
        const int BK = images.dim(0);
        if (BK % K != 0) throw ConfigError("encode_views: image count not a multiple of K");
        const int B = BK / K;
        if (speed.dim(0) != B || command.dim(0) != B)
            throw ConfigError("encode_views: speed/command batch mismatch");

        Tensor<T> x = images;
        x = relu(conv2d(x, params_.get("enc.conv1.w"), params_.get("enc.conv1.b"), 2, 1));
        x = relu(conv2d(x, params_.get("enc.conv2.w"), params_.get("enc.conv2.b"), 2, 1));
        x = relu(conv2d(x, params_.get("enc.conv3.w"), params_.get("enc.conv3.b"), 2, 1));
        const int gh = x.dim(2), gw = x.dim(3);
        // (B*K, c, gh, gw) -> (B*K, gh*gw, c) -> (B, K*gh*gw, c); token order is
        // camera-major then row-major, matching the mask flattening.
        x = reshape(x, {BK, c, gh * gw});
        x = transpose(x, {0, 2, 1});
        x = reshape(x, {B, K * gh * gw, c});

        Tensor<T> s = linear(speed, params_.get("enc.speed.w"), params_.get("enc.speed.b"));
        Tensor<T> m = linear(command, params_.get("enc.cmd.w"), params_.get("enc.cmd.b"));
        x = add_bcast_axis(x, add(s, m), 1);
        x = add_bcast(x, params_.get("enc.pos"));
        return x;
    }

    // -- transformer -------------------------------------------------------

    // tokens (B, N, c) -> (encoder output (B, N, c), per-layer attention)
    std::pair<Tensor<T>, std::vector<Tensor<T>>> run_transformer(Tensor<T> x) const {
        const int B = x.dim(0), N = x.dim(1), c = x.dim(2);
        if (c != cfg_.token_dim) throw ConfigError("run_transformer: token dim mismatch");
        const int hd = cfg_.heads, dh = c / hd;
        std::vector<Tensor<T>> atts;
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string p = "tf.l" + std::to_string(l);
            Tensor<T> xn = layer_norm(x, params_.get(p + ".ln1.g"), params_.get(p + ".ln1.b"));
            auto heads_of = [&](const char* which) {
                Tensor<T> h = linear(xn, params_.get(p + ".attn." + std::string(which) + ".w"),
                                     params_.get(p + ".attn." + std::string(which) + ".b"));
                h = reshape(h, {B, N, hd, dh});
                return transpose(h, {0, 2, 1, 3});  // (B, hd, N, dh)
            };
            Tensor<T> q = heads_of("q"), k = heads_of("k"), v = heads_of("v");
            Tensor<T> scores = mul_scalar(matmul(q, transpose(k, {0, 1, 3, 2})),
                                          T(1.0 / std::sqrt(double(dh))));
            Tensor<T> att = softmax(scores, -1);  // (B, hd, N, N), rows sum to 1
            atts.push_back(att);
            Tensor<T> ctx = matmul(att, v);                  // (B, hd, N, dh)
            ctx = transpose(ctx, {0, 2, 1, 3});              // (B, N, hd, dh)
            ctx = reshape(ctx, {B, N, c});
            ctx = linear(ctx, params_.get(p + ".attn.o.w"), params_.get(p + ".attn.o.b"));
            x = add(x, ctx);

            Tensor<T> x2 = layer_norm(x, params_.get(p + ".ln2.g"), params_.get(p + ".ln2.b"));
            Tensor<T> f = linear(relu(linear(x2, params_.get(p + ".ffn.1.w"),
                                             params_.get(p + ".ffn.1.b"))),
                                 params_.get(p + ".ffn.2.w"), params_.get(p + ".ffn.2.b"));
            x = add(x, f);
        }
        return {x, atts};
    }

    // -- action head -------------------------------------------------------

    // encoder output (B, N, c) -> raw (B, 2): pool over tokens, 2-layer MLP
    Tensor<T> action_head(const Tensor<T>& encoder_out) const {
        Tensor<T> pooled = mean_axis(encoder_out, 1);  // (B, c)
        Tensor<T> hdn =
            relu(linear(pooled, params_.get("head.fc1.w"), params_.get("head.fc1.b")));
        return linear(hdn, params_.get("head.fc2.w"), params_.get("head.fc2.b"));
    }

    // -- full passes -------------------------------------------------------

    ForwardResult<T> forward(const Batch& batch) const {
        ForwardResult<T> r;
        Tensor<T> tokens = encode_views(batch.images, batch.speed, batch.command);
        auto [out, atts] = run_transformer(tokens);
        r.encoder_out = out;
        r.attention = std::move(atts);
        r.actions_raw = action_head(r.encoder_out);
        return r;
    }

    // Mean over heads then over query rows: (B, heads, N, N) -> (B, N).
    // `layer` is 1-based; stays differentiable.
    Tensor<T> average_attention(const ForwardResult<T>& r, int layer) const {
        if (layer < 1 || layer > int(r.attention.size()))
            throw ConfigError("average_attention: layer " + std::to_string(layer) +
                              " not captured (have " + std::to_string(r.attention.size()) + ")");
        Tensor<T> a = mean_axis(r.attention[size_t(layer - 1)], 1);  // (B, N, N)
        return mean_axis(a, 1);                                      // (B, N)
    }

    // Single-observation inference: clipped action, no tape.
    Action predict(const Observation& obs) const {
        NoGrad ng;
        auto batch = make_batch({obs});
        ForwardResult<T> r = forward(batch);
        Action a{double(r.actions_raw.values()[0]), double(r.actions_raw.values()[1])};
        return clip_action(a);
    }

    void save(const std::filesystem::path& path, const json& extra_meta = json::object()) const {
        json meta = extra_meta;
        meta["model_config"] = cfg_.to_json();
        save_checkpoint(path, params_, meta);
    }

    static DrivingPolicy load(const std::filesystem::path& path) {
        json header = read_checkpoint_header(path);
        ModelConfig cfg = ModelConfig::from_json(header.at("meta").at("model_config"));
        DrivingPolicy p(cfg, /*init_seed=*/0);
        load_checkpoint(path, p.params_);
        return p;
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
};

}  // namespace agd
