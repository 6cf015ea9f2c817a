#pragma once

// Architecture hyperparameters. The token grid (w, h) is derived from the
// input resolution through the three stride-2 conv stages, so N = K*w*h is
// always consistent with what the encoder actually emits.

#include <string>

#include <json.hpp>

#include "agd/core/tensor.hpp"
#include "agd/types.hpp"

namespace agd {

struct ModelConfig {
    int cameras = 3;      // K
    int width = 64;       // W (pixels)
    int height = 64;      // H (pixels)
    int channels = 3;     // 3, or 4 with the mask-as-channel input variant
    int token_dim = 64;   // c == transformer hidden size D
    int layers = 2;       // L
    int heads = 4;        // attention heads per layer
    int ffn_hidden = 128; // FFN inner width
    int commands = 4;     // M
    int head_hidden = 64; // action-head FC width
    double max_speed = 8.0;  // m/s; divides raw speed into the normalized input

    static int conv_spatial(int pixels) {
        int d = pixels;
        for (int s = 0; s < 3; ++s) d = conv_out_dim(d, 3, 2, 1);
        return d;
    }
    int grid_w() const { return conv_spatial(width); }
    int grid_h() const { return conv_spatial(height); }
    int tokens() const { return cameras * grid_w() * grid_h(); }  // N

    void validate() const {
        if (cameras < 1) throw ConfigError("cameras must be >= 1");
        if (channels != 3 && channels != 4) throw ConfigError("channels must be 3 or 4");
        if (layers < 1) throw ConfigError("layers must be >= 1");
        if (heads < 1 || token_dim % heads != 0)
            throw ConfigError("heads must divide token_dim");
        if (grid_w() < 1 || grid_h() < 1) throw ConfigError("input too small for conv stack");
        if (commands < 1) throw ConfigError("commands must be >= 1");
        if (max_speed <= 0) throw ConfigError("max_speed must be positive");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["cameras"] = cameras;
        j["width"] = width;
        j["height"] = height;
        j["channels"] = channels;
        j["token_dim"] = token_dim;
        j["layers"] = layers;
        j["heads"] = heads;
        j["ffn_hidden"] = ffn_hidden;
        j["commands"] = commands;
        j["head_hidden"] = head_hidden;
        j["max_speed"] = max_speed;
        return j;
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.cameras = j.at("cameras");
        c.width = j.at("width");
        c.height = j.at("height");
        c.channels = j.at("channels");
        c.token_dim = j.at("token_dim");
        c.layers = j.at("layers");
        c.heads = j.at("heads");
        c.ffn_hidden = j.at("ffn_hidden");
        c.commands = j.at("commands");
        c.head_hidden = j.at("head_hidden");
        c.max_speed = j.at("max_speed");
        c.validate();
        return c;
    }
};

}  // namespace agd
