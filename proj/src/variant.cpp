#include "agd/model/variant.hpp"

namespace agd {

InputVariant parse_variant(const std::string& s) {
    if (s == "none") return InputVariant::None;
    if (s == "sm") return InputVariant::SM;
    if (s == "hm") return InputVariant::HM;
    throw ConfigError("unknown input variant '" + s + "' (expected none|sm|hm)");
}

const char* variant_name(InputVariant v) {
    switch (v) {
        case InputVariant::None: return "none";
        case InputVariant::SM: return "sm";
        case InputVariant::HM: return "hm";
    }
    return "?";
}

Observation apply_input_variant(const Observation& obs, const std::vector<AttentionMask>& masks,
                                InputVariant variant) {
    if (variant == InputVariant::None) return obs;
    if (int(masks.size()) != obs.cameras)
        throw ConfigError("input variant needs one mask per camera");
    for (const auto& m : masks)
        if (m.width != obs.width || m.height != obs.height)
            throw ShapeError("mask dimensions do not match images");

    const size_t plane = size_t(obs.width) * obs.height;
    Observation out = obs;
    if (variant == InputVariant::HM) {
        for (int k = 0; k < obs.cameras; ++k) {
            const size_t base = size_t(k) * obs.channels * plane;
            for (int c = 0; c < obs.channels; ++c)
                for (size_t i = 0; i < plane; ++i)
                    out.images[base + size_t(c) * plane + i] *= masks[size_t(k)].v[i];
        }
        return out;
    }
    // SM: append the mask as an extra channel per camera
    out.channels = obs.channels + 1;
    out.images.assign(size_t(obs.cameras) * out.channels * plane, 0.0f);
    for (int k = 0; k < obs.cameras; ++k) {
        const size_t src = size_t(k) * obs.channels * plane;
        const size_t dst = size_t(k) * out.channels * plane;
        for (int c = 0; c < obs.channels; ++c)
            for (size_t i = 0; i < plane; ++i)
                out.images[dst + size_t(c) * plane + i] = obs.images[src + size_t(c) * plane + i];
        for (size_t i = 0; i < plane; ++i)
            out.images[dst + size_t(obs.channels) * plane + i] = masks[size_t(k)].v[i];
    }
    return out;
}

}  // namespace agd
