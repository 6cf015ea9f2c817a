#pragma once

// Environment conditions: a deterministic RGB post-process (tint, brightness,
// additive noise). Semantics and depth are never affected. Four conditions
// are designated for training; two composites are held out for generalization
// evaluation.

#include <string>
#include <vector>

#include "agd/types.hpp"

namespace agd {

struct Condition {
    std::string name;
    double tint_r = 1.0, tint_g = 1.0, tint_b = 1.0;
    double light = 1.0;        // brightness multiplier
    double noise_sigma = 0.0;  // stddev of additive per-channel pixel noise
    bool held_out = false;
};

inline const std::vector<Condition>& all_conditions() {
    static const std::vector<Condition> table = {
        {"clear-day", 1.00, 1.00, 1.00, 1.00, 0.000, false},
        {"sunset", 1.00, 0.84, 0.70, 0.90, 0.000, false},
        {"rain-noise", 0.80, 0.85, 0.92, 0.80, 0.030, false},
        {"wet", 0.85, 0.90, 1.00, 0.85, 0.015, false},
        {"soft-rain-sunset", 0.92, 0.78, 0.72, 0.80, 0.020, true},
        {"wet-sunset", 0.95, 0.80, 0.68, 0.78, 0.015, true},
    };
    return table;
}

inline const Condition& condition_by_name(const std::string& name) {
    for (const Condition& c : all_conditions())
        if (c.name == name) return c;
    throw ConfigError("unknown condition: " + name);
}

inline std::vector<std::string> train_condition_names() {
    std::vector<std::string> out;
    for (const Condition& c : all_conditions())
        if (!c.held_out) out.push_back(c.name);
    return out;
}

inline std::vector<std::string> held_out_condition_names() {
    std::vector<std::string> out;
    for (const Condition& c : all_conditions())
        if (c.held_out) out.push_back(c.name);
    return out;
}

}  // namespace agd
