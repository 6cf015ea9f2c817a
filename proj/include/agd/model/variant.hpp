#pragma once

// Input variants for the mask-privileged baselines: SM concatenates the
// mask as a fourth channel per camera; HM multiplies RGB by the mask;
// "none" is the plain model and takes no mask at all.

#include <string>
#include <vector>

#include "agd/types.hpp"

namespace agd {

enum class InputVariant { None, SM, HM };

InputVariant parse_variant(const std::string& s);
const char* variant_name(InputVariant v);

// masks: one full-resolution mask per camera (required for SM/HM, must be
// empty for None).
Observation apply_input_variant(const Observation& obs, const std::vector<AttentionMask>& masks,
                                InputVariant variant);

}  // namespace agd
