#pragma once

namespace agd {

const char* version();

}  // namespace agd
