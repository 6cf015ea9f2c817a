#include "agd/version.hpp"

namespace agd {

const char* version() { return "0.1.0"; }

}  // namespace agd
