#include "dmcl/rng.hpp"

#include <sstream>

#include "dmcl/errors.hpp"

namespace dmcl {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& text) {
  std::istringstream is(text);
  Rng rng;
  is >> rng;
  if (!is) throw DataError("corrupt random engine state");
  return rng;
}

}  // namespace dmcl
