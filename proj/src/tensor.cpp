#include "ganorcon/tensor.hpp"

#include <sstream>

namespace ganorcon {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace ganorcon
