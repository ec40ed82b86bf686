#include "ifecf/tensor.hpp"

#include <sstream>

namespace ifecf {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

}  // namespace ifecf
