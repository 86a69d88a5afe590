#include "flexcast/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "flexcast/error.hpp"

namespace flexcast {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {
    for (auto d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    for (auto d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
    if (shape_size(shape) != data.size())
        throw DimensionError("shape " + shape_string(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
}

bool Tensor::all_finite() const {
    // v * 0 is NaN exactly for NaN and infinities; the branch-free sum vectorizes.
    double probe = 0.0;
    for (double v : data) probe += v * 0.0;
    return probe == 0.0;
}

}  // namespace flexcast
