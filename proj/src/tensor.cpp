#include "dilvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dilvae/errors.hpp"

namespace dilvae {

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    if (std::find(shape_.begin(), shape_.end(), std::size_t{0}) != shape_.end())
        throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero dimension");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
        throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                             " values");
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::normal(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = stddev * rng.normal();
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

} // namespace dilvae
