#include "refocs/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace refocs {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("tensor data size does not match shape");
    }
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t({1});
    t.data_[0] = value;
    return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
    Tensor t({static_cast<int>(values.size())});
    std::size_t i = 0;
    for (double v : values) t.data_[i++] = v;
    return t;
}

int Tensor::cols() const {
    if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
    int c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw std::invalid_argument("reshape changes element count");
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) {
    for (double& v : data_) v = value;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

}  // namespace refocs
