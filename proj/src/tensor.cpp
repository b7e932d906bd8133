/* Copyright 2026 The CDD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cdd/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cdd {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill)
{
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end())
{
    if (data_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

template <typename T>
Tensor<T> Tensor<T>::uninitialized(Shape shape)
{
    Tensor t;
    t.data_.resize(shape_numel(shape));
    t.shape_ = std::move(shape);
    return t;
}

template <typename T>
int Tensor<T>::dim(int axis) const
{
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw std::out_of_range("axis out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
}

template <typename T>
void Tensor<T>::fill(T value)
{
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const
{
    if (shape_numel(shape) != data_.size()) {
        throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cdd
