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

#ifndef CDD_TENSOR_HPP
#define CDD_TENSOR_HPP

#include <cstddef>
#include <memory>
#include <utility>
#include <span>
#include <new>
#include <string>
#include <vector>

namespace cdd {

using Shape = std::vector<int>;

// Allocator whose value-initialization is a no-op, so large buffers that are
// about to be overwritten are not zero-filled first. Buffers are 64-byte
// aligned: vectorized reductions peel a different number of leading elements
// depending on alignment, so a fixed alignment keeps results independent of
// where the allocator happens to place a buffer.
template <typename T>
struct DefaultInitAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    DefaultInitAllocator() noexcept = default;
    template <typename U>
    DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept  // NOLINT(google-explicit-constructor)
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <typename U>
    void construct(U* p) noexcept
    {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args)
    {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }

    template <typename U>
    friend bool operator==(const DefaultInitAllocator&, const DefaultInitAllocator<U>&) noexcept
    {
        return true;
    }
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. Image batches use NHWC layout throughout.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);
    // Contents are indeterminate until written.
    static Tensor uninitialized(Shape shape);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] int rank() const noexcept { return static_cast<int>(shape_.size()); }
    // Negative axes count from the back.
    [[nodiscard]] int dim(int axis) const;
    [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] T* data() noexcept { return data_.data(); }
    [[nodiscard]] const T* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<T> values() noexcept { return data_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
    [[nodiscard]] std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(T value);
    [[nodiscard]] Tensor reshaped(Shape shape) const;

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<T, DefaultInitAllocator<T>> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cdd

#endif  // CDD_TENSOR_HPP
