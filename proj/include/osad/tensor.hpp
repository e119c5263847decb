#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace osad {

using Shape = std::vector<std::size_t>;

/// Raised whenever operand extents do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array. Plain value type; gradient bookkeeping lives on the Tape.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        validate_extents();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_extents();
        if (data_.size() != shape_numel(shape_))
            throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // rank-2 / rank-3 accessors, unchecked beyond vector bounds
    T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    T& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
    const T& at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    T item() const {
        if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != data_.size())
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor& o) const = default;

private:
    void validate_extents() const {
        if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
        for (auto e : shape_)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
    }

    Shape shape_{1};
    std::vector<T> data_{T(0)};
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
    if (s.size() != r)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
}

}  // namespace osad
