#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace docdpm {

// Dense row-major n-d array. Shapes follow the (N, C, H, W) convention for
// feature maps and (frames, classes) for sequence logits.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != count(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // (n, c, h, w) indexing for 4-d tensors.
    T& at4(int n, int c, int h, int w) {
        return data_[static_cast<std::size_t>(offset4(n, c, h, w))];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data_[static_cast<std::size_t>(offset4(n, c, h, w))];
    }
    std::int64_t offset4(int n, int c, int h, int w) const {
        assert(ndim() == 4);
        return ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    T& at3(int a, int b, int c) {
        assert(ndim() == 3);
        return data_[static_cast<std::size_t>((static_cast<std::int64_t>(a) * shape_[1] + b) * shape_[2] + c)];
    }
    const T& at3(int a, int b, int c) const {
        assert(ndim() == 3);
        return data_[static_cast<std::size_t>((static_cast<std::int64_t>(a) * shape_[1] + b) * shape_[2] + c)];
    }

    T& at2(int r, int c) {
        assert(ndim() == 2);
        return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * shape_[1] + c)];
    }
    const T& at2(int r, int c) const {
        assert(ndim() == 2);
        return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * shape_[1] + c)];
    }

    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        return Tensor(std::move(shape), data_);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[static_cast<std::int64_t>(i)] = static_cast<U>(data_[i]);
        return out;
    }

    static std::int64_t count(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                    Tensor<T>::shape_str(a.shape()) + " vs " +
                                    Tensor<T>::shape_str(b.shape()));
}

}  // namespace docdpm
