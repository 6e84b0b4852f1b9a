#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "isomerge/errors.hpp"
#include "isomerge/matrix.hpp"

namespace isomerge {

// Rank-1 or rank-2 f32 array in row-major order. Higher ranks are out
// of scope; merging is defined on matrices and vectors only.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::int64_t> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate();
    }

    static Tensor vector(std::vector<float> data) {
        const auto n = static_cast<std::int64_t>(data.size());
        return Tensor({n}, std::move(data));
    }

    static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<float> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    const std::vector<std::int64_t>& shape() const noexcept { return shape_; }
    const std::vector<float>& values() const noexcept { return data_; }
    std::vector<float>& values() noexcept { return data_; }

    std::size_t rank() const noexcept { return shape_.size(); }
    bool is_matrix() const noexcept { return rank() == 2; }

    std::size_t numel() const noexcept {
        std::size_t n = 1;
        for (auto d : shape_) n *= static_cast<std::size_t>(d);
        return n;
    }

    bool all_finite() const noexcept {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // widen to a double matrix (rank-2 only)
    Matrix to_matrix() const {
        if (!is_matrix())
            fail(errc::shape_mismatch, "tensor is not rank-2");
        Matrix m(static_cast<std::size_t>(shape_[0]), static_cast<std::size_t>(shape_[1]));
        for (std::size_t i = 0; i < data_.size(); ++i) m.data()[i] = data_[i];
        return m;
    }

    std::vector<double> to_vector() const {
        if (rank() != 1)
            fail(errc::shape_mismatch, "tensor is not rank-1");
        return std::vector<double>(data_.begin(), data_.end());
    }

private:
    void validate() const {
        if (shape_.empty() || shape_.size() > 2)
            fail(errc::shape_mismatch, "tensors must be rank-1 or rank-2");
        std::size_t n = 1;
        for (auto d : shape_) {
            if (d < 1) fail(errc::shape_mismatch, "tensor extents must be >= 1");
            n *= static_cast<std::size_t>(d);
        }
        if (n != data_.size())
            fail(errc::shape_mismatch, "tensor data length does not match shape");
    }

    std::vector<std::int64_t> shape_;
    std::vector<float> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape();
}

// Ordered, name-keyed set of tensors standing in for one model's
// parameters. Insertion order is significant and survives a round trip
// through the container format.
class TensorBundle {
public:
    using Entry = std::pair<std::string, Tensor>;

    void add(std::string name, Tensor tensor) {
        if (name.empty())
            fail(errc::header_malformed, "parameter names must be non-empty");
        if (index_.count(name))
            fail(errc::duplicate_name, "duplicate parameter name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(tensor));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            fail(errc::name_set_mismatch, "no parameter named '" + name + "'");
        return entries_[it->second].second;
    }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    std::map<std::string, std::string> meta;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace isomerge
