// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace qmimo {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape);

// Dense row-major n-d array. Storage is a flat Eigen vector so elementwise
// math stays in Eigen expressions; 2-D slices are exposed as row-major maps.
template <typename Scalar>
class BasicTensor {
public:
    using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape)
        : shape_(std::move(shape)), data_(Storage::Zero(qmimo::numel(shape_))) {}

    BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != qmimo::numel(shape_))
            throw std::invalid_argument("tensor data size does not match shape " + to_string(shape_));
    }

    static BasicTensor constant(Shape shape, Scalar value) {
        BasicTensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
    Index size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Storage& data() { return data_; }
    const Storage& data() const { return data_; }
    Scalar* ptr() { return data_.data(); }
    const Scalar* ptr() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    // View the whole buffer as rows x cols (row-major).
    MatrixMap matrix(Index rows, Index cols) {
        check_view(0, rows, cols);
        return MatrixMap(data_.data(), rows, cols);
    }
    ConstMatrixMap matrix(Index rows, Index cols) const {
        check_view(0, rows, cols);
        return ConstMatrixMap(data_.data(), rows, cols);
    }

    // View of the i-th trailing 2-D slice of a tensor of rank >= 2.
    MatrixMap slice(Index i) {
        const Index r = shape_[shape_.size() - 2], c = shape_.back();
        check_view(i * r * c, r, c);
        return MatrixMap(data_.data() + i * r * c, r, c);
    }
    ConstMatrixMap slice(Index i) const {
        const Index r = shape_[shape_.size() - 2], c = shape_.back();
        check_view(i * r * c, r, c);
        return ConstMatrixMap(data_.data() + i * r * c, r, c);
    }

    BasicTensor reshaped(Shape shape) const {
        if (qmimo::numel(shape) != size())
            throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        return BasicTensor(std::move(shape), data_);
    }

private:
    void check_view(Index offset, Index rows, Index cols) const {
        if (offset + rows * cols > data_.size())
            throw std::out_of_range("tensor view exceeds storage");
    }

    Shape shape_;
    Storage data_;
};

using Tensor = BasicTensor<double>;

inline std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace qmimo
