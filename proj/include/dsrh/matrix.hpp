// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace dsrh {

/// Dense row-major matrix of doubles. Deliberately minimal: the training
/// math is written as explicit loops so the reduction order is fixed.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
    double operator()(size_t i, size_t j) const { return data[i * cols + j]; }

    std::span<double> row(size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(size_t i) const {
        return {data.data() + i * cols, cols};
    }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    void fill(double v) { data.assign(data.size(), v); }

    bool operator==(const Matrix&) const = default;
};

inline void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace dsrh
