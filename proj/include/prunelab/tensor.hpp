#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace prunelab {

// Dense row-major matrix of doubles. Carries weights, scores, masks,
// activations and gradients alike.
class Tensor2D {
public:
    Tensor2D() = default;
    Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values);
    Tensor2D(std::initializer_list<std::initializer_list<double>> rows);

    static Tensor2D zeros(std::size_t rows, std::size_t cols) { return {rows, cols, 0.0}; }
    static Tensor2D ones(std::size_t rows, std::size_t cols) { return {rows, cols, 1.0}; }
    static Tensor2D zeros_like(const Tensor2D& t) { return {t.rows(), t.cols(), 0.0}; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
    double& operator[](std::size_t flat) { return values_[flat]; }
    double operator[](std::size_t flat) const { return values_[flat]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    bool same_shape(const Tensor2D& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_string() const;

    void fill(double v);
    bool all_finite() const;
    double sum() const;

    Tensor2D transposed() const;

    // Bitwise equality of shape and every value.
    friend bool operator==(const Tensor2D& a, const Tensor2D& b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// Throws DimensionError naming both shapes when they differ.
void require_same_shape(const Tensor2D& a, const Tensor2D& b, const char* what);

}  // namespace prunelab
