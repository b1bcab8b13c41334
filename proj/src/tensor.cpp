#include "prunelab/tensor.hpp"

#include <cmath>

#include "prunelab/errors.hpp"

namespace prunelab {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw DimensionError("Tensor2D: " + std::to_string(values_.size()) +
                             " values do not fill a " + shape_string() + " matrix");
    }
}

Tensor2D::Tensor2D(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("Tensor2D: ragged initializer");
        values_.insert(values_.end(), r.begin(), r.end());
    }
}

std::string Tensor2D::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Tensor2D::fill(double v) {
    for (auto& x : values_) x = v;
}

bool Tensor2D::all_finite() const {
    for (double x : values_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double Tensor2D::sum() const {
    double s = 0.0;
    for (double x : values_) s += x;
    return s;
}

Tensor2D Tensor2D::transposed() const {
    Tensor2D out(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
    }
    return out;
}

void require_same_shape(const Tensor2D& a, const Tensor2D& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() +
                             " vs " + b.shape_string());
    }
}

}  // namespace prunelab
