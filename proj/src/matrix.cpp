#include "nodpred/matrix.hpp"

#include <algorithm>
#include <string>

#include "nodpred/error.hpp"

namespace nodpred {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        fail(ErrorKind::Shape, "matrix buffer of " + std::to_string(data_.size()) +
                                   " values cannot be shaped " + std::to_string(rows_) + "x" +
                                   std::to_string(cols_));
    }
}

Matrix Matrix::reshaped(std::size_t rows, std::size_t cols) const {
    return Matrix(rows, cols, data_);
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace nodpred
