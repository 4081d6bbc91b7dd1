#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualenc {

// Thrown when a caller violates a documented precondition.
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when an iterative routine fails to reach its tolerance.
struct convergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw contract_error(message);
}

// Dense row-major 2-D array. Treated as immutable once shared across
// workers; mutation stays inside the owning loop.
template <class T>
class Matrix {
  public:
    Matrix() : rows_(0), cols_(0) {}

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, T(0)) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(data_.size() == rows_ * cols_,
                "Matrix: data length " + std::to_string(data_.size()) +
                    " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }

    static Matrix full(std::size_t rows, std::size_t cols, T value) {
        Matrix m(rows, cols);
        for (auto& x : m.data_) x = value;
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const T* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    const std::vector<T>& storage() const { return data_; }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

  private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<T> data_;
};

template <class T>
bool all_finite(const Matrix<T>& m) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(static_cast<double>(m.data()[i]))) return false;
    }
    return true;
}

template <class T>
void ensure_finite(const Matrix<T>& m, const std::string& what) {
    if (!all_finite(m)) throw contract_error(what + ": non-finite entry");
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

namespace detail {

// c += a * b with no transposes. The l-loop is contiguous on b and c, so
// the compiler can vectorize it without reassociating any sums.
template <class T>
void matmul_nn_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c.row_ptr(i);
        const T* ai = a.row_ptr(i);
        for (std::size_t j = 0; j < k; ++j) {
            const T aij = ai[j];
            const T* bj = b.row_ptr(j);
            for (std::size_t l = 0; l < n; ++l) ci[l] += aij * bj[l];
        }
    }
}

}  // namespace detail

// C = op(A) * op(B). Transposed operands are materialized first; the cost
// is linear and keeps the hot kernel in its single vectorizable form.
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b, bool trans_a = false, bool trans_b = false) {
    const std::size_t m = trans_a ? a.cols() : a.rows();
    const std::size_t k = trans_a ? a.rows() : a.cols();
    const std::size_t kb = trans_b ? b.cols() : b.rows();
    const std::size_t n = trans_b ? b.rows() : b.cols();
    require(k == kb, "matmul: inner dimensions " + std::to_string(k) + " vs " + std::to_string(kb));

    Matrix<T> c(m, n);
    if (!trans_a && !trans_b) {
        detail::matmul_nn_accumulate(a, b, c);
    } else if (trans_a && !trans_b) {
        detail::matmul_nn_accumulate(transpose(a), b, c);
    } else if (!trans_a && trans_b) {
        detail::matmul_nn_accumulate(a, transpose(b), c);
    } else {
        detail::matmul_nn_accumulate(transpose(a), transpose(b), c);
    }
    return c;
}

template <class T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    Matrix<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

template <class T>
Matrix<T> sub(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    Matrix<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

template <class T>
Matrix<T> scale(const Matrix<T>& a, T s) {
    Matrix<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
    return c;
}

template <class T>
double frobenius_norm(const Matrix<T>& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = static_cast<double>(a.data()[i]);
        acc += v * v;
    }
    return std::sqrt(acc);
}

template <class T>
double max_abs(const Matrix<T>& a) {
    double best = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        best = std::max(best, std::abs(static_cast<double>(a.data()[i])));
    return best;
}

template <class From, class To>
Matrix<To> cast_matrix(const Matrix<From>& a) {
    Matrix<To> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = static_cast<To>(a.data()[i]);
    return out;
}

}  // namespace dualenc
