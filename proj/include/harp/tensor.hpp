#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace harp {

/// Dense row-major matrix of 32-bit floats.
///
/// All products in this library accumulate each output element over the
/// inner dimension in ascending order, so results do not depend on the
/// number of threads used.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    bool all_finite() const;
    Matrix transposed() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// a (n×k) · b (k×m).
Matrix matmul(const Matrix& a, const Matrix& b);

/// Strided C(n×m) += A(n×k) · B(k×m) on raw row-major storage.
void gemm_accumulate(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                     std::size_t ldc, std::size_t n, std::size_t k, std::size_t m);

/// out += a · b, with out already sized n×m.
void matmul_accumulate(const Matrix& a, const Matrix& b, Matrix& out);

/// Row-wise RMS normalization with a per-column gain.
Matrix rms_norm(const Matrix& x, std::span<const float> gain, float eps);

inline constexpr float kRmsNormEps = 1e-5f;

float silu(float x);

/// Frobenius norm accumulated in double.
double frobenius_norm(const Matrix& m);

/// Cosine similarity of two equal-length vectors, accumulated in double.
/// Throws ContractError when either vector has zero norm.
double cosine(std::span<const float> a, std::span<const float> b);

/// Largest elementwise |a-b|.
double max_abs_diff(const Matrix& a, const Matrix& b);
/// ‖a-b‖_F / ‖b‖_F.
double relative_error(const Matrix& a, const Matrix& b);

}  // namespace harp
