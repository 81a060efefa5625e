#include "harp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "harp/errors.hpp"

namespace harp {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ContractError("matrix data size " + std::to_string(data_.size()) +
                            " does not match " + std::to_string(rows_) + "x" +
                            std::to_string(cols_));
    }
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    }
    return t;
}

namespace {

constexpr std::size_t kTileRows = 4;

// Register tile: a 4×W block of C accumulates across the whole inner
// dimension. Every output element is still a sequential sum over k in
// ascending order, identical to the scalar loop below.
template <std::size_t W>
void gemm_tile(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc,
               std::size_t k_dim) {
    float acc[kTileRows][W];
    for (std::size_t r = 0; r < kTileRows; ++r) {
        for (std::size_t j = 0; j < W; ++j) acc[r][j] = c[r * ldc + j];
    }
    const float* a0 = a;
    const float* a1 = a + lda;
    const float* a2 = a + 2 * lda;
    const float* a3 = a + 3 * lda;
    for (std::size_t k = 0; k < k_dim; ++k) {
        const float* br = b + k * ldb;
        const float v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
        for (std::size_t j = 0; j < W; ++j) {
            const float bv = br[j];
            acc[0][j] += v0 * bv;
            acc[1][j] += v1 * bv;
            acc[2][j] += v2 * bv;
            acc[3][j] += v3 * bv;
        }
    }
    for (std::size_t r = 0; r < kTileRows; ++r) {
        for (std::size_t j = 0; j < W; ++j) c[r * ldc + j] = acc[r][j];
    }
}

void gemm_scalar(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc,
                 std::size_t n, std::size_t k_dim, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        float* ci = c + i * ldc;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const float av = a[i * lda + k];
            const float* br = b + k * ldb;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * br[j];
        }
    }
}

}  // namespace

void gemm_accumulate(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc,
                     std::size_t n, std::size_t k_dim, std::size_t m) {
    std::size_t i = 0;
    for (; i + kTileRows <= n; i += kTileRows) {
        const float* ai = a + i * lda;
        float* ci = c + i * ldc;
        std::size_t j = 0;
        for (; j + 64 <= m; j += 64) gemm_tile<64>(ai, lda, b + j, ldb, ci + j, ldc, k_dim);
        for (; j + 16 <= m; j += 16) gemm_tile<16>(ai, lda, b + j, ldb, ci + j, ldc, k_dim);
        if (j < m) gemm_scalar(ai, lda, b + j, ldb, ci + j, ldc, kTileRows, k_dim, m - j);
    }
    if (i < n) gemm_scalar(a + i * lda, lda, b, ldb, c + i * ldc, ldc, n - i, k_dim, m);
}

void matmul_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) {
        throw ContractError("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    constexpr std::size_t kBlock = 16;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    const bool big = n * k * m > (std::size_t{1} << 22);
#pragma omp parallel for schedule(static) if (big)
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t r0 = blk * kBlock;
        const std::size_t rows = std::min(n, r0 + kBlock) - r0;
        gemm_accumulate(a.data() + r0 * k, k, b.data(), m, out.data() + r0 * m, m, rows, k, m);
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    matmul_accumulate(a, b, out);
    return out;
}

Matrix rms_norm(const Matrix& x, std::span<const float> gain, float eps) {
    if (gain.size() != x.cols()) throw ContractError("rms_norm gain length mismatch");
    Matrix out(x.rows(), x.cols());
    const float inv_d = 1.0f / static_cast<float>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        float sumsq = 0.0f;
        for (float v : in) sumsq += v * v;
        const float scale = 1.0f / std::sqrt(sumsq * inv_d + eps);
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] * scale * gain[c];
    }
    return out;
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (float v : m.values()) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ContractError("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw ContractError("cosine of a zero-norm row is undefined");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractError("shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - b.values()[i]));
    }
    return m;
}

double relative_error(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractError("shape mismatch");
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.values()[i]) - b.values()[i];
        diff += d * d;
        ref += static_cast<double>(b.values()[i]) * b.values()[i];
    }
    if (ref == 0.0) return diff == 0.0 ? 0.0 : INFINITY;
    return std::sqrt(diff / ref);
}

}  // namespace harp
