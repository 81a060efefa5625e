#include <doctest.h>

#include <array>
#include <cmath>

#include "harp/errors.hpp"
#include "harp/tensor.hpp"
#include "support.hpp"

using namespace harp;
using namespace harp::test;

TEST_SUITE("tensor") {

TEST_CASE("matmul matches a double-precision triple loop across tile edges") {
    // Shapes straddle the 4-row and 64/16-column tiles.
    for (auto [n, k, m] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 7}, {4, 8, 64}, {9, 33, 81}, {70, 17, 130}}) {
        const Matrix a = random_matrix(n, k, 11 + n);
        const Matrix b = random_matrix(k, m, 13 + m);
        CHECK(frob_rel_error(matmul(a, b), ref_matmul(to_d(a), to_d(b))) < 1e-6);
    }
}

TEST_CASE("matmul_accumulate adds onto the existing output") {
    const Matrix a = random_matrix(6, 4, 1), b = random_matrix(4, 5, 2);
    Matrix out(6, 5, 1.5f);
    matmul_accumulate(a, b, out);
    const Matrix plain = matmul(a, b);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.values()[i] == doctest::Approx(plain.values()[i] + 1.5f).epsilon(1e-6));
}

TEST_CASE("matmul sums each element in ascending inner order") {
    // The large-matrix parallel path must give the same bits as a
    // sequential float loop.
    const Matrix a = random_matrix(130, 300, 3), b = random_matrix(300, 150, 4);
    const Matrix got = matmul(a, b);
    bool same = true;
    for (std::size_t i = 0; i < 130 && same; i += 7) {
        for (std::size_t j = 0; j < 150; ++j) {
            float s = 0.0f;
            for (std::size_t k = 0; k < 300; ++k) s += a(i, k) * b(k, j);
            same = same && s == got(i, j);
        }
    }
    CHECK(same);
}

TEST_CASE("matmul rejects mismatched shapes") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(4, 2)), ContractError);
}

TEST_CASE("matrix construction checks the data length") {
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<float>(3)), ContractError);
}

TEST_CASE("rms_norm against the closed form") {
    const Matrix x(1, 2, std::vector<float>{3.0f, 4.0f});
    const std::vector<float> gain{1.0f, 2.0f};
    const Matrix y = rms_norm(x, gain, 1e-5f);
    const double scale = 1.0 / std::sqrt((9.0 + 16.0) / 2.0 + 1e-5);
    CHECK(y(0, 0) == doctest::Approx(3.0 * scale).epsilon(1e-6));
    CHECK(y(0, 1) == doctest::Approx(8.0 * scale).epsilon(1e-6));
    CHECK_THROWS_AS(rms_norm(x, std::vector<float>{1.0f}, 1e-5f), ContractError);
}

TEST_CASE("silu") {
    CHECK(silu(0.0f) == 0.0f);
    CHECK(silu(2.0f) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))).epsilon(1e-6));
    CHECK(silu(-30.0f) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("cosine") {
    const std::vector<float> a{1, 0}, b{1, 1}, z{0, 0};
    CHECK(cosine(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK_THROWS_AS(cosine(a, z), ContractError);
}

TEST_CASE("transpose and finiteness") {
    const Matrix m = random_matrix(3, 5, 9);
    CHECK(m.transposed().transposed() == m);
    Matrix bad = m;
    bad(1, 1) = NAN;
    CHECK(m.all_finite());
    CHECK_FALSE(bad.all_finite());
}

}
