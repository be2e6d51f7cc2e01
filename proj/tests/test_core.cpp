#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include <proalign/core.hpp>

using namespace proalign;

TEST_CASE("validate accepts a well-formed matrix") {
    EmbeddingMatrix m{2, 2, {1.0f, 0.0f, 0.0f, 1.0f}};
    REQUIRE(validate_embedding_matrix(m).ok);
}

TEST_CASE("validate reports non-finite values with their location") {
    EmbeddingMatrix m{1, 2, {std::numeric_limits<float>::quiet_NaN(), 0.0f}};
    const auto result = validate_embedding_matrix(m);
    REQUIRE_FALSE(result.ok);
    CHECK(result.code == Errc::non_finite_value);
    CHECK(result.row == 0);
    CHECK(result.col == 0);
}

TEST_CASE("validate reports declared-shape vs payload mismatch") {
    EmbeddingMatrix m{3, 2, {1, 2, 3, 4, 5}};
    const auto result = validate_embedding_matrix(m);
    REQUIRE_FALSE(result.ok);
    CHECK(result.code == Errc::shape_mismatch);
}

TEST_CASE("validate rejects empty shapes") {
    EmbeddingMatrix m{0, 4, {}};
    CHECK(validate_embedding_matrix(m).code == Errc::empty_matrix);
    EmbeddingMatrix m2{4, 0, {}};
    CHECK(validate_embedding_matrix(m2).code == Errc::empty_matrix);
}

TEST_CASE("validate accepts exactly the matrices satisfying the invariants") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> dist(-5.0f, 5.0f);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rows = 1 + rng() % 6;
        const std::size_t dim = 1 + rng() % 6;
        EmbeddingMatrix m = EmbeddingMatrix::zeros(rows, dim);
        for (float& v : m.data) v = dist(rng);

        switch (rng() % 4) {
            case 0:
                REQUIRE(validate_embedding_matrix(m).ok);
                break;
            case 1: {
                m.data[rng() % m.data.size()] = std::numeric_limits<float>::infinity();
                CHECK(validate_embedding_matrix(m).code == Errc::non_finite_value);
                break;
            }
            case 2: {
                m.data.pop_back();
                CHECK(validate_embedding_matrix(m).code == Errc::shape_mismatch);
                break;
            }
            case 3: {
                m.rows = 0;
                CHECK(validate_embedding_matrix(m).code == Errc::empty_matrix);
                break;
            }
        }
    }
}

TEST_CASE("l2 normalization maps a 3-4-5 row to 0.6 0.8") {
    EmbeddingMatrix m{1, 2, {3.0f, 4.0f}};
    const auto out = l2_normalize_rows(m);
    CHECK(out.matrix.at(0, 0) == Catch::Approx(0.6).margin(1e-7));
    CHECK(out.matrix.at(0, 1) == Catch::Approx(0.8).margin(1e-7));
    CHECK(out.zero_rows.empty());
}

TEST_CASE("l2 normalization flags zero rows and leaves them unchanged") {
    EmbeddingMatrix m{1, 2, {0.0f, 0.0f}};
    const auto out = l2_normalize_rows(m);
    REQUIRE(out.zero_rows == std::vector<std::size_t>{0});
    CHECK(out.matrix.at(0, 0) == 0.0f);
    CHECK(out.matrix.at(0, 1) == 0.0f);
}

TEST_CASE("l2 normalization scales both rows by their own norms") {
    EmbeddingMatrix m{2, 2, {1.0f, 1.0f, 2.0f, 2.0f}};
    const auto out = l2_normalize_rows(m);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);  // oracle: 1/sqrt(2), 2/sqrt(8)
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(out.matrix.at(r, c) == Catch::Approx(inv_sqrt2).margin(1e-7));
        }
    }
}

TEST_CASE("l2 normalization is idempotent") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> dist(-10.0f, 10.0f);
    for (int trial = 0; trial < 50; ++trial) {
        EmbeddingMatrix m = EmbeddingMatrix::zeros(1 + rng() % 8, 1 + rng() % 8);
        for (float& v : m.data) v = dist(rng);
        const auto once = l2_normalize_rows(m);
        const auto twice = l2_normalize_rows(once.matrix);
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            REQUIRE(std::abs(twice.matrix.data[i] - once.matrix.data[i]) < 1e-6);
        }
    }
}

TEST_CASE("dot_rows requires matching dims") {
    EmbeddingMatrix a = EmbeddingMatrix::zeros(2, 3);
    EmbeddingMatrix b = EmbeddingMatrix::zeros(2, 4);
    CHECK_THROWS_AS(dot_rows(a, b), Error);
}
