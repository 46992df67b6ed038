#include "gcalc/errors.hpp"
#include "gcalc/gtensor.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace gcalc;

TEST_CASE("colon product and tensor contractions") {
    const std::vector<double> a{1, 2}, b{3, 4};
    CHECK(colon_product(Matrix::diagonal(a), Matrix::diagonal(b)) == doctest::Approx(11.0));

    DiagTensor eta(1, 2, {1, -1});
    const std::vector<double> g{2, 3};
    const auto c = tensor_contract(eta, Matrix::diagonal(g));
    REQUIRE(c.size() == 1);
    CHECK(c[0] == doctest::Approx(-1.0));

    DiagTensor e2(1, 2, {1, 3});
    const std::vector<double> xi{2};
    CHECK(tensor_dot(xi, e2, Matrix::identity(2)) == doctest::Approx(8.0));

    CHECK_THROWS_AS(colon_product(Matrix(2, 2), Matrix(3, 3)), DimensionError);
}

TEST_CASE("colon product is the trace pairing") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int rep = 0; rep < 50; ++rep) {
        Matrix a(3, 3), b(3, 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                a(i, j) = u(rng);
                b(i, j) = u(rng);
            }
        const Matrix p = a.transpose().matmul(b);
        const double tr = p(0, 0) + p(1, 1) + p(2, 2);
        CHECK(colon_product(a, b) == doctest::Approx(tr).epsilon(1e-12));
        CHECK(a.norm() == doctest::Approx(std::sqrt(colon_product(a, a))));
    }
}

TEST_CASE("structure tags are validated") {
    CHECK_THROWS_AS(Matrix(2, 2, {1, 2, 3, 4}, Matrix::Structure::Symmetric), InputError);
    CHECK_THROWS_AS(Matrix(2, 2, {1, 2, 2, 4}, Matrix::Structure::Diagonal), InputError);
    CHECK_NOTHROW(Matrix(2, 2, {1, 2, 2, 4}, Matrix::Structure::Symmetric));
    CHECK_THROWS_AS(DiagTensor::from_blocks({Matrix(2, 2, {1, 1, 1, 1})}), InputError);
    CHECK_THROWS_AS(VolatilityBox({2.0}, {1.0}), InputError);
    CHECK_THROWS_AS(VolatilityBox({0.0}, {1.0}), InputError);
}

TEST_CASE("G anchors") {
    const std::vector<double> lo{1}, hi{4};
    const std::vector<double> p{2}, m{-2};
    CHECK(g_block(p, lo, hi) == doctest::Approx(4.0));
    CHECK(g_block(m, lo, hi) == doctest::Approx(-1.0));

    VolatilityBox box({1, 1}, {4, 4});
    DiagTensor eta(1, 2, {1, -1});
    CHECK(g_diag(eta, box)[0] == doctest::Approx(1.5));
    CHECK(g_argmax(eta.block_diag(0), box) == std::vector<double>{4, 1});
}

TEST_CASE("G is sublinear, monotone and bounded by corner enumeration") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-3, 3);
    VolatilityBox box({0.5, 1.0}, {2.0, 3.0}, 3);
    for (int rep = 0; rep < 200; ++rep) {
        const std::vector<double> a{u(rng), u(rng)}, b{u(rng), u(rng)};
        const std::vector<double> s{a[0] + b[0], a[1] + b[1]};
        const double ga = g_block(a, box.lower(), box.upper());
        const double gb = g_block(b, box.lower(), box.upper());
        CHECK(g_block(s, box.lower(), box.upper()) <= ga + gb + 1e-12);
        const std::vector<double> scaled{2.5 * a[0], 2.5 * a[1]};
        CHECK(g_block(scaled, box.lower(), box.upper()) == doctest::Approx(2.5 * ga));
        const std::vector<double> bigger{a[0] + std::abs(b[0]), a[1] + std::abs(b[1])};
        CHECK(g_block(bigger, box.lower(), box.upper()) >= ga - 1e-12);
        // corners are grid points, so the grid sup is exact for diagonal arguments
        CHECK(g_sym_bruteforce(Matrix::diagonal(a), box) == doctest::Approx(ga).epsilon(1e-12));
        // -G(-A) <= G(A)
        const std::vector<double> na{-a[0], -a[1]};
        CHECK(-g_block(na, box.lower(), box.upper()) <= ga + 1e-12);
    }
}

TEST_CASE("positive and negative parts") {
    DiagTensor eta(2, 2, {1.5, -2.0, 0.0, 3.0});
    const auto [pos, neg] = pos_neg_split(eta);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(pos.entry(i, j) >= 0.0);
            CHECK(neg.entry(i, j) >= 0.0);
            CHECK(pos.entry(i, j) * neg.entry(i, j) == 0.0);
            CHECK(pos.entry(i, j) - neg.entry(i, j) == eta.entry(i, j));
        }
    CHECK(eta.norm() == doctest::Approx(std::sqrt(1.5 * 1.5 + 4 + 9)));
}

TEST_CASE("correlated bounds") {
    CorrelationSpec spec(Matrix(2, 2, {1, 1, 1, -1}), VolatilityBox({1, 1}, {4, 4}));
    const auto [lo, hi] = correlated_bounds(spec);
    CHECK(hi(0, 1) == doctest::Approx(3.0));
    CHECK(lo(0, 1) == doctest::Approx(-3.0));
    CHECK(hi(0, 0) == doctest::Approx(8.0));
    CHECK(lo(0, 0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(CorrelationSpec(Matrix(2, 2, {1, 1, 1, 1}), VolatilityBox({1, 1}, {4, 4})), InputError);
}

TEST_CASE("scenario grid enumeration") {
    VolatilityBox box({1, 2}, {3, 4}, 3);
    CHECK(box.scenario_count() == 9);
    CHECK(box.scenario(0) == std::vector<double>{1, 2});
    CHECK(box.scenario(1) == std::vector<double>{1, 3});
    CHECK(box.scenario(8) == std::vector<double>{3, 4});
    CHECK(box.lower_min() == 1.0);
    CHECK(box.upper_max() == 4.0);
    CHECK_FALSE(box.is_degenerate());
    CHECK(VolatilityBox({2}, {2}).is_degenerate());
}
