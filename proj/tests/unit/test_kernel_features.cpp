#include <doctest.h>

#include <cmath>
#include <sstream>

#include "orf/errors.hpp"
#include "orf/kernel_features.hpp"

using namespace orf;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

// Trapezoid rule for int N(0, s2)(v) cos(2 pi v t) dv over [-12 s, 12 s].
double gaussian_cos_integral(double s2, double t) {
    const double s = std::sqrt(s2);
    const int n = 200000;
    const double a = -12.0 * s, h = 24.0 * s / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double v = a + i * h;
        const double w = (i == 0 || i == n) ? 0.5 : 1.0;
        acc += w * std::exp(-v * v / (2 * s2)) * std::cos(kTwoPi * v * t);
    }
    return acc * h / std::sqrt(kTwoPi * s2);
}

}  // namespace

TEST_CASE("eval_kernel direct values") {
    GaussianKernel k1(1.0, 1);
    CHECK(eval_kernel(k1, vec({0.3}), vec({0.3})) == 1.0);
    CHECK(eval_kernel(k1, vec({0.0}), vec({1.0})) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));

    GaussianKernel k2(0.5, 2);
    CHECK(eval_kernel(k2, vec({1, 1}), vec({0, 0})) == doctest::Approx(0.367879441171442).epsilon(1e-14));
    CHECK(eval_kernel(k2, vec({1, -2}), vec({0.5, 3})) == eval_kernel(k2, vec({0.5, 3}), vec({1, -2})));
    CHECK_THROWS_AS(eval_kernel(k2, vec({1}), vec({0, 0})), DimensionMismatch);
}

TEST_CASE("kernel construction rejects bad parameters") {
    CHECK_THROWS_AS(GaussianKernel(0.0, 1), InvalidArgument);
    CHECK_THROWS_AS(GaussianKernel(1.0, 0), InvalidArgument);
}

TEST_CASE("gram matrix is symmetric with unit diagonal") {
    GaussianKernel k(0.7, 3);
    Rng rng(3);
    Matrix pts = Matrix::Random(20, 3);
    Matrix K = k.gram(pts);
    for (int i = 0; i < 20; ++i) {
        CHECK(K(i, i) == 1.0);
        for (int j = 0; j < 20; ++j) CHECK(K(i, j) == K(j, i));
    }
    CHECK(K(2, 5) == doctest::Approx(k.eval(pts.row(2).transpose(), pts.row(5).transpose())));
}

TEST_CASE("tau variance matches the quadrature oracle") {
    for (double gamma : {0.25, 1.0, 3.0}) {
        GaussianKernel k(gamma, 1);
        CHECK(k.tau_variance() == doctest::Approx(gamma / (2 * M_PI * M_PI)).epsilon(1e-15));
        for (double t : {0.1, 0.5, 1.0, 2.0}) {
            const double quad = gaussian_cos_integral(k.tau_variance(), t);
            CHECK(std::abs(quad - std::exp(-gamma * t * t)) < 1e-10);
        }
    }
}

TEST_CASE("sample_tau: determinism, mean, cosine average") {
    GaussianKernel k(1.0, 1);
    Rng a(11), b(11);
    CHECK(sample_tau(k, a) == sample_tau(k, b));

    Rng rng(12);
    const int n = 1000000;
    double mean = 0.0, cos_avg = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = sample_tau(k, rng)(0);
        mean += v;
        cos_avg += std::cos(kTwoPi * v);
    }
    mean /= n;
    cos_avg /= n;
    CHECK(std::abs(mean) < 4 * k.tau_stddev() / std::sqrt(double(n)));
    CHECK(std::abs(cos_avg - std::exp(-1.0)) < 0.005);
}

TEST_CASE("feature_pair values") {
    auto [c0, s0] = feature_pair(vec({0, 0}), vec({1.3, -2}));
    CHECK(c0 == 1.0);
    CHECK(s0 == 0.0);

    auto [c, s] = feature_pair(vec({0.25, 0}), vec({1, 7}));
    CHECK(std::abs(c) < 1e-15);
    CHECK(s == doctest::Approx(-1.0));

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        Vector v = Vector::Random(3) * 4, x = Vector::Random(3);
        auto [ci, si] = feature_pair(v, x);
        CHECK(ci * ci + si * si == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK_THROWS_AS(feature_pair(vec({1}), vec({1, 2})), DimensionMismatch);
}

TEST_CASE("feature_real values and real/complex equivalence") {
    CHECK(feature_real({vec({0}), 0.0}, vec({4})) == doctest::Approx(std::sqrt(2.0)));
    CHECK(std::abs(feature_real({vec({0}), 0.25}, vec({4}))) < 1e-15);
    CHECK_THROWS_AS(feature_real({vec({0}), 1.5}, vec({4})), InvalidArgument);

    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Vector v = Vector::Random(2) * 3, x = Vector::Random(2), y = Vector::Random(2);
        const int n = 4096;
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double b = double(i) / n;
            const double w = (i == 0 || i == n) ? 0.5 : 1.0;
            acc += w * feature_real({v, b}, x) * feature_real({v, b}, y);
        }
        acc /= n;
        CHECK(std::abs(acc - std::cos(kTwoPi * v.dot(x - y))) < 1e-6);
    }
}

TEST_CASE("kernel_mc_estimate") {
    GaussianKernel k(1.0, 3);
    Rng rng(21);
    auto fs = FeatureSet(Matrix::Random(17, 3) * 2, FeatureMode::conventional);
    Vector x = Vector::Random(3);
    CHECK(kernel_mc_estimate(fs, x, x) == 1.0);

    Matrix one(1, 3);
    one << 0.3, -0.2, 0.1;
    FeatureSet single(one, FeatureMode::conventional);
    Vector y = Vector::Random(3);
    CHECK(kernel_mc_estimate(single, x, y) ==
          doctest::Approx(std::cos(kTwoPi * one.row(0).dot((x - y).transpose()))).epsilon(1e-14));

    // concentration at M = 4096 over 100 random pairs
    Matrix freqs(4096, 3);
    for (int m = 0; m < 4096; ++m) freqs.row(m) = sample_tau(k, rng).transpose();
    FeatureSet big(freqs, FeatureMode::conventional);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        Vector a = Vector::Random(3), b = Vector::Random(3);
        worst = std::max(worst, std::abs(kernel_mc_estimate(big, a, b) - k.eval(a, b)));
    }
    CHECK(worst <= 5.0 / 64.0);
}

TEST_CASE("kernel_importance_estimate") {
    Matrix freqs = Matrix::Random(8, 2);
    Vector ones = Vector::Ones(8);
    FeatureSet uniform(freqs, FeatureMode::optimized, ones, 0.1);
    Vector x = Vector::Random(2), y = Vector::Random(2);
    CHECK(kernel_importance_estimate(uniform, x, y) == doctest::Approx(kernel_mc_estimate(uniform, x, y)));

    Matrix one(1, 2);
    one << 0.4, 0.1;
    FeatureSet single(one, FeatureMode::optimized, Vector::Constant(1, 0.25), 0.1);
    CHECK(kernel_importance_estimate(single, x, y) ==
          doctest::Approx(std::cos(kTwoPi * one.row(0).dot((x - y).transpose())) / 0.25));

    FeatureSet bare(freqs, FeatureMode::conventional);
    CHECK_THROWS_AS(kernel_importance_estimate(bare, x, y), InvalidArgument);
    CHECK_THROWS_AS(FeatureSet(freqs, FeatureMode::optimized, Vector::Zero(8), 0.1), InvalidArgument);
}

TEST_CASE("feature vector layout and matrix") {
    Matrix freqs(2, 1);
    freqs << 0.25, 0.0;
    FeatureSet fs(freqs, FeatureMode::conventional);
    Vector phi = fs.feature_vector(vec({1.0}));
    REQUIRE(phi.size() == 4);
    CHECK(std::abs(phi(0)) < 1e-15);
    CHECK(phi(1) == doctest::Approx(-1.0));
    CHECK(phi(2) == 1.0);
    CHECK(phi(3) == 0.0);

    Matrix pts = Matrix::Random(5, 1);
    Matrix F = fs.feature_matrix(pts);
    CHECK(F.rows() == 5);
    CHECK(F.cols() == 4);
    CHECK((F.row(3).transpose() - fs.feature_vector(pts.row(3).transpose())).norm() == 0.0);
}

TEST_CASE("FeatureSet file round trip is bit exact") {
    Rng rng(4);
    GaussianKernel k(1.3, 2);
    Matrix freqs(5, 2);
    Vector q(5);
    for (int m = 0; m < 5; ++m) {
        freqs.row(m) = sample_tau(k, rng).transpose();
        q(m) = 0.1 + uniform01(rng);
    }
    for (const auto& fs : {FeatureSet(freqs, FeatureMode::optimized, q, 1e-3),
                           FeatureSet(freqs, FeatureMode::conventional)}) {
        std::stringstream ss;
        fs.save(ss);
        const std::string text = ss.str();
        CHECK(text.rfind("# mode=", 0) == 0);
        const auto back = FeatureSet::load(ss);
        CHECK(back == fs);
        std::stringstream again;
        back.save(again);
        CHECK(again.str() == text);
    }
    std::stringstream bad("# mode=optimized M=2 D=1 lambda=none\n0.5\n");
    CHECK_THROWS_AS(FeatureSet::load(bad), IoError);
}
