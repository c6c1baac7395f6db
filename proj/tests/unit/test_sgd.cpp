#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "orf/errors.hpp"
#include "orf/leverage.hpp"
#include "orf/sgd.hpp"

using namespace orf;

namespace {

std::vector<LabeledSample> circle_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledSample> data(n);
    for (auto& s : data) {
        const double a = kTwoPi * uniform01(rng);
        s.x = Vector(2);
        s.x << std::cos(a), std::sin(a);
        const double clean = std::cos(3 * a) >= 0 ? 1.0 : -1.0;
        s.y = uniform01(rng) < 0.9 ? clean : -clean;
    }
    return data;
}

FeatureSet features(std::size_t M, std::uint64_t seed, double gamma = 1.0) {
    Rng rng(seed);
    return sample_conventional(GaussianKernel(gamma, 2), M, rng);
}

TrainConfig config(std::size_t M, std::size_t N, double lambda = 1e-3) {
    TrainConfig cfg;
    cfg.lambda = lambda;
    cfg.M = M;
    cfg.N = N;
    cfg.q_min = 0.5;
    cfg.f_norm = 2.0;
    return cfg;
}

}  // namespace

TEST_CASE("predict") {
    auto fs = features(4, 1);
    Classifier zero(fs, Vector::Zero(8));
    CHECK(zero.predict(Vector(Vector::Random(2))) == 0.0);

    Vector ab(2);
    ab << 0.7, -3.0;
    Classifier c1(FeatureSet(Matrix::Zero(1, 2), FeatureMode::conventional), ab);
    CHECK(c1.predict(Vector(Vector::Random(2))) == 0.7);

    Vector alpha = Vector::Random(8);
    Classifier c(fs, alpha);
    Matrix pts = Matrix::Random(10, 2);
    const Vector batch = c.predict(pts);
    for (int i = 0; i < 10; ++i) {
        double naive = 0.0;
        for (std::size_t m = 0; m < 4; ++m) {
            const double arg = -kTwoPi * fs.freq(m).dot(pts.row(i).transpose());
            naive += alpha(2 * m) * std::cos(arg) + alpha(2 * m + 1) * std::sin(arg);
        }
        CHECK(std::abs(c.predict(Vector(pts.row(i).transpose())) - naive) < 1e-12);
        CHECK(std::abs(batch(i) - naive) < 1e-12);
    }
    CHECK_THROWS_AS(Classifier(fs, Vector::Zero(7)), DimensionMismatch);
    CHECK_THROWS_AS(c.predict(Vector(Vector::Zero(3))), DimensionMismatch);
}

TEST_CASE("regularized empirical loss") {
    auto data = circle_dataset(50, 2);
    auto fs = features(4, 3);
    auto cfg = config(4, 2);
    CHECK(regularized_empirical_loss(Classifier(fs, Vector::Zero(8)), data, cfg) == doctest::Approx(1.0));

    Vector alpha = Vector::Random(8);
    Classifier c(fs, alpha);
    double fit = 0.0;
    for (const auto& s : data) fit += std::pow(s.y - c.predict(s.x), 2);
    fit /= 50;
    CHECK(regularized_empirical_loss(c, data, cfg) > fit);
    CHECK(regularized_empirical_loss(c, data, cfg) ==
          doctest::Approx(fit + cfg.lambda * 4 * 0.5 * alpha.squaredNorm()).epsilon(1e-13));
    CHECK_THROWS_AS(regularized_empirical_loss(c, std::span<const LabeledSample>(), cfg), InvalidArgument);
}

TEST_CASE("grad_estimate: special cases and prefactor counter") {
    auto fs = features(3, 4);
    auto cfg = config(3, 2);
    Vector x = Vector::Random(2);
    const auto before = prefactor_evaluations();
    const Vector g = grad_estimate(Vector::Zero(6), fs, x, 1.0, cfg);
    CHECK(prefactor_evaluations() == before + 1);
    CHECK((g + 2 * fs.feature_vector(x)).norm() < 1e-15);

    // residual zero and no regularization: zero gradient
    Vector alpha = Vector::Zero(6);
    alpha(0) = 0.5;
    Classifier c(fs, alpha);
    TrainConfig flat = cfg;
    flat.lambda = 0.0;
    CHECK(grad_estimate(alpha, fs, x, c.predict(x), flat).norm() < 1e-15);
    CHECK(prefactor_evaluations() == before + 2);
}

TEST_CASE("mean of grad_estimate matches finite differences of the loss") {
    auto data = circle_dataset(1000, 5);
    auto fs = features(6, 6);
    auto cfg = config(6, 2, 1e-2);
    Rng rng(7);
    Vector alpha(12);
    for (int i = 0; i < 12; ++i) alpha(i) = uniform01(rng) - 0.5;

    Vector mean = Vector::Zero(12);
    for (const auto& s : data) mean += grad_estimate(alpha, fs, s.x, s.y, cfg);
    mean /= 1000.0;

    Vector fd(12);
    const double h = 1e-6;
    for (int i = 0; i < 12; ++i) {
        Vector up = alpha, dn = alpha;
        up(i) += h;
        dn(i) -= h;
        fd(i) = (regularized_empirical_loss(Classifier(fs, up), data, cfg) -
                 regularized_empirical_loss(Classifier(fs, dn), data, cfg)) /
                (2 * h);
    }
    CHECK((mean - fd).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK((mean - regularized_loss_gradient(fs, alpha, data, cfg)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("strong convexity with modulus lambda M q_min") {
    auto data = circle_dataset(200, 8);
    auto fs = features(5, 9);
    auto cfg = config(5, 2, 1e-2);
    Rng rng(10);
    bool ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        Vector a(10), b(10);
        for (int i = 0; i < 10; ++i) a(i) = 4 * uniform01(rng) - 2, b(i) = 4 * uniform01(rng) - 2;
        const double la = regularized_empirical_loss(Classifier(fs, a), data, cfg);
        const double lb = regularized_empirical_loss(Classifier(fs, b), data, cfg);
        const Vector g = regularized_loss_gradient(fs, a, data, cfg);
        ok = ok && lb >= la + g.dot(b - a) + 0.5 * cfg.mu() * (b - a).squaredNorm() - 1e-12;
    }
    CHECK(ok);
}

TEST_CASE("project_ball") {
    Vector a(2);
    a << 3, 4;
    const Vector p = project_ball(a, 1.0);
    CHECK(p(0) == doctest::Approx(0.6));
    CHECK(p(1) == doctest::Approx(0.8));
    CHECK(project_ball(p, 1.0) == p);
    CHECK(project_ball(a, 10.0) == a);
    CHECK_THROWS_AS(project_ball(a, 0.0), InvalidArgument);
}

TEST_CASE("step size and derived config") {
    TrainConfig cfg;
    cfg.lambda = 0.25;
    cfg.M = 4;
    cfg.q_min = 0.5;
    CHECK(cfg.mu() == doctest::Approx(0.5));
    CHECK(step_size(0, cfg) == doctest::Approx(2.0));
    for (std::size_t t : {1u, 5u, 100u})
        CHECK(step_size(2 * t, cfg) / step_size(t, cfg) == doctest::Approx(double(t + 1) / double(2 * t + 1)));
    double harmonic = 0.0;
    const std::size_t n = 100000;
    for (std::size_t t = 0; t < n; ++t) harmonic += step_size(t, cfg);
    CHECK(harmonic == doctest::Approx((1.0 / 0.5) * (std::log(double(n)) + 0.5772156649)).epsilon(1e-4));

    cfg.f_norm = 3.0;
    CHECK(cfg.radius() == doctest::Approx(2 * std::sqrt(2.0) * 3.0 / std::sqrt(2.0)));
    cfg.N = 3;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("train: fixed point, determinism, errors") {
    auto fs = features(3, 11);
    auto cfg = config(3, 2);
    std::vector<LabeledSample> zeros(2, LabeledSample{Vector::Zero(2), 0.0});
    SequenceStream s0(zeros);
    auto [c0, t0] = train(fs, s0, cfg);
    CHECK(c0.alpha().norm() == 0.0);
    CHECK(t0.records.size() == 2);

    auto data = circle_dataset(300, 12);
    cfg.N = 256;
    ResamplingStream r1(data, 99), r2(data, 99);
    auto [a, ta] = train(fs, r1, cfg);
    auto [b, tb] = train(fs, r2, cfg);
    CHECK(a.alpha() == b.alpha());
    for (std::size_t i = 0; i < ta.records.size(); ++i) CHECK(ta.records[i].loss == tb.records[i].loss);

    SequenceStream short_stream(std::span<const LabeledSample>(data).first(100));
    CHECK_THROWS_AS(train(fs, short_stream, cfg), InvalidArgument);
    cfg.M = 4;
    SequenceStream s1(data);
    CHECK_THROWS_AS(train(fs, s1, cfg), InvalidArgument);
}

TEST_CASE("train: prefactor once per iteration, confinement, suffix average") {
    auto fs = features(8, 13);
    auto cfg = config(8, 1000, 1e-4);
    cfg.f_norm = 0.3;  // small radius so projection is active
    auto data = circle_dataset(500, 14);
    ResamplingStream stream(data, 15);
    const auto before = prefactor_evaluations();
    auto [clf, trace] = train(fs, stream, cfg, {true});
    CHECK(prefactor_evaluations() - before == 1000);

    bool confined = true, any_projected = false;
    for (const auto& r : trace.records) {
        confined = confined && r.alpha_norm <= cfg.radius() * (1 + 1e-12);
        any_projected = any_projected || r.projected;
    }
    CHECK(confined);
    CHECK(any_projected);

    REQUIRE(trace.iterates.size() == 1000);
    Vector mean = Vector::Zero(16);
    for (std::size_t t = 501; t <= 1000; ++t) mean += trace.iterates[t - 1];
    mean /= 500.0;
    CHECK((mean - clf.alpha()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(trace.suffix_average == clf.alpha());
}

TEST_CASE("ridge oracle") {
    auto data = circle_dataset(400, 16);
    auto fs = features(6, 17);
    auto cfg = config(6, 2, 1e-2);

    auto sol = ridge_oracle(fs, data, cfg);
    CHECK(regularized_loss_gradient(fs, sol.alpha, data, cfg).cwiseAbs().maxCoeff() <= 1e-8);

    // loss at the solution from the normal equations: (y'y - y'Phi a)/n
    const Matrix pts = [&] {
        Matrix p(400, 2);
        for (int i = 0; i < 400; ++i) p.row(i) = data[i].x.transpose();
        return p;
    }();
    const Matrix Phi = fs.feature_matrix(pts);
    Vector y(400);
    for (int i = 0; i < 400; ++i) y(i) = data[i].y;
    const double closed = (y.squaredNorm() - y.dot(Phi * sol.alpha)) / 400.0;
    CHECK(std::abs(regularized_empirical_loss(Classifier(fs, sol.alpha), data, cfg) - closed) < 1e-8);

    auto heavy = config(6, 2, 1e6);
    CHECK(ridge_oracle(fs, data, heavy).alpha.norm() <= 1e-5);

    // n = 1, M = 1, v = 0: feature (1, 0); alpha = (y / (1 + r), 0) with r = lambda M q_min
    FeatureSet dc(Matrix::Zero(1, 2), FeatureMode::conventional);
    auto c1 = config(1, 2, 0.2);
    std::vector<LabeledSample> one{{Vector::Random(2), -1.0}};
    auto s1 = ridge_oracle(dc, one, c1);
    CHECK(s1.alpha(0) == doctest::Approx(-1.0 / 1.1));
    CHECK(s1.alpha(1) == 0.0);
}

TEST_CASE("theorem hyperparams") {
    auto dof = [](double lam) { return 1.0 + std::log(1.0 / lam); };
    HyperparamConstants c{0.5, 2.0, 0.01};
    auto h0 = theorem_hyperparams(0.5, 2.0, 0.5, 0.01, 1e-12, dof, c);
    CHECK(h0.lambda == doctest::Approx(0.5 * 0.25 / 4.0).epsilon(1e-9));
    CHECK(std::abs(double(h0.N) - 0.01 * std::log(100.0) * 16 / (0.0625 * 0.25)) <= 2.0);
    CHECK(h0.N % 2 == 0);
    CHECK(h0.M == static_cast<std::size_t>(std::ceil(2.0 * dof(h0.lambda) * std::log(dof(h0.lambda) / 0.01))));

    Rng rng(18);
    for (int i = 0; i < 200; ++i) {
        const double delta = 0.05 + 0.95 * uniform01(rng), p = 0.01 + 0.9 * uniform01(rng);
        const double eps = 0.001 + 0.9 * uniform01(rng);
        auto h = theorem_hyperparams(delta, 1 + 3 * uniform01(rng), 0.5, eps, p, dof);
        CHECK(h.N % 2 == 0);
        CHECK(h.M >= 1);
    }

    const double p = 0.3;
    auto a = theorem_hyperparams(0.5, 2.0, 0.5, 0.02, p, dof, c);
    auto b = theorem_hyperparams(0.5, 2.0, 0.5, 0.01, p, dof, c);
    const double prefactor = 16 / (0.0625 * 0.25) * std::pow(2.0 / (a.lambda * 0.5 * std::sqrt(0.5)), 4 * p / (1 - p));
    CHECK(std::abs(double(b.N) - double(a.N) - 0.01 * std::log(2.0) * prefactor) <= 2.0);

    CHECK_THROWS_AS(theorem_hyperparams(0.0, 2.0, 0.5, 0.01, 0.3, dof), InvalidArgument);
    CHECK_THROWS_AS(theorem_hyperparams(0.5, 2.0, 0.5, 0.01, 1.0, dof), InvalidArgument);
    CHECK_THROWS_AS(theorem_hyperparams(0.5, 2.0, 0.5, 1.0, 0.3, dof), InvalidArgument);
}

TEST_CASE("suffix-averaged loss trends down in N") {
    auto data = circle_dataset(2000, 19);
    auto fs = features(16, 20);
    int inversions = 0;
    double prev = 1e300;
    for (int e = 3; e <= 16; ++e) {
        auto cfg = config(16, std::size_t(1) << e, 1e-3);
        // averaged over independent streams
        double loss = 0.0;
        for (std::uint64_t k = 0; k < 8; ++k) {
            ResamplingStream stream(data, 21 + k);
            auto [clf, trace] = train(fs, stream, cfg);
            loss += regularized_empirical_loss(clf, data, cfg) / 8;
        }
        if (loss > prev) ++inversions;
        prev = loss;
    }
    CHECK(inversions <= 2);
}

TEST_CASE("suffix average approaches the ridge optimum") {
    auto data = circle_dataset(2000, 22);
    auto fs = features(32, 23);
    auto cfg = config(32, 50000, 1e-3);
    cfg.f_norm = 4.0;
    const auto opt = ridge_oracle(fs, data, cfg);
    REQUIRE(opt.inside);
    ResamplingStream stream(data, 24);
    auto [clf, trace] = train(fs, stream, cfg);
    const double l_opt = regularized_empirical_loss(Classifier(fs, opt.alpha), data, cfg);
    const double l_sgd = regularized_empirical_loss(clf, data, cfg);
    CHECK(l_sgd >= l_opt - 1e-12);
    CHECK((l_sgd - l_opt) / l_opt <= 0.10);
}

TEST_CASE("classifier file round trip is bit exact") {
    auto fs = features(5, 25);
    Rng rng(26);
    Vector alpha(10);
    for (int i = 0; i < 10; ++i) alpha(i) = uniform01(rng) * 1e-3 - 3.7e-4;
    Classifier c(fs, alpha);
    std::stringstream ss;
    c.save(ss);
    const auto back = Classifier::load(ss);
    CHECK(back.alpha() == c.alpha());
    CHECK(back.features() == c.features());

    std::stringstream truncated;
    fs.save(truncated);
    truncated << "1 2 3\n";
    CHECK_THROWS_AS(Classifier::load(truncated), IoError);
}
