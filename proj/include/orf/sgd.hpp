#pragma once

// Projected SGD with suffix averaging on the regularized square loss
//
//   L(alpha) = E[(y - f(x))^2] + lambda M q_min |alpha|^2,
//   f(x)     = sum_m alpha_{2m} cos(-2 pi v_m.x) + alpha_{2m+1} sin(-2 pi v_m.x).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "orf/kernel_features.hpp"
#include "orf/rng.hpp"

namespace orf {

struct LabeledSample {
    Vector x;
    double y = 0.0;
};

class Classifier {
public:
    Classifier(FeatureSet features, Vector alpha);

    const FeatureSet& features() const { return features_; }
    const Vector& alpha() const { return alpha_; }
    std::size_t n_features() const { return features_.size(); }

    double predict(const Vector& x) const;
    Vector predict(const Matrix& points) const;

    void save(std::ostream& out) const;
    static Classifier load(std::istream& in);

private:
    FeatureSet features_;
    Vector alpha_;
};

struct TrainConfig {
    double lambda = 1e-3;
    std::size_t M = 1;
    std::size_t N = 2;
    double q_min = 1.0;
    double f_norm = 1.0;
    double eta_c = 1.0;

    // 2 sqrt(2) |f*|_F / sqrt(M q_min)
    double radius() const;
    // lambda M q_min
    double mu() const;
    // lambda M q_min, the regularizer weight.
    double reg_weight() const { return mu(); }

    void validate() const;
};

struct TrainRecord {
    std::size_t t = 0;
    // (y_t - f(x_t))^2 + lambda M q_min |alpha^(t)|^2 on the example consumed at step t.
    double loss = 0.0;
    // |alpha^(t+1)| after projection.
    double alpha_norm = 0.0;
    double eta = 0.0;
    bool projected = false;
};

struct TrainTrace {
    std::vector<TrainRecord> records;
    Vector suffix_average;
    // alpha^(1) .. alpha^(N), kept only on request.
    std::vector<Vector> iterates;
};

struct TrainOptions {
    bool keep_iterates = false;
};

double regularized_empirical_loss(const Classifier& c, std::span<const LabeledSample> data, const TrainConfig& cfg);

// Analytic gradient of regularized_empirical_loss with respect to alpha.
Vector regularized_loss_gradient(const FeatureSet& fs, const Vector& alpha, std::span<const LabeledSample> data,
                                 const TrainConfig& cfg);

// C * phi(x_t) + 2 lambda M q_min alpha with the shared prefactor
// C = 2 (f(x_t) - y_t) computed once.
Vector grad_estimate(const Vector& alpha, const FeatureSet& fs, const Vector& x, double y, const TrainConfig& cfg);

// Number of prefactor evaluations performed so far in this process.
std::uint64_t prefactor_evaluations();

Vector project_ball(const Vector& alpha, double radius);

// eta_c / (mu (t + 1))
double step_size(std::size_t t, const TrainConfig& cfg);

class ExampleStream {
public:
    virtual ~ExampleStream() = default;
    virtual std::optional<LabeledSample> next() = 0;
};

// Each example of a fixed sequence exactly once, in order.
class SequenceStream : public ExampleStream {
public:
    explicit SequenceStream(std::span<const LabeledSample> data) : data_(data) {}
    std::optional<LabeledSample> next() override;

private:
    std::span<const LabeledSample> data_;
    std::size_t pos_ = 0;
};

// IID draws with replacement from a fixed dataset; never exhausts.
class ResamplingStream : public ExampleStream {
public:
    ResamplingStream(std::span<const LabeledSample> data, std::uint64_t seed);
    std::optional<LabeledSample> next() override;

private:
    std::span<const LabeledSample> data_;
    Rng rng_;
};

// Wraps a generator callback.
class GeneratorStream : public ExampleStream {
public:
    explicit GeneratorStream(std::function<LabeledSample()> gen) : gen_(std::move(gen)) {}
    std::optional<LabeledSample> next() override { return gen_(); }

private:
    std::function<LabeledSample()> gen_;
};

// alpha^(0) = 0; alpha^(t+1) = Pi_W(alpha^(t) - eta_t g_t) for t < N; returns
// the mean of alpha^(N/2+1) .. alpha^(N).
std::pair<Classifier, TrainTrace> train(const FeatureSet& fs, ExampleStream& stream, const TrainConfig& cfg,
                                        const TrainOptions& opts = {});

struct RidgeSolution {
    Vector alpha;      // unconstrained minimizer
    Vector projected;  // projection onto the radius ball
    bool inside = true;
};

// Solves (Phi'Phi/n + lambda M q_min I) alpha = Phi'y / n.
RidgeSolution ridge_oracle(const FeatureSet& fs, std::span<const LabeledSample> data, const TrainConfig& cfg);

struct HyperparamConstants {
    double c_lambda = 1.0;
    double c_M = 1.0;
    double c_N = 1.0;
};

struct Hyperparams {
    double lambda = 0.0;
    std::size_t M = 0;
    std::size_t N = 0;
};

// lambda = c_l (delta^2 / f^2) (delta / (f sqrt(q_min)))^(-2p/(1+p))
// M      = ceil(c_M d(lambda) log(d(lambda) / eps))
// N      = c_N log(1/eps) f^4 / (delta^4 q_min^2) (f / (lambda delta sqrt(q_min)))^(4p/(1-p)),
//          rounded up to even
Hyperparams theorem_hyperparams(double delta, double f_norm, double q_min, double epsilon, double p,
                                const std::function<double(double)>& dof, const HyperparamConstants& constants = {});

}  // namespace orf
