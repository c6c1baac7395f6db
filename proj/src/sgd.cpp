#include "orf/sgd.hpp"

#include <atomic>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "orf/errors.hpp"
#include "orf/text_io.hpp"

namespace orf {

namespace {

std::atomic<std::uint64_t> g_prefactor_evals{0};

void check_alpha(const FeatureSet& fs, const Vector& alpha, const char* where) {
    const auto expected = static_cast<long>(2 * fs.size());
    if (alpha.size() != expected) throw DimensionMismatch(where, expected, alpha.size());
}

}  // namespace

Classifier::Classifier(FeatureSet features, Vector alpha) : features_(std::move(features)), alpha_(std::move(alpha)) {
    check_alpha(features_, alpha_, "Classifier");
    if (!alpha_.allFinite()) throw NumericError("Classifier: non-finite coefficient");
}

double Classifier::predict(const Vector& x) const { return features_.feature_vector(x).dot(alpha_); }

Vector Classifier::predict(const Matrix& points) const { return features_.feature_matrix(points) * alpha_; }

void Classifier::save(std::ostream& out) const {
    features_.save(out);
    out << text::join(alpha_, ' ') << '\n';
}

Classifier Classifier::load(std::istream& in) {
    auto fs = FeatureSet::load(in);
    std::string line;
    if (!std::getline(in, line)) throw IoError("classifier: missing coefficient line");
    const auto tokens = text::split_ws(line);
    if (tokens.size() != 2 * fs.size())
        throw IoError("classifier: expected " + std::to_string(2 * fs.size()) + " coefficients, got " +
                      std::to_string(tokens.size()));
    Vector alpha(static_cast<Eigen::Index>(tokens.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i)
        alpha[static_cast<Eigen::Index>(i)] = text::parse_double(tokens[i], "coefficient");
    return Classifier(std::move(fs), std::move(alpha));
}

double TrainConfig::radius() const {
    return 2.0 * std::sqrt(2.0) * f_norm / std::sqrt(static_cast<double>(M) * q_min);
}

double TrainConfig::mu() const { return lambda * static_cast<double>(M) * q_min; }

void TrainConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("TrainConfig: lambda must be positive");
    if (M < 1) throw InvalidArgument("TrainConfig: M must be >= 1");
    if (N < 2 || N % 2 != 0) throw InvalidArgument("TrainConfig: N must be a positive even number");
    if (!(q_min > 0.0 && q_min <= 1.0)) throw InvalidArgument("TrainConfig: q_min must lie in (0, 1]");
    if (!(f_norm > 0.0) || !std::isfinite(f_norm)) throw InvalidArgument("TrainConfig: f_norm must be positive");
    if (!(eta_c > 0.0) || !std::isfinite(eta_c)) throw InvalidArgument("TrainConfig: eta_c must be positive");
}

double regularized_empirical_loss(const Classifier& c, std::span<const LabeledSample> data, const TrainConfig& cfg) {
    if (data.empty()) throw InvalidArgument("regularized_empirical_loss: empty data");
    double sum = 0.0;
    for (const auto& s : data) {
        const double r = s.y - c.predict(s.x);
        sum += r * r;
    }
    return sum / static_cast<double>(data.size()) + cfg.reg_weight() * c.alpha().squaredNorm();
}

Vector regularized_loss_gradient(const FeatureSet& fs, const Vector& alpha, std::span<const LabeledSample> data,
                                 const TrainConfig& cfg) {
    if (data.empty()) throw InvalidArgument("regularized_loss_gradient: empty data");
    check_alpha(fs, alpha, "regularized_loss_gradient");
    Vector g = Vector::Zero(alpha.size());
    for (const auto& s : data) {
        const Vector phi = fs.feature_vector(s.x);
        g += 2.0 * (phi.dot(alpha) - s.y) * phi;
    }
    g /= static_cast<double>(data.size());
    g += 2.0 * cfg.reg_weight() * alpha;
    return g;
}

Vector grad_estimate(const Vector& alpha, const FeatureSet& fs, const Vector& x, double y, const TrainConfig& cfg) {
    check_alpha(fs, alpha, "grad_estimate");
    const Vector phi = fs.feature_vector(x);
    const double prefactor = 2.0 * (phi.dot(alpha) - y);
    g_prefactor_evals.fetch_add(1, std::memory_order_relaxed);
    return prefactor * phi + 2.0 * cfg.reg_weight() * alpha;
}

std::uint64_t prefactor_evaluations() { return g_prefactor_evals.load(std::memory_order_relaxed); }

Vector project_ball(const Vector& alpha, double radius) {
    if (!(radius > 0.0)) throw InvalidArgument("project_ball: radius must be positive");
    const double norm = alpha.norm();
    if (norm <= radius) return alpha;
    return alpha * (radius / norm);
}

double step_size(std::size_t t, const TrainConfig& cfg) {
    return cfg.eta_c / (cfg.mu() * static_cast<double>(t + 1));
}

std::optional<LabeledSample> SequenceStream::next() {
    if (pos_ >= data_.size()) return std::nullopt;
    return data_[pos_++];
}

ResamplingStream::ResamplingStream(std::span<const LabeledSample> data, std::uint64_t seed)
    : data_(data), rng_(seed) {
    if (data_.empty()) throw InvalidArgument("ResamplingStream: empty dataset");
}

std::optional<LabeledSample> ResamplingStream::next() {
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    return data_[pick(rng_)];
}

std::pair<Classifier, TrainTrace> train(const FeatureSet& fs, ExampleStream& stream, const TrainConfig& cfg,
                                        const TrainOptions& opts) {
    cfg.validate();
    if (cfg.M != fs.size())
        throw InvalidArgument("train: config M=" + std::to_string(cfg.M) + " but feature set has " +
                              std::to_string(fs.size()) + " features");
    const double radius = cfg.radius();
    const double reg = cfg.reg_weight();
    const std::size_t half = cfg.N / 2;

    Vector alpha = Vector::Zero(static_cast<Eigen::Index>(2 * fs.size()));
    Vector suffix_sum = Vector::Zero(alpha.size());
    TrainTrace trace;
    trace.records.reserve(cfg.N);
    if (opts.keep_iterates) trace.iterates.reserve(cfg.N);

    for (std::size_t t = 0; t < cfg.N; ++t) {
        auto sample = stream.next();
        if (!sample)
            throw InvalidArgument("train: stream exhausted after " + std::to_string(t) + " of " +
                                  std::to_string(cfg.N) + " examples");
        const Vector phi = fs.feature_vector(sample->x);
        // Shared prefactor, once per iteration.
        const double fx = phi.dot(alpha);
        const double prefactor = 2.0 * (fx - sample->y);
        g_prefactor_evals.fetch_add(1, std::memory_order_relaxed);

        TrainRecord rec;
        rec.t = t;
        rec.loss = (sample->y - fx) * (sample->y - fx) + reg * alpha.squaredNorm();
        rec.eta = step_size(t, cfg);

        alpha -= rec.eta * (prefactor * phi + 2.0 * reg * alpha);
        const double norm = alpha.norm();
        if (!std::isfinite(norm)) throw NumericError("train: non-finite update at iteration " + std::to_string(t));
        if (norm > radius) {
            alpha *= radius / norm;
            rec.projected = true;
        }
        rec.alpha_norm = alpha.norm();
        trace.records.push_back(rec);
        if (opts.keep_iterates) trace.iterates.push_back(alpha);
        // alpha now holds alpha^(t+1); accumulate t+1 in (N/2, N].
        if (t + 1 > half) suffix_sum += alpha;
    }
    trace.suffix_average = suffix_sum / static_cast<double>(half);
    Classifier clf(fs, trace.suffix_average);
    return {std::move(clf), std::move(trace)};
}

RidgeSolution ridge_oracle(const FeatureSet& fs, std::span<const LabeledSample> data, const TrainConfig& cfg) {
    if (data.empty()) throw InvalidArgument("ridge_oracle: empty data");
    const auto n = static_cast<Eigen::Index>(data.size());
    Matrix points(n, fs.dim());
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (data[static_cast<std::size_t>(i)].x.size() != fs.dim())
            throw DimensionMismatch("ridge_oracle", fs.dim(), data[static_cast<std::size_t>(i)].x.size());
        points.row(i) = data[static_cast<std::size_t>(i)].x.transpose();
        y[i] = data[static_cast<std::size_t>(i)].y;
    }
    const Matrix phi = fs.feature_matrix(points);
    Matrix normal = phi.transpose() * phi / static_cast<double>(n);
    normal.diagonal().array() += cfg.reg_weight();
    const Vector rhs = phi.transpose() * y / static_cast<double>(n);
    Eigen::LLT<Matrix> llt(normal);
    if (llt.info() != Eigen::Success) throw NumericError("ridge_oracle: normal equations not positive definite");

    RidgeSolution sol;
    sol.alpha = llt.solve(rhs);
    const double radius = cfg.radius();
    sol.inside = sol.alpha.norm() <= radius;
    sol.projected = project_ball(sol.alpha, radius);
    return sol;
}

Hyperparams theorem_hyperparams(double delta, double f_norm, double q_min, double epsilon, double p,
                                const std::function<double(double)>& dof, const HyperparamConstants& constants) {
    if (!(delta > 0.0 && delta <= 1.0)) throw InvalidArgument("theorem_hyperparams: delta must lie in (0, 1]");
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("theorem_hyperparams: p must lie in (0, 1)");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("theorem_hyperparams: epsilon must lie in (0, 1)");
    if (!(f_norm > 0.0)) throw InvalidArgument("theorem_hyperparams: f_norm must be positive");
    if (!(q_min > 0.0 && q_min <= 1.0)) throw InvalidArgument("theorem_hyperparams: q_min must lie in (0, 1]");
    if (!(constants.c_lambda > 0.0 && constants.c_M > 0.0 && constants.c_N > 0.0))
        throw InvalidArgument("theorem_hyperparams: constants must be positive");

    const double ratio = delta / (f_norm * std::sqrt(q_min));
    Hyperparams h;
    h.lambda = constants.c_lambda * (delta * delta) / (f_norm * f_norm) * std::pow(ratio, -2.0 * p / (1.0 + p));

    const double d = dof(h.lambda);
    const double m_real = constants.c_M * d * std::log(d / epsilon);
    h.M = static_cast<std::size_t>(std::max(1.0, std::ceil(m_real)));

    const double base = std::log(1.0 / epsilon) * std::pow(f_norm, 4) / (std::pow(delta, 4) * q_min * q_min);
    const double inflate = std::pow(f_norm / (h.lambda * delta * std::sqrt(q_min)), 4.0 * p / (1.0 - p));
    const double n_real = constants.c_N * base * inflate;
    auto n = static_cast<std::size_t>(std::max(2.0, std::ceil(n_real)));
    if (n % 2) ++n;
    h.N = n;
    return h;
}

}  // namespace orf
