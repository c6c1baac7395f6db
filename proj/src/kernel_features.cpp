#include "orf/kernel_features.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "orf/errors.hpp"
#include "orf/text_io.hpp"

namespace orf {

namespace {

void check_dim(const char* where, long expected, long got) {
    if (expected != got) throw DimensionMismatch(where, expected, got);
}

}  // namespace

GaussianKernel::GaussianKernel(double gamma, int dim) : gamma_(gamma), dim_(dim) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("GaussianKernel: gamma must be positive");
    if (dim < 1) throw InvalidArgument("GaussianKernel: dim must be >= 1");
}

double GaussianKernel::eval(const Vector& x, const Vector& y) const {
    check_dim("eval_kernel", dim_, x.size());
    check_dim("eval_kernel", dim_, y.size());
    return std::exp(-gamma_ * (x - y).squaredNorm());
}

double GaussianKernel::tau_variance() const { return gamma_ / (2.0 * M_PI * M_PI); }

double GaussianKernel::tau_stddev() const { return std::sqrt(tau_variance()); }

Matrix GaussianKernel::gram(const Matrix& points) const {
    check_dim("GaussianKernel::gram", dim_, points.cols());
    const Eigen::Index n = points.rows();
    const Vector sq = points.rowwise().squaredNorm();
    Matrix d2 = (-2.0 * points * points.transpose()).colwise() + sq;
    d2.rowwise() += sq.transpose();
    Matrix k = (-gamma_ * d2.cwiseMax(0.0)).array().exp().matrix();
    // Exact symmetry and unit diagonal regardless of rounding in d2.
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) k(i, j) = k(j, i);
    }
    return k;
}

double eval_kernel(const GaussianKernel& kern, const Vector& x, const Vector& y) { return kern.eval(x, y); }

Vector sample_tau(const GaussianKernel& kern, Rng& rng) {
    std::normal_distribution<double> normal(0.0, kern.tau_stddev());
    Vector v(kern.dim());
    for (int i = 0; i < kern.dim(); ++i) v[i] = normal(rng);
    return v;
}

std::pair<double, double> feature_pair(const Vector& v, const Vector& x) {
    check_dim("feature_pair", v.size(), x.size());
    const double arg = -kTwoPi * v.dot(x);
    return {std::cos(arg), std::sin(arg)};
}

double feature_real(const RealFeatureParams& p, const Vector& x) {
    check_dim("feature_real", p.v.size(), x.size());
    if (!(p.b >= 0.0 && p.b <= 1.0)) throw InvalidArgument("feature_real: b must lie in [0, 1]");
    return std::sqrt(2.0) * std::cos(-kTwoPi * p.v.dot(x) + kTwoPi * p.b);
}

std::string to_string(FeatureMode mode) {
    return mode == FeatureMode::conventional ? "conventional" : "optimized";
}

FeatureMode parse_feature_mode(const std::string& s) {
    if (s == "conventional") return FeatureMode::conventional;
    if (s == "optimized") return FeatureMode::optimized;
    throw InvalidArgument("unknown feature mode '" + s + "'");
}

FeatureSet::FeatureSet(Matrix freqs, FeatureMode mode, std::optional<Vector> leverage,
                       std::optional<double> lambda)
    : freqs_(std::move(freqs)), mode_(mode), leverage_(std::move(leverage)), lambda_(lambda) {
    if (freqs_.rows() < 1) throw InvalidArgument("FeatureSet: empty feature set");
    if (freqs_.cols() < 1) throw InvalidArgument("FeatureSet: frequencies need dim >= 1");
    if (!freqs_.allFinite()) throw NumericError("FeatureSet: non-finite frequency");
    if (leverage_) {
        if (leverage_->size() != freqs_.rows())
            throw DimensionMismatch("FeatureSet leverage values", freqs_.rows(), leverage_->size());
        if (!((leverage_->array() > 0.0).all()) || !leverage_->allFinite())
            throw InvalidArgument("FeatureSet: leverage values must be finite and positive");
    }
    if (lambda_ && !(*lambda_ > 0.0)) throw InvalidArgument("FeatureSet: lambda must be positive");
}

Vector FeatureSet::feature_vector(const Vector& x) const {
    check_dim("FeatureSet::feature_vector", freqs_.cols(), x.size());
    const Vector phase = -kTwoPi * (freqs_ * x);
    Vector out(2 * phase.size());
    for (Eigen::Index m = 0; m < phase.size(); ++m) {
        out[2 * m] = std::cos(phase[m]);
        out[2 * m + 1] = std::sin(phase[m]);
    }
    return out;
}

Matrix FeatureSet::feature_matrix(const Matrix& points) const {
    check_dim("FeatureSet::feature_matrix", freqs_.cols(), points.cols());
    const Matrix phase = -kTwoPi * (points * freqs_.transpose());
    Matrix out(points.rows(), 2 * freqs_.rows());
    for (Eigen::Index m = 0; m < freqs_.rows(); ++m) {
        out.col(2 * m) = phase.col(m).array().cos().matrix();
        out.col(2 * m + 1) = phase.col(m).array().sin().matrix();
    }
    return out;
}

void FeatureSet::save(std::ostream& out) const {
    out << "# mode=" << to_string(mode_) << " M=" << freqs_.rows() << " D=" << freqs_.cols()
        << " lambda=" << (lambda_ ? text::fmt(*lambda_) : std::string("none")) << '\n';
    for (Eigen::Index m = 0; m < freqs_.rows(); ++m) {
        out << text::join(freqs_.row(m).transpose(), ' ');
        if (leverage_) out << " q=" << text::fmt((*leverage_)[m]);
        out << '\n';
    }
}

FeatureSet FeatureSet::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || text::trim(line).substr(0, 1) != "#")
        throw IoError("feature set: missing header line");
    const auto kv = text::parse_header(line);
    const auto mode = parse_feature_mode(text::require(kv, "mode"));
    const auto rows = text::parse_int(text::require(kv, "M"), "M");
    const auto cols = text::parse_int(text::require(kv, "D"), "D");
    if (rows < 1 || cols < 1) throw IoError("feature set: M and D must be positive");
    std::optional<double> lambda;
    if (const auto& l = text::require(kv, "lambda"); l != "none") lambda = text::parse_double(l, "lambda");

    Matrix freqs(rows, cols);
    Vector lev(rows);
    bool any_q = false;
    bool all_q = true;
    for (long long m = 0; m < rows; ++m) {
        if (!std::getline(in, line)) throw IoError("feature set: expected " + std::to_string(rows) + " rows");
        auto tokens = text::split_ws(line);
        bool has_q = !tokens.empty() && tokens.back().rfind("q=", 0) == 0;
        if (has_q) {
            lev[m] = text::parse_double(tokens.back().substr(2), "leverage value");
            tokens.pop_back();
        }
        any_q |= has_q;
        all_q &= has_q;
        if (static_cast<long long>(tokens.size()) != cols)
            throw IoError("feature set: row " + std::to_string(m) + " has " + std::to_string(tokens.size()) +
                          " entries, expected " + std::to_string(cols));
        for (long long d = 0; d < cols; ++d) freqs(m, d) = text::parse_double(tokens[d], "frequency");
    }
    if (any_q && !all_q) throw IoError("feature set: q column present on some rows only");
    return FeatureSet(std::move(freqs), mode, any_q ? std::optional<Vector>(lev) : std::nullopt, lambda);
}

bool operator==(const FeatureSet& a, const FeatureSet& b) {
    if (a.mode_ != b.mode_ || a.lambda_ != b.lambda_) return false;
    if (a.freqs_.rows() != b.freqs_.rows() || a.freqs_.cols() != b.freqs_.cols()) return false;
    if (a.freqs_ != b.freqs_) return false;
    if (a.leverage_.has_value() != b.leverage_.has_value()) return false;
    return !a.leverage_ || *a.leverage_ == *b.leverage_;
}

namespace {

// cos(-2pi v.x)cos(-2pi v.y) + sin(-2pi v.x)sin(-2pi v.y) for every row v,
// evaluated as cos(2pi v.(x - y)) so that x == y yields exactly 1.
Vector pair_products(const FeatureSet& fs, const Vector& x, const Vector& y) {
    check_dim("kernel estimate", fs.dim(), x.size());
    check_dim("kernel estimate", fs.dim(), y.size());
    const Vector diff = x - y;
    return (kTwoPi * (fs.freqs() * diff)).array().cos().matrix();
}

}  // namespace

double kernel_mc_estimate(const FeatureSet& fs, const Vector& x, const Vector& y) {
    return pair_products(fs, x, y).mean();
}

double kernel_importance_estimate(const FeatureSet& fs, const Vector& x, const Vector& y) {
    if (!fs.leverage_values()) throw InvalidArgument("kernel_importance_estimate: feature set has no leverage values");
    const Vector& q = *fs.leverage_values();
    const double m = static_cast<double>(fs.size());
    return (pair_products(fs, x, y).array() / (m * q.array())).sum();
}

}  // namespace orf
