#pragma once

// Gaussian kernel, its Fourier measure, and Fourier feature maps.
//
// Convention: phi(v, x) = exp(-2*pi*i v.x), so that
//   k(x, x') = exp(-gamma |x - x'|^2) = E_{v ~ tau}[cos(2*pi v.(x - x'))]
// with tau = N(0, gamma / (2*pi^2) I).

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "orf/rng.hpp"

namespace orf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

class GaussianKernel {
public:
    GaussianKernel(double gamma, int dim);

    double gamma() const { return gamma_; }
    int dim() const { return dim_; }

    double eval(const Vector& x, const Vector& y) const;

    // Per-coordinate variance of the Fourier measure tau.
    double tau_variance() const;
    double tau_stddev() const;

    // Full Gram matrix of the rows of `points`.
    Matrix gram(const Matrix& points) const;

private:
    double gamma_;
    int dim_;
};

double eval_kernel(const GaussianKernel& kern, const Vector& x, const Vector& y);

// One frequency drawn from tau.
Vector sample_tau(const GaussianKernel& kern, Rng& rng);

// (cos(-2 pi v.x), sin(-2 pi v.x))
std::pair<double, double> feature_pair(const Vector& v, const Vector& x);

struct RealFeatureParams {
    Vector v;
    double b = 0.0;  // phase offset in [0, 1]
};

// sqrt(2) cos(-2 pi v.x + 2 pi b)
double feature_real(const RealFeatureParams& p, const Vector& x);

enum class FeatureMode { conventional, optimized };

std::string to_string(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& s);

// M sampled frequencies (rows) plus optional leverage values.
class FeatureSet {
public:
    FeatureSet(Matrix freqs, FeatureMode mode, std::optional<Vector> leverage = std::nullopt,
               std::optional<double> lambda = std::nullopt);

    std::size_t size() const { return static_cast<std::size_t>(freqs_.rows()); }
    int dim() const { return static_cast<int>(freqs_.cols()); }
    const Matrix& freqs() const { return freqs_; }
    Vector freq(std::size_t m) const { return freqs_.row(static_cast<Eigen::Index>(m)).transpose(); }
    FeatureMode mode() const { return mode_; }
    const std::optional<Vector>& leverage_values() const { return leverage_; }
    const std::optional<double>& lambda() const { return lambda_; }

    // Interleaved [cos_0, sin_0, cos_1, sin_1, ...] at x, length 2M.
    Vector feature_vector(const Vector& x) const;

    // Rows are feature_vector(points.row(i)); n x 2M.
    Matrix feature_matrix(const Matrix& points) const;

    void save(std::ostream& out) const;
    static FeatureSet load(std::istream& in);

    friend bool operator==(const FeatureSet& a, const FeatureSet& b);

private:
    Matrix freqs_;
    FeatureMode mode_;
    std::optional<Vector> leverage_;
    std::optional<double> lambda_;
};

// (1/M) sum_m cos(2 pi v_m.(x - x')) via the cos/sin pair.
double kernel_mc_estimate(const FeatureSet& fs, const Vector& x, const Vector& y);

// sum_m cos(2 pi v_m.(x - x')) / (M q_m).
double kernel_importance_estimate(const FeatureSet& fs, const Vector& x, const Vector& y);

}  // namespace orf
