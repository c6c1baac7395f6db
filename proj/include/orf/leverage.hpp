#pragma once

// Empirical integral operator and the optimized (leverage-weighted)
// distribution over Fourier frequencies.
//
// Sigma is represented by K / N0 on the unlabeled points. For a frequency v,
// with c_j = cos(2 pi v.x_j) and s_j = sin(2 pi v.x_j),
//
//   l(v) = (1/N0) (c' A^-1 c + s' A^-1 s),   A = K/N0 + lambda I
//   d(lambda) = tr (K/N0) A^-1 = E_{v ~ tau}[ l(v) ]
//   q*(v) = l(v) / d(lambda)   <=   1 / (lambda d(lambda))

#include <cstddef>
#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "orf/count_tree.hpp"
#include "orf/kernel_features.hpp"
#include "orf/rng.hpp"

namespace orf {

class SpectralModel {
public:
    static SpectralModel build(Matrix points, const GaussianKernel& kern, double lambda);

    // Uses every stored cell center, repeated by its count.
    static SpectralModel from_count_tree(const CountTree& tree, const GaussianKernel& kern, double lambda);

    const Matrix& points() const { return points_; }
    const GaussianKernel& kernel() const { return kern_; }
    const Matrix& gram() const { return gram_; }
    // Eigenvalues of K/N0, descending, clipped at zero.
    const Vector& eigenvalues() const { return eigs_; }
    double lambda() const { return lambda_; }
    std::size_t n_points() const { return static_cast<std::size_t>(points_.rows()); }

    // Eigenvalues above 1e-12.
    std::size_t rank() const;

    // sum_i mu_i / (mu_i + lambda)
    double degree_of_freedom(double lambda) const;
    double degree_of_freedom() const { return dof_; }
    // tr (K/N0)(K/N0 + lambda I)^-1 via a Cholesky solve.
    double degree_of_freedom_trace(double lambda) const;

    double unnormalized_leverage(const Vector& v) const;
    // One value per row of `freqs`.
    Vector unnormalized_leverage(const Matrix& freqs) const;

    double leverage_score(const Vector& v) const;
    // Throws when `lambda` is not the model's.
    double leverage_score(const Vector& v, double lambda) const;

    double q_max_bound() const { return q_max_bound(lambda_); }
    double q_max_bound(double lambda) const;
    // Mean acceptance of rejection sampling from tau: lambda * d(lambda).
    double expected_acceptance() const { return lambda_ * dof_; }

private:
    SpectralModel(Matrix points, const GaussianKernel& kern, double lambda);

    Matrix points_;
    GaussianKernel kern_;
    double lambda_;
    Matrix gram_;
    Vector eigs_;
    Matrix eigvecs_;
    // U diag((mu + lambda)^-1/2): l(v) = (|W'c|^2 + |W's|^2) / N0.
    Matrix whiten_;
    Eigen::LLT<Matrix> ridge_factor_;
    double dof_;
};

struct SamplerOptions {
    double acceptance_floor = 1e-6;
    std::size_t trial_budget = 100000;
    // Sample from (q/2 + 1/2) tau instead of q tau.
    bool bottom_raised = false;
};

struct SamplerStats {
    std::size_t proposals = 0;
    std::size_t accepted = 0;
    double acceptance_rate = 0.0;
    double expected_acceptance = 0.0;
    double seconds = 0.0;
    double seconds_per_sample = 0.0;
};

FeatureSet sample_conventional(const GaussianKernel& kern, std::size_t count, Rng& rng);

// Exact draws from q*(v) tau(v) by rejection against the envelope
// 1 / (lambda d(lambda)). Throws SamplerAbort when, after `trial_budget`
// proposals, the observed acceptance rate is below the floor.
FeatureSet sample_optimized_rejection(const SpectralModel& model, std::size_t count, Rng& rng,
                                      const SamplerOptions& opts = {}, SamplerStats* stats = nullptr);

// Regular grid over [-half_width, half_width]^D in frequency space.
struct FrequencyGrid {
    int dim = 1;
    double half_width = 1.0;
    int cells_per_dim = 200;

    // Smallest symmetric box holding all but `mass_tolerance` of tau.
    static FrequencyGrid covering(const GaussianKernel& kern, int cells_per_dim, double mass_tolerance = 1e-7);

    double cell_width() const { return 2.0 * half_width / cells_per_dim; }
    std::size_t n_cells() const;
    Vector cell_center(std::size_t index) const;
    double tau_mass(const GaussianKernel& kern) const;
};

// q*(v) tau(v) integrated cell-by-cell (tau mass of the cell times q* at its
// center), then normalized.
class GridTabulation {
public:
    static GridTabulation tabulate(const SpectralModel& model, const FrequencyGrid& grid,
                                   bool bottom_raised = false, double mass_tolerance = 1e-6);

    const FrequencyGrid& grid() const { return grid_; }
    // Normalized cell probabilities; sums to 1.
    const Vector& probabilities() const { return probs_; }
    // Unnormalized sum of q* times cell tau mass; approximates the integral of q* dtau.
    double raw_mass() const { return raw_mass_; }

    // Inverse-CDF cell choice, jittered uniformly within the cell.
    Vector sample(Rng& rng) const;

private:
    FrequencyGrid grid_;
    Vector probs_;
    std::vector<double> cdf_;
    double raw_mass_ = 0.0;
};

FeatureSet sample_optimized_grid(const SpectralModel& model, std::size_t count, const FrequencyGrid& grid,
                                 Rng& rng, bool bottom_raised = false);

}  // namespace orf
