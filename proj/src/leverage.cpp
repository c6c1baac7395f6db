#include "orf/leverage.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "orf/errors.hpp"

namespace orf {

namespace {

constexpr double kRankThreshold = 1e-12;
constexpr double kNegativeEigTolerance = 1e-10;
constexpr Eigen::Index kProposalBatch = 256;

Matrix leverage_stack(const Matrix& points, const Matrix& freqs, const Matrix& whiten) {
    // Column b holds |W' c_b|^2 + |W' s_b|^2 contributions.
    const Matrix phase = kTwoPi * (points * freqs.transpose());
    const Matrix wc = whiten.transpose() * phase.array().cos().matrix();
    const Matrix ws = whiten.transpose() * phase.array().sin().matrix();
    return (wc.colwise().squaredNorm() + ws.colwise().squaredNorm()).transpose();
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

SpectralModel::SpectralModel(Matrix points, const GaussianKernel& kern, double lambda)
    : points_(std::move(points)), kern_(kern), lambda_(lambda), dof_(0.0) {}

SpectralModel SpectralModel::build(Matrix points, const GaussianKernel& kern, double lambda) {
    if (points.rows() < 1) throw InvalidArgument("build_spectral_model: need at least one point");
    if (points.cols() != kern.dim()) throw DimensionMismatch("build_spectral_model", kern.dim(), points.cols());
    if (!points.allFinite()) throw NumericError("build_spectral_model: non-finite point");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("build_spectral_model: lambda must be positive");

    SpectralModel model(std::move(points), kern, lambda);
    const auto n = model.points_.rows();
    model.gram_ = kern.gram(model.points_);
    const Matrix op = model.gram_ / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Matrix> solver(op);
    if (solver.info() != Eigen::Success) throw NumericError("build_spectral_model: eigendecomposition failed");
    if (solver.eigenvalues().minCoeff() < -kNegativeEigTolerance)
        throw NumericError("build_spectral_model: Gram matrix is indefinite beyond tolerance");

    // Eigen returns ascending order; flip to descending.
    model.eigs_ = solver.eigenvalues().reverse().cwiseMax(0.0);
    model.eigvecs_ = solver.eigenvectors().rowwise().reverse();
    const Vector inv_sqrt = (model.eigs_.array() + lambda).rsqrt().matrix();
    model.whiten_ = model.eigvecs_ * inv_sqrt.asDiagonal();

    model.ridge_factor_.compute(op + lambda * Matrix::Identity(n, n));
    if (model.ridge_factor_.info() != Eigen::Success) throw NumericError("build_spectral_model: ridge factorization failed");
    model.dof_ = model.degree_of_freedom(lambda);
    return model;
}

SpectralModel SpectralModel::from_count_tree(const CountTree& tree, const GaussianKernel& kern, double lambda) {
    const auto total = tree.total();
    if (total < 1) throw InvalidArgument("from_count_tree: empty tree");
    Matrix points(total, tree.spec().dim());
    Eigen::Index row = 0;
    for (const auto& [cell, count] : tree.leaf_distribution()) {
        const Vector center = tree.spec().cell_center(cell);
        for (std::int64_t k = 0; k < count; ++k) points.row(row++) = center.transpose();
    }
    return build(std::move(points), kern, lambda);
}

std::size_t SpectralModel::rank() const {
    return static_cast<std::size_t>((eigs_.array() > kRankThreshold).count());
}

double SpectralModel::degree_of_freedom(double lambda) const {
    if (!(lambda > 0.0)) throw InvalidArgument("degree_of_freedom: lambda must be positive");
    return (eigs_.array() / (eigs_.array() + lambda)).sum();
}

double SpectralModel::degree_of_freedom_trace(double lambda) const {
    if (!(lambda > 0.0)) throw InvalidArgument("degree_of_freedom_trace: lambda must be positive");
    const auto n = points_.rows();
    const Matrix op = gram_ / static_cast<double>(n);
    if (lambda == lambda_) return ridge_factor_.solve(op).trace();
    Eigen::LLT<Matrix> factor(op + lambda * Matrix::Identity(n, n));
    return factor.solve(op).trace();
}

double SpectralModel::unnormalized_leverage(const Vector& v) const {
    if (v.size() != kern_.dim()) throw DimensionMismatch("leverage_score", kern_.dim(), v.size());
    if (!v.allFinite()) throw NumericError("leverage_score: non-finite frequency");
    return unnormalized_leverage(Matrix(v.transpose()))[0];
}

Vector SpectralModel::unnormalized_leverage(const Matrix& freqs) const {
    if (freqs.cols() != kern_.dim()) throw DimensionMismatch("leverage_score", kern_.dim(), freqs.cols());
    return leverage_stack(points_, freqs, whiten_) / static_cast<double>(points_.rows());
}

double SpectralModel::leverage_score(const Vector& v) const { return unnormalized_leverage(v) / dof_; }

double SpectralModel::leverage_score(const Vector& v, double lambda) const {
    if (lambda != lambda_) throw InvalidArgument("leverage_score: lambda differs from the model's lambda");
    return leverage_score(v);
}

double SpectralModel::q_max_bound(double lambda) const { return 1.0 / (lambda * degree_of_freedom(lambda)); }

FeatureSet sample_conventional(const GaussianKernel& kern, std::size_t count, Rng& rng) {
    if (count < 1) throw InvalidArgument("sample_conventional: M must be >= 1");
    Matrix freqs(static_cast<Eigen::Index>(count), kern.dim());
    for (Eigen::Index m = 0; m < freqs.rows(); ++m) freqs.row(m) = sample_tau(kern, rng).transpose();
    return FeatureSet(std::move(freqs), FeatureMode::conventional);
}

FeatureSet sample_optimized_rejection(const SpectralModel& model, std::size_t count, Rng& rng,
                                      const SamplerOptions& opts, SamplerStats* stats) {
    if (count < 1) throw InvalidArgument("sample_optimized_rejection: M must be >= 1");
    if (!(opts.acceptance_floor >= 0.0 && opts.acceptance_floor < 1.0))
        throw InvalidArgument("sample_optimized_rejection: acceptance floor must lie in [0, 1)");
    const auto start = std::chrono::steady_clock::now();
    const auto& kern = model.kernel();
    const double dof = model.degree_of_freedom();
    const double bound = opts.bottom_raised ? 0.5 * model.q_max_bound() + 0.5 : model.q_max_bound();

    Matrix accepted(static_cast<Eigen::Index>(count), kern.dim());
    Vector q_values(static_cast<Eigen::Index>(count));
    std::size_t n_accepted = 0;
    std::size_t proposals = 0;
    std::normal_distribution<double> normal(0.0, kern.tau_stddev());
    Matrix batch(kProposalBatch, kern.dim());
    std::vector<double> u(kProposalBatch);

    while (n_accepted < count) {
        for (Eigen::Index b = 0; b < kProposalBatch; ++b) {
            for (int d = 0; d < kern.dim(); ++d) batch(b, d) = normal(rng);
            u[static_cast<std::size_t>(b)] = uniform01(rng);
        }
        const Vector lev = model.unnormalized_leverage(batch);
        for (Eigen::Index b = 0; b < kProposalBatch && n_accepted < count; ++b) {
            ++proposals;
            double q = lev[b] / dof;
            if (opts.bottom_raised) q = 0.5 * q + 0.5;
            if (u[static_cast<std::size_t>(b)] * bound < q) {
                accepted.row(static_cast<Eigen::Index>(n_accepted)) = batch.row(b);
                q_values[static_cast<Eigen::Index>(n_accepted)] = q;
                ++n_accepted;
            }
            const double rate = static_cast<double>(n_accepted) / static_cast<double>(proposals);
            if (proposals >= opts.trial_budget && rate < opts.acceptance_floor) {
                std::ostringstream msg;
                msg << "rejection sampler aborted: acceptance rate " << rate << " after " << proposals
                    << " proposals is below the floor " << opts.acceptance_floor
                    << " (expected acceptance lambda*d(lambda) = " << 1.0 / bound << ")";
                throw SamplerAbort(msg.str());
            }
        }
    }

    if (stats) {
        stats->proposals = proposals;
        stats->accepted = n_accepted;
        stats->acceptance_rate = static_cast<double>(n_accepted) / static_cast<double>(proposals);
        stats->expected_acceptance = 1.0 / bound;
        stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        stats->seconds_per_sample = stats->seconds / static_cast<double>(n_accepted);
    }
    return FeatureSet(std::move(accepted), FeatureMode::optimized, std::move(q_values), model.lambda());
}

FrequencyGrid FrequencyGrid::covering(const GaussianKernel& kern, int cells_per_dim, double mass_tolerance) {
    if (cells_per_dim < 1) throw InvalidArgument("FrequencyGrid: need at least one cell per dimension");
    if (!(mass_tolerance > 0.0 && mass_tolerance < 1.0)) throw InvalidArgument("FrequencyGrid: bad mass tolerance");
    // Per-coordinate two-sided tail t with 1 - (1 - t)^D <= tolerance.
    const double tail = 1.0 - std::pow(1.0 - mass_tolerance, 1.0 / kern.dim());
    double z = 1.0;
    while (2.0 * normal_cdf(-z) > tail) z += 0.01;
    return FrequencyGrid{kern.dim(), z * kern.tau_stddev(), cells_per_dim};
}

std::size_t FrequencyGrid::n_cells() const {
    std::size_t n = 1;
    for (int d = 0; d < dim; ++d) n *= static_cast<std::size_t>(cells_per_dim);
    return n;
}

Vector FrequencyGrid::cell_center(std::size_t index) const {
    Vector c(dim);
    const double w = cell_width();
    for (int d = dim - 1; d >= 0; --d) {
        const auto k = index % static_cast<std::size_t>(cells_per_dim);
        index /= static_cast<std::size_t>(cells_per_dim);
        c[d] = -half_width + (static_cast<double>(k) + 0.5) * w;
    }
    return c;
}

double FrequencyGrid::tau_mass(const GaussianKernel& kern) const {
    const double z = half_width / kern.tau_stddev();
    return std::pow(1.0 - 2.0 * normal_cdf(-z), dim);
}

GridTabulation GridTabulation::tabulate(const SpectralModel& model, const FrequencyGrid& grid, bool bottom_raised,
                                        double mass_tolerance) {
    const auto& kern = model.kernel();
    if (kern.dim() > 2) throw InvalidArgument("grid sampler supports D <= 2 only");
    if (grid.dim != kern.dim()) throw DimensionMismatch("GridTabulation", kern.dim(), grid.dim);
    if (grid.tau_mass(kern) < 1.0 - mass_tolerance)
        throw InvalidArgument("grid sampler: grid misses more than the tolerated tau mass");

    const auto n = grid.n_cells();
    const double sigma = kern.tau_stddev();
    const double w = grid.cell_width();
    // Per-coordinate tau mass of each 1-D slab.
    Vector slab(grid.cells_per_dim);
    for (int k = 0; k < grid.cells_per_dim; ++k) {
        const double lo = -grid.half_width + k * w;
        slab[k] = normal_cdf((lo + w) / sigma) - normal_cdf(lo / sigma);
    }

    Matrix centers(static_cast<Eigen::Index>(n), grid.dim);
    Vector mass(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        centers.row(static_cast<Eigen::Index>(i)) = grid.cell_center(i).transpose();
        double m = 1.0;
        auto rem = i;
        for (int d = grid.dim - 1; d >= 0; --d) {
            m *= slab[static_cast<Eigen::Index>(rem % static_cast<std::size_t>(grid.cells_per_dim))];
            rem /= static_cast<std::size_t>(grid.cells_per_dim);
        }
        mass[static_cast<Eigen::Index>(i)] = m;
    }

    Vector q(static_cast<Eigen::Index>(n));
    for (Eigen::Index start = 0; start < q.size(); start += 1024) {
        const Eigen::Index len = std::min<Eigen::Index>(1024, q.size() - start);
        q.segment(start, len) = model.unnormalized_leverage(Matrix(centers.middleRows(start, len)));
    }
    q /= model.degree_of_freedom();
    if (bottom_raised) q = (0.5 * q.array() + 0.5).matrix();

    GridTabulation tab;
    tab.grid_ = grid;
    const Vector weighted = q.cwiseProduct(mass);
    tab.raw_mass_ = weighted.sum();
    tab.probs_ = weighted / tab.raw_mass_;
    tab.cdf_.resize(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) tab.cdf_[i] = (acc += tab.probs_[static_cast<Eigen::Index>(i)]);
    tab.cdf_.back() = 1.0;
    return tab;
}

Vector GridTabulation::sample(Rng& rng) const {
    const double u = uniform01(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto index = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
    Vector v = grid_.cell_center(index);
    const double w = grid_.cell_width();
    for (Eigen::Index d = 0; d < v.size(); ++d) v[d] += (uniform01(rng) - 0.5) * w;
    return v;
}

FeatureSet sample_optimized_grid(const SpectralModel& model, std::size_t count, const FrequencyGrid& grid, Rng& rng,
                                 bool bottom_raised) {
    if (count < 1) throw InvalidArgument("sample_optimized_grid: M must be >= 1");
    const auto tab = GridTabulation::tabulate(model, grid, bottom_raised);
    Matrix freqs(static_cast<Eigen::Index>(count), grid.dim);
    for (Eigen::Index m = 0; m < freqs.rows(); ++m) freqs.row(m) = tab.sample(rng).transpose();
    Vector q = model.unnormalized_leverage(freqs) / model.degree_of_freedom();
    if (bottom_raised) q = (0.5 * q.array() + 0.5).matrix();
    return FeatureSet(std::move(freqs), FeatureMode::optimized, std::move(q), model.lambda());
}

}  // namespace orf
