#pragma once

// Synthetic low-noise classification tasks with a known Bayes classifier
// f*(x) = rescale * sum_a c_a k(x, anchor_a), metrics, and the sweep drivers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "orf/kernel_features.hpp"
#include "orf/leverage.hpp"
#include "orf/rng.hpp"
#include "orf/sgd.hpp"

namespace orf {

struct Arc {
    double center = 0.0;      // angle, radians
    double half_width = 0.0;  // radians
};

// Uniform on the radius-scaled unit sphere; for D = 2 optionally restricted
// to a union of arcs (uniform over their total length).
struct SphereDistribution {
    int dim = 2;
    double radius = 1.0;
    std::vector<Arc> arcs;
};

struct Cluster {
    Vector mean;
    double stddev = 1.0;
    double weight = 1.0;
    // Samples farther than this from the mean are redrawn.
    double trunc_radius = 1.0;
};

// Mixture of isotropic Gaussians, each truncated to a ball.
struct SubGaussianDistribution {
    std::vector<Cluster> clusters;
};

using InputDistribution = std::variant<SphereDistribution, SubGaussianDistribution>;

int distribution_dim(const InputDistribution& dist);
Vector sample_input(const InputDistribution& dist, Rng& rng);
Matrix gen_inputs(const InputDistribution& dist, std::size_t n, Rng& rng);
// Axis-aligned box containing the support.
std::pair<Vector, Vector> support_box(const InputDistribution& dist);

struct MarginCertificate {
    double min_abs = 0.0;
    double max_abs = 0.0;
    double bayes_error = 0.0;
    std::size_t n_probes = 0;
};

class SyntheticTask {
public:
    // Picks the rescale factor 1 / max|g| over the probes (g the unscaled
    // anchor expansion) and certifies delta <= |f*| <= 1 on them. Throws
    // CertificationError when no rescale achieves the margin.
    static SyntheticTask build(std::string name, const GaussianKernel& kern, InputDistribution dist, Matrix anchors,
                               Vector coeffs, double delta, std::uint64_t probe_seed, std::size_t n_probes = 10000);

    const std::string& name() const { return name_; }
    const GaussianKernel& kernel() const { return kern_; }
    const InputDistribution& distribution() const { return dist_; }
    const Matrix& anchors() const { return anchors_; }
    const Vector& coeffs() const { return coeffs_; }
    double delta() const { return delta_; }
    double rescale() const { return rescale_; }
    // |f*|_F = rescale * sqrt(c' K_anchor c)
    double f_norm() const;
    const MarginCertificate& certificate() const { return cert_; }
    int dim() const { return kern_.dim(); }

    double bayes(const Vector& x) const;
    Vector bayes(const Matrix& points) const;

    void save(std::ostream& out) const;
    static SyntheticTask load(std::istream& in);

private:
    SyntheticTask(std::string name, const GaussianKernel& kern, InputDistribution dist, Matrix anchors, Vector coeffs,
                  double delta);

    std::string name_;
    GaussianKernel kern_;
    InputDistribution dist_;
    Matrix anchors_;
    Vector coeffs_;
    double delta_;
    double rescale_ = 1.0;
    MarginCertificate cert_;
};

SyntheticTask reference_sphere_task(double delta = 0.5, std::uint64_t probe_seed = 7, double gamma = 1.0);
SyntheticTask reference_subgaussian_task(double delta = 0.3, std::uint64_t probe_seed = 7, double gamma = 1.0);
SyntheticTask reference_task(const std::string& name, double delta, std::uint64_t probe_seed = 7, double gamma = 1.0);

// +1 with probability (1 + f*(x)) / 2.
double sample_label(const SyntheticTask& task, const Vector& x, Rng& rng);

struct TestSet {
    Matrix x;
    Vector y;
};

TestSet draw_test_set(const SyntheticTask& task, std::size_t n, Rng& rng);

using Predictor = std::function<double(const Vector&)>;

// sign(0) counts as +1.
double classification_error(const Vector& predictions, const Vector& labels);
double classification_error(const Predictor& f, const TestSet& test);

// Paired: error(f) - error(f*) on the same labels.
double excess_error(const Vector& predictions, const SyntheticTask& task, const TestSet& test);
double excess_error(const Predictor& f, const SyntheticTask& task, const TestSet& test);

// Monte-Carlo estimate of E[(1 - |f*(X)|) / 2] over the given points.
double bayes_error_estimate(const SyntheticTask& task, const Matrix& points);

struct FunctionDistances {
    double l2 = 0.0;
    double linf = 0.0;
};

FunctionDistances function_distances(const Vector& predictions, const SyntheticTask& task, const Matrix& probes);
FunctionDistances function_distances(const Predictor& f, const SyntheticTask& task, const Matrix& probes);

enum class SamplerKind { rejection, grid };
std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& s);

struct PipelineConfig {
    FeatureMode mode = FeatureMode::optimized;
    std::size_t M = 16;
    std::size_t N = 1024;
    double lambda = 1e-3;
    double q_min = 0.5;
    double eta_c = 1.0;
    std::size_t n_unlabeled = 200;
    std::size_t n_test = 10000;
    SamplerKind sampler = SamplerKind::rejection;
    int grid_cells = 200;
    // Pitch of the counting-tree grid holding the unlabeled examples.
    double store_delta = 1.0 / 1024.0;
    SamplerOptions sampler_options;
};

struct MetricsRecord {
    std::string task;
    FeatureMode mode = FeatureMode::optimized;
    int D = 0;
    double gamma = 0.0;
    double delta = 0.0;
    double lambda = 0.0;
    std::size_t M = 0;
    std::size_t N = 0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double class_err = 0.0;
    double bayes_err = 0.0;
    double excess_err = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
    double loss = 0.0;
    double accept_rate = 1.0;
    double wall_ms = 0.0;
};

// Seeds for the stages of one pipeline run. Data streams depend only on
// (seed, trial), features additionally on (mode, M), so runs that differ only
// in N share features and data, and runs that differ only in mode share data.
struct PipelineSeeds {
    std::uint64_t train;
    std::uint64_t test;
    std::uint64_t unlabeled;
    std::uint64_t features;
};
PipelineSeeds pipeline_seeds(std::uint64_t seed, std::size_t trial, FeatureMode mode, std::size_t M);

// Store the unlabeled examples in a counting tree and build the spectral model.
SpectralModel unlabeled_model(const SyntheticTask& task, const PipelineConfig& cfg, std::uint64_t seed);

struct PipelineResult {
    MetricsRecord record;
    FeatureSet features;
    Classifier classifier;
    SamplerStats sampler_stats;
};

// Features -> training -> held-out evaluation.
PipelineResult run_pipeline(const SyntheticTask& task, const PipelineConfig& cfg, std::uint64_t seed,
                            std::size_t trial);

MetricsRecord evaluate_classifier(const Classifier& clf, const SyntheticTask& task, const PipelineConfig& cfg,
                                  std::uint64_t seed, std::size_t trial);

using RecordCallback = std::function<void(const MetricsRecord&)>;

// Cells run on `jobs` threads; each cell is sequential. `on_record` is
// called (serialized) as cells finish.
std::vector<MetricsRecord> sweep_error_vs_N(const SyntheticTask& task, const PipelineConfig& base,
                                            const std::vector<std::size_t>& n_grid, std::size_t trials,
                                            std::uint64_t seed, unsigned jobs = 1,
                                            const RecordCallback& on_record = {});

std::vector<MetricsRecord> sweep_error_vs_M(const SyntheticTask& task, const PipelineConfig& base,
                                            const std::vector<std::size_t>& m_grid,
                                            const std::vector<FeatureMode>& modes, std::size_t trials,
                                            std::uint64_t seed, unsigned jobs = 1,
                                            const RecordCallback& on_record = {});

// Sorted by (N, M, mode, trial).
void sort_records(std::vector<MetricsRecord>& records);

inline const char* kRecordsHeader =
    "task,mode,D,gamma,delta,lambda,M,N,trial,seed,class_err,bayes_err,excess_err,l2,linf,loss,accept_rate,wall_ms";
void write_records_csv(std::ostream& out, const std::vector<MetricsRecord>& records, bool header = true);
std::vector<MetricsRecord> read_records_csv(std::istream& in);

struct DofRow {
    double lambda = 0.0;
    double dof = 0.0;
    double q_max_bound = 0.0;
    double expected_acceptance = 0.0;
};

struct SpectrumReport {
    Vector eigenvalues;  // of K/N0, descending
    std::vector<DofRow> dof;
};

SpectrumReport spectrum_report(const Matrix& points, const GaussianKernel& kern, const std::vector<double>& lambdas);
void write_spectrum_csv(std::ostream& out, const SpectrumReport& report);
void write_dof_csv(std::ostream& out, const SpectrumReport& report);

struct LinearFit {
    double intercept = 0.0;
    double slope = 0.0;
    double r_squared = 0.0;
};

// Least squares y = intercept + slope * x.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// N points uniform on the unit circle.
Matrix circle_points(std::size_t n, Rng& rng);

}  // namespace orf
