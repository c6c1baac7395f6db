#include "orf/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>
#include <tuple>

#include "orf/count_tree.hpp"
#include "orf/errors.hpp"
#include "orf/text_io.hpp"

namespace orf {

// ---------------------------------------------------------------------------
// Input distributions

int distribution_dim(const InputDistribution& dist) {
    if (const auto* s = std::get_if<SphereDistribution>(&dist)) return s->dim;
    const auto& g = std::get<SubGaussianDistribution>(dist);
    if (g.clusters.empty()) throw InvalidArgument("sub-Gaussian distribution needs at least one cluster");
    return static_cast<int>(g.clusters.front().mean.size());
}

namespace {

void validate_distribution(const InputDistribution& dist) {
    if (const auto* s = std::get_if<SphereDistribution>(&dist)) {
        if (s->dim < 1) throw InvalidArgument("sphere distribution: dim must be >= 1");
        if (!(s->radius > 0.0)) throw InvalidArgument("sphere distribution: radius must be positive");
        if (!s->arcs.empty() && s->dim != 2) throw InvalidArgument("sphere distribution: arcs require D = 2");
        for (const auto& a : s->arcs)
            if (!(a.half_width > 0.0)) throw InvalidArgument("sphere distribution: arc half-width must be positive");
        return;
    }
    const auto& g = std::get<SubGaussianDistribution>(dist);
    if (g.clusters.empty()) throw InvalidArgument("sub-Gaussian distribution needs at least one cluster");
    const auto dim = g.clusters.front().mean.size();
    for (const auto& c : g.clusters) {
        if (c.mean.size() != dim) throw InvalidArgument("sub-Gaussian distribution: cluster dimensions differ");
        if (!(c.stddev > 0.0 && c.weight > 0.0 && c.trunc_radius > 0.0))
            throw InvalidArgument("sub-Gaussian distribution: stddev, weight, trunc_radius must be positive");
    }
}

}  // namespace

Vector sample_input(const InputDistribution& dist, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    if (const auto* s = std::get_if<SphereDistribution>(&dist)) {
        if (!s->arcs.empty()) {
            double total = 0.0;
            for (const auto& a : s->arcs) total += a.half_width;
            double u = uniform01(rng) * total;
            const Arc* arc = &s->arcs.back();
            for (const auto& a : s->arcs) {
                if (u < a.half_width) {
                    arc = &a;
                    break;
                }
                u -= a.half_width;
            }
            const double theta = arc->center + (2.0 * uniform01(rng) - 1.0) * arc->half_width;
            Vector x(2);
            x << s->radius * std::cos(theta), s->radius * std::sin(theta);
            return x;
        }
        Vector x(s->dim);
        do {
            for (int d = 0; d < s->dim; ++d) x[d] = normal(rng);
        } while (x.norm() == 0.0);
        return s->radius * x / x.norm();
    }
    const auto& g = std::get<SubGaussianDistribution>(dist);
    double total = 0.0;
    for (const auto& c : g.clusters) total += c.weight;
    double u = uniform01(rng) * total;
    const Cluster* cl = &g.clusters.back();
    for (const auto& c : g.clusters) {
        if (u < c.weight) {
            cl = &c;
            break;
        }
        u -= c.weight;
    }
    Vector z(cl->mean.size());
    do {
        for (Eigen::Index d = 0; d < z.size(); ++d) z[d] = normal(rng) * cl->stddev;
    } while (z.norm() > cl->trunc_radius);
    return cl->mean + z;
}

Matrix gen_inputs(const InputDistribution& dist, std::size_t n, Rng& rng) {
    if (n < 1) throw InvalidArgument("gen_inputs: n must be >= 1");
    Matrix pts(static_cast<Eigen::Index>(n), distribution_dim(dist));
    for (Eigen::Index i = 0; i < pts.rows(); ++i) pts.row(i) = sample_input(dist, rng).transpose();
    return pts;
}

std::pair<Vector, Vector> support_box(const InputDistribution& dist) {
    const int dim = distribution_dim(dist);
    if (const auto* s = std::get_if<SphereDistribution>(&dist))
        return {Vector::Constant(dim, -s->radius), Vector::Constant(dim, s->radius)};
    const auto& g = std::get<SubGaussianDistribution>(dist);
    Vector lo = Vector::Constant(dim, std::numeric_limits<double>::infinity());
    Vector hi = -lo;
    for (const auto& c : g.clusters) {
        lo = lo.cwiseMin((c.mean.array() - c.trunc_radius).matrix());
        hi = hi.cwiseMax((c.mean.array() + c.trunc_radius).matrix());
    }
    return {lo, hi};
}

namespace {

// Random probes plus deterministic boundary points of the support.
Matrix certification_probes(const InputDistribution& dist, std::size_t n, Rng& rng) {
    std::vector<Vector> extra;
    if (const auto* s = std::get_if<SphereDistribution>(&dist)) {
        for (const auto& a : s->arcs)
            for (double sgn : {-1.0, 0.0, 1.0}) {
                Vector x(2);
                const double th = a.center + sgn * a.half_width;
                x << s->radius * std::cos(th), s->radius * std::sin(th);
                extra.push_back(x);
            }
    } else {
        const auto& g = std::get<SubGaussianDistribution>(dist);
        for (const auto& c : g.clusters) {
            extra.push_back(c.mean);
            if (c.mean.size() != 2) continue;
            for (int k = 0; k < 64; ++k) {
                const double th = kTwoPi * k / 64.0;
                Vector x(2);
                x << std::cos(th), std::sin(th);
                extra.push_back(c.mean + c.trunc_radius * x);
            }
        }
    }
    Matrix probes = gen_inputs(dist, n, rng);
    Matrix all(probes.rows() + static_cast<Eigen::Index>(extra.size()), probes.cols());
    all.topRows(probes.rows()) = probes;
    for (std::size_t i = 0; i < extra.size(); ++i)
        all.row(probes.rows() + static_cast<Eigen::Index>(i)) = extra[i].transpose();
    return all;
}

}  // namespace

// ---------------------------------------------------------------------------
// SyntheticTask

SyntheticTask::SyntheticTask(std::string name, const GaussianKernel& kern, InputDistribution dist, Matrix anchors,
                             Vector coeffs, double delta)
    : name_(std::move(name)),
      kern_(kern),
      dist_(std::move(dist)),
      anchors_(std::move(anchors)),
      coeffs_(std::move(coeffs)),
      delta_(delta) {
    validate_distribution(dist_);
    if (distribution_dim(dist_) != kern_.dim())
        throw DimensionMismatch("SyntheticTask distribution", kern_.dim(), distribution_dim(dist_));
    if (anchors_.rows() < 1) throw InvalidArgument("SyntheticTask: need at least one anchor");
    if (anchors_.cols() != kern_.dim()) throw DimensionMismatch("SyntheticTask anchors", kern_.dim(), anchors_.cols());
    if (coeffs_.size() != anchors_.rows()) throw DimensionMismatch("SyntheticTask coeffs", anchors_.rows(), coeffs_.size());
    if (!(delta_ > 0.0 && delta_ <= 1.0)) throw InvalidArgument("SyntheticTask: delta must lie in (0, 1]");
    if (name_.empty() || name_.find_first_of(" \t,=\n") != std::string::npos)
        throw InvalidArgument("SyntheticTask: name must be a non-empty token without spaces, commas or '='");
}

SyntheticTask SyntheticTask::build(std::string name, const GaussianKernel& kern, InputDistribution dist, Matrix anchors,
                                   Vector coeffs, double delta, std::uint64_t probe_seed, std::size_t n_probes) {
    SyntheticTask task(std::move(name), kern, std::move(dist), std::move(anchors), std::move(coeffs), delta);
    Rng rng(probe_seed);
    const Matrix probes = certification_probes(task.dist_, n_probes, rng);
    task.rescale_ = 1.0;
    const Vector g = task.bayes(probes);
    const double lo = g.cwiseAbs().minCoeff();
    const double hi = g.cwiseAbs().maxCoeff();
    // Feasible rescales form [delta / lo, 1 / hi]; take the largest, less a
    // little headroom for peaks between probes.
    constexpr double kHeadroom = 1.0 - 1e-3;
    if (!(hi > 0.0) || kHeadroom * lo / hi < delta) {
        throw CertificationError("task '" + task.name_ + "': no rescale achieves margin " + text::fmt(delta) +
                                 " (min|g|/max|g| = " + text::fmt(hi > 0.0 ? lo / hi : 0.0) + " on " +
                                 std::to_string(probes.rows()) + " probes)");
    }
    task.rescale_ = kHeadroom / hi;
    const Vector f = task.bayes(probes);
    task.cert_.min_abs = f.cwiseAbs().minCoeff();
    task.cert_.max_abs = f.cwiseAbs().maxCoeff();
    task.cert_.bayes_error = bayes_error_estimate(task, probes.topRows(static_cast<Eigen::Index>(n_probes)));
    task.cert_.n_probes = static_cast<std::size_t>(probes.rows());
    if (task.cert_.min_abs < delta || task.cert_.max_abs > 1.0 + 1e-12)
        throw CertificationError("task '" + task.name_ + "': margin certificate failed after rescaling");
    return task;
}

double SyntheticTask::f_norm() const {
    const Matrix k = kern_.gram(anchors_);
    return rescale_ * std::sqrt(coeffs_.dot(k * coeffs_));
}

double SyntheticTask::bayes(const Vector& x) const {
    if (x.size() != kern_.dim()) throw DimensionMismatch("bayes_classifier", kern_.dim(), x.size());
    double s = 0.0;
    for (Eigen::Index a = 0; a < anchors_.rows(); ++a) s += coeffs_[a] * kern_.eval(x, anchors_.row(a).transpose());
    return rescale_ * s;
}

Vector SyntheticTask::bayes(const Matrix& points) const {
    if (points.cols() != kern_.dim()) throw DimensionMismatch("bayes_classifier", kern_.dim(), points.cols());
    Vector out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) out[i] = bayes(Vector(points.row(i).transpose()));
    return out;
}

void SyntheticTask::save(std::ostream& out) const {
    out << "# task name=" << name_ << " D=" << kern_.dim() << " gamma=" << text::fmt(kern_.gamma())
        << " delta=" << text::fmt(delta_) << " rescale=" << text::fmt(rescale_) << " anchors=" << anchors_.rows()
        << '\n';
    out << "# certificate min_abs=" << text::fmt(cert_.min_abs) << " max_abs=" << text::fmt(cert_.max_abs)
        << " bayes_err=" << text::fmt(cert_.bayes_error) << " probes=" << cert_.n_probes
        << " f_norm=" << text::fmt(f_norm()) << '\n';
    if (const auto* s = std::get_if<SphereDistribution>(&dist_)) {
        out << "dist sphere radius=" << text::fmt(s->radius) << " arcs=";
        if (s->arcs.empty()) out << "none";
        for (std::size_t i = 0; i < s->arcs.size(); ++i)
            out << (i ? "," : "") << text::fmt(s->arcs[i].center) << ':' << text::fmt(s->arcs[i].half_width);
        out << '\n';
    } else {
        const auto& g = std::get<SubGaussianDistribution>(dist_);
        out << "dist subgaussian clusters=" << g.clusters.size() << '\n';
        for (const auto& c : g.clusters)
            out << "cluster mean=" << text::join(c.mean, ',') << " stddev=" << text::fmt(c.stddev)
                << " weight=" << text::fmt(c.weight) << " trunc=" << text::fmt(c.trunc_radius) << '\n';
    }
    for (Eigen::Index a = 0; a < anchors_.rows(); ++a)
        out << "anchor " << text::join(anchors_.row(a).transpose(), ' ') << " c=" << text::fmt(coeffs_[a]) << '\n';
}

SyntheticTask SyntheticTask::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("task file: empty");
    auto header = text::split_ws(line);
    if (header.size() < 2 || header[0] != "#" || header[1] != "task") throw IoError("task file: bad header");
    line = line.substr(line.find("task") + 4);
    const auto kv = text::parse_header(line);
    const auto name = text::require(kv, "name");
    const auto dim = static_cast<int>(text::parse_int(text::require(kv, "D"), "D"));
    const double gamma = text::parse_double(text::require(kv, "gamma"), "gamma");
    const double delta = text::parse_double(text::require(kv, "delta"), "delta");
    const double rescale = text::parse_double(text::require(kv, "rescale"), "rescale");
    const auto n_anchors = text::parse_int(text::require(kv, "anchors"), "anchors");

    MarginCertificate cert;
    InputDistribution dist;
    std::vector<std::pair<Vector, double>> anchors;
    std::size_t expected_clusters = 0;
    SubGaussianDistribution sub;
    bool have_dist = false;
    while (std::getline(in, line)) {
        auto tokens = text::split_ws(line);
        if (tokens.empty()) continue;
        if (tokens[0] == "#") {
            if (tokens.size() > 1 && tokens[1] == "certificate") {
                const auto c = text::parse_header(line.substr(line.find("certificate") + 11));
                cert.min_abs = text::parse_double(text::require(c, "min_abs"), "min_abs");
                cert.max_abs = text::parse_double(text::require(c, "max_abs"), "max_abs");
                cert.bayes_error = text::parse_double(text::require(c, "bayes_err"), "bayes_err");
                cert.n_probes = static_cast<std::size_t>(text::parse_int(text::require(c, "probes"), "probes"));
            }
            continue;
        }
        if (tokens[0] == "dist") {
            if (tokens.size() < 2) throw IoError("task file: bad dist line");
            const auto rest = text::parse_header(line.substr(line.find(tokens[1]) + tokens[1].size()));
            if (tokens[1] == "sphere") {
                SphereDistribution s;
                s.dim = dim;
                s.radius = text::parse_double(text::require(rest, "radius"), "radius");
                if (const auto& arcs = text::require(rest, "arcs"); arcs != "none") {
                    for (const auto& part : text::split(arcs, ',')) {
                        auto ends = text::split(part, ':');
                        if (ends.size() != 2) throw IoError("task file: bad arc '" + part + "'");
                        s.arcs.push_back({text::parse_double(ends[0], "arc center"),
                                          text::parse_double(ends[1], "arc half-width")});
                    }
                }
                dist = s;
            } else if (tokens[1] == "subgaussian") {
                expected_clusters = static_cast<std::size_t>(text::parse_int(text::require(rest, "clusters"), "clusters"));
                dist = sub;
            } else {
                throw IoError("task file: unknown distribution '" + tokens[1] + "'");
            }
            have_dist = true;
            continue;
        }
        if (tokens[0] == "cluster") {
            const auto c = text::parse_header(line.substr(7));
            sub.clusters.push_back({text::parse_csv_vector(text::require(c, "mean"), "cluster mean"),
                                    text::parse_double(text::require(c, "stddev"), "stddev"),
                                    text::parse_double(text::require(c, "weight"), "weight"),
                                    text::parse_double(text::require(c, "trunc"), "trunc")});
            continue;
        }
        if (tokens[0] == "anchor") {
            if (static_cast<int>(tokens.size()) != dim + 2 || tokens.back().rfind("c=", 0) != 0)
                throw IoError("task file: bad anchor line '" + line + "'");
            Vector a(dim);
            for (int d = 0; d < dim; ++d) a[d] = text::parse_double(tokens[static_cast<std::size_t>(d) + 1], "anchor");
            anchors.emplace_back(a, text::parse_double(tokens.back().substr(2), "anchor coefficient"));
            continue;
        }
        throw IoError("task file: unexpected line '" + line + "'");
    }
    if (!have_dist) throw IoError("task file: missing dist line");
    if (std::holds_alternative<SubGaussianDistribution>(dist)) {
        if (sub.clusters.size() != expected_clusters) throw IoError("task file: cluster count mismatch");
        dist = sub;
    }
    if (static_cast<long long>(anchors.size()) != n_anchors) throw IoError("task file: anchor count mismatch");
    Matrix a(static_cast<Eigen::Index>(anchors.size()), dim);
    Vector c(static_cast<Eigen::Index>(anchors.size()));
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        a.row(static_cast<Eigen::Index>(i)) = anchors[i].first.transpose();
        c[static_cast<Eigen::Index>(i)] = anchors[i].second;
    }
    try {
        SyntheticTask task(name, GaussianKernel(gamma, dim), std::move(dist), std::move(a), std::move(c), delta);
        task.rescale_ = rescale;
        task.cert_ = cert;
        return task;
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("task file: ") + e.what());
    }
}

// Six alternating-sign anchors on the unit circle; the support is the arcs
// around each anchor, where f* keeps the sign of the nearest anchor.
SyntheticTask reference_sphere_task(double delta, std::uint64_t probe_seed, double gamma) {
    constexpr int kAnchors = 6;
    constexpr double kArcHalfWidth = 0.3;
    Matrix anchors(kAnchors, 2);
    Vector coeffs(kAnchors);
    SphereDistribution dist;
    dist.dim = 2;
    dist.radius = 1.0;
    for (int a = 0; a < kAnchors; ++a) {
        const double th = kTwoPi * a / kAnchors;
        anchors.row(a) << std::cos(th), std::sin(th);
        coeffs[a] = (a % 2 == 0) ? 1.0 : -1.0;
        dist.arcs.push_back({th, kArcHalfWidth});
    }
    return SyntheticTask::build("sphere", GaussianKernel(gamma, 2), std::move(dist), std::move(anchors),
                                std::move(coeffs), delta, probe_seed);
}

// Two truncated Gaussian clusters carrying opposite-sign anchors.
SyntheticTask reference_subgaussian_task(double delta, std::uint64_t probe_seed, double gamma) {
    SubGaussianDistribution dist;
    Vector left(2), right(2);
    left << -1.0, 0.0;
    right << 1.0, 0.0;
    dist.clusters.push_back({left, 0.3, 0.5, 0.6});
    dist.clusters.push_back({right, 0.3, 0.5, 0.6});
    Matrix anchors(2, 2);
    anchors.row(0) = left.transpose();
    anchors.row(1) = right.transpose();
    Vector coeffs(2);
    coeffs << -1.0, 1.0;
    return SyntheticTask::build("subgaussian", GaussianKernel(gamma, 2), std::move(dist), std::move(anchors),
                                std::move(coeffs), delta, probe_seed);
}

SyntheticTask reference_task(const std::string& name, double delta, std::uint64_t probe_seed, double gamma) {
    if (name == "sphere") return reference_sphere_task(delta, probe_seed, gamma);
    if (name == "subgaussian") return reference_subgaussian_task(delta, probe_seed, gamma);
    throw InvalidArgument("unknown reference task '" + name + "' (expected sphere or subgaussian)");
}

double sample_label(const SyntheticTask& task, const Vector& x, Rng& rng) {
    const double f = task.bayes(x);
    if (std::abs(f) > 1.0 + 1e-12) throw InvalidArgument("sample_label: |f*(x)| > 1");
    return uniform01(rng) < 0.5 * (1.0 + f) ? 1.0 : -1.0;
}

TestSet draw_test_set(const SyntheticTask& task, std::size_t n, Rng& rng) {
    TestSet t;
    t.x = gen_inputs(task.distribution(), n, rng);
    t.y.resize(t.x.rows());
    for (Eigen::Index i = 0; i < t.x.rows(); ++i) t.y[i] = sample_label(task, Vector(t.x.row(i).transpose()), rng);
    return t;
}

// ---------------------------------------------------------------------------
// Metrics

double classification_error(const Vector& predictions, const Vector& labels) {
    if (predictions.size() != labels.size())
        throw DimensionMismatch("classification_error", labels.size(), predictions.size());
    if (labels.size() == 0) throw InvalidArgument("classification_error: empty test set");
    Eigen::Index wrong = 0;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        const double s = predictions[i] >= 0.0 ? 1.0 : -1.0;
        wrong += (s != labels[i]);
    }
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

namespace {

Vector apply(const Predictor& f, const Matrix& points) {
    Vector out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) out[i] = f(points.row(i).transpose());
    return out;
}

}  // namespace

double classification_error(const Predictor& f, const TestSet& test) {
    return classification_error(apply(f, test.x), test.y);
}

double excess_error(const Vector& predictions, const SyntheticTask& task, const TestSet& test) {
    return classification_error(predictions, test.y) - classification_error(task.bayes(test.x), test.y);
}

double excess_error(const Predictor& f, const SyntheticTask& task, const TestSet& test) {
    return excess_error(apply(f, test.x), task, test);
}

double bayes_error_estimate(const SyntheticTask& task, const Matrix& points) {
    return (0.5 * (1.0 - task.bayes(points).array().abs())).mean();
}

FunctionDistances function_distances(const Vector& predictions, const SyntheticTask& task, const Matrix& probes) {
    if (probes.rows() == 0) throw InvalidArgument("function_distances: empty probe set");
    if (predictions.size() != probes.rows())
        throw DimensionMismatch("function_distances", probes.rows(), predictions.size());
    const Vector diff = predictions - task.bayes(probes);
    return {std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size())), diff.cwiseAbs().maxCoeff()};
}

FunctionDistances function_distances(const Predictor& f, const SyntheticTask& task, const Matrix& probes) {
    return function_distances(apply(f, probes), task, probes);
}

// ---------------------------------------------------------------------------
// Pipeline

std::string to_string(SamplerKind kind) { return kind == SamplerKind::rejection ? "rejection" : "grid"; }

SamplerKind parse_sampler_kind(const std::string& s) {
    if (s == "rejection") return SamplerKind::rejection;
    if (s == "grid") return SamplerKind::grid;
    throw InvalidArgument("unknown sampler '" + s + "' (expected rejection or grid)");
}

PipelineSeeds pipeline_seeds(std::uint64_t seed, std::size_t trial, FeatureMode mode, std::size_t M) {
    return {derive_seed(seed, {trial, 1}), derive_seed(seed, {trial, 2}), derive_seed(seed, {trial, 3}),
            derive_seed(seed, {trial, 4, static_cast<std::uint64_t>(mode), M})};
}

SpectralModel unlabeled_model(const SyntheticTask& task, const PipelineConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix pts = gen_inputs(task.distribution(), cfg.n_unlabeled, rng);
    auto [lo, hi] = support_box(task.distribution());
    CountTree tree(GridSpec(task.dim(), cfg.store_delta, lo, hi));
    for (Eigen::Index i = 0; i < pts.rows(); ++i) tree.increment(pts.row(i).transpose());
    return SpectralModel::from_count_tree(tree, task.kernel(), cfg.lambda);
}

MetricsRecord evaluate_classifier(const Classifier& clf, const SyntheticTask& task, const PipelineConfig& cfg,
                                  std::uint64_t seed, std::size_t trial) {
    const auto seeds = pipeline_seeds(seed, trial, cfg.mode, cfg.M);
    Rng test_rng(seeds.test);
    const TestSet test = draw_test_set(task, cfg.n_test, test_rng);
    const Vector pred = clf.predict(test.x);

    MetricsRecord r;
    r.task = task.name();
    r.mode = clf.features().mode();
    r.D = task.dim();
    r.gamma = task.kernel().gamma();
    r.delta = task.delta();
    r.lambda = cfg.lambda;
    r.M = clf.n_features();
    r.N = cfg.N;
    r.trial = trial;
    r.seed = seed;
    r.class_err = classification_error(pred, test.y);
    r.bayes_err = bayes_error_estimate(task, test.x);
    r.excess_err = excess_error(pred, task, test);
    const auto dist = function_distances(pred, task, test.x);
    r.l2 = dist.l2;
    r.linf = dist.linf;
    const Vector resid = test.y - pred;
    r.loss = resid.squaredNorm() / static_cast<double>(resid.size()) +
             cfg.lambda * static_cast<double>(clf.n_features()) * cfg.q_min * clf.alpha().squaredNorm();
    return r;
}

PipelineResult run_pipeline(const SyntheticTask& task, const PipelineConfig& cfg, std::uint64_t seed,
                            std::size_t trial) {
    const auto start = std::chrono::steady_clock::now();
    const auto seeds = pipeline_seeds(seed, trial, cfg.mode, cfg.M);
    const auto& kern = task.kernel();

    SamplerStats stats;
    Rng feature_rng(seeds.features);
    auto features = [&]() -> FeatureSet {
        if (cfg.mode == FeatureMode::conventional) {
            stats.acceptance_rate = 1.0;
            stats.expected_acceptance = 1.0;
            return sample_conventional(kern, cfg.M, feature_rng);
        }
        const auto model = unlabeled_model(task, cfg, seeds.unlabeled);
        if (cfg.sampler == SamplerKind::grid) {
            stats.acceptance_rate = 1.0;
            stats.expected_acceptance = 1.0;
            return sample_optimized_grid(model, cfg.M, FrequencyGrid::covering(kern, cfg.grid_cells), feature_rng,
                                         cfg.sampler_options.bottom_raised);
        }
        return sample_optimized_rejection(model, cfg.M, feature_rng, cfg.sampler_options, &stats);
    }();

    TrainConfig tc;
    tc.lambda = cfg.lambda;
    tc.M = cfg.M;
    tc.N = cfg.N;
    tc.q_min = cfg.q_min;
    tc.f_norm = task.f_norm();
    tc.eta_c = cfg.eta_c;
    Rng train_rng(seeds.train);
    GeneratorStream stream([&]() {
        LabeledSample s;
        s.x = sample_input(task.distribution(), train_rng);
        s.y = sample_label(task, s.x, train_rng);
        return s;
    });
    auto [clf, trace] = train(features, stream, tc);

    auto record = evaluate_classifier(clf, task, cfg, seed, trial);
    record.accept_rate = stats.acceptance_rate;
    record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return {record, features, clf, stats};
}

namespace {

std::vector<MetricsRecord> run_cells(const SyntheticTask& task, const std::vector<PipelineConfig>& cells,
                                     const std::vector<std::size_t>& trials, std::uint64_t seed, unsigned jobs,
                                     const RecordCallback& on_record) {
    std::vector<MetricsRecord> out(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr failure;
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            {
                std::lock_guard lock(mu);
                if (failure) return;
            }
            try {
                out[i] = run_pipeline(task, cells[i], seed, trials[i]).record;
                if (on_record) {
                    std::lock_guard lock(mu);
                    on_record(out[i]);
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    jobs = std::max(1U, jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    sort_records(out);
    return out;
}

}  // namespace

std::vector<MetricsRecord> sweep_error_vs_N(const SyntheticTask& task, const PipelineConfig& base,
                                            const std::vector<std::size_t>& n_grid, std::size_t trials,
                                            std::uint64_t seed, unsigned jobs, const RecordCallback& on_record) {
    if (n_grid.empty() || trials == 0) throw InvalidArgument("sweep_error_vs_N: empty grid or zero trials");
    std::vector<PipelineConfig> cells;
    std::vector<std::size_t> trial_ids;
    for (auto n : n_grid)
        for (std::size_t t = 0; t < trials; ++t) {
            auto c = base;
            c.N = n;
            cells.push_back(c);
            trial_ids.push_back(t);
        }
    return run_cells(task, cells, trial_ids, seed, jobs, on_record);
}

std::vector<MetricsRecord> sweep_error_vs_M(const SyntheticTask& task, const PipelineConfig& base,
                                            const std::vector<std::size_t>& m_grid,
                                            const std::vector<FeatureMode>& modes, std::size_t trials,
                                            std::uint64_t seed, unsigned jobs, const RecordCallback& on_record) {
    if (m_grid.empty() || modes.empty() || trials == 0)
        throw InvalidArgument("sweep_error_vs_M: empty grid, no modes, or zero trials");
    std::vector<PipelineConfig> cells;
    std::vector<std::size_t> trial_ids;
    for (auto m : m_grid)
        for (auto mode : modes)
            for (std::size_t t = 0; t < trials; ++t) {
                auto c = base;
                c.M = m;
                c.mode = mode;
                cells.push_back(c);
                trial_ids.push_back(t);
            }
    return run_cells(task, cells, trial_ids, seed, jobs, on_record);
}

void sort_records(std::vector<MetricsRecord>& records) {
    std::stable_sort(records.begin(), records.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
        return std::tie(a.N, a.M, a.mode, a.trial) < std::tie(b.N, b.M, b.mode, b.trial);
    });
}

void write_records_csv(std::ostream& out, const std::vector<MetricsRecord>& records, bool header) {
    using text::fmt;
    if (header) out << kRecordsHeader << '\n';
    for (const auto& r : records) {
        out << r.task << ',' << to_string(r.mode) << ',' << r.D << ',' << fmt(r.gamma) << ',' << fmt(r.delta) << ','
            << fmt(r.lambda) << ',' << r.M << ',' << r.N << ',' << r.trial << ',' << r.seed << ',' << fmt(r.class_err)
            << ',' << fmt(r.bayes_err) << ',' << fmt(r.excess_err) << ',' << fmt(r.l2) << ',' << fmt(r.linf) << ','
            << fmt(r.loss) << ',' << fmt(r.accept_rate) << ',' << fmt(r.wall_ms) << '\n';
    }
}

std::vector<MetricsRecord> read_records_csv(std::istream& in) {
    std::vector<MetricsRecord> out;
    std::string line;
    if (!std::getline(in, line) || text::trim(line) != kRecordsHeader) throw IoError("records CSV: bad header");
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        const auto f = text::split(line, ',');
        if (f.size() != 18) throw IoError("records CSV: expected 18 fields in '" + line + "'");
        MetricsRecord r;
        r.task = f[0];
        r.mode = parse_feature_mode(f[1]);
        r.D = static_cast<int>(text::parse_int(f[2], "D"));
        r.gamma = text::parse_double(f[3], "gamma");
        r.delta = text::parse_double(f[4], "delta");
        r.lambda = text::parse_double(f[5], "lambda");
        r.M = static_cast<std::size_t>(text::parse_int(f[6], "M"));
        r.N = static_cast<std::size_t>(text::parse_int(f[7], "N"));
        r.trial = static_cast<std::size_t>(text::parse_int(f[8], "trial"));
        r.seed = std::stoull(f[9]);
        r.class_err = text::parse_double(f[10], "class_err");
        r.bayes_err = text::parse_double(f[11], "bayes_err");
        r.excess_err = text::parse_double(f[12], "excess_err");
        r.l2 = text::parse_double(f[13], "l2");
        r.linf = text::parse_double(f[14], "linf");
        r.loss = text::parse_double(f[15], "loss");
        r.accept_rate = text::parse_double(f[16], "accept_rate");
        r.wall_ms = text::parse_double(f[17], "wall_ms");
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spectrum

SpectrumReport spectrum_report(const Matrix& points, const GaussianKernel& kern, const std::vector<double>& lambdas) {
    if (lambdas.empty()) throw InvalidArgument("spectrum_report: empty lambda grid");
    const auto model = SpectralModel::build(points, kern, lambdas.front());
    SpectrumReport rep;
    rep.eigenvalues = model.eigenvalues();
    for (double l : lambdas) {
        const double d = model.degree_of_freedom(l);
        rep.dof.push_back({l, d, 1.0 / (l * d), l * d});
    }
    return rep;
}

void write_spectrum_csv(std::ostream& out, const SpectrumReport& report) {
    out << "i,mu_i\n";
    for (Eigen::Index i = 0; i < report.eigenvalues.size(); ++i)
        out << i + 1 << ',' << text::fmt(report.eigenvalues[i]) << '\n';
}

void write_dof_csv(std::ostream& out, const SpectrumReport& report) {
    out << "lambda,dof,q_max_bound,expected_acceptance\n";
    for (const auto& r : report.dof)
        out << text::fmt(r.lambda) << ',' << text::fmt(r.dof) << ',' << text::fmt(r.q_max_bound) << ','
            << text::fmt(r.expected_acceptance) << '\n';
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_line: need two or more paired values");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return fit;
}

Matrix circle_points(std::size_t n, Rng& rng) {
    SphereDistribution s;
    return gen_inputs(s, n, rng);
}

}  // namespace orf
