#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "orf/errors.hpp"
#include "orf/experiments.hpp"
#include "orf/kernel_features.hpp"
#include "orf/leverage.hpp"
#include "orf/sgd.hpp"

namespace py = pybind11;
using namespace orf;

namespace {

template <class T>
std::string to_text(const T& obj) {
    std::ostringstream out;
    obj.save(out);
    return out.str();
}

template <class T>
T from_text(const std::string& s) {
    std::istringstream in(s);
    return T::load(in);
}

py::dict record_dict(const MetricsRecord& r) {
    py::dict d;
    d["task"] = r.task;
    d["mode"] = to_string(r.mode);
    d["D"] = r.D;
    d["gamma"] = r.gamma;
    d["delta"] = r.delta;
    d["lambda"] = r.lambda;
    d["M"] = r.M;
    d["N"] = r.N;
    d["trial"] = r.trial;
    d["seed"] = r.seed;
    d["class_err"] = r.class_err;
    d["bayes_err"] = r.bayes_err;
    d["excess_err"] = r.excess_err;
    d["l2"] = r.l2;
    d["linf"] = r.linf;
    d["loss"] = r.loss;
    d["accept_rate"] = r.accept_rate;
    d["wall_ms"] = r.wall_ms;
    return d;
}

py::list record_list(const std::vector<MetricsRecord>& recs) {
    py::list out;
    for (const auto& r : recs) out.append(record_dict(r));
    return out;
}

std::vector<LabeledSample> samples(const Matrix& X, const Vector& y) {
    if (X.rows() != y.size()) throw DimensionMismatch("train: labels", X.rows(), y.size());
    std::vector<LabeledSample> out(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) out[static_cast<std::size_t>(i)] = {X.row(i).transpose(), y(i)};
    return out;
}

py::dict stats_dict(const SamplerStats& s) {
    py::dict d;
    d["proposals"] = s.proposals;
    d["accepted"] = s.accepted;
    d["acceptance_rate"] = s.acceptance_rate;
    d["expected_acceptance"] = s.expected_acceptance;
    d["seconds"] = s.seconds;
    return d;
}

}  // namespace

PYBIND11_MODULE(_orf, m) {
    m.doc() = "Random Fourier features sampled by leverage score, trained with projected SGD";

    auto error = py::register_exception<Error>(m, "Error");
    auto invalid = py::register_exception<InvalidArgument>(m, "InvalidArgument", error.ptr());
    py::register_exception<DimensionMismatch>(m, "DimensionMismatch", invalid.ptr());
    py::register_exception<NumericError>(m, "NumericError", error.ptr());
    py::register_exception<CertificationError>(m, "CertificationError", error.ptr());
    py::register_exception<SamplerAbort>(m, "SamplerAbort", error.ptr());
    py::register_exception<IoError>(m, "IoError", error.ptr());

    py::class_<Rng>(m, "Rng")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def("uniform", [](Rng& r) { return uniform01(r); });

    py::enum_<FeatureMode>(m, "FeatureMode")
        .value("conventional", FeatureMode::conventional)
        .value("optimized", FeatureMode::optimized);
    py::enum_<SamplerKind>(m, "SamplerKind").value("rejection", SamplerKind::rejection).value("grid", SamplerKind::grid);

    py::class_<GaussianKernel>(m, "GaussianKernel")
        .def(py::init<double, int>(), py::arg("gamma"), py::arg("dim"))
        .def_property_readonly("gamma", &GaussianKernel::gamma)
        .def_property_readonly("dim", &GaussianKernel::dim)
        .def_property_readonly("tau_stddev", &GaussianKernel::tau_stddev)
        .def("__call__", &GaussianKernel::eval, py::arg("x"), py::arg("y"))
        .def("gram", &GaussianKernel::gram, py::arg("points"));

    m.def("sample_tau", &sample_tau, py::arg("kernel"), py::arg("rng"));

    py::class_<FeatureSet>(m, "FeatureSet")
        .def_property_readonly("freqs", &FeatureSet::freqs)
        .def_property_readonly("mode", &FeatureSet::mode)
        .def_property_readonly("leverage", &FeatureSet::leverage_values)
        .def_property_readonly("lambda_", &FeatureSet::lambda)
        .def("__len__", &FeatureSet::size)
        .def("feature_vector", &FeatureSet::feature_vector, py::arg("x"))
        .def("feature_matrix", &FeatureSet::feature_matrix, py::arg("points"))
        .def("to_text", &to_text<FeatureSet>)
        .def_static("from_text", &from_text<FeatureSet>, py::arg("text"))
        .def("__eq__", [](const FeatureSet& a, const FeatureSet& b) { return a == b; });

    m.def("kernel_mc_estimate", &kernel_mc_estimate, py::arg("features"), py::arg("x"), py::arg("y"));
    m.def("kernel_importance_estimate", &kernel_importance_estimate, py::arg("features"), py::arg("x"),
          py::arg("y"));

    py::class_<SpectralModel>(m, "SpectralModel")
        .def_static("build", &SpectralModel::build, py::arg("points"), py::arg("kernel"), py::arg("lambda_"))
        .def_property_readonly("eigenvalues", &SpectralModel::eigenvalues)
        .def_property_readonly("lambda_", py::overload_cast<>(&SpectralModel::lambda, py::const_))
        .def_property_readonly("n_points", &SpectralModel::n_points)
        .def("degree_of_freedom", py::overload_cast<>(&SpectralModel::degree_of_freedom, py::const_))
        .def("degree_of_freedom_at", py::overload_cast<double>(&SpectralModel::degree_of_freedom, py::const_),
             py::arg("lambda_"))
        .def("degree_of_freedom_trace", &SpectralModel::degree_of_freedom_trace, py::arg("lambda_"))
        .def("leverage_score", py::overload_cast<const Vector&>(&SpectralModel::leverage_score, py::const_),
             py::arg("v"))
        .def("unnormalized_leverage",
             py::overload_cast<const Matrix&>(&SpectralModel::unnormalized_leverage, py::const_), py::arg("freqs"))
        .def("q_max_bound", py::overload_cast<>(&SpectralModel::q_max_bound, py::const_))
        .def("expected_acceptance", &SpectralModel::expected_acceptance);

    m.def("sample_conventional", &sample_conventional, py::arg("kernel"), py::arg("count"), py::arg("rng"));
    m.def(
        "sample_optimized",
        [](const SpectralModel& model, std::size_t count, Rng& rng, const std::string& sampler, int grid_cells,
           double accept_floor, std::size_t trial_budget, bool bottom_raised) {
            SamplerStats stats;
            if (parse_sampler_kind(sampler) == SamplerKind::grid) {
                const auto grid = FrequencyGrid::covering(model.kernel(), grid_cells);
                return py::make_tuple(sample_optimized_grid(model, count, grid, rng, bottom_raised), py::dict());
            }
            SamplerOptions opts{accept_floor, trial_budget, bottom_raised};
            auto fs = sample_optimized_rejection(model, count, rng, opts, &stats);
            return py::make_tuple(std::move(fs), stats_dict(stats));
        },
        py::arg("model"), py::arg("count"), py::arg("rng"), py::arg("sampler") = "rejection",
        py::arg("grid_cells") = 200, py::arg("accept_floor") = 1e-6, py::arg("trial_budget") = 100000,
        py::arg("bottom_raised") = false,
        "Draw `count` frequencies from the leverage-weighted density. Returns (features, sampler stats).");

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("lambda_", &TrainConfig::lambda)
        .def_readwrite("M", &TrainConfig::M)
        .def_readwrite("N", &TrainConfig::N)
        .def_readwrite("q_min", &TrainConfig::q_min)
        .def_readwrite("f_norm", &TrainConfig::f_norm)
        .def_readwrite("eta_c", &TrainConfig::eta_c)
        .def("radius", &TrainConfig::radius)
        .def("mu", &TrainConfig::mu);

    py::class_<Classifier>(m, "Classifier")
        .def(py::init<FeatureSet, Vector>(), py::arg("features"), py::arg("alpha"))
        .def_property_readonly("features", &Classifier::features)
        .def_property_readonly("alpha", &Classifier::alpha)
        .def("predict", py::overload_cast<const Matrix&>(&Classifier::predict, py::const_), py::arg("points"))
        .def("to_text", &to_text<Classifier>)
        .def_static("from_text", &from_text<Classifier>, py::arg("text"));

    m.def(
        "train",
        [](const FeatureSet& fs, const Matrix& X, const Vector& y, const TrainConfig& cfg,
           std::optional<std::uint64_t> seed) {
            const auto data = samples(X, y);
            TrainTrace trace;
            std::optional<Classifier> clf;
            if (seed) {
                ResamplingStream s(data, *seed);
                std::tie(clf, trace) = train(fs, s, cfg);
            } else {
                SequenceStream s(data);
                std::tie(clf, trace) = train(fs, s, cfg);
            }
            py::list losses;
            for (const auto& r : trace.records) losses.append(r.loss);
            return py::make_tuple(*clf, losses);
        },
        py::arg("features"), py::arg("X"), py::arg("y"), py::arg("config"), py::arg("seed") = py::none(),
        "Projected SGD. With a seed, examples are drawn IID from (X, y); otherwise consumed in order.\n"
        "Returns (classifier, per-step losses).");

    m.def(
        "ridge_oracle",
        [](const FeatureSet& fs, const Matrix& X, const Vector& y, const TrainConfig& cfg) {
            const auto r = ridge_oracle(fs, samples(X, y), cfg);
            return py::make_tuple(r.alpha, r.projected, r.inside);
        },
        py::arg("features"), py::arg("X"), py::arg("y"), py::arg("config"));

    m.def(
        "theorem_hyperparams",
        [](double delta, double f_norm, double q_min, double epsilon, double p,
           const std::function<double(double)>& dof, double c_lambda) {
            HyperparamConstants c;
            c.c_lambda = c_lambda;
            const auto h = theorem_hyperparams(delta, f_norm, q_min, epsilon, p, dof, c);
            return py::make_tuple(h.lambda, h.M, h.N);
        },
        py::arg("delta"), py::arg("f_norm"), py::arg("q_min"), py::arg("epsilon"), py::arg("p"), py::arg("dof"),
        py::arg("c_lambda") = 1.0);

    py::class_<SyntheticTask>(m, "SyntheticTask")
        .def_property_readonly("name", &SyntheticTask::name)
        .def_property_readonly("kernel", &SyntheticTask::kernel)
        .def_property_readonly("delta", &SyntheticTask::delta)
        .def_property_readonly("dim", &SyntheticTask::dim)
        .def("f_norm", &SyntheticTask::f_norm)
        .def_property_readonly("certificate",
                               [](const SyntheticTask& t) {
                                   const auto& c = t.certificate();
                                   py::dict d;
                                   d["min_abs"] = c.min_abs;
                                   d["max_abs"] = c.max_abs;
                                   d["bayes_error"] = c.bayes_error;
                                   d["n_probes"] = c.n_probes;
                                   return d;
                               })
        .def("bayes", py::overload_cast<const Matrix&>(&SyntheticTask::bayes, py::const_), py::arg("points"))
        .def("sample_inputs",
             [](const SyntheticTask& t, std::size_t n, Rng& rng) { return gen_inputs(t.distribution(), n, rng); })
        .def("sample_labels",
             [](const SyntheticTask& t, const Matrix& X, Rng& rng) {
                 Vector y(X.rows());
                 for (Eigen::Index i = 0; i < X.rows(); ++i) y(i) = sample_label(t, X.row(i).transpose(), rng);
                 return y;
             })
        .def("to_text", &to_text<SyntheticTask>)
        .def_static("from_text", &from_text<SyntheticTask>, py::arg("text"));

    m.def("reference_task", &reference_task, py::arg("name") = "sphere", py::arg("delta") = 0.5,
          py::arg("probe_seed") = 7, py::arg("gamma") = 1.0);

    py::class_<PipelineConfig>(m, "PipelineConfig")
        .def(py::init<>())
        .def_readwrite("mode", &PipelineConfig::mode)
        .def_readwrite("M", &PipelineConfig::M)
        .def_readwrite("N", &PipelineConfig::N)
        .def_readwrite("lambda_", &PipelineConfig::lambda)
        .def_readwrite("q_min", &PipelineConfig::q_min)
        .def_readwrite("eta_c", &PipelineConfig::eta_c)
        .def_readwrite("n_unlabeled", &PipelineConfig::n_unlabeled)
        .def_readwrite("n_test", &PipelineConfig::n_test)
        .def_readwrite("sampler", &PipelineConfig::sampler)
        .def_readwrite("grid_cells", &PipelineConfig::grid_cells);

    m.def(
        "run_pipeline",
        [](const SyntheticTask& task, const PipelineConfig& cfg, std::uint64_t seed, std::size_t trial) {
            auto r = run_pipeline(task, cfg, seed, trial);
            return py::make_tuple(record_dict(r.record), r.classifier);
        },
        py::arg("task"), py::arg("config"), py::arg("seed"), py::arg("trial") = 0,
        "Sample features, train, evaluate. Returns (metrics record, classifier).");

    m.def(
        "sweep_n",
        [](const SyntheticTask& task, const PipelineConfig& cfg, const std::vector<std::size_t>& grid,
           std::size_t trials, std::uint64_t seed, unsigned jobs) {
            std::vector<MetricsRecord> recs;
            {
                py::gil_scoped_release release;
                recs = sweep_error_vs_N(task, cfg, grid, trials, seed, jobs);
            }
            return record_list(recs);
        },
        py::arg("task"), py::arg("config"), py::arg("n_grid"), py::arg("trials"), py::arg("seed"),
        py::arg("jobs") = 1);

    m.def(
        "sweep_m",
        [](const SyntheticTask& task, const PipelineConfig& cfg, const std::vector<std::size_t>& grid,
           const std::vector<FeatureMode>& modes, std::size_t trials, std::uint64_t seed, unsigned jobs) {
            std::vector<MetricsRecord> recs;
            {
                py::gil_scoped_release release;
                recs = sweep_error_vs_M(task, cfg, grid, modes, trials, seed, jobs);
            }
            return record_list(recs);
        },
        py::arg("task"), py::arg("config"), py::arg("m_grid"), py::arg("modes"), py::arg("trials"), py::arg("seed"),
        py::arg("jobs") = 1);

    m.def(
        "spectrum",
        [](const Matrix& points, const GaussianKernel& kern, const std::vector<double>& lambdas) {
            const auto rep = spectrum_report(points, kern, lambdas);
            py::list dof;
            for (const auto& r : rep.dof) dof.append(py::make_tuple(r.lambda, r.dof));
            return py::make_tuple(rep.eigenvalues, dof);
        },
        py::arg("points"), py::arg("kernel"), py::arg("lambdas"),
        "Eigenvalues of K/N0 (descending) and a list of (lambda, d(lambda)).");

    m.def("circle_points", &circle_points, py::arg("n"), py::arg("rng"));
}
