#include "orf/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "orf/errors.hpp"
#include "orf/experiments.hpp"
#include "orf/leverage.hpp"
#include "orf/sgd.hpp"
#include "orf/text_io.hpp"

namespace orf::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFooter =
    "Config file: --config FILE with flat key=value lines; keys are option names\n"
    "(e.g. lambda=0.001, q_min=0.5, n-grid=128,256). Flags override the file.\n"
    "Exit codes: 0 ok, 2 config error, 3 certification failure, 4 sampler abort,\n"
    "            5 I/O or file-format error.";

struct Hyper {
    double p = 0.1;
    double epsilon = 0.01;
    double c_lambda = 1.0 / 64.0;
};

struct Options {
    std::uint64_t seed = 1;
    bool force = false;

    // gen-task
    std::string kind = "sphere";
    double delta = 0.5;
    double gamma = 1.0;

    // shared pipeline settings
    std::string task_path;
    std::string mode = "optimized";
    std::optional<double> lambda;
    std::size_t M = 32;
    std::size_t N = 8192;
    double q_min = 0.5;
    double eta_c = 1.0;
    std::size_t n_unlabeled = 200;
    std::size_t n_test = 10000;
    std::string sampler = "rejection";
    int grid_cells = 200;
    double accept_floor = 1e-6;
    std::size_t trial_budget = 100000;
    bool bottom_raised = false;
    Hyper hyper;

    // files
    std::string out;
    std::string diag;
    std::string features;
    std::string classifier;
    std::string trace;
    std::string dof_out;

    // eval / sweeps
    std::size_t trial = 0;
    std::size_t trials = 10;
    unsigned jobs = 1;
    std::string n_grid = "128,256,512,1024,2048,4096,8192,16384";
    std::string m_grid = "2,4,8,16,32,64";
    std::string modes = "conventional,optimized";

    // spectrum
    bool circle = false;
    std::size_t n_points = 200;
    std::string lambda_grid = "1e-1,3e-2,1e-2,3e-3,1e-3,3e-4,1e-4";
};

SyntheticTask load_task(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open task file '" + path + "'");
    return SyntheticTask::load(in);
}

void check_output(const std::string& path, bool force) {
    if (path.empty()) throw InvalidArgument("an output path (--out) is required");
    if (fs::exists(path) && !force) throw IoError("output '" + path + "' exists; pass --force to overwrite");
}

void append_csv(const std::string& path, const std::string& header, const std::string& rows) {
    std::string existing;
    if (fs::exists(path)) existing = text::read_file(path);
    if (existing.empty()) existing = header + "\n";
    text::write_atomic(path, [&](std::ostream& o) { o << existing << rows; });
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
    std::vector<T> out;
    for (const auto& part : text::split(s, ',')) {
        if (part.empty()) continue;
        if constexpr (std::is_same_v<T, double>) {
            out.push_back(text::parse_double(part, what));
        } else {
            const auto v = text::parse_int(part, what);
            if (v < 1) throw InvalidArgument(std::string(what) + " entries must be positive");
            out.push_back(static_cast<T>(v));
        }
    }
    if (out.empty()) throw InvalidArgument(std::string(what) + " is empty");
    return out;
}

double resolve_lambda(const Options& o, const SyntheticTask& task, std::ostream& err) {
    if (o.lambda) return *o.lambda;
    HyperparamConstants c;
    c.c_lambda = o.hyper.c_lambda;
    const auto h = theorem_hyperparams(task.delta(), task.f_norm(), o.q_min, o.hyper.epsilon, o.hyper.p,
                                       [](double) { return 1.0; }, c);
    err << "lambda=" << text::fmt(h.lambda) << " (from delta, |f*|_F, q_min, p, c-lambda)\n";
    return h.lambda;
}

PipelineConfig pipeline_config(const Options& o, double lambda) {
    PipelineConfig c;
    c.mode = parse_feature_mode(o.mode);
    c.M = o.M;
    c.N = o.N;
    c.lambda = lambda;
    c.q_min = o.q_min;
    c.eta_c = o.eta_c;
    c.n_unlabeled = o.n_unlabeled;
    c.n_test = o.n_test;
    c.sampler = parse_sampler_kind(o.sampler);
    c.grid_cells = o.grid_cells;
    c.sampler_options.acceptance_floor = o.accept_floor;
    c.sampler_options.trial_budget = o.trial_budget;
    c.sampler_options.bottom_raised = o.bottom_raised;
    return c;
}

void validate(const Options& o) {
    if (o.lambda && !(*o.lambda > 0.0)) throw InvalidArgument("lambda must be > 0");
    if (o.N < 2 || o.N % 2) throw InvalidArgument("N must be a positive even integer");
    if (!(o.q_min > 0.0 && o.q_min <= 1.0)) throw InvalidArgument("q-min must lie in (0, 1]");
    if (!(o.delta > 0.0 && o.delta <= 1.0)) throw InvalidArgument("delta must lie in (0, 1]");
    if (!(o.hyper.p > 0.0 && o.hyper.p < 1.0)) throw InvalidArgument("p must lie in (0, 1)");
    if (!(o.hyper.epsilon > 0.0 && o.hyper.epsilon < 1.0)) throw InvalidArgument("epsilon must lie in (0, 1)");
    if (!(o.accept_floor >= 0.0 && o.accept_floor < 1.0)) throw InvalidArgument("accept-floor must lie in [0, 1)");
    parse_feature_mode(o.mode);
    parse_sampler_kind(o.sampler);
}

// ---------------------------------------------------------------------------

int cmd_gen_task(const Options& o, std::ostream& out) {
    check_output(o.out, o.force);
    const auto task = reference_task(o.kind, o.delta, o.seed, o.gamma);
    text::write_atomic(o.out, [&](std::ostream& f) { task.save(f); });
    const auto& c = task.certificate();
    out << "task=" << task.name() << " min_abs_f=" << text::fmt(c.min_abs) << " max_abs_f=" << text::fmt(c.max_abs)
        << " delta=" << text::fmt(task.delta()) << " f_norm=" << text::fmt(task.f_norm())
        << " bayes_err=" << text::fmt(c.bayes_error) << " probes=" << c.n_probes << '\n';
    return kOk;
}

int cmd_sample_features(const Options& o, std::ostream& out) {
    check_output(o.out, o.force);
    const auto task = load_task(o.task_path);
    const double lambda = resolve_lambda(o, task, out);
    const auto cfg = pipeline_config(o, lambda);
    const auto seeds = pipeline_seeds(o.seed, o.trial, cfg.mode, cfg.M);
    Rng rng(seeds.features);

    std::optional<FeatureSet> fs;
    SamplerStats stats;
    double dof = 0.0;
    if (cfg.mode == FeatureMode::conventional) {
        fs = sample_conventional(task.kernel(), cfg.M, rng);
        stats.acceptance_rate = stats.expected_acceptance = 1.0;
        stats.proposals = stats.accepted = cfg.M;
    } else {
        const auto model = unlabeled_model(task, cfg, seeds.unlabeled);
        dof = model.degree_of_freedom();
        if (cfg.sampler == SamplerKind::grid) {
            fs = sample_optimized_grid(model, cfg.M, FrequencyGrid::covering(task.kernel(), cfg.grid_cells), rng,
                                       cfg.sampler_options.bottom_raised);
            stats.acceptance_rate = stats.expected_acceptance = 1.0;
            stats.proposals = stats.accepted = cfg.M;
        } else {
            fs = sample_optimized_rejection(model, cfg.M, rng, cfg.sampler_options, &stats);
        }
    }
    text::write_atomic(o.out, [&](std::ostream& f) { fs->save(f); });

    std::ostringstream row;
    row << o.mode << ',' << cfg.M << ',' << text::fmt(lambda) << ',' << text::fmt(dof) << ',' << stats.proposals << ','
        << stats.accepted << ',' << text::fmt(stats.acceptance_rate) << ',' << text::fmt(stats.expected_acceptance)
        << ',' << text::fmt(stats.seconds_per_sample) << '\n';
    out << "features=" << o.out << " M=" << cfg.M << " mode=" << o.mode << " accept_rate="
        << text::fmt(stats.acceptance_rate) << " expected_accept=" << text::fmt(stats.expected_acceptance)
        << " proposals=" << stats.proposals << " sec_per_sample=" << text::fmt(stats.seconds_per_sample) << '\n';
    if (!o.diag.empty())
        append_csv(o.diag, "mode,M,lambda,dof,proposals,accepted,accept_rate,expected_accept,sec_per_sample",
                   row.str());
    return kOk;
}

int cmd_train(const Options& o, std::ostream& out) {
    check_output(o.out, o.force);
    const auto task = load_task(o.task_path);
    std::ifstream fin(o.features);
    if (!fin) throw IoError("cannot open feature file '" + o.features + "'");
    const auto fs = FeatureSet::load(fin);

    TrainConfig cfg;
    cfg.lambda = o.lambda ? *o.lambda : (fs.lambda() ? *fs.lambda() : resolve_lambda(o, task, out));
    cfg.M = fs.size();
    cfg.N = o.N;
    cfg.q_min = o.q_min;
    cfg.f_norm = task.f_norm();
    cfg.eta_c = o.eta_c;

    Rng rng(pipeline_seeds(o.seed, o.trial, fs.mode(), fs.size()).train);
    GeneratorStream stream([&]() {
        LabeledSample s;
        s.x = sample_input(task.distribution(), rng);
        s.y = sample_label(task, s.x, rng);
        return s;
    });
    auto [clf, trace] = train(fs, stream, cfg);
    text::write_atomic(o.out, [&](std::ostream& f) { clf.save(f); });
    if (!o.trace.empty()) {
        text::write_atomic(o.trace, [&](std::ostream& f) {
            f << "t,loss,alpha_norm,eta,projected\n";
            for (const auto& r : trace.records)
                f << r.t << ',' << text::fmt(r.loss) << ',' << text::fmt(r.alpha_norm) << ',' << text::fmt(r.eta)
                  << ',' << (r.projected ? 1 : 0) << '\n';
        });
    }
    out << "classifier=" << o.out << " M=" << cfg.M << " N=" << cfg.N << " lambda=" << text::fmt(cfg.lambda)
        << " radius=" << text::fmt(cfg.radius()) << " alpha_norm=" << text::fmt(clf.alpha().norm()) << '\n';
    return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    const auto task = load_task(o.task_path);
    std::ifstream cin(o.classifier);
    if (!cin) throw IoError("cannot open classifier file '" + o.classifier + "'");
    const auto clf = Classifier::load(cin);
    const double lambda =
        o.lambda ? *o.lambda : (clf.features().lambda() ? *clf.features().lambda() : resolve_lambda(o, task, out));
    auto cfg = pipeline_config(o, lambda);
    cfg.mode = clf.features().mode();
    cfg.M = clf.n_features();
    const auto start = std::chrono::steady_clock::now();
    auto rec = evaluate_classifier(clf, task, cfg, o.seed, o.trial);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream rows;
    write_records_csv(rows, {rec}, false);
    out << kRecordsHeader << '\n' << rows.str();
    if (!o.out.empty()) append_csv(o.out, kRecordsHeader, rows.str());
    return kOk;
}

RecordCallback cell_logger(std::ostream& err) {
    return [&err](const MetricsRecord& r) {
        err << "cell mode=" << to_string(r.mode) << " M=" << r.M << " N=" << r.N << " trial=" << r.trial
            << " excess=" << text::fmt(r.excess_err) << " linf=" << text::fmt(r.linf) << " ms="
            << std::llround(r.wall_ms) << '\n';
    };
}

int cmd_sweep(const Options& o, bool over_n, std::ostream& out, std::ostream& err) {
    check_output(o.out, o.force);
    const auto task = load_task(o.task_path);
    const double lambda = resolve_lambda(o, task, err);
    const auto base = pipeline_config(o, lambda);
    std::vector<MetricsRecord> recs;
    if (over_n) {
        const auto grid = parse_list<std::size_t>(o.n_grid, "n-grid");
        for (auto n : grid)
            if (n % 2) throw InvalidArgument("n-grid entries must be even");
        recs = sweep_error_vs_N(task, base, grid, o.trials, o.seed, o.jobs, cell_logger(err));
    } else {
        std::vector<FeatureMode> modes;
        for (const auto& m : text::split(o.modes, ',')) modes.push_back(parse_feature_mode(m));
        recs = sweep_error_vs_M(task, base, parse_list<std::size_t>(o.m_grid, "m-grid"), modes, o.trials, o.seed,
                                o.jobs, cell_logger(err));
    }
    text::write_atomic(o.out, [&](std::ostream& f) { write_records_csv(f, recs); });
    out << "records=" << o.out << " rows=" << recs.size() << '\n';
    return kOk;
}

int cmd_spectrum(const Options& o, std::ostream& out) {
    check_output(o.out, o.force);
    Rng rng(derive_seed(o.seed, {3}));
    Matrix points;
    std::optional<GaussianKernel> kern;
    if (o.circle) {
        points = circle_points(o.n_points, rng);
        kern.emplace(o.gamma, 2);
    } else {
        if (o.task_path.empty()) throw InvalidArgument("spectrum needs --task or --circle");
        const auto task = load_task(o.task_path);
        points = gen_inputs(task.distribution(), o.n_points, rng);
        kern.emplace(task.kernel());
    }
    auto lambdas = parse_list<double>(o.lambda_grid, "lambda-grid");
    for (double l : lambdas)
        if (!(l > 0.0)) throw InvalidArgument("lambda-grid entries must be > 0");
    const auto rep = spectrum_report(points, *kern, lambdas);
    text::write_atomic(o.out, [&](std::ostream& f) { write_spectrum_csv(f, rep); });
    if (!o.dof_out.empty()) {
        if (fs::exists(o.dof_out) && !o.force) throw IoError("output '" + o.dof_out + "' exists; pass --force");
        text::write_atomic(o.dof_out, [&](std::ostream& f) { write_dof_csv(f, rep); });
    }
    out << "spectrum=" << o.out << " n=" << rep.eigenvalues.size() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* app, Options& o) {
    app->add_option("--seed", o.seed, "RNG seed governing all randomness (unsigned 64-bit)");
    app->add_flag("--force", o.force, "Overwrite existing output files");
}

void add_pipeline(CLI::App* app, Options& o) {
    app->add_option("--task", o.task_path, "Task file written by gen-task")->required();
    app->add_option("--lambda", o.lambda,
                    "Regularization / leverage parameter, > 0 (default: derived from delta, |f*|_F, q_min, p)");
    app->add_option("--q-min", o.q_min, "Minimum-leverage hyperparameter, in (0, 1]");
    app->add_option("--eta-c", o.eta_c, "Step-size constant c in eta_t = c / (mu (t+1)), > 0")
        ->check(CLI::PositiveNumber);
    app->add_option("--n-unlabeled", o.n_unlabeled, "Unlabeled examples for the leverage model, >= 1")
        ->check(CLI::PositiveNumber);
    app->add_option("--sampler", o.sampler, "Optimized sampler: rejection | grid (grid needs D <= 2)")
        ->check(CLI::IsMember({"rejection", "grid"}));
    app->add_option("--grid-cells", o.grid_cells, "Grid sampler cells per dimension, >= 1")
        ->check(CLI::PositiveNumber);
    app->add_option("--accept-floor", o.accept_floor, "Rejection abort floor on acceptance rate, in [0, 1)");
    app->add_option("--trial-budget", o.trial_budget, "Proposals before the abort floor applies, >= 1")
        ->check(CLI::PositiveNumber);
    app->add_flag("--bottom-raised", o.bottom_raised, "Sample from (q/2 + 1/2) tau instead of q tau");
    app->add_option("--p", o.hyper.p, "Exponent p used to derive lambda, in (0, 1)");
    app->add_option("--epsilon", o.hyper.epsilon, "Target confidence epsilon used to derive lambda, in (0, 1)");
    app->add_option("--c-lambda", o.hyper.c_lambda, "Constant multiplying the derived lambda, > 0")
        ->check(CLI::PositiveNumber);
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw InvalidArgument("--config needs a file path");
            config_path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config_path.empty()) return rest;

    std::vector<std::string> from_file;
    std::istringstream in(text::read_file(config_path));
    std::string line;
    while (std::getline(in, line)) {
        const auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw InvalidArgument("config line without '=': " + std::string(t));
        std::string key(text::trim(t.substr(0, eq)));
        for (auto& ch : key)
            if (ch == '_') ch = '-';
        from_file.push_back("--" + key + "=" + std::string(text::trim(t.substr(eq + 1))));
    }
    // program, subcommand, file flags, command-line flags
    std::vector<std::string> out;
    std::size_t i = 0;
    if (!rest.empty()) out.push_back(rest[i++]);
    if (i < rest.size() && rest[i].rfind("-", 0) != 0) out.push_back(rest[i++]);
    out.insert(out.end(), from_file.begin(), from_file.end());
    out.insert(out.end(), rest.begin() + static_cast<std::ptrdiff_t>(i), rest.end());
    return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Classification with optimized random features: sampling, training, evaluation, sweeps", "orf"};
    app.footer(kFooter);
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    auto* gen = app.add_subcommand("gen-task", "Build and certify a reference synthetic task");
    add_common(gen, o);
    gen->add_option("--kind", o.kind, "Reference task: sphere | subgaussian")
        ->check(CLI::IsMember({"sphere", "subgaussian"}));
    gen->add_option("--delta", o.delta, "Low-noise margin delta, in (0, 1]");
    gen->add_option("--gamma", o.gamma, "Gaussian kernel bandwidth gamma, > 0")->check(CLI::PositiveNumber);
    gen->add_option("--out", o.out, "Output task file")->required();

    auto* sample = app.add_subcommand("sample-features", "Sample conventional or optimized random features");
    add_common(sample, o);
    add_pipeline(sample, o);
    sample->add_option("--mode", o.mode, "conventional | optimized")
        ->check(CLI::IsMember({"conventional", "optimized"}));
    sample->add_option("--M", o.M, "Number of features, >= 1")->check(CLI::PositiveNumber);
    sample->add_option("--out", o.out, "Output feature file")->required();
    sample->add_option("--diag", o.diag, "CSV file to append sampler diagnostics to");

    auto* tr = app.add_subcommand("train", "Projected SGD with suffix averaging on a task stream");
    add_common(tr, o);
    add_pipeline(tr, o);
    tr->add_option("--features", o.features, "Feature file from sample-features")->required();
    tr->add_option("--N", o.N, "Labeled examples / iterations, even, >= 2");
    tr->add_option("--out", o.out, "Output classifier file")->required();
    tr->add_option("--trace", o.trace, "Optional CSV trace t,loss,alpha_norm,eta,projected");

    auto* ev = app.add_subcommand("eval", "Evaluate a classifier on held-out task samples");
    add_common(ev, o);
    add_pipeline(ev, o);
    ev->add_option("--classifier", o.classifier, "Classifier file from train")->required();
    ev->add_option("--n-test", o.n_test, "Held-out examples, >= 1")->check(CLI::PositiveNumber);
    ev->add_option("--N", o.N, "Training length recorded in the metrics row, even, >= 2");
    ev->add_option("--out", o.out, "Records CSV to append to");

    CLI::App* sweeps[2];
    sweeps[0] = app.add_subcommand("sweep-n", "Excess error versus number of labeled examples N");
    sweeps[1] = app.add_subcommand("sweep-m", "Excess error versus number of features M, per mode");
    for (auto* sw : sweeps) {
        add_common(sw, o);
        add_pipeline(sw, o);
        sw->add_option("--n-test", o.n_test, "Held-out examples per cell, >= 1")->check(CLI::PositiveNumber);
        sw->add_option("--trials", o.trials, "Independent trials per grid point, >= 1")->check(CLI::PositiveNumber);
        sw->add_option("--jobs", o.jobs, "Parallel sweep cells, >= 1")->check(CLI::PositiveNumber);
        sw->add_option("--out", o.out, "Output records CSV")->required();
    }
    sweeps[0]->add_option("--mode", o.mode, "conventional | optimized")
        ->check(CLI::IsMember({"conventional", "optimized"}));
    sweeps[0]->add_option("--M", o.M, "Number of features, >= 1")->check(CLI::PositiveNumber);
    sweeps[0]->add_option("--n-grid", o.n_grid, "Comma-separated even N values");
    sweeps[1]->add_option("--N", o.N, "Labeled examples, even, >= 2");
    sweeps[1]->add_option("--m-grid", o.m_grid, "Comma-separated M values, each >= 1");
    sweeps[1]->add_option("--modes", o.modes, "Comma-separated modes among conventional, optimized");

    auto* spec = app.add_subcommand("spectrum", "Eigenvalues of K/N0 and the degree of freedom over a lambda grid");
    add_common(spec, o);
    spec->add_option("--task", o.task_path, "Task file whose input distribution supplies the points");
    spec->add_flag("--circle", o.circle, "Use points uniform on the unit circle instead of a task");
    spec->add_option("--gamma", o.gamma, "Kernel bandwidth for --circle, > 0")->check(CLI::PositiveNumber);
    spec->add_option("--n-points", o.n_points, "Number of points N0, >= 1")->check(CLI::PositiveNumber);
    spec->add_option("--lambda-grid", o.lambda_grid, "Comma-separated lambda values, each > 0");
    spec->add_option("--out", o.out, "Output CSV i,mu_i")->required();
    spec->add_option("--dof-out", o.dof_out, "Output CSV lambda,dof,q_max_bound,expected_acceptance");

    for (auto* sub : {sample, tr, ev})
        sub->add_option("--trial", o.trial, "Trial index; selects the per-trial random streams");
    for (auto* sub : app.get_subcommands({})) sub->footer(kFooter);

    try {
        auto expanded = expand_config(args);
        std::vector<std::string> reversed(expanded.rbegin(), expanded.rend() - (expanded.empty() ? 0 : 1));
        app.parse(reversed);
        validate(o);

        if (gen->parsed()) return cmd_gen_task(o, out);
        if (sample->parsed()) return cmd_sample_features(o, out);
        if (tr->parsed()) return cmd_train(o, out);
        if (ev->parsed()) return cmd_eval(o, out);
        if (sweeps[0]->parsed()) return cmd_sweep(o, true, out, err);
        if (sweeps[1]->parsed()) return cmd_sweep(o, false, out, err);
        if (spec->parsed()) return cmd_spectrum(o, out);
        return kConfigError;
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kConfigError;
    } catch (const CertificationError& e) {
        err << "certification failure: " << e.what() << '\n';
        return kCertificationFailure;
    } catch (const SamplerAbort& e) {
        err << "sampler abort: " << e.what() << '\n';
        return kSamplerAbort;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIoError;
    } catch (const InvalidArgument& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }
}

}  // namespace orf::cli
