#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "orf/cli.hpp"
#include "orf/experiments.hpp"
#include "orf/text_io.hpp"

using namespace orf;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result orf_run(std::vector<std::string> args) {
    args.insert(args.begin(), "orf");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string dir() {
    static const std::string d = [] {
        fs::path p(ORF_TEST_TMPDIR);
        fs::remove_all(p);
        fs::create_directories(p);
        return p.string();
    }();
    return d;
}

std::string path(const std::string& name) { return dir() + "/" + name; }

std::string slurp(const std::string& p) { return text::read_file(p); }

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

const std::string& task_file() {
    static const std::string p = [] {
        const auto r = orf_run({"gen-task", "--out", path("task.txt"), "--force"});
        REQUIRE(r.code == 0);
        return path("task.txt");
    }();
    return p;
}

// Fields of a records row with wall_ms and accept_rate dropped.
std::vector<std::string> stable_fields(const std::string& row) {
    auto f = text::split(row, ',');
    f.pop_back();
    f.pop_back();
    return f;
}

}  // namespace

TEST_CASE("gen-task writes a certified task") {
    const auto r = orf_run({"gen-task", "--out", path("g1.txt")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("min_abs_f=") != std::string::npos);
    CHECK(r.out.find("f_norm=") != std::string::npos);
    CHECK(r.out.find("bayes_err=") != std::string::npos);
    std::ifstream in(path("g1.txt"));
    const auto task = SyntheticTask::load(in);
    CHECK(task.certificate().min_abs >= task.delta());

    CHECK(orf_run({"gen-task", "--out", path("g1.txt")}).code == cli::kIoError);
    CHECK(orf_run({"gen-task", "--out", path("g2.txt")}).code == 0);
    CHECK(slurp(path("g1.txt")) == slurp(path("g2.txt")));
    CHECK(orf_run({"gen-task", "--out", path("g1.txt"), "--force", "--kind", "subgaussian"}).code == 0);
    CHECK(orf_run({"gen-task", "--out", path("g3.txt"), "--delta", "0.95"}).code == cli::kCertificationFailure);
    CHECK(!fs::exists(path("g3.txt")));
}

TEST_CASE("sample-features: conventional, optimized, diagnostics") {
    const auto& task = task_file();
    auto r = orf_run({"sample-features", "--task", task, "--mode", "conventional", "--M", "8", "--out",
                      path("fc.txt"), "--diag", path("diag.csv")});
    REQUIRE(r.code == 0);
    auto rows = lines(slurp(path("fc.txt")));
    CHECK(rows.size() == 9);
    CHECK(rows[0].rfind("# mode=conventional M=8 D=2", 0) == 0);
    CHECK(rows[1].find("q=") == std::string::npos);

    r = orf_run({"sample-features", "--task", task, "--M", "64", "--lambda", "1e-3", "--out", path("fo.txt"),
                 "--diag", path("diag.csv")});
    REQUIRE(r.code == 0);
    rows = lines(slurp(path("fo.txt")));
    CHECK(rows.size() == 65);
    CHECK(rows[1].find("q=") != std::string::npos);

    const auto diag = lines(slurp(path("diag.csv")));
    REQUIRE(diag.size() == 3);
    CHECK(diag[0] == "mode,M,lambda,dof,proposals,accepted,accept_rate,expected_accept,sec_per_sample");
    const auto f = text::split(diag[2], ',');
    const double proposals = text::parse_double(f[4], "proposals");
    const double rate = text::parse_double(f[6], "rate");
    const double p = text::parse_double(f[7], "expected");
    CHECK(std::abs(rate - p) <= 3 * std::sqrt(p * (1 - p) / proposals));

    CHECK(orf_run({"sample-features", "--task", task, "--lambda", "1e-9", "--accept-floor", "0.5", "--trial-budget",
                   "1000", "--out", path("fa.txt")})
              .code == cli::kSamplerAbort);
}

TEST_CASE("train then eval writes a metrics row; files round-trip") {
    const auto& task = task_file();
    REQUIRE(orf_run({"sample-features", "--task", task, "--M", "16", "--out", path("f16.txt"), "--force"}).code == 0);
    auto r = orf_run({"train", "--task", task, "--features", path("f16.txt"), "--N", "1024", "--out",
                      path("c16.txt"), "--trace", path("trace.csv"), "--force"});
    REQUIRE(r.code == 0);
    const auto trace = lines(slurp(path("trace.csv")));
    CHECK(trace.size() == 1025);
    CHECK(trace[0] == "t,loss,alpha_norm,eta,projected");

    fs::remove(path("rec.csv"));
    r = orf_run({"eval", "--task", task, "--classifier", path("c16.txt"), "--N", "1024", "--out", path("rec.csv")});
    REQUIRE(r.code == 0);
    auto recs = lines(slurp(path("rec.csv")));
    REQUIRE(recs.size() == 2);
    CHECK(recs[0] == kRecordsHeader);

    for (const auto& name : {"f16.txt", "c16.txt"}) {
        const std::string before = slurp(path(name));
        std::istringstream in(before);
        std::ostringstream again;
        if (std::string(name)[0] == 'f')
            FeatureSet::load(in).save(again);
        else
            Classifier::load(in).save(again);
        CHECK(again.str() == before);
    }

    // a one-point sweep reproduces sample-features + train + eval
    r = orf_run({"sweep-n", "--task", task, "--M", "16", "--n-grid", "1024", "--trials", "1", "--out",
                 path("one.csv"), "--force"});
    REQUIRE(r.code == 0);
    const auto sweep = lines(slurp(path("one.csv")));
    REQUIRE(sweep.size() == 2);
    CHECK(stable_fields(sweep[1]) == stable_fields(recs[1]));
    CHECK(r.err.find("cell mode=optimized M=16 N=1024 trial=0") != std::string::npos);
}

TEST_CASE("sweeps are deterministic apart from wall time") {
    const auto& task = task_file();
    const std::vector<std::string> base{"sweep-m", "--task", task, "--m-grid", "2,4", "--N", "256",
                                        "--trials", "2", "--n-test", "1000", "--force"};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", path("m1.csv")});
    b.insert(b.end(), {"--out", path("m2.csv"), "--jobs", "2"});
    REQUIRE(orf_run(a).code == 0);
    REQUIRE(orf_run(b).code == 0);
    const auto x = lines(slurp(path("m1.csv"))), y = lines(slurp(path("m2.csv")));
    REQUIRE(x.size() == 9);
    REQUIRE(y.size() == 9);
    for (std::size_t i = 1; i < x.size(); ++i) {
        auto fx = text::split(x[i], ','), fy = text::split(y[i], ',');
        fx.pop_back();
        fy.pop_back();
        CHECK(fx == fy);
    }
}

TEST_CASE("config file with flag override") {
    const auto& task = task_file();
    std::ofstream(path("run.cfg")) << "# sampler settings\nlambda=0.002\nq_min=0.5\nM=4\nmode = conventional\n";
    auto r = orf_run({"sample-features", "--config", path("run.cfg"), "--task", task, "--mode", "optimized",
                      "--out", path("cfg.txt"), "--force"});
    REQUIRE(r.code == 0);
    const auto rows = lines(slurp(path("cfg.txt")));
    CHECK(rows[0] == "# mode=optimized M=4 D=2 lambda=0.002");

    const auto expanded = cli::expand_config({"orf", "train", "--config=" + path("run.cfg"), "--lambda", "1"});
    REQUIRE(expanded.size() == 8);
    CHECK(expanded[2] == "--lambda=0.002");
    CHECK(expanded[3] == "--q-min=0.5");
    CHECK(expanded[6] == "--lambda");

    std::ofstream(path("bad.cfg")) << "lambda\n";
    CHECK(orf_run({"train", "--config", path("bad.cfg")}).code == cli::kConfigError);
    CHECK(orf_run({"train", "--config", path("missing.cfg")}).code == cli::kIoError);
}

TEST_CASE("validation and error exit codes") {
    const auto& task = task_file();
    CHECK(orf_run({}).code == cli::kConfigError);
    CHECK(orf_run({"frobnicate"}).code == cli::kConfigError);
    CHECK(orf_run({"sample-features", "--task", task, "--lambda", "-1", "--out", path("x.txt")}).code ==
          cli::kConfigError);
    CHECK(orf_run({"sample-features", "--task", task, "--q-min", "1.5", "--out", path("x.txt")}).code ==
          cli::kConfigError);
    CHECK(orf_run({"sample-features", "--task", task, "--mode", "quantum", "--out", path("x.txt")}).code ==
          cli::kConfigError);
    CHECK(orf_run({"sample-features", "--task", task, "--M", "abc", "--out", path("x.txt")}).code ==
          cli::kConfigError);
    CHECK(orf_run({"train", "--task", task, "--features", path("nope.txt"), "--N", "7", "--out", path("x.txt")})
              .code == cli::kConfigError);
    CHECK(orf_run({"train", "--task", task, "--features", path("nope.txt"), "--out", path("x.txt")}).code ==
          cli::kIoError);
    CHECK(orf_run({"sample-features", "--task", path("nope.txt"), "--out", path("x.txt")}).code == cli::kIoError);

    std::ofstream(path("garbage.txt")) << "# mode=optimized M=3\n1 2\n";
    CHECK(orf_run({"train", "--task", task, "--features", path("garbage.txt"), "--out", path("x.txt")}).code ==
          cli::kIoError);
    CHECK(!fs::exists(path("x.txt")));
}

TEST_CASE("help lists options, constraints and exit codes") {
    auto top = orf_run({"--help"});
    CHECK(top.code == 0);
    for (const char* sub : {"gen-task", "sample-features", "train", "eval", "sweep-n", "sweep-m", "spectrum"})
        CHECK(top.out.find(sub) != std::string::npos);
    CHECK(top.out.find("5 I/O") != std::string::npos);

    auto h = orf_run({"sweep-m", "--help"});
    CHECK(h.code == 0);
    for (const char* key : {"--task", "--lambda", "--q-min", "--eta-c", "--p", "--seed", "--trials", "--m-grid",
                            "--N", "--sampler", "--accept-floor", "--out", "--jobs"})
        CHECK(h.out.find(key) != std::string::npos);
    CHECK(h.out.find("(0, 1]") != std::string::npos);
    CHECK(h.out.find("3 certification failure") != std::string::npos);
}

TEST_CASE("spectrum writes eigenvalues and the dof table") {
    auto r = orf_run({"spectrum", "--circle", "--n-points", "50", "--lambda-grid", "0.1,0.01", "--out",
                      path("spec.csv"), "--dof-out", path("dof.csv"), "--force"});
    REQUIRE(r.code == 0);
    const auto spec = lines(slurp(path("spec.csv")));
    CHECK(spec.size() == 51);
    CHECK(spec[0] == "i,mu_i");
    const auto dof = lines(slurp(path("dof.csv")));
    CHECK(dof.size() == 3);
    CHECK(orf_run({"spectrum", "--out", path("spec2.csv")}).code == cli::kConfigError);
}
