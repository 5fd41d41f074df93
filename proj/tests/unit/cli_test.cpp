#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "../support/service_harness.hpp"
#include "scent/files.hpp"
#include "scent/pipeline.hpp"
#include "scent/schema.hpp"

namespace scent::testing {
namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& cwd = fs::temp_directory_path()) {
    const auto err_file = cwd / ".scent-cli-stderr";
    const std::string cmd =
        "cd '" + cwd.string() + "' && SCENT_DATA_DIR= '" SCENT_CLI_PATH "' " + args + " 2>'" + err_file.string() + "'";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (fs::exists(err_file)) {
        r.err = io::read_text(err_file);
        fs::remove(err_file);
    }
    return r;
}

std::string sample(const std::string& name) { return std::string(SCENT_SAMPLES_DIR) + "/" + name; }

class CliTest : public ::testing::Test {
protected:
    void SetUp() override { dir_ = fresh_temp_dir("cli"); }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

TEST_F(CliTest, SimulateIsDeterministicAndMatchesLibrary) {
    ASSERT_EQ(run_cli("simulate --seed 9 --users 20 --out a", dir_).exit_code, 0);
    ASSERT_EQ(run_cli("simulate --seed 9 --users 20 --out b --json", dir_).exit_code, 0);
    synth::GeneratorConfig cfg;
    cfg.seed = 9;
    cfg.n_users = 20;
    const auto lib = pipeline::render_corpus(synth::generate_population(cfg), cfg);
    for (const char* f : {pipeline::kUsersFile, pipeline::kRatingsFile, pipeline::kTruthFile, pipeline::kCatalogFile}) {
        EXPECT_EQ(io::read_text(dir_ / "a" / f), io::read_text(dir_ / "b" / f)) << f;
    }
    EXPECT_EQ(io::read_text(dir_ / "a" / pipeline::kRatingsFile), lib.ratings);
    EXPECT_EQ(io::read_text(dir_ / "a" / pipeline::kUsersFile), lib.users);
    EXPECT_EQ(io::read_text(dir_ / "a" / pipeline::kTruthFile), lib.truth);
}

// Frozen output of `scent simulate --seed 42 --users 5`; a diff here means the
// generator's stream or its serialization changed.
TEST_F(CliTest, Seed42SnapshotIsStable) {
    ASSERT_EQ(run_cli("simulate --seed 42 --users 5 --out snap", dir_).exit_code, 0);
    const fs::path frozen = fs::path(SCENT_SNAPSHOT_DIR) / "seed42-users5";
    for (const char* f : {pipeline::kUsersFile, pipeline::kRatingsFile, pipeline::kCatalogFile}) {
        EXPECT_EQ(io::read_text(dir_ / "snap" / f), io::read_text(frozen / f)) << f;
    }
}

TEST_F(CliTest, FitAndEvalMatchLibraryFlow) {
    ASSERT_EQ(run_cli("simulate --users 40 --out data", dir_).exit_code, 0);
    const auto fit = run_cli("fit --users data/users.v1.jsonl --ratings data/ratings.v1.csv --out model.json "
                             "--max-ratings 90 --json", dir_);
    ASSERT_EQ(fit.exit_code, 0) << fit.err;
    pipeline::FitRequest req;
    req.users = dir_ / "data" / pipeline::kUsersFile;
    req.ratings = dir_ / "data" / pipeline::kRatingsFile;
    req.max_ratings = 90;
    const auto model = pipeline::fit_from_files(req);
    auto printed = json::parse(fit.out);
    printed.erase("out");
    EXPECT_EQ(printed, pipeline::fit_summary(model));
    EXPECT_EQ(io::read_json(dir_ / "model.json"), io::to_json(model));

    const auto eval = run_cli("eval --model model.json --truth data/truth.v1.json --report report.json --json", dir_);
    ASSERT_EQ(eval.exit_code, 0) << eval.err;
    auto report = json::parse(eval.out);
    pipeline::EvalRequest er;
    er.model = dir_ / "model.json";
    er.truth = dir_ / "data" / pipeline::kTruthFile;
    auto lib = io::to_json(pipeline::evaluate_files(er));
    report.erase("runtime_ms");
    lib.erase("runtime_ms");
    EXPECT_EQ(report, lib);
    EXPECT_TRUE(fs::exists(dir_ / "report.json"));
}

TEST_F(CliTest, SessionRunsThreeNotes) {
    ASSERT_EQ(run_cli("simulate --users 40 --out data", dir_).exit_code, 0);
    ASSERT_EQ(run_cli("fit --users data/users.v1.jsonl --ratings data/ratings.v1.csv --out model.json", dir_).exit_code,
              0);
    const auto r = run_cli("session --model model.json --users data/users.v1.jsonl --catalog data/catalog.v1.json "
                           "--user u3 --ratings 0.8,0.6,0.7 -k 3 --json", dir_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_EQ(j.at("trajectory").size(), 4U);
    EXPECT_EQ(j.at("trajectory").back().at("stage"), "complete");
    EXPECT_EQ(j.at("recommendations").size(), 3U);
    EXPECT_LT(j.at("diagnostics").at("deviation").get<double>(), 1e-9);

    const auto text = run_cli("session --model model.json --users data/users.v1.jsonl --catalog data/catalog.v1.json "
                              "--user u3 --ratings 0.8,0.6,0.7", dir_);
    EXPECT_EQ(text.exit_code, 0);
    EXPECT_NE(text.out.find("await_middle"), std::string::npos);

    const auto bad = run_cli("session --model model.json --users data/users.v1.jsonl --catalog data/catalog.v1.json "
                             "--user u3 --ratings 0.8,1.6,0.7", dir_);
    EXPECT_EQ(bad.exit_code, 1);
    EXPECT_EQ(json::parse(bad.err).at("error").at("code"), "rating_out_of_range");
}

TEST_F(CliTest, ChainExamples) {
    const auto r = run_cli("chain --model '" + sample("chain_example.pleasantness.v1.json") + "' --outcomes p,p,p --json");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_NEAR(json::parse(r.out).at("posterior").get<double>(), 21.0 / 22.0, 1e-12);

    const auto flat = run_cli("chain --model '" + sample("uninformative.pleasantness.v1.json") + "' --outcomes p,u,p --json");
    ASSERT_EQ(flat.exit_code, 0);
    EXPECT_EQ(json::parse(flat.out).at("posterior").get<double>(), 0.37);

    const auto text = run_cli("chain --model '" + sample("uninformative.pleasantness.v1.json") + "' --outcomes p,u,p");
    EXPECT_NE(text.out.find("posterior 0.37\n"), std::string::npos) << text.out;
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run_cli("").exit_code, 2);
    EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
    EXPECT_EQ(run_cli("chain --outcomes p,p,p").exit_code, 2);
    EXPECT_EQ(run_cli("simulate --users 0").exit_code, 2);
    EXPECT_EQ(run_cli("--help").exit_code, 0);

    const auto short_outcomes = run_cli("chain --model '" + sample("chain_example.pleasantness.v1.json") + "' --outcomes p,p");
    EXPECT_EQ(short_outcomes.exit_code, 1);
    const auto err = json::parse(short_outcomes.err);
    EXPECT_EQ(err.at("error").at("code"), "invalid_argument");

    const auto missing = run_cli("chain --model /nonexistent/model.json --outcomes p,p,p");
    EXPECT_EQ(missing.exit_code, 1);
    EXPECT_EQ(json::parse(missing.err).at("error").at("code"), "io_error");

    const auto no_model = run_cli("eval --model nope.json --truth nope.json", dir_);
    EXPECT_EQ(no_model.exit_code, 1);
}

TEST_F(CliTest, FitHonoursDataDirEnvironment) {
    ASSERT_EQ(run_cli("simulate --users 30 --out env", dir_).exit_code, 0);
    const std::string cmd = "cd '" + dir_.string() + "' && SCENT_DATA_DIR=env '" SCENT_CLI_PATH "' fit >/dev/null 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(dir_ / "env" / "model.v1.json"));
}

}  // namespace
}  // namespace scent::testing
