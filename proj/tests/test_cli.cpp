#include "twostage/commands.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>

using namespace twostage;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        std::random_device rd;
        dir_ = fs::temp_directory_path() / ("twostage_cli_" + std::to_string(rd()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    /// Runs a command in-process; returns the exit code and keeps stderr.
    int run(const std::string &command, const json &config, const std::string &out) {
        cli::RunOptions o;
        o.config = config;
        o.base_dir = dir_;
        o.out = dir_ / out;
        std::ostringstream console;
        o.console = &console;
        err_.str("");
        return cli::dispatch(command, o, err_);
    }

    json read(const std::string &rel) const { return io::read_json(dir_ / rel); }

    fs::path dir_;
    std::ostringstream err_;
};

Vector stacked_xi(const json &j) {
    const Vector a = io::vector_from(j.at("xi1"), "xi1"), b = io::vector_from(j.at("xi2"), "xi2");
    return (Vector(a.size() + b.size()) << a, b).finished();
}

} // namespace

TEST(DatasetCsv, RoundTripIsExact) {
    models::SimSpec s;
    s.model = "pitot";
    const auto sim = models::simulate(s);
    const std::string text = io::dataset_csv(sim.data);
    const Dataset back = io::parse_dataset_csv(text);
    ASSERT_EQ(back.size(), sim.data.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        EXPECT_EQ(back.z[k], sim.data.z[k]);
        EXPECT_EQ(back.contexts[k].x, sim.data.contexts[k].x);
        EXPECT_EQ(back.contexts[k].u, sim.data.contexts[k].u);
    }
    EXPECT_EQ(io::dataset_csv(back), text);
}

TEST(DatasetCsv, FormatDoubleRoundTrips) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
        EXPECT_EQ(io::parse_double(io::format_double(x), "x"), x);
    }
}

TEST(DatasetCsv, MalformedInputNamesTheLocation) {
    EXPECT_THROW(io::parse_dataset_csv("k,x_1,z_1\n0,1.0\n"), InvalidDataError);
    EXPECT_THROW(io::parse_dataset_csv("k,x_1,z_1\n0,abc,1\n"), InvalidDataError);
}

TEST_F(CliTest, UnknownKeysAreRejected) {
    EXPECT_EQ(run("estimate", {{"model", "scalar1"}, {"simulate", json::object()}, {"bogus", 1}}, "a"),
              cli::kExitConfig);
    EXPECT_NE(err_.str().find("bogus"), std::string::npos) << err_.str();
    EXPECT_EQ(run("estimate", {{"model", "scalar1"}, {"simulate", {{"sede", 1}}}}, "b"), cli::kExitConfig);
    EXPECT_EQ(run("estimate", {{"model", "scalar1"}, {"simulate", json::object()}, {"stage2", {{"mode", "fast"}}}},
                  "c"),
              cli::kExitConfig);
    EXPECT_EQ(run("estimate", {{"model", "nope"}, {"simulate", json::object()}}, "d"), cli::kExitConfig);
    EXPECT_EQ(run("frobnicate", {{"model", "scalar1"}}, "e"), cli::kExitConfig);
}

TEST_F(CliTest, InvalidScheduleNamesTheSegment) {
    const json cfg = {{"model", "pitot"},
                      {"simulate", {{"schedule", {{{"type", "steady-turn"}, {"duration", 10}},
                                                  {{"type", "loop"}, {"duration", 5}}}}}}};
    EXPECT_EQ(run("simulate", cfg, "s"), cli::kExitConfig);
    EXPECT_NE(err_.str().find("segment 1"), std::string::npos) << err_.str();
}

TEST_F(CliTest, EstimateWritesResult) {
    const json cfg = {{"model", "scalar1"},
                      {"simulate", {{"seed", 2}}},
                      {"bounds", {{"lipschitz_samples", 50}}}};
    ASSERT_EQ(run("estimate", cfg, "est"), cli::kExitOk) << err_.str();
    const json r = read("est/result.json");
    for (const char *k : {"model_id", "mode_used", "xi1", "xi2", "stddev", "Rdiag", "final_cost", "alternations",
                          "converged", "seed", "bounds"})
        EXPECT_TRUE(r.contains(k)) << k;
    EXPECT_EQ(r["mode_used"], "xi2-only");
    EXPECT_TRUE(r["converged"].get<bool>());
    EXPECT_TRUE(r["bounds"]["bracket_holds"].get<bool>());
    EXPECT_TRUE(fs::exists(dir_ / "est/run.log"));
}

TEST_F(CliTest, NonConvergedEstimateExitsThree) {
    const json cfg = {{"model", "scalar1"},
                      {"simulate", {{"seed", 2}}},
                      {"stage2", {{"max_outer_alternations", 1}, {"r_tol", 1e-300}}},
                      {"bounds", {{"enabled", false}}}};
    EXPECT_EQ(run("estimate", cfg, "nc"), cli::kExitNotConverged);
    EXPECT_FALSE(read("nc/result.json")["converged"].get<bool>());
}

TEST_F(CliTest, ZeroNoiseRoundTripThroughFilesRecoversTruth) {
    for (const auto &id : models::model_ids()) {
        const json sim = {{"model", id}, {"simulate", {{"noise_std", 0.0}, {"seed", 3}}}};
        ASSERT_EQ(run("simulate", sim, "sim_" + id), cli::kExitOk) << id << ": " << err_.str();
        const json est = {{"dataset", {{"csv", "sim_" + id + "/dataset.csv"},
                                       {"descriptor", "sim_" + id + "/descriptor.json"}}},
                          {"bounds", {{"enabled", false}}}};
        ASSERT_EQ(run("estimate", est, "est_" + id), cli::kExitOk) << id << ": " << err_.str();
        const Vector truth = stacked_xi(read("sim_" + id + "/truth.json"));
        const Vector got = stacked_xi(read("est_" + id + "/result.json"));
        EXPECT_LT((truth - got).lpNorm<Eigen::Infinity>(), 1e-6) << id;
    }
}

TEST_F(CliTest, DatasetCannotBeCombinedWithSimulate) {
    const json sim = {{"model", "scalar1"}, {"simulate", json::object()}};
    ASSERT_EQ(run("simulate", sim, "sim"), cli::kExitOk);
    const json bad = {{"dataset", {{"csv", "sim/dataset.csv"}, {"descriptor", "sim/descriptor.json"}}},
                      {"simulate", json::object()}};
    EXPECT_EQ(run("estimate", bad, "x"), cli::kExitConfig);
    const json wrong_model = {{"model", "scalar2"},
                              {"dataset", {{"csv", "sim/dataset.csv"}, {"descriptor", "sim/descriptor.json"}}}};
    EXPECT_EQ(run("estimate", wrong_model, "y"), cli::kExitConfig);
    const json missing = {{"dataset", {{"csv", "nope.csv"}, {"descriptor", "sim/descriptor.json"}}}};
    EXPECT_EQ(run("estimate", missing, "z"), cli::kExitConfig);
}

TEST_F(CliTest, Stage1MapFiles) {
    const json cfg = {{"model", "scalar2"}, {"simulate", json::object()},
                      {"stage1", {{"mode", "grid"}, {"grid_steps", {11, 21}}}}};
    ASSERT_EQ(run("stage1-map", cfg, "map"), cli::kExitOk) << err_.str();
    const std::string csv = io::read_text(dir_ / "map/stage1_map.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "xi2p_1,xi2p_2,norm_xi2p,traceR,screened_ok");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 11 * 21);
    const json s = read("map/stage1_summary.json");
    EXPECT_TRUE(s.contains("verdict"));
}

TEST_F(CliTest, McSmokeAndHkNotApplicable) {
    const json mc = {{"model", "scalar1"},
                     {"simulate", {{"seed", 3}}},
                     {"mc", {{"n_runs", 1}, {"init_mean", {1.0, 1.0, 0.1}}, {"init_std", {0.0, 0.0, 0.0}},
                             {"estimators", {"proposed"}}}}};
    ASSERT_EQ(run("mc", mc, "mc"), cli::kExitOk) << err_.str();
    const std::string csv = io::read_text(dir_ / "mc/mc_runs.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);

    const json no_init = {{"model", "scalar1"}, {"simulate", json::object()}, {"mc", {{"n_runs", 1}}}};
    EXPECT_EQ(run("mc", no_init, "mc2"), cli::kExitConfig);

    const json bench = {{"model", "scalar2"}, {"simulate", {{"seed", 2}}}, {"mc", {{"n_runs", 2}}}};
    ASSERT_EQ(run("bench", bench, "bench"), cli::kExitOk) << err_.str();
    const json sum = read("bench/mc_summary.json");
    bool saw_hk = false;
    for (const auto &row : sum["table"])
        if (row["estimator"] == "hk") {
            saw_hk = true;
            EXPECT_EQ(row["correct_percent"], "n/a");
        }
    EXPECT_TRUE(saw_hk);
    const std::string bcsv = io::read_text(dir_ / "bench/mc_runs.csv");
    EXPECT_EQ(bcsv.find(",hk,"), std::string::npos);
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
    const json cfg = {{"model", "magnetometer"}, {"simulate", {{"seed", 4}}}, {"bounds", {{"lipschitz_samples", 20}}}};
    ASSERT_EQ(run("estimate", cfg, "r1"), cli::kExitOk);
    ASSERT_EQ(run("estimate", cfg, "r2"), cli::kExitOk);
    EXPECT_EQ(io::read_text(dir_ / "r1/result.json"), io::read_text(dir_ / "r2/result.json"));
}

#ifdef TWOSTAGE_CLI_PATH
TEST_F(CliTest, ExecutableExitCodes) {
    const fs::path cfg = dir_ / "cfg.json";
    io::write_text(cfg, R"({"model": "scalar1", "simulate": {"seed": 2}, "bogus": true})");
    const std::string exe = TWOSTAGE_CLI_PATH;
    auto status = [](const std::string &cmd) {
        const int s = std::system((cmd + " > /dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    EXPECT_EQ(status(exe + " estimate --config " + cfg.string() + " --out " + (dir_ / "o").string()), 2);
    EXPECT_EQ(status(exe + " estimate --config " + (dir_ / "missing.json").string()), 2);
    io::write_text(cfg, R"({"model": "scalar1", "simulate": {"seed": 2}})");
    EXPECT_EQ(status(exe + " simulate --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
    EXPECT_TRUE(fs::exists(dir_ / "o/dataset.csv"));
}
#endif
