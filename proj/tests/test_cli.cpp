#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mstim/data.hpp"
#include "support/synthetic_mitv.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path& scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("mstim_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Result run(const std::string& args, const std::string& env = "") {
    const auto out = scratch() / "stdout.txt";
    const auto err = scratch() / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + MSTIM_CLI + "' " + args + " > '" + out.string() +
                            "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kSmall = " --hidden 8 --filters 4 --dk 8 ";

/// One synthetic CSV and prepared dataset shared by the suite.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        csv_ = scratch() / "traffic.csv";
        mstim::testing::write_synthetic_mitv(csv_.string(),
                                             {.hours = 1200, .seed = 4, .sentinel_every = 150, .duplicate_every = 170});
        prepared_ = scratch() / "prepared";
        const auto r = run("prepare --csv " + quote(csv_) + " --out " + quote(prepared_));
        ASSERT_EQ(r.code, 0) << r.err;
    }

    static std::string data_flag() { return " --data " + quote(prepared_ / "dataset.bin") + " "; }

    static fs::path fresh(const std::string& name) {
        const auto d = scratch() / name;
        fs::remove_all(d);
        return d;
    }

    static inline fs::path csv_;
    static inline fs::path prepared_;
};

void save_artifact(const fs::path& src, const std::string& name) {
    const fs::path dir(MSTIM_ARTIFACT_DIR);
    fs::create_directories(dir);
    fs::copy_file(src, dir / name, fs::copy_options::overwrite_existing);
}

TEST_F(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("train --epochs -3 --model mstim").code, 2);
    EXPECT_EQ(run("train --epochs many --model mstim").code, 2);
    EXPECT_EQ(run("train --model transformer" + data_flag()).code, 2);
    EXPECT_EQ(run("train --model mstim --kernels 3,4" + data_flag()).code, 2);
    EXPECT_EQ(run("prepare --out " + quote(fresh("no_csv"))).code, 2);
}

TEST_F(Cli, MissingCsvNamesPath) {
    const auto r = run("prepare --csv /definitely/missing.csv --out " + quote(fresh("missing")));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("/definitely/missing.csv"), std::string::npos) << r.err;
}

TEST_F(Cli, BadHeaderIsUsageError) {
    const auto bad = scratch() / "bad.csv";
    std::ofstream(bad) << "holiday,temperature\nNone,280\n";
    const auto r = run("prepare --csv " + quote(bad) + " --out " + quote(fresh("bad")));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("temperature"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingDatasetCacheNamesPath) {
    const auto r = run("train --model mstim --data /no/cache.bin");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("/no/cache.bin"), std::string::npos) << r.err;
}

TEST_F(Cli, PrepareIsByteIdenticalOnRerun) {
    const auto again = fresh("prepared_again");
    ASSERT_EQ(run("prepare --csv " + quote(csv_) + " --out " + quote(again)).code, 0);
    EXPECT_EQ(slurp(again / "dataset.bin"), slurp(prepared_ / "dataset.bin"));
    EXPECT_EQ(slurp(again / "prepare_summary.json"), slurp(prepared_ / "prepare_summary.json"));

    const auto summary = nlohmann::json::parse(slurp(prepared_ / "prepare_summary.json"));
    EXPECT_EQ(summary["parsed_records"], summary["data_rows"]);
    EXPECT_EQ(summary["vocabulary"].size(), 11u);
    EXPECT_GT(summary["window_counts"]["test"].get<std::size_t>(), 168u);
    save_artifact(prepared_ / "prepare_summary.json", "prepare_summary.json");
}

TEST_F(Cli, TrainWritesArtifactsAndIsDeterministic) {
    const auto a = fresh("train_a");
    const auto b = fresh("train_b");
    const std::string args = "train --model mstim --epochs 1 --seed 7 --plot" + kSmall + data_flag() + "--out ";
    const auto ra = run(args + quote(a));
    ASSERT_EQ(ra.code, 0) << ra.err;
    ASSERT_EQ(run(args + quote(b)).code, 0);
    for (const char* f : {"report.json", "checkpoint.bin", "test_slice.svg"})
        EXPECT_EQ(slurp(a / "mstim" / f), slurp(b / "mstim" / f)) << f;
    const auto report = nlohmann::json::parse(slurp(a / "mstim" / "report.json"));
    EXPECT_EQ(report["epochs"].size(), 1u);
    EXPECT_EQ(report["seed"], 7);
    EXPECT_EQ(report["spec"]["hidden_size"], 8);
    const auto timing = nlohmann::json::parse(slurp(a / "mstim" / "timing.json"));
    EXPECT_GE(timing["elapsed_seconds"].get<double>(), 0.0);
    EXPECT_NE(slurp(a / "mstim" / "test_slice.svg").find("<polyline"), std::string::npos);
    save_artifact(a / "mstim" / "report.json", "report.json");
    save_artifact(a / "mstim" / "timing.json", "timing.json");
}

TEST_F(Cli, ConfigFilePrecedence) {
    const auto cfg = scratch() / "run.json";
    std::ofstream(cfg) << R"({"epochs": 2, "seed": 3, "hidden_size": 8, "conv_filters": 4, "d_k": 8, "model": "lstm_cnn"})";
    save_artifact(cfg, "run_config.json");
    const auto out = fresh("config");
    ASSERT_EQ(run("train --config " + quote(cfg) + data_flag() + "--out " + quote(out)).code, 0);
    auto report = nlohmann::json::parse(slurp(out / "lstm_cnn" / "report.json"));
    EXPECT_EQ(report["epochs"].size(), 2u);
    EXPECT_EQ(report["seed"], 3);

    ASSERT_EQ(run("train --config " + quote(cfg) + " --epochs 1" + data_flag() + "--out " + quote(out)).code, 0);
    report = nlohmann::json::parse(slurp(out / "lstm_cnn" / "report.json"));
    EXPECT_EQ(report["epochs"].size(), 1u);
    EXPECT_EQ(report["seed"], 3);

    std::ofstream(cfg) << R"({"epochz": 2})";
    auto r = run("train --model mstim --config " + quote(cfg) + data_flag());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("epochz"), std::string::npos) << r.err;
    std::ofstream(cfg) << R"({"epochs": "ten"})";
    EXPECT_EQ(run("train --model mstim --config " + quote(cfg) + data_flag()).code, 2);
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
    const auto env_dir = fresh("from_env");
    const auto r = run("train --model cnn_attention --epochs 1" + kSmall + data_flag(), "MSTIM_OUT_DIR=" + quote(env_dir));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(env_dir / "cnn_attention" / "report.json"));
}

TEST_F(Cli, NonFiniteTrainingIsRuntimeFailure) {
    const auto r = run("train --model lstm_attention --epochs 1 --lr 1e300 --grad-clip 0" + kSmall + data_flag() + "--out " +
                       quote(fresh("diverge")));
    EXPECT_EQ(r.code, 1) << r.err;
    EXPECT_NE(r.err.find("epoch 1"), std::string::npos) << r.err;
}

TEST_F(Cli, CompareTableShapeIdentityAndDeterminism) {
    const auto a = fresh("compare_a");
    const auto b = fresh("compare_b");
    const std::string args = "compare --seed 5 --epochs 1" + kSmall + data_flag() + "--out ";
    const auto ra = run(args + quote(a));
    ASSERT_EQ(ra.code, 0) << ra.err;
    ASSERT_EQ(run(args + quote(b)).code, 0);
    EXPECT_EQ(slurp(a / "comparison.csv"), slurp(b / "comparison.csv"));
    EXPECT_EQ(slurp(a / "comparison.txt"), slurp(b / "comparison.txt"));

    std::istringstream csv(slurp(a / "comparison.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "model,mae,mse,rmse");
    std::size_t rows = 0;
    double previous_mae = 0.0;
    while (std::getline(csv, line)) {
        const auto fields = mstim::data::detail::split_csv_line(line);
        ASSERT_EQ(fields.size(), 4u) << line;
        const double mae = std::stod(fields[1]), mse = std::stod(fields[2]), rmse = std::stod(fields[3]);
        EXPECT_NEAR(rmse, std::sqrt(mse), 1e-10);
        EXPECT_GE(mae, previous_mae);
        previous_mae = mae;
        ++rows;
    }
    EXPECT_EQ(rows, 4u);
    for (const char* kind : {"mstim", "lstm_attention", "cnn_attention", "lstm_cnn"})
        EXPECT_TRUE(fs::exists(a / kind / "report.json")) << kind;
    const auto text = slurp(a / "comparison.txt");
    EXPECT_NE(text.find("0.2120"), std::string::npos);
    EXPECT_NE(text.find("not asserted"), std::string::npos);
}

class CliWithCheckpoint : public Cli {
protected:
    static void SetUpTestSuite() {
        Cli::SetUpTestSuite();
        trained_ = scratch() / "trained";
        const auto r = run("train --model lstm_cnn --epochs 2" + kSmall + data_flag() + "--out " + quote(trained_));
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static std::string ckpt() { return " --checkpoint " + quote(trained_ / "lstm_cnn" / "checkpoint.bin") + " "; }
    static inline fs::path trained_;
};

TEST_F(CliWithCheckpoint, EvaluateEmitsMetricsJson) {
    auto r = run("evaluate" + ckpt() + data_flag());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["metric_scale"], "standardized");
    EXPECT_NEAR(std::pow(j["metrics"]["rmse"].get<double>(), 2), j["metrics"]["mse"].get<double>(), 1e-10);
    std::ofstream(scratch() / "evaluate.json") << r.out;
    save_artifact(scratch() / "evaluate.json", "evaluate.json");

    r = run("evaluate --raw --split validation" + ckpt() + data_flag());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["metric_scale"], "raw");
    EXPECT_EQ(run("evaluate --checkpoint /no/such.bin" + data_flag()).code, 2);
}

TEST_F(CliWithCheckpoint, PredictInsideTestSplit) {
    const auto ds = mstim::data::load_dataset((prepared_ / "dataset.bin").string());
    const auto& ts = ds.splits.series->timestamps;
    const std::size_t first = ds.splits.test.starts()[10] + ds.config.window;
    const std::string from = mstim::data::format_timestamp(ts[first]);
    const std::string to = mstim::data::format_timestamp(ts[first + 47]);
    const auto r = run("predict" + ckpt() + data_flag() + "--from '" + from + "' --to '" + to + "'");
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream csv(r.out);
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "timestamp,predicted_volume,actual_volume");
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        const auto f = mstim::data::detail::split_csv_line(line);
        ASSERT_EQ(f.size(), 3u);
        EXPECT_EQ(f[0], mstim::data::format_timestamp(ts[first + rows]));
        EXPECT_NEAR(std::stod(f[2]), ds.splits.series->volume[first + rows], 0.5);
        ++rows;
    }
    EXPECT_EQ(rows, 48u);
}

TEST_F(CliWithCheckpoint, PredictOnTrainingTargetsIsPlausible) {
    const auto out_csv = scratch() / "train_predictions.csv";
    const auto r = run("predict" + ckpt() + data_flag() + "--from '2012-10-05 00:00' --to '2012-10-20 00:00' --output " +
                       quote(out_csv));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream csv(slurp(out_csv));
    std::string line;
    std::getline(csv, line);
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        const double v = std::stod(mstim::data::detail::split_csv_line(line)[1]);
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 10000.0);
        ++rows;
    }
    EXPECT_GT(rows, 300u);
}

TEST_F(CliWithCheckpoint, PredictRefusesShortHistoryAndEmptyRange) {
    auto r = run("predict" + ckpt() + data_flag() + "--from '2012-10-02 09:00' --to '2012-10-02 12:00'");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("preceding records"), std::string::npos) << r.err;
    r = run("predict" + ckpt() + data_flag() + "--from '2030-01-01 00:00' --to '2030-01-02 00:00'");
    EXPECT_EQ(r.code, 2);
    r = run("predict" + ckpt() + data_flag() + "--from yesterday --to today");
    EXPECT_EQ(r.code, 2);
}

TEST_F(CliWithCheckpoint, DatasetMismatchIsCompatibilityError) {
    const auto other = fresh("prepared_w12");
    ASSERT_EQ(run("prepare --window 12 --csv " + quote(csv_) + " --out " + quote(other)).code, 0);
    const auto r = run("predict" + ckpt() + " --data " + quote(other / "dataset.bin") +
                       " --from '2012-11-20 00:00' --to '2012-11-20 03:00'");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("fingerprint"), std::string::npos) << r.err;
    EXPECT_EQ(run("evaluate" + ckpt() + " --data " + quote(other / "dataset.bin")).code, 2);
}

} // namespace
