#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mstim/data.hpp"
#include "mstim/models.hpp"
#include "mstim/training.hpp"

namespace mstim::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline constexpr std::size_t kPlotSteps = 168;

/// Everything a command needs; filled from defaults, then the config file, then flags.
struct RunConfig {
    std::string command;
    std::string csv;
    std::string data;  // dataset cache; empty means <out_dir>/dataset.bin
    std::string out_dir;
    std::size_t window = 24;
    std::size_t horizon = 1;
    ModelKind model = ModelKind::mstim;
    std::size_t hidden_size = 64;
    std::size_t conv_filters = 16;
    std::vector<std::size_t> kernel_sizes{3, 5, 7};
    std::size_t d_k = 64;
    TrainConfig train;
    bool plot = false;
    bool raw = false;
    std::string split = "test";
    std::string checkpoint;
    std::string from;
    std::string to;
    std::string output;  // predictions CSV; empty means stdout

    std::string dataset_path() const { return data.empty() ? (fs::path(out_dir) / "dataset.bin").string() : data; }

    ModelSpec spec_for(ModelKind kind, const data::PreparedDataset& ds) const {
        ModelSpec s;
        s.kind = kind;
        s.window = ds.config.window;
        s.horizon = ds.config.horizon;
        s.input_features = ds.features();
        s.hidden_size = hidden_size;
        s.conv_filters = conv_filters;
        s.kernel_sizes = kernel_sizes;
        s.d_k = d_k;
        s.seed = train.seed;
        return s;
    }
};

inline std::string default_out_dir() {
    const char* env = std::getenv("MSTIM_OUT_DIR");
    return env != nullptr && *env != '\0' ? env : "mstim_out";
}

/// Applies a JSON config file. Unknown keys and wrongly typed values are ConfigErrors.
inline void apply_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "csv") rc.csv = value.get<std::string>();
            else if (key == "data") rc.data = value.get<std::string>();
            else if (key == "out_dir") rc.out_dir = value.get<std::string>();
            else if (key == "window") rc.window = value.get<std::size_t>();
            else if (key == "horizon") rc.horizon = value.get<std::size_t>();
            else if (key == "model") rc.model = parse_model_kind(value.get<std::string>());
            else if (key == "hidden_size") rc.hidden_size = value.get<std::size_t>();
            else if (key == "conv_filters") rc.conv_filters = value.get<std::size_t>();
            else if (key == "kernel_sizes") rc.kernel_sizes = value.get<std::vector<std::size_t>>();
            else if (key == "d_k") rc.d_k = value.get<std::size_t>();
            else if (key == "epochs") rc.train.epochs = value.get<std::size_t>();
            else if (key == "learning_rate") rc.train.learning_rate = value.get<double>();
            else if (key == "batch_size") rc.train.batch_size = value.get<std::size_t>();
            else if (key == "optimizer") rc.train.optimizer = parse_optimizer(value.get<std::string>());
            else if (key == "grad_clip") rc.train.grad_clip = value.get<double>();
            else if (key == "seed") rc.train.seed = value.get<std::uint64_t>();
            else if (key == "shuffle") rc.train.shuffle = value.get<bool>();
            else if (key == "plot") rc.plot = value.get<bool>();
            else throw ConfigError("config file '" + path + "': unknown key '" + key + "'");
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config file '" + path + "': key '" + key + "' has the wrong type (" + value.dump() + ")");
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw IoError("failed writing '" + path.string() + "'");
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

inline data::PreparedDataset load_prepared(const RunConfig& rc) {
    const auto path = rc.dataset_path();
    if (!fs::exists(path)) throw IoError("dataset cache '" + path + "' not found (run prepare first)");
    return data::load_dataset(path);
}

inline void check_compatible(const nlohmann::json& meta, const data::PreparedDataset& ds, const std::string& checkpoint) {
    const std::string expected = meta.value("dataset_fingerprint", "");
    if (expected != ds.fingerprint()) {
        throw CompatibilityError("checkpoint '" + checkpoint + "' was trained on dataset " +
                                 (expected.empty() ? "<unknown>" : expected) + " but the cache has fingerprint " +
                                 ds.fingerprint());
    }
}

/// Predicted vs actual vehicles/hour over the first test windows.
inline std::string test_slice_svg(const ForecastModel& model, const data::PreparedDataset& ds) {
    const auto& test = ds.splits.test;
    const std::size_t n = std::min(kPlotSteps, test.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const auto subset = test.subset(idx);
    const auto pred = predict_all(model, subset);
    const auto target = subset.targets().to_vector();
    const auto& stats = ds.splits.stats;
    const std::size_t horizon = test.horizon();
    std::vector<double> p, a;
    for (std::size_t i = 0; i < n; ++i) {
        p.push_back(stats.denormalize(pred[i * horizon], stats.target_column));
        a.push_back(stats.denormalize(target[i * horizon], stats.target_column));
    }
    double hi = 1.0;
    for (double v : p) hi = std::max(hi, v);
    for (double v : a) hi = std::max(hi, v);
    const double width = 960, height = 360, left = 60, right = 20, top = 30, bottom = 40;
    const auto x = [&](std::size_t i) { return left + (width - left - right) * static_cast<double>(i) / std::max<double>(1, n - 1); };
    const auto y = [&](double v) { return top + (height - top - bottom) * (1.0 - std::max(0.0, v) / hi); };
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << display_name(model.spec().kind)
        << ": first " << n << " test steps (vehicles/hour)</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << width - right << "\" y2=\"" << y(0)
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << y(0) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"5\" y=\"" << top + 5 << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt("%.0f", hi)
        << "</text>\n";
    svg << "<text x=\"5\" y=\"" << y(0) << "\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n";
    const auto polyline = [&](const std::vector<double>& v, const char* color) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < v.size(); ++i) svg << (i ? " " : "") << fmt("%.2f", x(i)) << "," << fmt("%.2f", y(v[i]));
        svg << "\"/>\n";
    };
    polyline(a, "#1f77b4");
    polyline(p, "#d62728");
    svg << "<text x=\"" << width - 220 << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#1f77b4\">actual</text>\n";
    svg << "<text x=\"" << width - 150 << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#d62728\">predicted</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

struct TrainedArtifacts {
    TrainReport report;
    fs::path directory;
};

inline EpochCallback progress(std::ostream& err, ModelKind kind, std::size_t epochs) {
    return [&err, kind, epochs](const EpochRecord& e) {
        err << "[" << to_string(kind) << "] epoch " << e.epoch << "/" << epochs << " train_loss " << fmt("%.6f", e.train_loss);
        if (e.validation) err << " val_mae " << fmt("%.4f", e.validation->mae) << " val_rmse " << fmt("%.4f", e.validation->rmse);
        err << "\n";
    };
}

/// Trains one model and writes checkpoint.bin, report.json, timing.json (and test_slice.svg) under <out>/<kind>/.
inline TrainedArtifacts train_and_save(const RunConfig& rc, ModelKind kind, const data::PreparedDataset& ds, std::ostream& err) {
    ForecastModel model = build(rc.spec_for(kind, ds));
    err << "[" << to_string(kind) << "] " << model.parameter_count() << " parameters, " << ds.splits.train.size()
        << " training windows\n";
    TrainReport report = train(model, ds.splits, rc.train, progress(err, kind, rc.train.epochs));
    report.dataset_fingerprint = ds.fingerprint();
    const fs::path dir = fs::path(rc.out_dir) / to_string(kind);
    ensure_dir(dir);
    save_checkpoint((dir / "checkpoint.bin").string(), model,
                    {{"dataset_fingerprint", report.dataset_fingerprint}, {"train_config", rc.train.to_json()}});
    auto j = report.to_json();
    j["test_raw"] = evaluate(model, ds.splits.test, &ds.splits.stats).to_json();
    write_json(dir / "report.json", j);
    write_json(dir / "timing.json", report.timing_json());
    if (rc.plot) write_text(dir / "test_slice.svg", test_slice_svg(model, ds));
    return {std::move(report), dir};
}

// ---------------------------------------------------------------------------
// Comparison tables
// ---------------------------------------------------------------------------

struct ReferenceRow {
    const char* model;
    double mae, mse, rmse;
};

/// Published comparison values, shown next to measured ones for context only.
inline constexpr std::array<ReferenceRow, 4> kReferenceRows{{{"LSTM-Attention", 0.2570, 0.1128, 0.3369},
                                                            {"CNN-Attention", 0.2358, 0.1128, 0.3399},
                                                            {"LSTM-CNN", 0.2271, 0.1101, 0.3465},
                                                            {"MSTIM", 0.2120, 0.1048, 0.3237}}};

inline std::string comparison_csv(const Comparison& c) {
    std::string out = "model,mae,mse,rmse\n";
    for (const auto& r : c.rows) {
        out += r.model + "," + fmt("%.17g", r.metrics.mae) + "," + fmt("%.17g", r.metrics.mse) + "," +
               fmt("%.17g", r.metrics.rmse) + "\n";
    }
    return out;
}

inline std::string comparison_text(const Comparison& c, std::uint64_t seed) {
    std::ostringstream os;
    const auto row = [&](const std::string& name, double mae, double mse, double rmse) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-16s %8.4f %8.4f %8.4f\n", name.c_str(), mae, mse, rmse);
        os << buf;
    };
    os << "Test-split metrics on the standardized scale, seed " << seed << ", sorted by MAE\n\n";
    char head[128];
    std::snprintf(head, sizeof head, "%-16s %8s %8s %8s\n", "model", "MAE", "MSE", "RMSE");
    os << head;
    for (const auto& r : c.rows) row(r.model, r.metrics.mae, r.metrics.mse, r.metrics.rmse);
    os << "\nReference values from the published comparison (context only: its splits, seeds and\n"
          "optimizer are unknown, so absolute agreement is not asserted)\n\n"
       << head;
    for (const auto& r : kReferenceRows) row(r.model, r.mae, r.mse, r.rmse);
    return os.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_prepare(const RunConfig& rc, std::ostream& out, std::ostream&) {
    if (rc.csv.empty()) throw UsageError("prepare: --csv is required");
    data::WindowConfig wc;
    wc.window = rc.window;
    wc.horizon = rc.horizon;
    const fs::path dir(rc.out_dir);
    ensure_dir(dir);
    const auto ds = data::prepare_csv(rc.csv, wc);
    const auto cache = rc.data.empty() ? dir / "dataset.bin" : fs::path(rc.data);
    data::save_dataset(cache.string(), ds);
    write_json(dir / "prepare_summary.json", ds.summary);
    const auto& s = ds.summary;
    out << "parsed records: " << s["parsed_records"] << " (" << s["data_rows"] << " data rows, " << s["rejected_rows"]
        << " rejected)\n";
    out << "after cleaning: " << s["cleaning"]["output_records"] << " records, vocabulary " << s["vocabulary"].size()
        << " weather categories, " << ds.features() << " features\n";
    out << "windows: train " << ds.splits.train.size() << ", validation " << ds.splits.validation.size() << ", test "
        << ds.splits.test.size() << "\n";
    out << "wrote " << cache.string() << " and " << (dir / "prepare_summary.json").string() << "\n";
    return kExitOk;
}

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    rc.train.validate();
    const auto ds = load_prepared(rc);
    const auto result = train_and_save(rc, rc.model, ds, err);
    const auto& t = result.report.test;
    out << display_name(rc.model) << " test MAE " << fmt("%.4f", t.mae) << " MSE " << fmt("%.4f", t.mse) << " RMSE "
        << fmt("%.4f", t.rmse) << " (" << fmt("%.1f", result.report.elapsed_seconds) << " s)\n";
    out << "wrote " << result.directory.string() << "\n";
    return kExitOk;
}

inline int cmd_evaluate(const RunConfig& rc, std::ostream& out, std::ostream&) {
    if (rc.checkpoint.empty()) throw UsageError("evaluate: --checkpoint is required");
    if (!fs::exists(rc.checkpoint)) throw IoError("checkpoint '" + rc.checkpoint + "' not found");
    const auto ds = load_prepared(rc);
    const auto ckpt = load_checkpoint(rc.checkpoint);
    check_compatible(ckpt.meta, ds, rc.checkpoint);
    data::Split split = data::Split::test;
    if (rc.split == "train") split = data::Split::train;
    else if (rc.split == "validation") split = data::Split::validation;
    else if (rc.split != "test") throw UsageError("evaluate: unknown split '" + rc.split + "'");
    const auto metrics = evaluate(ckpt.model, ds.splits.get(split), rc.raw ? &ds.splits.stats : nullptr);
    const nlohmann::json j{{"model", to_string(ckpt.model.spec().kind)},
                           {"split", rc.split},
                           {"metric_scale", rc.raw ? "raw" : "standardized"},
                           {"metrics", metrics.to_json()},
                           {"dataset_fingerprint", ds.fingerprint()}};
    out << j.dump(2) << "\n";
    return kExitOk;
}

inline int cmd_compare(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    rc.train.validate();
    const auto ds = load_prepared(rc);
    Comparison c;
    for (auto kind : kAllModelKinds) {
        auto trained = train_and_save(rc, kind, ds, err);
        c.rows.push_back({display_name(kind), kind, trained.report.test});
        c.reports.push_back(std::move(trained.report));
    }
    std::stable_sort(c.rows.begin(), c.rows.end(),
                     [](const ComparisonRow& a, const ComparisonRow& b) { return a.metrics.mae < b.metrics.mae; });
    const fs::path dir(rc.out_dir);
    write_text(dir / "comparison.csv", comparison_csv(c));
    const auto text = comparison_text(c, rc.train.seed);
    write_text(dir / "comparison.txt", text);
    out << text;
    return kExitOk;
}

inline int cmd_predict(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    if (rc.checkpoint.empty()) throw UsageError("predict: --checkpoint is required");
    if (!fs::exists(rc.checkpoint)) throw IoError("checkpoint '" + rc.checkpoint + "' not found");
    const auto from = data::parse_timestamp(rc.from);
    const auto to = data::parse_timestamp(rc.to);
    if (!from || !to) throw UsageError("predict: --from and --to must look like 'YYYY-MM-DD HH:MM[:SS]'");
    if (*to < *from) throw UsageError("predict: --to is before --from");
    const auto ds = load_prepared(rc);
    const auto ckpt = load_checkpoint(rc.checkpoint);
    check_compatible(ckpt.meta, ds, rc.checkpoint);

    const auto& series = *ds.splits.series;
    const auto& ts = series.timestamps;
    const std::size_t n = ckpt.model.spec().window;
    const auto first = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), *from) - ts.begin());
    const auto last = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), *to) - ts.begin());
    if (first >= last) throw UsageError("predict: no records between " + rc.from + " and " + rc.to);
    if (first < n) {
        throw UsageError("predict: " + data::format_timestamp(ts[first]) + " has only " + std::to_string(first) +
                         " preceding records; the model needs " + std::to_string(n));
    }
    std::vector<std::size_t> starts;
    for (std::size_t i = first; i < last; ++i) starts.push_back(i - n);
    const data::WindowedDataset windows(ds.splits.series, starts, n, 1, 0, data::Split::test);
    const auto pred = predict_all(ckpt.model, windows);
    const std::size_t horizon = ckpt.model.spec().horizon;

    std::ostringstream csv;
    csv << "timestamp,predicted_volume,actual_volume\n";
    for (std::size_t k = 0; k < starts.size(); ++k) {
        const double v = ds.splits.stats.denormalize(pred[k * horizon], ds.splits.stats.target_column);
        csv << data::format_timestamp(ts[first + k]) << "," << fmt("%.3f", v) << "," << fmt("%.0f", series.volume[first + k])
            << "\n";
    }
    if (rc.output.empty()) {
        out << csv.str();
    } else {
        write_text(rc.output, csv.str());
        err << "wrote " << starts.size() << " predictions to " << rc.output << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int dispatch(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    if (rc.command == "prepare") return cmd_prepare(rc, out, err);
    if (rc.command == "train") return cmd_train(rc, out, err);
    if (rc.command == "evaluate") return cmd_evaluate(rc, out, err);
    if (rc.command == "compare") return cmd_compare(rc, out, err);
    if (rc.command == "predict") return cmd_predict(rc, out, err);
    throw UsageError("unknown command '" + rc.command + "'");
}

/// Parses arguments, runs the command and maps failures onto exit codes:
/// 0 success, 1 runtime failure, 2 usage, configuration or input file problems.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Traffic volume forecasting with multi-scale CNN, LSTM and attention models", "mstim"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "mstim 1.0.0");

    std::string config_path, model_name, optimizer_name, out_dir;
    RunConfig flags;
    std::vector<CLI::Option*> given;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (flags take precedence)");
        sub->add_option("--out", out_dir, "Output directory (default $MSTIM_OUT_DIR or ./mstim_out)");
        sub->add_option("--data", flags.data, "Dataset cache (default <out>/dataset.bin)");
    };
    const auto training = [&](CLI::App* sub) {
        sub->add_option("--epochs", flags.train.epochs, "Passes over the training split")->check(CLI::PositiveNumber);
        sub->add_option("--lr", flags.train.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
        sub->add_option("--batch", flags.train.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
        sub->add_option("--seed", flags.train.seed, "Seed for initialisation and shuffling");
        sub->add_option("--optimizer", optimizer_name, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
        sub->add_option("--grad-clip", flags.train.grad_clip, "Max global gradient norm (0 disables)")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--hidden", flags.hidden_size, "LSTM hidden size")->check(CLI::PositiveNumber);
        sub->add_option("--filters", flags.conv_filters, "Filters per convolution branch")->check(CLI::PositiveNumber);
        sub->add_option("--kernels", flags.kernel_sizes, "Convolution kernel sizes")->delimiter(',');
        sub->add_option("--dk", flags.d_k, "Attention key size")->check(CLI::PositiveNumber);
        sub->add_flag("--plot", flags.plot, "Write an SVG of predictions on the first test week");
    };

    auto* prepare = app.add_subcommand("prepare", "Parse, clean, encode and window the traffic CSV");
    common(prepare);
    prepare->add_option("--csv", flags.csv, "Metro Interstate Traffic Volume CSV");
    prepare->add_option("--window", flags.window, "Input window length n")->check(CLI::PositiveNumber);
    prepare->add_option("--horizon", flags.horizon, "Forecast horizon T")->check(CLI::PositiveNumber);

    auto* train_cmd = app.add_subcommand("train", "Train one model on a prepared dataset");
    common(train_cmd);
    train_cmd->add_option("--model", model_name, "mstim, lstm_attention, cnn_attention or lstm_cnn");
    training(train_cmd);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on one split");
    common(evaluate_cmd);
    evaluate_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint.bin written by train")->required();
    evaluate_cmd->add_option("--split", flags.split, "train, validation or test")
        ->check(CLI::IsMember({"train", "validation", "test"}));
    evaluate_cmd->add_flag("--raw", flags.raw, "Report metrics in vehicles/hour instead of standardized units");

    auto* compare_cmd = app.add_subcommand("compare", "Train all four models under one seed and tabulate test metrics");
    common(compare_cmd);
    training(compare_cmd);

    auto* predict_cmd = app.add_subcommand("predict", "Forecast vehicles/hour for every record in a time range");
    common(predict_cmd);
    predict_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint.bin written by train")->required();
    predict_cmd->add_option("--from", flags.from, "First timestamp, 'YYYY-MM-DD HH:MM'")->required();
    predict_cmd->add_option("--to", flags.to, "Last timestamp, 'YYYY-MM-DD HH:MM'")->required();
    predict_cmd->add_option("--output", flags.output, "Predictions CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig rc;
        rc.out_dir = default_out_dir();
        CLI::App* sub = app.get_subcommands().front();
        rc.command = sub->get_name();
        if (!config_path.empty()) apply_config_file(rc, config_path);
        const auto set = [&](const char* name) {
            const auto* opt = sub->get_option_no_throw(name);
            return opt != nullptr && opt->count() > 0;
        };
        if (set("--out")) rc.out_dir = out_dir;
        if (set("--data")) rc.data = flags.data;
        if (set("--csv")) rc.csv = flags.csv;
        if (set("--window")) rc.window = flags.window;
        if (set("--horizon")) rc.horizon = flags.horizon;
        if (set("--model")) rc.model = parse_model_kind(model_name);
        if (set("--epochs")) rc.train.epochs = flags.train.epochs;
        if (set("--lr")) rc.train.learning_rate = flags.train.learning_rate;
        if (set("--batch")) rc.train.batch_size = flags.train.batch_size;
        if (set("--seed")) rc.train.seed = flags.train.seed;
        if (set("--optimizer")) rc.train.optimizer = parse_optimizer(optimizer_name);
        if (set("--grad-clip")) rc.train.grad_clip = flags.train.grad_clip;
        if (set("--hidden")) rc.hidden_size = flags.hidden_size;
        if (set("--filters")) rc.conv_filters = flags.conv_filters;
        if (set("--kernels")) rc.kernel_sizes = flags.kernel_sizes;
        if (set("--dk")) rc.d_k = flags.d_k;
        if (set("--plot")) rc.plot = flags.plot;
        if (set("--checkpoint")) rc.checkpoint = flags.checkpoint;
        if (set("--split")) rc.split = flags.split;
        if (set("--raw")) rc.raw = flags.raw;
        if (set("--from")) rc.from = flags.from;
        if (set("--to")) rc.to = flags.to;
        if (set("--output")) rc.output = flags.output;
        if (rc.command == "train" && !set("--model") && config_path.empty()) {
            throw UsageError("train: --model is required");
        }
        rc.train.validate();
        for (auto k : rc.kernel_sizes)
            if (k % 2 == 0) throw ConfigError("kernel size " + std::to_string(k) + " is not odd");
        return dispatch(rc, out, err);
    } catch (const TrainingAborted& e) {
        err << "mstim: training aborted: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const UsageError& e) {
        err << "mstim: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "mstim: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "mstim: " << e.what() << "\n";
        return kExitUsage;
    } catch (const SchemaError& e) {
        err << "mstim: " << e.what() << "\n";
        return kExitUsage;
    } catch (const CompatibilityError& e) {
        err << "mstim: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "mstim: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace mstim::cli
