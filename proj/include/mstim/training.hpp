#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstim/data.hpp"
#include "mstim/models.hpp"

namespace mstim {

// ---------------------------------------------------------------------------
// Loss and metrics
// ---------------------------------------------------------------------------

/// Mean over all elements of (pred - target)^2.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    }
    return mean(square(sub(pred, target)));
}

struct MetricTriple {
    double mae = 0.0;
    double mse = 0.0;
    double rmse = 0.0;
    std::size_t count = 0;

    nlohmann::json to_json() const { return {{"mae", mae}, {"mse", mse}, {"rmse", rmse}, {"count", count}}; }
    static MetricTriple from_json(const nlohmann::json& j) {
        return {j.at("mae").get<double>(), j.at("mse").get<double>(), j.at("rmse").get<double>(), j.at("count").get<std::size_t>()};
    }
    bool operator==(const MetricTriple&) const = default;
};

/// MAE, MSE and RMSE over flattened values.
inline MetricTriple compute_metrics(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(target.size()) +
                             " targets");
    }
    if (pred.empty()) throw UsageError("metrics: empty input");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = target[i] - pred[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(pred.size());
    MetricTriple m;
    m.mae = abs_sum / n;
    m.mse = sq_sum / n;
    m.rmse = std::sqrt(m.mse);
    m.count = pred.size();
    return m;
}

inline MetricTriple compute_metrics(const Tensor& pred, const Tensor& target) {
    return compute_metrics(pred.data(), target.data());
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 0.001;
    std::size_t batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 5.0;  // max global L2 norm; 0 disables
    std::uint64_t seed = 42;
    bool shuffle = true;

    void validate() const {
        std::vector<std::string> problems;
        if (epochs < 1) problems.push_back("epochs must be >= 1");
        if (!(learning_rate > 0.0)) problems.push_back("learning_rate must be positive");
        if (batch_size < 1) problems.push_back("batch_size must be >= 1");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("adam betas must lie in [0, 1)");
        if (!(epsilon > 0.0)) problems.push_back("epsilon must be positive");
        if (grad_clip < 0.0) problems.push_back("grad_clip must be non-negative");
        if (!problems.empty()) {
            std::string msg = "invalid training config:";
            for (const auto& p : problems) msg += " " + p + ";";
            msg.pop_back();
            throw ConfigError(msg);
        }
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},
                {"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"optimizer", optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                {"beta1", beta1},
                {"beta2", beta2},
                {"epsilon", epsilon},
                {"grad_clip", grad_clip},
                {"seed", seed},
                {"shuffle", shuffle}};
    }
};

inline OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;

    static AdamState for_params(const ParameterRegistry& params) {
        AdamState s;
        for (const auto& [_, t] : params.entries()) {
            s.first_moment.emplace_back(t.numel(), 0.0);
            s.second_moment.emplace_back(t.numel(), 0.0);
        }
        return s;
    }
};

/// Bias-corrected Adam update from the parameters' accumulated gradients; gradients are zeroed afterwards.
inline void adam_step(ParameterRegistry& params, AdamState& state, const TrainConfig& config) {
    if (state.first_moment.size() != params.size()) throw UsageError("adam state does not match parameter registry");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    std::size_t p = 0;
    for (const auto& entry : params.entries()) {
        Tensor tensor = entry.second;
        auto& m = state.first_moment[p];
        auto& v = state.second_moment[p];
        if (m.size() != tensor.numel()) throw UsageError("adam state shape mismatch for '" + entry.first + "'");
        // A parameter with no accumulated gradient is updated as if g = 0.
        const std::vector<double> none;
        const std::vector<double>& grads = tensor.has_grad() ? tensor.node().grad : none;
        auto values = tensor.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grads.empty() ? 0.0 : grads[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            values[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
        tensor.zero_grad();
        ++p;
    }
}

inline void sgd_step(ParameterRegistry& params, const TrainConfig& config) {
    for (const auto& entry : params.entries()) {
        Tensor tensor = entry.second;
        if (!tensor.has_grad()) continue;
        auto values = tensor.mutable_data();
        const auto grads = tensor.mutable_grad();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= config.learning_rate * grads[i];
        tensor.zero_grad();
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
inline double clip_grad_norm(ParameterRegistry& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, t] : params.entries())
        if (t.has_grad())
            for (double g : t.node().grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (const auto& entry : params.entries()) {
            Tensor t = entry.second;
            if (!t.has_grad()) continue;
            for (auto& g : t.mutable_grad()) g *= factor;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Standardized predictions for every window, flattened [N * T], computed in batches without a graph.
inline std::vector<double> predict_all(const ForecastModel& model, const data::WindowedDataset& ds, std::size_t batch = 256) {
    NoGradGuard no_grad;
    std::vector<double> out;
    out.reserve(ds.size() * ds.horizon());
    const auto all = ds.all_indices();
    for (std::size_t begin = 0; begin < all.size(); begin += batch) {
        const std::span<const std::size_t> idx(all.data() + begin, std::min(batch, all.size() - begin));
        const Tensor pred = model.forward_batch(ds.windows(idx));
        out.insert(out.end(), pred.data().begin(), pred.data().end());
    }
    return out;
}

/// Metrics over a split, on the standardized scale or (raw) in vehicles/hour.
inline MetricTriple evaluate(const ForecastModel& model, const data::WindowedDataset& ds,
                             const data::NormalizationStats* raw_scale = nullptr) {
    if (ds.empty()) throw UsageError("evaluate: split '" + data::to_string(ds.split()) + "' has no windows");
    auto pred = predict_all(model, ds);
    auto target = ds.targets().to_vector();
    if (raw_scale) {
        const std::size_t c = raw_scale->target_column;
        for (auto& v : pred) v = raw_scale->denormalize(v, c);
        for (auto& v : target) v = raw_scale->denormalize(v, c);
    }
    return compute_metrics(pred, target);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<MetricTriple> validation;
};

struct TrainReport {
    ModelSpec spec;
    TrainConfig config;
    std::vector<EpochRecord> epochs;
    MetricTriple test;
    double elapsed_seconds = 0.0;
    std::string dataset_fingerprint;
    std::size_t parameter_count = 0;

    /// Deterministic content only; wall-clock time is reported separately by timing_json().
    nlohmann::json to_json() const {
        nlohmann::json ep = nlohmann::json::array();
        for (const auto& e : epochs) {
            ep.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"validation", e.validation ? e.validation->to_json() : nlohmann::json(nullptr)}});
        }
        return {{"model", to_string(spec.kind)},
                {"display_name", display_name(spec.kind)},
                {"seed", config.seed},
                {"spec", spec.to_json()},
                {"config", config.to_json()},
                {"parameter_count", parameter_count},
                {"dataset_fingerprint", dataset_fingerprint},
                {"epochs", ep},
                {"test", test.to_json()},
                {"metric_scale", "standardized"}};
    }

    nlohmann::json timing_json() const {
        return {{"model", to_string(spec.kind)}, {"seed", config.seed}, {"elapsed_seconds", elapsed_seconds}};
    }
};

/// Called after every epoch; used for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainReport train(ForecastModel& model, const data::SplitDatasets& splits, const TrainConfig& config,
                         const EpochCallback& on_epoch = nullptr) {
    config.validate();
    const auto& train_set = splits.train;
    if (train_set.empty()) throw ConfigError("training split has no windows");
    if (splits.test.empty()) throw ConfigError("test split has no windows");
    if (train_set.window() != model.spec().window || train_set.features() != model.spec().input_features ||
        train_set.horizon() != model.spec().horizon) {
        throw ConfigError("model spec (window " + std::to_string(model.spec().window) + ", features " +
                          std::to_string(model.spec().input_features) + ", horizon " + std::to_string(model.spec().horizon) +
                          ") does not match dataset (window " + std::to_string(train_set.window()) + ", features " +
                          std::to_string(train_set.features()) + ", horizon " + std::to_string(train_set.horizon()) + ")");
    }

    const auto started = std::chrono::steady_clock::now();
    TrainReport report;
    report.spec = model.spec();
    report.config = config;
    report.parameter_count = model.parameter_count();

    auto& params = model.parameters();
    params.zero_grad();
    AdamState adam = AdamState::for_params(params);
    Rng rng(config.seed);
    std::vector<std::size_t> order = train_set.all_indices();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.shuffle) {
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        }
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_no) {
            const std::span<const std::size_t> idx(order.data() + begin, std::min(config.batch_size, order.size() - begin));
            Tensor loss;
            try {
                loss = mse_loss(model.forward_batch(train_set.windows(idx)), train_set.targets(idx));
            } catch (const NumericError& e) {
                throw TrainingAborted("non-finite values at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_no) + ": " + e.what());
            }
            const double value = loss.item();
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "non-finite training loss " << value << " at epoch " << epoch << ", batch " << batch_no;
                throw TrainingAborted(msg.str());
            }
            loss.backward();
            clip_grad_norm(params, config.grad_clip);
            if (config.optimizer == OptimizerKind::adam) {
                adam_step(params, adam, config);
            } else {
                sgd_step(params, config);
            }
            loss_sum += value * static_cast<double>(idx.size());
        }
        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(order.size());
        if (!splits.validation.empty()) record.validation = evaluate(model, splits.validation);
        report.epochs.push_back(record);
        if (on_epoch) on_epoch(record);
    }
    report.test = evaluate(model, splits.test);
    report.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string model;  // display name
    ModelKind kind = ModelKind::mstim;
    MetricTriple metrics;
};

struct Comparison {
    std::vector<ComparisonRow> rows;  // sorted by MAE
    std::vector<TrainReport> reports;  // in training order
};

inline Comparison compare(const std::vector<ModelSpec>& specs, const data::SplitDatasets& splits, const TrainConfig& config,
                          const std::function<void(const ModelSpec&)>& on_model_start = nullptr,
                          const EpochCallback& on_epoch = nullptr) {
    if (specs.empty()) throw ConfigError("compare needs at least one model spec");
    Comparison out;
    for (const auto& spec : specs) {
        if (on_model_start) on_model_start(spec);
        ForecastModel model = build(spec);
        out.reports.push_back(train(model, splits, config, on_epoch));
        out.rows.push_back({display_name(spec.kind), spec.kind, out.reports.back().test});
    }
    std::stable_sort(out.rows.begin(), out.rows.end(),
                     [](const ComparisonRow& a, const ComparisonRow& b) { return a.metrics.mae < b.metrics.mae; });
    return out;
}

} // namespace mstim
