#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mstim/layers.hpp"

namespace mstim {

enum class ModelKind { mstim, lstm_attention, cnn_attention, lstm_cnn };

inline constexpr std::array<ModelKind, 4> kAllModelKinds{ModelKind::lstm_attention, ModelKind::cnn_attention,
                                                         ModelKind::lstm_cnn, ModelKind::mstim};

inline std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::mstim: return "mstim";
        case ModelKind::lstm_attention: return "lstm_attention";
        case ModelKind::cnn_attention: return "cnn_attention";
        case ModelKind::lstm_cnn: return "lstm_cnn";
    }
    return "unknown";
}

/// Human-readable name, as used in comparison tables.
inline std::string display_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::mstim: return "MSTIM";
        case ModelKind::lstm_attention: return "LSTM-Attention";
        case ModelKind::cnn_attention: return "CNN-Attention";
        case ModelKind::lstm_cnn: return "LSTM-CNN";
    }
    return "unknown";
}

inline ModelKind parse_model_kind(std::string_view name) {
    for (auto kind : kAllModelKinds)
        if (to_string(kind) == name) return kind;
    throw ConfigError("unknown model kind '" + std::string(name) +
                      "' (expected mstim, lstm_attention, cnn_attention or lstm_cnn)");
}

inline bool uses_conv(ModelKind kind) { return kind != ModelKind::lstm_attention; }
inline bool uses_lstm(ModelKind kind) { return kind != ModelKind::cnn_attention; }
inline bool uses_attention(ModelKind kind) { return kind != ModelKind::lstm_cnn; }

struct ModelSpec {
    ModelKind kind = ModelKind::mstim;
    std::size_t window = 24;
    std::size_t horizon = 1;
    std::size_t input_features = 1;
    std::size_t hidden_size = 64;
    std::size_t conv_filters = 16;
    std::vector<std::size_t> kernel_sizes{3, 5, 7};
    std::size_t d_k = 64;
    std::uint64_t seed = 42;

    /// Throws ConfigError listing every violated constraint.
    void validate() const {
        std::vector<std::string> problems;
        const auto positive = [&](std::size_t v, const char* name) {
            if (v == 0) problems.push_back(std::string(name) + " must be positive");
        };
        positive(window, "window");
        positive(horizon, "horizon");
        positive(input_features, "input_features");
        positive(hidden_size, "hidden_size");
        positive(conv_filters, "conv_filters");
        positive(d_k, "d_k");
        if (kernel_sizes.empty()) problems.push_back("kernel_sizes must not be empty");
        for (auto k : kernel_sizes) {
            if (k % 2 == 0) problems.push_back("kernel size " + std::to_string(k) + " is not odd");
        }
        if (!kernel_sizes.empty()) {
            const auto widest = *std::max_element(kernel_sizes.begin(), kernel_sizes.end());
            if (window < widest) {
                problems.push_back("window " + std::to_string(window) + " is shorter than kernel size " + std::to_string(widest));
            }
        }
        if (!problems.empty()) {
            std::string msg = "invalid model spec:";
            for (const auto& p : problems) msg += " " + p + ";";
            msg.pop_back();
            throw ConfigError(msg);
        }
    }

    nlohmann::json to_json() const {
        return {{"kind", to_string(kind)},       {"window", window},         {"horizon", horizon},
                {"input_features", input_features}, {"hidden_size", hidden_size}, {"conv_filters", conv_filters},
                {"kernel_sizes", kernel_sizes},     {"d_k", d_k},               {"seed", seed}};
    }

    static ModelSpec from_json(const nlohmann::json& j) {
        ModelSpec s;
        try {
            s.kind = parse_model_kind(j.at("kind").get<std::string>());
            s.window = j.at("window").get<std::size_t>();
            s.horizon = j.at("horizon").get<std::size_t>();
            s.input_features = j.at("input_features").get<std::size_t>();
            s.hidden_size = j.at("hidden_size").get<std::size_t>();
            s.conv_filters = j.at("conv_filters").get<std::size_t>();
            s.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
            s.d_k = j.at("d_k").get<std::size_t>();
            s.seed = j.at("seed").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("malformed model spec: ") + e.what());
        }
        return s;
    }

    bool operator==(const ModelSpec&) const = default;
};

/// One of the four forecasting architectures, built from a ModelSpec.
///
///   mstim           conv branches (ReLU) -> concat -> LSTM -> attention -> mean over time -> dense
///   lstm_attention  LSTM -> attention -> mean -> dense
///   cnn_attention   conv branches -> concat -> attention -> mean -> dense
///   lstm_cnn        conv branches -> concat -> LSTM -> last hidden state -> dense
class ForecastModel {
public:
    explicit ForecastModel(ModelSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        Rng rng(spec_.seed);
        std::size_t width = spec_.input_features;
        if (uses_conv(spec_.kind)) {
            for (auto k : spec_.kernel_sizes) {
                branches_.push_back(Conv1d::create(spec_.input_features, spec_.conv_filters, k, rng));
                branches_.back().register_params(params_, "conv_k" + std::to_string(k));
            }
            width = spec_.conv_filters * spec_.kernel_sizes.size();
        }
        if (uses_lstm(spec_.kind)) {
            lstm_ = LstmCell::create(width, spec_.hidden_size, rng);
            lstm_->register_params(params_, "lstm");
            width = spec_.hidden_size;
        }
        if (uses_attention(spec_.kind)) {
            attention_ = AttentionHead::create(width, spec_.d_k, rng);
            attention_->register_params(params_, "attention");
            width = spec_.d_k;
        }
        head_ = Dense::create(width, spec_.horizon, rng);
        head_.register_params(params_, "head");
    }

    const ModelSpec& spec() const { return spec_; }
    ParameterRegistry& parameters() { return params_; }
    const ParameterRegistry& parameters() const { return params_; }
    std::size_t parameter_count() const { return params_.total_count(); }
    const Dense& head() const { return head_; }

    /// [B, n, d] -> [B, T]. Rows are computed independently.
    Tensor forward_batch(const Tensor& windows) const {
        if (windows.rank() != 3 || windows.dim(1) != spec_.window || windows.dim(2) != spec_.input_features) {
            throw DimensionError("forward_batch: expected [B x " + std::to_string(spec_.window) + " x " +
                                 std::to_string(spec_.input_features) + "], got " + shape_str(windows.shape()));
        }
        Tensor seq = windows;
        if (!branches_.empty()) {
            std::vector<Tensor> parts;
            parts.reserve(branches_.size());
            for (const auto& branch : branches_) parts.push_back(relu(conv1d_forward(branch, windows)));
            seq = parts.size() == 1 ? parts.front() : concat(parts, 2);
        }
        if (lstm_) seq = lstm_unroll(*lstm_, seq);
        Tensor pooled;
        if (attention_) {
            pooled = mean(attention(*attention_, seq), 1);
        } else {
            pooled = select(seq, 1, spec_.window - 1);
        }
        return dense_forward(head_, pooled);
    }

    /// [n, d] -> [T].
    Tensor forward(const Tensor& window) const {
        if (window.rank() != 2) throw DimensionError("forward: expected [n x d], got " + shape_str(window.shape()));
        Shape batched{1, window.dim(0), window.dim(1)};
        return reshape(forward_batch(reshape(window, batched)), {spec_.horizon});
    }

private:
    ModelSpec spec_;
    ParameterRegistry params_;
    std::vector<Conv1d> branches_;
    std::optional<LstmCell> lstm_;
    std::optional<AttentionHead> attention_;
    Dense head_;
};

inline ForecastModel build(const ModelSpec& spec) { return ForecastModel(spec); }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "MSTIMCKP";

struct Checkpoint {
    ForecastModel model;
    nlohmann::json meta;
};

/// Writes parameters plus a JSON block holding the spec; `extra` keys are merged into the meta block.
inline void save_checkpoint(const std::string& path, const ForecastModel& model, const nlohmann::json& extra = {}) {
    nlohmann::json meta = extra.is_null() ? nlohmann::json::object() : extra;
    meta["spec"] = model.spec().to_json();
    meta["parameter_count"] = model.parameter_count();
    container::write_file(path, kCheckpointMagic, meta, model.parameters().to_arrays());
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const auto contents = container::read_file(path, kCheckpointMagic);
    if (!contents.meta.contains("spec")) throw SchemaError("checkpoint '" + path + "' has no spec block");
    ForecastModel model(ModelSpec::from_json(contents.meta.at("spec")));
    model.parameters().assign_from(contents);
    return {std::move(model), contents.meta};
}

} // namespace mstim
