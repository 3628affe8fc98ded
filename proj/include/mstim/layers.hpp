#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mstim/container.hpp"
#include "mstim/init.hpp"
#include "mstim/ops.hpp"

namespace mstim {

/// Ordered name -> tensor map of trainable parameters.
class ParameterRegistry {
public:
    using Entry = std::pair<std::string, Tensor>;

    void add(std::string name, Tensor tensor) {
        for (const auto& [existing, _] : entries_)
            if (existing == name) throw UsageError("duplicate parameter name '" + name + "'");
        entries_.emplace_back(std::move(name), std::move(tensor));
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    const Tensor& at(const std::string& name) const {
        for (const auto& [n, t] : entries_)
            if (n == name) return t;
        throw UsageError("no parameter named '" + name + "'");
    }

    Tensor& at(const std::string& name) {
        return const_cast<Tensor&>(static_cast<const ParameterRegistry&>(*this).at(name));
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : entries_) t.zero_grad();
    }

    std::vector<container::NamedArray> to_arrays() const {
        std::vector<container::NamedArray> arrays;
        for (const auto& [name, t] : entries_) arrays.push_back({name, t.shape(), t.to_vector()});
        return arrays;
    }

    /// Overwrites values in place from a container; names and shapes must match exactly.
    void assign_from(const container::Contents& contents) {
        if (contents.arrays.size() != entries_.size()) {
            throw CompatibilityError("parameter file holds " + std::to_string(contents.arrays.size()) + " tensors, model has " +
                                     std::to_string(entries_.size()));
        }
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            auto& [name, t] = entries_[i];
            const auto& a = contents.arrays[i];
            if (a.name != name || a.shape != t.shape()) {
                throw CompatibilityError("parameter '" + a.name + "' " + shape_str(a.shape) + " does not match '" + name +
                                         "' " + shape_str(t.shape()));
            }
            auto dst = t.mutable_data();
            std::copy(a.values.begin(), a.values.end(), dst.begin());
        }
    }

private:
    std::vector<Entry> entries_;
};

inline constexpr std::string_view kParameterMagic = "MSTIMPRM";

inline void save_parameters(const std::string& path, const ParameterRegistry& params, const nlohmann::json& meta = {}) {
    container::write_file(path, kParameterMagic, meta.is_null() ? nlohmann::json::object() : meta, params.to_arrays());
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

struct LstmCell {
    std::size_t input_size = 0;
    std::size_t hidden_size = 0;
    // [hidden x (hidden + input)], applied to the concatenation [h_{t-1}, x_t].
    Tensor w_input, w_forget, w_output, w_candidate;
    Tensor b_input, b_forget, b_output, b_candidate;

    static LstmCell create(std::size_t input_size, std::size_t hidden_size, Rng& rng) {
        if (input_size == 0 || hidden_size == 0) throw ConfigError("lstm sizes must be positive");
        LstmCell cell;
        cell.input_size = input_size;
        cell.hidden_size = hidden_size;
        const Shape w_shape{hidden_size, hidden_size + input_size};
        const XavierUniform xavier{hidden_size + input_size, hidden_size};
        cell.w_input = init_params(w_shape, rng, xavier);
        cell.w_forget = init_params(w_shape, rng, xavier);
        cell.w_output = init_params(w_shape, rng, xavier);
        cell.w_candidate = init_params(w_shape, rng, xavier);
        cell.b_input = init_params({hidden_size}, rng, Constant{0.0});
        cell.b_forget = init_params({hidden_size}, rng, Constant{1.0});
        cell.b_output = init_params({hidden_size}, rng, Constant{0.0});
        cell.b_candidate = init_params({hidden_size}, rng, Constant{0.0});
        return cell;
    }

    void register_params(ParameterRegistry& registry, const std::string& prefix) const {
        registry.add(prefix + ".w_input", w_input);
        registry.add(prefix + ".w_forget", w_forget);
        registry.add(prefix + ".w_output", w_output);
        registry.add(prefix + ".w_candidate", w_candidate);
        registry.add(prefix + ".b_input", b_input);
        registry.add(prefix + ".b_forget", b_forget);
        registry.add(prefix + ".b_output", b_output);
        registry.add(prefix + ".b_candidate", b_candidate);
    }
};

struct LstmState {
    Tensor hidden;
    Tensor memory;
};

/// One recurrence step. x_t is [input] or [B, input]; states are [hidden] or [B, hidden].
inline LstmState lstm_step(const LstmCell& cell, const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev) {
    const bool shapes_ok = x_t.rank() >= 1 && x_t.rank() <= 2 && h_prev.shape() == c_prev.shape() &&
                           h_prev.rank() == x_t.rank() && x_t.shape().back() == cell.input_size &&
                           h_prev.shape().back() == cell.hidden_size && (x_t.rank() == 1 || x_t.dim(0) == h_prev.dim(0));
    if (!shapes_ok) {
        throw DimensionError("lstm_step: x=" + shape_str(x_t.shape()) + " h=" + shape_str(h_prev.shape()) +
                             " c=" + shape_str(c_prev.shape()) + " for cell " + std::to_string(cell.input_size) + "->" +
                             std::to_string(cell.hidden_size));
    }
    const Tensor z = concat({h_prev, x_t}, x_t.rank() - 1);
    const Tensor input_gate = sigmoid(linear(z, cell.w_input, cell.b_input));
    const Tensor forget_gate = sigmoid(linear(z, cell.w_forget, cell.b_forget));
    const Tensor output_gate = sigmoid(linear(z, cell.w_output, cell.b_output));
    const Tensor candidate = tanh(linear(z, cell.w_candidate, cell.b_candidate));
    Tensor memory = forget_gate * c_prev + input_gate * candidate;
    Tensor hidden = output_gate * tanh(memory);
    return {std::move(hidden), std::move(memory)};
}

/// Runs the cell over a sequence from zero state. [n, in] -> [n, hidden], or batched [B, n, in] -> [B, n, hidden].
inline Tensor lstm_unroll(const LstmCell& cell, const Tensor& sequence) {
    if (sequence.rank() != 2 && sequence.rank() != 3) {
        throw DimensionError("lstm_unroll: expected [n, in] or [B, n, in], got " + shape_str(sequence.shape()));
    }
    const std::size_t time_axis = sequence.rank() - 2;
    const std::size_t steps = sequence.dim(time_axis);
    if (sequence.shape().back() != cell.input_size) {
        throw DimensionError("lstm_unroll: input width " + std::to_string(sequence.shape().back()) + " does not match cell input " +
                             std::to_string(cell.input_size));
    }
    Shape state_shape = sequence.rank() == 3 ? Shape{sequence.dim(0), cell.hidden_size} : Shape{cell.hidden_size};
    LstmState state{Tensor::zeros(state_shape), Tensor::zeros(state_shape)};
    std::vector<Tensor> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        state = lstm_step(cell, select(sequence, time_axis, t), state.hidden, state.memory);
        outputs.push_back(state.hidden);
    }
    return stack(outputs, time_axis);
}

/// Same as above for a sequence given as individual steps ([in] or [B, in] each).
inline Tensor lstm_unroll(const LstmCell& cell, const std::vector<Tensor>& steps) {
    if (steps.empty()) throw UsageError("lstm_unroll: empty sequence");
    return lstm_unroll(cell, stack(steps, steps.front().rank() - 1));
}

// ---------------------------------------------------------------------------
// 1-D convolution
// ---------------------------------------------------------------------------

struct Conv1d {
    std::size_t kernel_size = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    Tensor weight;  // [out, in, k]
    Tensor bias;    // [out]

    static Conv1d create(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, Rng& rng) {
        if (kernel_size == 0 || kernel_size % 2 == 0) {
            throw ConfigError("conv1d kernel size must be a positive odd integer, got " + std::to_string(kernel_size));
        }
        if (in_channels == 0 || out_channels == 0) throw ConfigError("conv1d channel counts must be positive");
        Conv1d layer;
        layer.kernel_size = kernel_size;
        layer.in_channels = in_channels;
        layer.out_channels = out_channels;
        layer.weight = init_params({out_channels, in_channels, kernel_size}, rng,
                                   XavierUniform{in_channels * kernel_size, out_channels * kernel_size});
        layer.bias = init_params({out_channels}, rng, Constant{0.0});
        return layer;
    }

    void register_params(ParameterRegistry& registry, const std::string& prefix) const {
        registry.add(prefix + ".weight", weight);
        registry.add(prefix + ".bias", bias);
    }
};

inline Tensor conv1d_forward(const Conv1d& layer, const Tensor& x) {
    if (x.rank() < 2 || x.shape().back() != layer.in_channels) {
        throw DimensionError("conv1d_forward: input " + shape_str(x.shape()) + " does not have " +
                             std::to_string(layer.in_channels) + " channels");
    }
    return conv1d(x, layer.weight, layer.bias);
}

// ---------------------------------------------------------------------------
// Scaled dot-product self-attention
// ---------------------------------------------------------------------------

struct AttentionHead {
    std::size_t d_model = 0;
    std::size_t d_k = 0;
    Tensor w_query, w_key, w_value;  // [d_model x d_k]

    static AttentionHead create(std::size_t d_model, std::size_t d_k, Rng& rng) {
        if (d_model == 0 || d_k == 0) throw ConfigError("attention sizes must be positive");
        AttentionHead head;
        head.d_model = d_model;
        head.d_k = d_k;
        const XavierUniform xavier{d_model, d_k};
        head.w_query = init_params({d_model, d_k}, rng, xavier);
        head.w_key = init_params({d_model, d_k}, rng, xavier);
        head.w_value = init_params({d_model, d_k}, rng, xavier);
        return head;
    }

    void register_params(ParameterRegistry& registry, const std::string& prefix) const {
        registry.add(prefix + ".w_query", w_query);
        registry.add(prefix + ".w_key", w_key);
        registry.add(prefix + ".w_value", w_value);
    }
};

struct AttentionResult {
    Tensor output;   // [n, d_k] or [B, n, d_k]
    Tensor weights;  // [n, n] or [B, n, n]; rows sum to 1
};

/// softmax(Q K^T / sqrt(d_k)) V with Q, K, V projected from the same sequence.
inline AttentionResult attend(const AttentionHead& head, const Tensor& sequence) {
    if ((sequence.rank() != 2 && sequence.rank() != 3) || sequence.shape().back() != head.d_model) {
        throw DimensionError("attention: input " + shape_str(sequence.shape()) + " does not have d_model=" +
                             std::to_string(head.d_model));
    }
    const Tensor q = matmul(sequence, head.w_query);
    const Tensor k = matmul(sequence, head.w_key);
    const Tensor v = matmul(sequence, head.w_value);
    const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(head.d_k)));
    Tensor weights = softmax(scores, scores.rank() - 1);
    Tensor output = matmul(weights, v);
    return {std::move(output), std::move(weights)};
}

inline Tensor attention(const AttentionHead& head, const Tensor& sequence) { return attend(head, sequence).output; }

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

struct Dense {
    Tensor weight;  // [out x in]
    Tensor bias;    // [out]

    static Dense create(std::size_t in, std::size_t out, Rng& rng) {
        if (in == 0 || out == 0) throw ConfigError("dense sizes must be positive");
        return {init_params({out, in}, rng, XavierUniform{in, out}), init_params({out}, rng, Constant{0.0})};
    }

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }

    void register_params(ParameterRegistry& registry, const std::string& prefix) const {
        registry.add(prefix + ".weight", weight);
        registry.add(prefix + ".bias", bias);
    }
};

inline Tensor dense_forward(const Dense& layer, const Tensor& x) { return linear(x, layer.weight, layer.bias); }

} // namespace mstim
