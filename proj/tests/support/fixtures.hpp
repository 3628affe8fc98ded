#pragma once

#include <sstream>

#include "mstim/data.hpp"
#include "mstim/models.hpp"
#include "support/synthetic_mitv.hpp"

namespace mstim::testing {

inline data::PreparedDataset synthetic_dataset(std::size_t hours, std::uint64_t seed, std::size_t window = 24,
                                               std::size_t horizon = 1) {
    std::ostringstream os;
    write_synthetic_mitv(os, {.hours = hours, .seed = seed, .sentinel_every = 211, .duplicate_every = 307});
    std::istringstream in(os.str());
    return data::prepare_from_parsed(data::parse_csv(in), {.window = window, .horizon = horizon}, "synthetic");
}

/// Splits whose train and test sets are the first `count` training windows.
inline data::SplitDatasets fixed_subset(const data::SplitDatasets& splits, std::size_t count) {
    std::vector<std::size_t> first(count);
    for (std::size_t i = 0; i < count; ++i) first[i] = i;
    data::SplitDatasets out = splits;
    out.train = splits.train.subset(first);
    out.validation = data::WindowedDataset{};
    out.test = out.train;
    return out;
}

/// Small layer sizes so unit tests train in well under a second.
inline ModelSpec compact_spec(ModelKind kind, const data::PreparedDataset& ds, std::uint64_t seed = 42) {
    ModelSpec s;
    s.kind = kind;
    s.window = ds.config.window;
    s.horizon = ds.config.horizon;
    s.input_features = ds.features();
    s.hidden_size = 8;
    s.conv_filters = 4;
    s.d_k = 8;
    s.seed = seed;
    return s;
}

} // namespace mstim::testing
