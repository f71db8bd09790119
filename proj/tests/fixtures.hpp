#pragma once

#include "deepdup/dataset.hpp"
#include "deepdup/qnn.hpp"
#include "deepdup/rng.hpp"
#include "deepdup/train.hpp"

#include <cstdint>
#include <vector>

namespace fixtures {

using namespace deepdup;

/// Bars train/test split and an mlp_small trained on it, built once per binary.
struct Toy {
    qnn::Dataset train;
    qnn::Dataset test;
    qnn::QuantModel model;
};

inline const Toy& toy()
{
    static const Toy t = [] {
        Toy t;
        t.train = data::make_bars(2000, 0.4, 11);
        t.test = data::make_bars(1000, 0.4, 12);
        t.model = qnn::train_model(qnn::mlp_small(), t.train, {});
        return t;
    }();
    return t;
}

inline qnn::QuantLayer dense(std::size_t in, std::size_t out, std::vector<std::int8_t> w, std::vector<float> bias,
                             float scale = 1.0f)
{
    return qnn::QuantLayer::dense(in, out, std::move(w), std::move(bias), scale);
}

/// Single dense layer with weights 0, 1, 2, ... (wrapping at 127).
inline qnn::QuantModel counting_model(std::size_t in, std::size_t out)
{
    std::vector<std::int8_t> w(in * out);
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = static_cast<std::int8_t>(i % 128);
    return qnn::QuantModel({dense(in, out, std::move(w), std::vector<float>(out, 0.0f))}, out);
}

/// Model with every weight drawn uniformly from [-127, 127].
inline qnn::QuantModel randomized(const qnn::QuantModel& model, std::uint64_t seed)
{
    auto rng = make_rng(seed);
    std::vector<std::int8_t> w(model.parameter_count());
    for (auto& v : w)
        v = static_cast<std::int8_t>(static_cast<int>(uniform_index(rng, 255)) - 127);
    return model.with_flat_weights(w);
}

inline qnn::Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed)
{
    auto rng = make_rng(seed);
    std::vector<float> v(rows * cols);
    for (auto& x : v)
        x = static_cast<float>(standard_normal(rng));
    return qnn::Tensor({rows, cols}, std::move(v));
}

} // namespace fixtures
