#pragma once

#include "deepdup/qnn.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace deepdup::qnn {

/// One entry of an architecture description. `units` is the output width of
/// a dense layer or the output channel count of a conv layer; `kernel` and
/// `stride` apply to conv2d and maxpool.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t units = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;

    bool operator==(const LayerSpec&) const = default;
};

struct Architecture {
    std::string name;
    std::size_t in_channels = 1;
    std::size_t in_height = 1;
    std::size_t in_width = 1;
    std::vector<LayerSpec> layers;
    std::size_t num_classes = 0;

    std::size_t input_size() const noexcept { return in_channels * in_height * in_width; }
    bool operator==(const Architecture&) const = default;
};

/// 64 -> 24 -> 16 -> 4 ReLU MLP on 8x8 inputs (1,984 weights).
Architecture mlp_small();
/// conv3x3(8) -> conv3x3(16) -> maxpool2 -> dense(4) on 1x8x8 inputs.
Architecture cnn_small();
Architecture architecture_by_name(const std::string& name);

/// Recovers the architecture a model was built from.
Architecture architecture_of(const QuantModel& model);

/// Scales every hidden width (all weight layers except the classifier) by
/// `factor`. A hidden-to-hidden layer therefore grows by factor^2.
Architecture widen_architecture(const Architecture& arch, std::size_t factor);

/// Layer geometry with zero weights; used to count parameters and to seed training.
std::vector<QuantLayer> layout(const Architecture& arch);
std::size_t parameter_count(const Architecture& arch);

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    std::uint64_t seed = 1;

    bool operator==(const TrainConfig&) const = default;
};

struct QuantizedWeights {
    std::vector<std::int8_t> values;
    float scale = 1.0f;
};

/// Symmetric per-tensor int8 quantization: scale = max|w| / 127, zero point 0.
QuantizedWeights quantize_symmetric(std::span<const float> weights);

/// Trains a float network with minibatch SGD on softmax cross-entropy, then
/// quantizes each weight layer. Deterministic for a fixed config.
QuantModel train_model(const Architecture& arch, const Dataset& train, const TrainConfig& cfg);

} // namespace deepdup::qnn
