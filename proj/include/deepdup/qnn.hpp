#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace deepdup::qnn {

/// Dense row-major float tensor. The first dimension is the batch.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);

    static Tensor zeros(std::vector<std::size_t> shape);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }

    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_.front(); }
    std::size_t row_size() const noexcept;

    std::span<const float> row(std::size_t i) const;
    std::span<float> row(std::size_t i);

    /// Copy of the given rows, in order.
    Tensor gather_rows(std::span<const std::size_t> rows) const;

    bool operator==(const Tensor&) const = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

/// Features plus integer class labels, one label per feature row.
struct Dataset {
    Tensor features;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    Dataset subset(std::span<const std::size_t> indices) const;
    Dataset take(std::size_t n) const;
    Dataset with_label(int label) const;
    Dataset without_label(int label) const;
};

enum class LayerKind { dense, conv2d, relu, maxpool, softmax };

std::string_view to_string(LayerKind kind) noexcept;
LayerKind layer_kind_from_string(std::string_view name);

/// Kind-specific dimensions. Dense uses in/out features; conv2d and maxpool
/// read a CHW input of in_channels x in_height x in_width; relu and softmax
/// are elementwise over in_features values.
struct Geometry {
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t in_height = 0;
    std::size_t in_width = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;

    bool operator==(const Geometry&) const = default;
};

/// One layer of the victim network.
///
/// Weight layouts are input-major: dense kernels are stored [in][out] and
/// conv kernels [kh][kw][in][out], so one transmitted package of consecutive
/// int8 values holds several output units' weights for the same input.
struct QuantLayer {
    LayerKind kind = LayerKind::relu;
    Geometry geometry;
    std::vector<std::int8_t> weights;
    std::vector<float> bias;
    float scale = 1.0f;

    static QuantLayer dense(std::size_t in, std::size_t out, std::vector<std::int8_t> weights,
                            std::vector<float> bias, float scale);
    static QuantLayer conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                             std::size_t width, std::size_t kernel, std::size_t stride,
                             std::vector<std::int8_t> weights, std::vector<float> bias, float scale);
    static QuantLayer relu(std::size_t size);
    static QuantLayer maxpool(std::size_t channels, std::size_t height, std::size_t width,
                              std::size_t window, std::size_t stride);
    static QuantLayer softmax(std::size_t size);

    bool has_weights() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
    std::size_t input_size() const noexcept;
    std::size_t output_size() const noexcept;
    std::size_t output_height() const noexcept;
    std::size_t output_width() const noexcept;
    std::size_t output_channels() const noexcept;
    /// Number of int8 weights this geometry requires.
    std::size_t expected_weight_count() const noexcept;

    bool operator==(const QuantLayer&) const = default;
};

/// A validated, immutable-by-convention quantized network.
///
/// "Weight layer" below means a dense or conv2d layer; layer indexes used by
/// the attack tooling count weight layers only, in declaration order. The
/// flat weight index is the position in the concatenation of all weight
/// layers' int8 arrays.
class QuantModel {
public:
    QuantModel() = default;
    QuantModel(std::vector<QuantLayer> layers, std::size_t num_classes, std::string metadata = {});

    const std::vector<QuantLayer>& layers() const noexcept { return layers_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t input_size() const noexcept;

    /// Free-form JSON text describing how the model was produced.
    const std::string& metadata() const noexcept { return metadata_; }

    std::size_t parameter_count() const noexcept { return parameter_count_; }
    std::size_t weight_layer_count() const noexcept { return weight_layers_.size(); }
    /// Index into layers() of the i-th weight layer.
    std::size_t weight_layer(std::size_t i) const { return weight_layers_.at(i); }
    /// n_l for every weight layer.
    std::vector<std::size_t> layer_weight_counts() const;
    /// Flat offset of the first weight of every weight layer.
    const std::vector<std::size_t>& weight_offsets() const noexcept { return offsets_; }

    std::int8_t flat_weight(std::size_t index) const;
    std::vector<std::int8_t> flat_weights() const;
    /// Copy of this model with every weight replaced by `weights`.
    QuantModel with_flat_weights(std::span<const std::int8_t> weights) const;

    bool operator==(const QuantModel&) const = default;

private:
    std::vector<QuantLayer> layers_;
    std::size_t num_classes_ = 0;
    std::string metadata_;
    std::vector<std::size_t> weight_layers_;
    std::vector<std::size_t> offsets_;
    std::size_t parameter_count_ = 0;
};

struct WeightFault {
    std::size_t flat_index;
    std::int8_t value;
};

/// Logits of shape [batch, num_classes]. Throws ShapeMismatch or NonFiniteInput.
Tensor forward(const QuantModel& model, const Tensor& batch);

/// Mean softmax cross-entropy. Throws LabelOutOfRange, ShapeMismatch, EmptyDataset.
double cross_entropy_loss(const Tensor& logits, std::span<const int> targets);

/// Row-wise argmax; ties resolve to the lowest class id.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const QuantModel& model, const Tensor& features);

/// Fraction of argmax-correct rows. Throws EmptyDataset.
double accuracy(const QuantModel& model, const Dataset& dataset);
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);

/// Independent copy of `model` with the listed weights overwritten.
QuantModel clone_and_overwrite(const QuantModel& model, std::span<const WeightFault> faults);

} // namespace deepdup::qnn
