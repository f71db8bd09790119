#include "deepdup/qnn.hpp"

#include "deepdup/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace deepdup::qnn {

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_.empty())
        throw ShapeMismatch("tensor shape must have at least one dimension");
    std::size_t n = 1;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (shape_[i] == 0 && i > 0)
            throw ShapeMismatch("non-batch dimensions must be positive");
        n *= shape_[i];
    }
    if (n != data_.size())
        throw ShapeMismatch(fmt::format("shape product {} != data length {}", n, data_.size()));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape)
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

std::size_t Tensor::row_size() const noexcept
{
    std::size_t n = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i)
        n *= shape_[i];
    return n;
}

std::span<const float> Tensor::row(std::size_t i) const
{
    const auto w = row_size();
    return std::span<const float>(data_).subspan(i * w, w);
}

std::span<float> Tensor::row(std::size_t i)
{
    const auto w = row_size();
    return std::span<float>(data_).subspan(i * w, w);
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const
{
    const auto w = row_size();
    std::vector<float> out;
    out.reserve(rows.size() * w);
    for (auto r : rows) {
        if (r >= this->rows())
            throw IndexOutOfRange(fmt::format("row {} of {}", r, this->rows()));
        auto src = row(r);
        out.insert(out.end(), src.begin(), src.end());
    }
    auto shape = shape_;
    shape[0] = rows.size();
    return Tensor(std::move(shape), std::move(out));
}

// ---------------------------------------------------------------- Dataset

Dataset Dataset::subset(std::span<const std::size_t> indices) const
{
    Dataset out;
    out.features = features.gather_rows(indices);
    out.labels.reserve(indices.size());
    for (auto i : indices)
        out.labels.push_back(labels.at(i));
    return out;
}

Dataset Dataset::take(std::size_t n) const
{
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx);
}

Dataset Dataset::with_label(int label) const
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
        if (labels[i] == label)
            idx.push_back(i);
    return subset(idx);
}

Dataset Dataset::without_label(int label) const
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
        if (labels[i] != label)
            idx.push_back(i);
    return subset(idx);
}

// ---------------------------------------------------------------- layers

std::string_view to_string(LayerKind kind) noexcept
{
    switch (kind) {
    case LayerKind::dense:
        return "dense";
    case LayerKind::conv2d:
        return "conv2d";
    case LayerKind::relu:
        return "relu";
    case LayerKind::maxpool:
        return "maxpool";
    case LayerKind::softmax:
        return "softmax";
    }
    return "?";
}

LayerKind layer_kind_from_string(std::string_view name)
{
    for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool,
                   LayerKind::softmax})
        if (to_string(k) == name)
            return k;
    throw UnsupportedLayerKind(std::string(name));
}

QuantLayer QuantLayer::dense(std::size_t in, std::size_t out, std::vector<std::int8_t> weights,
                             std::vector<float> bias, float scale)
{
    QuantLayer l;
    l.kind = LayerKind::dense;
    l.geometry.in_features = in;
    l.geometry.out_features = out;
    l.weights = std::move(weights);
    l.bias = std::move(bias);
    l.scale = scale;
    return l;
}

QuantLayer QuantLayer::conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t height,
                              std::size_t width, std::size_t kernel, std::size_t stride,
                              std::vector<std::int8_t> weights, std::vector<float> bias, float scale)
{
    QuantLayer l;
    l.kind = LayerKind::conv2d;
    l.geometry.in_channels = in_channels;
    l.geometry.out_channels = out_channels;
    l.geometry.in_height = height;
    l.geometry.in_width = width;
    l.geometry.kernel = kernel;
    l.geometry.stride = stride;
    l.weights = std::move(weights);
    l.bias = std::move(bias);
    l.scale = scale;
    return l;
}

QuantLayer QuantLayer::relu(std::size_t size)
{
    QuantLayer l;
    l.kind = LayerKind::relu;
    l.geometry.in_features = size;
    return l;
}

QuantLayer QuantLayer::maxpool(std::size_t channels, std::size_t height, std::size_t width,
                               std::size_t window, std::size_t stride)
{
    QuantLayer l;
    l.kind = LayerKind::maxpool;
    l.geometry.in_channels = channels;
    l.geometry.in_height = height;
    l.geometry.in_width = width;
    l.geometry.kernel = window;
    l.geometry.stride = stride;
    return l;
}

QuantLayer QuantLayer::softmax(std::size_t size)
{
    QuantLayer l;
    l.kind = LayerKind::softmax;
    l.geometry.in_features = size;
    return l;
}

std::size_t QuantLayer::input_size() const noexcept
{
    const auto& g = geometry;
    switch (kind) {
    case LayerKind::dense:
    case LayerKind::relu:
    case LayerKind::softmax:
        return g.in_features;
    case LayerKind::conv2d:
    case LayerKind::maxpool:
        return g.in_channels * g.in_height * g.in_width;
    }
    return 0;
}

std::size_t QuantLayer::output_height() const noexcept
{
    const auto& g = geometry;
    if (g.kernel == 0 || g.stride == 0 || g.in_height < g.kernel)
        return 0;
    return (g.in_height - g.kernel) / g.stride + 1;
}

std::size_t QuantLayer::output_width() const noexcept
{
    const auto& g = geometry;
    if (g.kernel == 0 || g.stride == 0 || g.in_width < g.kernel)
        return 0;
    return (g.in_width - g.kernel) / g.stride + 1;
}

std::size_t QuantLayer::output_channels() const noexcept
{
    return kind == LayerKind::conv2d ? geometry.out_channels : geometry.in_channels;
}

std::size_t QuantLayer::output_size() const noexcept
{
    switch (kind) {
    case LayerKind::dense:
        return geometry.out_features;
    case LayerKind::relu:
    case LayerKind::softmax:
        return geometry.in_features;
    case LayerKind::conv2d:
    case LayerKind::maxpool:
        return output_channels() * output_height() * output_width();
    }
    return 0;
}

std::size_t QuantLayer::expected_weight_count() const noexcept
{
    const auto& g = geometry;
    switch (kind) {
    case LayerKind::dense:
        return g.in_features * g.out_features;
    case LayerKind::conv2d:
        return g.kernel * g.kernel * g.in_channels * g.out_channels;
    default:
        return 0;
    }
}

// ---------------------------------------------------------------- model

QuantModel::QuantModel(std::vector<QuantLayer> layers, std::size_t num_classes, std::string metadata)
    : layers_(std::move(layers)), num_classes_(num_classes), metadata_(std::move(metadata))
{
    if (layers_.empty())
        throw InvalidModel("model has no layers");
    if (num_classes_ == 0)
        throw InvalidModel("num_classes must be positive");

    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.input_size() == 0 || l.output_size() == 0)
            throw InvalidModel(fmt::format("layer {} ({}) has degenerate geometry", i, to_string(l.kind)));
        if (l.kind == LayerKind::conv2d || l.kind == LayerKind::maxpool) {
            if (l.geometry.stride == 0)
                throw InvalidModel(fmt::format("layer {} stride must be positive", i));
        }
        if (l.weights.size() != l.expected_weight_count())
            throw InvalidModel(fmt::format("layer {} has {} weights, geometry requires {}", i,
                                           l.weights.size(), l.expected_weight_count()));
        if (l.has_weights()) {
            if (!(l.scale > 0.0f) || !std::isfinite(l.scale))
                throw InvalidModel(fmt::format("layer {} scale must be positive and finite", i));
            const auto out = l.kind == LayerKind::dense ? l.geometry.out_features : l.geometry.out_channels;
            if (l.bias.size() != out)
                throw InvalidModel(fmt::format("layer {} bias length {} != {}", i, l.bias.size(), out));
            for (float b : l.bias)
                if (!std::isfinite(b))
                    throw InvalidModel(fmt::format("layer {} has non-finite bias", i));
            weight_layers_.push_back(i);
            offsets_.push_back(parameter_count_);
            parameter_count_ += l.weights.size();
        } else if (!l.bias.empty()) {
            throw InvalidModel(fmt::format("layer {} ({}) cannot carry a bias", i, to_string(l.kind)));
        }
        if (i + 1 < layers_.size() && l.output_size() != layers_[i + 1].input_size())
            throw InvalidModel(fmt::format("layer {} output size {} != layer {} input size {}", i,
                                           l.output_size(), i + 1, layers_[i + 1].input_size()));
    }
    if (layers_.back().output_size() != num_classes_)
        throw InvalidModel(fmt::format("final output size {} != num_classes {}",
                                       layers_.back().output_size(), num_classes_));
}

std::size_t QuantModel::input_size() const noexcept
{
    return layers_.empty() ? 0 : layers_.front().input_size();
}

std::vector<std::size_t> QuantModel::layer_weight_counts() const
{
    std::vector<std::size_t> counts;
    counts.reserve(weight_layers_.size());
    for (auto i : weight_layers_)
        counts.push_back(layers_[i].weights.size());
    return counts;
}

std::int8_t QuantModel::flat_weight(std::size_t index) const
{
    if (index >= parameter_count_)
        throw IndexOutOfRange(fmt::format("flat weight {} of {}", index, parameter_count_));
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
    const auto wl = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return layers_[weight_layers_[wl]].weights[index - offsets_[wl]];
}

std::vector<std::int8_t> QuantModel::flat_weights() const
{
    std::vector<std::int8_t> out;
    out.reserve(parameter_count_);
    for (auto i : weight_layers_)
        out.insert(out.end(), layers_[i].weights.begin(), layers_[i].weights.end());
    return out;
}

QuantModel QuantModel::with_flat_weights(std::span<const std::int8_t> weights) const
{
    if (weights.size() != parameter_count_)
        throw LengthMismatch(fmt::format("{} weights supplied, model has {}", weights.size(), parameter_count_));
    QuantModel copy = *this;
    for (std::size_t wl = 0; wl < weight_layers_.size(); ++wl) {
        auto& dst = copy.layers_[weight_layers_[wl]].weights;
        std::copy_n(weights.begin() + static_cast<std::ptrdiff_t>(offsets_[wl]), dst.size(), dst.begin());
    }
    return copy;
}

// ---------------------------------------------------------------- inference

namespace {

void dense_forward(const QuantLayer& l, std::span<const float> w, std::span<const float> x,
                   std::span<float> y)
{
    const auto in = l.geometry.in_features;
    const auto out = l.geometry.out_features;
    std::copy(l.bias.begin(), l.bias.end(), y.begin());
    for (std::size_t i = 0; i < in; ++i) {
        const float xi = x[i];
        if (xi == 0.0f)
            continue;
        const float* wr = w.data() + i * out;
        for (std::size_t o = 0; o < out; ++o)
            y[o] += xi * wr[o];
    }
}

void conv_forward(const QuantLayer& l, std::span<const float> w, std::span<const float> x,
                  std::span<float> y)
{
    const auto& g = l.geometry;
    const auto oh = l.output_height();
    const auto ow = l.output_width();
    const auto co_n = g.out_channels;
    std::vector<float> acc(co_n);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            std::copy(l.bias.begin(), l.bias.end(), acc.begin());
            for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                    const auto iy = oy * g.stride + ky;
                    const auto ix = ox * g.stride + kx;
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                        const float xv = x[(ci * g.in_height + iy) * g.in_width + ix];
                        const float* wr = w.data() + ((ky * g.kernel + kx) * g.in_channels + ci) * co_n;
                        for (std::size_t co = 0; co < co_n; ++co)
                            acc[co] += xv * wr[co];
                    }
                }
            }
            for (std::size_t co = 0; co < co_n; ++co)
                y[(co * oh + oy) * ow + ox] = acc[co];
        }
    }
}

void maxpool_forward(const QuantLayer& l, std::span<const float> x, std::span<float> y)
{
    const auto& g = l.geometry;
    const auto oh = l.output_height();
    const auto ow = l.output_width();
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                float m = -std::numeric_limits<float>::infinity();
                for (std::size_t ky = 0; ky < g.kernel; ++ky)
                    for (std::size_t kx = 0; kx < g.kernel; ++kx)
                        m = std::max(m, x[(c * g.in_height + oy * g.stride + ky) * g.in_width +
                                          ox * g.stride + kx]);
                y[(c * oh + oy) * ow + ox] = m;
            }
}

void softmax_inplace(std::span<float> v)
{
    const float m = *std::max_element(v.begin(), v.end());
    float sum = 0.0f;
    for (auto& e : v) {
        e = std::exp(e - m);
        sum += e;
    }
    for (auto& e : v)
        e /= sum;
}

} // namespace

Tensor forward(const QuantModel& model, const Tensor& batch)
{
    if (batch.shape().size() < 2)
        throw ShapeMismatch("batch must have a leading batch dimension");
    if (batch.row_size() != model.input_size())
        throw ShapeMismatch(fmt::format("sample size {} != model input size {}", batch.row_size(),
                                        model.input_size()));
    for (float v : batch.data())
        if (!std::isfinite(v))
            throw NonFiniteInput("batch contains NaN or Inf");

    const auto& layers = model.layers();
    std::vector<std::vector<float>> dequant(layers.size());
    std::size_t widest = model.input_size();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        widest = std::max(widest, l.output_size());
        if (!l.has_weights())
            continue;
        auto& w = dequant[i];
        w.resize(l.weights.size());
        for (std::size_t k = 0; k < w.size(); ++k)
            w[k] = static_cast<float>(l.weights[k]) * l.scale;
    }

    const auto n = batch.rows();
    Tensor logits = Tensor::zeros({n, model.num_classes()});
    std::vector<float> a(widest), b(widest);
    for (std::size_t s = 0; s < n; ++s) {
        auto in = batch.row(s);
        std::copy(in.begin(), in.end(), a.begin());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            std::span<const float> x(a.data(), l.input_size());
            std::span<float> y(b.data(), l.output_size());
            switch (l.kind) {
            case LayerKind::dense:
                dense_forward(l, dequant[i], x, y);
                break;
            case LayerKind::conv2d:
                conv_forward(l, dequant[i], x, y);
                break;
            case LayerKind::relu:
                for (std::size_t k = 0; k < y.size(); ++k)
                    y[k] = std::max(0.0f, x[k]);
                break;
            case LayerKind::maxpool:
                maxpool_forward(l, x, y);
                break;
            case LayerKind::softmax:
                std::copy(x.begin(), x.end(), y.begin());
                softmax_inplace(y);
                break;
            }
            std::swap(a, b);
        }
        auto out = logits.row(s);
        std::copy_n(a.begin(), out.size(), out.begin());
    }
    return logits;
}

double cross_entropy_loss(const Tensor& logits, std::span<const int> targets)
{
    if (logits.rows() != targets.size())
        throw ShapeMismatch(fmt::format("{} logit rows vs {} targets", logits.rows(), targets.size()));
    if (targets.empty())
        throw EmptyDataset("no samples to score");
    const auto classes = logits.row_size();
    double total = 0.0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= classes)
            throw LabelOutOfRange(fmt::format("target {} outside [0, {})", t, classes));
        auto z = logits.row(r);
        double m = z[0];
        for (float v : z)
            m = std::max(m, static_cast<double>(v));
        double sum = 0.0;
        for (float v : z)
            sum += std::exp(static_cast<double>(v) - m);
        total += std::log(sum) + m - static_cast<double>(z[static_cast<std::size_t>(t)]);
    }
    return total / static_cast<double>(targets.size());
}

std::vector<int> argmax_rows(const Tensor& logits)
{
    std::vector<int> out(logits.rows());
    for (std::size_t r = 0; r < out.size(); ++r) {
        auto z = logits.row(r);
        out[r] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    return out;
}

std::vector<int> predict(const QuantModel& model, const Tensor& features)
{
    return argmax_rows(forward(model, features));
}

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels)
{
    if (labels.empty())
        throw EmptyDataset("accuracy of an empty dataset");
    if (logits.rows() != labels.size())
        throw ShapeMismatch("logit rows != label count");
    const auto pred = argmax_rows(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const QuantModel& model, const Dataset& dataset)
{
    if (dataset.empty())
        throw EmptyDataset("accuracy of an empty dataset");
    return accuracy_from_logits(forward(model, dataset.features), dataset.labels);
}

QuantModel clone_and_overwrite(const QuantModel& model, std::span<const WeightFault> faults)
{
    auto weights = model.flat_weights();
    for (const auto& f : faults) {
        if (f.flat_index >= weights.size())
            throw IndexOutOfRange(fmt::format("fault index {} of {}", f.flat_index, weights.size()));
        weights[f.flat_index] = f.value;
    }
    return model.with_flat_weights(weights);
}

} // namespace deepdup::qnn
