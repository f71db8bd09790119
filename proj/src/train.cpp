#include "deepdup/train.hpp"

#include "deepdup/error.hpp"
#include "deepdup/rng.hpp"

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace deepdup::qnn {

Architecture mlp_small()
{
    Architecture a;
    a.name = "mlp_small";
    a.in_channels = 1;
    a.in_height = 8;
    a.in_width = 8;
    a.num_classes = 4;
    a.layers = {{LayerKind::dense, 24}, {LayerKind::relu}, {LayerKind::dense, 16},
                {LayerKind::relu},      {LayerKind::dense, 4}};
    return a;
}

Architecture cnn_small()
{
    Architecture a;
    a.name = "cnn_small";
    a.in_channels = 1;
    a.in_height = 8;
    a.in_width = 8;
    a.num_classes = 4;
    a.layers = {{LayerKind::conv2d, 8, 3, 1}, {LayerKind::relu},         {LayerKind::conv2d, 16, 3, 1},
                {LayerKind::relu},            {LayerKind::maxpool, 0, 2, 2}, {LayerKind::dense, 4}};
    return a;
}

Architecture architecture_by_name(const std::string& name)
{
    if (name == "mlp_small")
        return mlp_small();
    if (name == "cnn_small")
        return cnn_small();
    throw UnsupportedLayerKind("unknown architecture '" + name + "'");
}

std::vector<QuantLayer> layout(const Architecture& arch)
{
    std::vector<QuantLayer> out;
    // Running CHW shape; dense layers flatten it.
    std::size_t c = arch.in_channels, h = arch.in_height, w = arch.in_width;
    for (const auto& spec : arch.layers) {
        const std::size_t size = c * h * w;
        QuantLayer l;
        switch (spec.kind) {
        case LayerKind::dense:
            l = QuantLayer::dense(size, spec.units, std::vector<std::int8_t>(size * spec.units),
                                  std::vector<float>(spec.units), 1.0f);
            c = 1;
            h = 1;
            w = spec.units;
            break;
        case LayerKind::conv2d:
            l = QuantLayer::conv2d(c, spec.units, h, w, spec.kernel, spec.stride,
                                   std::vector<std::int8_t>(spec.kernel * spec.kernel * c * spec.units),
                                   std::vector<float>(spec.units), 1.0f);
            c = spec.units;
            h = l.output_height();
            w = l.output_width();
            break;
        case LayerKind::maxpool:
            l = QuantLayer::maxpool(c, h, w, spec.kernel, spec.stride);
            h = l.output_height();
            w = l.output_width();
            break;
        case LayerKind::relu:
            l = QuantLayer::relu(size);
            break;
        case LayerKind::softmax:
            l = QuantLayer::softmax(size);
            break;
        }
        out.push_back(std::move(l));
    }
    return out;
}

std::size_t parameter_count(const Architecture& arch)
{
    std::size_t n = 0;
    for (const auto& l : layout(arch))
        n += l.weights.size();
    return n;
}

Architecture architecture_of(const QuantModel& model)
{
    Architecture a;
    const auto& first = model.layers().front();
    if (first.kind == LayerKind::conv2d || first.kind == LayerKind::maxpool) {
        a.in_channels = first.geometry.in_channels;
        a.in_height = first.geometry.in_height;
        a.in_width = first.geometry.in_width;
    } else {
        a.in_width = first.input_size();
    }
    a.num_classes = model.num_classes();
    for (const auto& l : model.layers()) {
        switch (l.kind) {
        case LayerKind::dense:
            a.layers.push_back({LayerKind::dense, l.geometry.out_features});
            break;
        case LayerKind::conv2d:
            a.layers.push_back({LayerKind::conv2d, l.geometry.out_channels, l.geometry.kernel, l.geometry.stride});
            break;
        case LayerKind::maxpool:
            a.layers.push_back({LayerKind::maxpool, 0, l.geometry.kernel, l.geometry.stride});
            break;
        default:
            a.layers.push_back({l.kind});
        }
    }
    if (!model.metadata().empty()) {
        auto meta = nlohmann::json::parse(model.metadata(), nullptr, false);
        if (meta.is_object() && meta.contains("arch") && meta["arch"].is_string())
            a.name = meta["arch"].get<std::string>();
    }
    return a;
}

Architecture widen_architecture(const Architecture& arch, std::size_t factor)
{
    if (factor == 0)
        throw UnsupportedLayerKind("width factor must be at least 1");
    Architecture out = arch;
    std::size_t last_weight = arch.layers.size();
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto k = arch.layers[i].kind;
        if (k == LayerKind::softmax)
            throw UnsupportedLayerKind("cannot widen a model containing a softmax layer");
        if (k == LayerKind::dense || k == LayerKind::conv2d)
            last_weight = i;
    }
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        auto& l = out.layers[i];
        if ((l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) && i != last_weight)
            l.units *= factor;
    }
    if (factor != 1 && !out.name.empty())
        out.name += fmt::format("_x{}", factor);
    return out;
}

QuantizedWeights quantize_symmetric(std::span<const float> weights)
{
    float max_abs = 0.0f;
    for (float w : weights)
        max_abs = std::max(max_abs, std::abs(w));
    QuantizedWeights q;
    q.scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
    q.values.reserve(weights.size());
    for (float w : weights) {
        const float r = std::nearbyint(w / q.scale);
        q.values.push_back(static_cast<std::int8_t>(std::clamp(r, -127.0f, 127.0f)));
    }
    return q;
}

namespace {

/// Float mirror of the quantized layers used only during training.
struct FloatNet {
    std::vector<QuantLayer> geometry;
    std::vector<std::vector<float>> w, b, gw, gb;

    std::size_t widest() const
    {
        std::size_t m = geometry.front().input_size();
        for (const auto& l : geometry)
            m = std::max(m, l.output_size());
        return m;
    }
};

void forward_layer(const QuantLayer& l, const std::vector<float>& w, const std::vector<float>& b,
                   const float* x, float* y)
{
    const auto& g = l.geometry;
    switch (l.kind) {
    case LayerKind::dense: {
        const auto out = g.out_features;
        std::copy(b.begin(), b.end(), y);
        for (std::size_t i = 0; i < g.in_features; ++i) {
            const float xi = x[i];
            if (xi == 0.0f)
                continue;
            const float* wr = w.data() + i * out;
            for (std::size_t o = 0; o < out; ++o)
                y[o] += xi * wr[o];
        }
        break;
    }
    case LayerKind::conv2d: {
        const auto oh = l.output_height(), ow = l.output_width(), co_n = g.out_channels;
        for (std::size_t co = 0; co < co_n; ++co)
            for (std::size_t p = 0; p < oh * ow; ++p)
                y[co * oh * ow + p] = b[co];
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t ky = 0; ky < g.kernel; ++ky)
                    for (std::size_t kx = 0; kx < g.kernel; ++kx)
                        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                            const float xv = x[(ci * g.in_height + oy * g.stride + ky) * g.in_width +
                                               ox * g.stride + kx];
                            const float* wr = w.data() + ((ky * g.kernel + kx) * g.in_channels + ci) * co_n;
                            for (std::size_t co = 0; co < co_n; ++co)
                                y[(co * oh + oy) * ow + ox] += xv * wr[co];
                        }
        break;
    }
    case LayerKind::relu:
        for (std::size_t i = 0; i < g.in_features; ++i)
            y[i] = std::max(0.0f, x[i]);
        break;
    case LayerKind::maxpool: {
        const auto oh = l.output_height(), ow = l.output_width();
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
        break;
    }
    case LayerKind::softmax:
        throw UnsupportedLayerKind("softmax layers are not trainable; the loss applies softmax");
    }
}

/// Accumulates parameter gradients and writes dL/dx into dx.
void backward_layer(const QuantLayer& l, const std::vector<float>& w, std::vector<float>& gw,
                    std::vector<float>& gb, const float* x, const float* y, const float* dy, float* dx)
{
    const auto& g = l.geometry;
    switch (l.kind) {
    case LayerKind::dense: {
        const auto out = g.out_features;
        for (std::size_t o = 0; o < out; ++o)
            gb[o] += dy[o];
        for (std::size_t i = 0; i < g.in_features; ++i) {
            const float* wr = w.data() + i * out;
            float* gr = gw.data() + i * out;
            float acc = 0.0f;
            for (std::size_t o = 0; o < out; ++o) {
                gr[o] += x[i] * dy[o];
                acc += wr[o] * dy[o];
            }
            dx[i] = acc;
        }
        break;
    }
    case LayerKind::conv2d: {
        const auto oh = l.output_height(), ow = l.output_width(), co_n = g.out_channels;
        std::fill(dx, dx + l.input_size(), 0.0f);
        for (std::size_t co = 0; co < co_n; ++co)
            for (std::size_t p = 0; p < oh * ow; ++p)
                gb[co] += dy[co * oh * ow + p];
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t ky = 0; ky < g.kernel; ++ky)
                    for (std::size_t kx = 0; kx < g.kernel; ++kx)
                        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                            const auto xi = (ci * g.in_height + oy * g.stride + ky) * g.in_width +
                                            ox * g.stride + kx;
                            const auto wbase = ((ky * g.kernel + kx) * g.in_channels + ci) * co_n;
                            float acc = 0.0f;
                            for (std::size_t co = 0; co < co_n; ++co) {
                                const float d = dy[(co * oh + oy) * ow + ox];
                                gw[wbase + co] += x[xi] * d;
                                acc += w[wbase + co] * d;
                            }
                            dx[xi] += acc;
                        }
        break;
    }
    case LayerKind::relu:
        for (std::size_t i = 0; i < g.in_features; ++i)
            dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
        break;
    case LayerKind::maxpool: {
        const auto oh = l.output_height(), ow = l.output_width();
        std::fill(dx, dx + l.input_size(), 0.0f);
        for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const auto o = (c * oh + oy) * ow + ox;
                    bool routed = false;
                    for (std::size_t ky = 0; ky < g.kernel && !routed; ++ky)
                        for (std::size_t kx = 0; kx < g.kernel && !routed; ++kx) {
                            const auto xi = (c * g.in_height + oy * g.stride + ky) * g.in_width +
                                            ox * g.stride + kx;
                            if (x[xi] == y[o]) {
                                dx[xi] += dy[o];
                                routed = true;
                            }
                        }
                }
        break;
    }
    case LayerKind::softmax:
        throw UnsupportedLayerKind("softmax layers are not trainable");
    }
}

} // namespace

QuantModel train_model(const Architecture& arch, const Dataset& train, const TrainConfig& cfg)
{
    if (train.empty())
        throw EmptyDataset("training set is empty");
    if (train.features.row_size() != arch.input_size())
        throw ShapeMismatch(fmt::format("dataset sample size {} != architecture input size {}",
                                        train.features.row_size(), arch.input_size()));
    for (int label : train.labels)
        if (label < 0 || static_cast<std::size_t>(label) >= arch.num_classes)
            throw LabelOutOfRange(fmt::format("label {} outside [0, {})", label, arch.num_classes));
    if (cfg.batch_size == 0)
        throw ShapeMismatch("batch_size must be positive");

    FloatNet net;
    net.geometry = layout(arch);
    const auto n_layers = net.geometry.size();
    net.w.resize(n_layers);
    net.b.resize(n_layers);
    net.gw.resize(n_layers);
    net.gb.resize(n_layers);

    auto rng = make_rng(cfg.seed, 0x7261696e);
    for (std::size_t i = 0; i < n_layers; ++i) {
        const auto& l = net.geometry[i];
        if (!l.has_weights())
            continue;
        const double fan_in = l.kind == LayerKind::dense
                                  ? static_cast<double>(l.geometry.in_features)
                                  : static_cast<double>(l.geometry.in_channels * l.geometry.kernel * l.geometry.kernel);
        const double sd = std::sqrt(2.0 / fan_in);
        net.w[i].resize(l.weights.size());
        for (auto& v : net.w[i])
            v = static_cast<float>(sd * standard_normal(rng));
        net.b[i].assign(l.bias.size(), 0.0f);
        net.gw[i].assign(net.w[i].size(), 0.0f);
        net.gb[i].assign(net.b[i].size(), 0.0f);
    }

    const auto width = net.widest();
    // acts[i] is the input of layer i; acts[n_layers] the logits.
    std::vector<std::vector<float>> acts(n_layers + 1, std::vector<float>(width));
    std::vector<float> grad(width), grad_next(width);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto classes = arch.num_classes;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[uniform_index(rng, i)]);

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto end = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t i = 0; i < n_layers; ++i) {
                std::fill(net.gw[i].begin(), net.gw[i].end(), 0.0f);
                std::fill(net.gb[i].begin(), net.gb[i].end(), 0.0f);
            }
            for (std::size_t s = start; s < end; ++s) {
                auto sample = train.features.row(order[s]);
                std::copy(sample.begin(), sample.end(), acts[0].begin());
                for (std::size_t i = 0; i < n_layers; ++i)
                    forward_layer(net.geometry[i], net.w[i], net.b[i], acts[i].data(), acts[i + 1].data());

                const float* z = acts[n_layers].data();
                const float m = *std::max_element(z, z + classes);
                double sum = 0.0;
                for (std::size_t c = 0; c < classes; ++c)
                    sum += std::exp(static_cast<double>(z[c] - m));
                for (std::size_t c = 0; c < classes; ++c)
                    grad[c] = static_cast<float>(std::exp(static_cast<double>(z[c] - m)) / sum);
                grad[static_cast<std::size_t>(train.labels[order[s]])] -= 1.0f;

                for (std::size_t i = n_layers; i-- > 0;) {
                    backward_layer(net.geometry[i], net.w[i], net.gw[i], net.gb[i], acts[i].data(),
                                   acts[i + 1].data(), grad.data(), grad_next.data());
                    std::swap(grad, grad_next);
                }
            }
            const float step = static_cast<float>(cfg.learning_rate / static_cast<double>(end - start));
            for (std::size_t i = 0; i < n_layers; ++i) {
                for (std::size_t k = 0; k < net.w[i].size(); ++k)
                    net.w[i][k] -= step * net.gw[i][k];
                for (std::size_t k = 0; k < net.b[i].size(); ++k)
                    net.b[i][k] -= step * net.gb[i][k];
            }
        }
    }

    std::vector<QuantLayer> layers = net.geometry;
    for (std::size_t i = 0; i < n_layers; ++i) {
        if (!layers[i].has_weights())
            continue;
        auto q = quantize_symmetric(net.w[i]);
        layers[i].weights = std::move(q.values);
        layers[i].scale = q.scale;
        layers[i].bias = net.b[i];
    }

    nlohmann::json meta;
    meta["arch"] = arch.name;
    meta["train"] = {{"epochs", cfg.epochs},
                     {"batch_size", cfg.batch_size},
                     {"learning_rate", cfg.learning_rate},
                     {"seed", cfg.seed}};
    return QuantModel(std::move(layers), arch.num_classes, meta.dump());
}

} // namespace deepdup::qnn
