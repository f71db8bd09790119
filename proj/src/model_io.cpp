#include "deepdup/model_io.hpp"

#include "deepdup/error.hpp"

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <iterator>

namespace deepdup::qnn {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at)
{
    if (at + 4 > bytes.size())
        throw FormatError("truncated model file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= std::uint32_t{bytes[at + static_cast<std::size_t>(i)]} << (8 * i);
    return v;
}

nlohmann::json layer_header(const QuantLayer& l)
{
    const auto& g = l.geometry;
    nlohmann::json j;
    j["kind"] = std::string(to_string(l.kind));
    switch (l.kind) {
    case LayerKind::dense:
        j["in_features"] = g.in_features;
        j["out_features"] = g.out_features;
        break;
    case LayerKind::conv2d:
        j["in_channels"] = g.in_channels;
        j["out_channels"] = g.out_channels;
        j["in_height"] = g.in_height;
        j["in_width"] = g.in_width;
        j["kernel"] = g.kernel;
        j["stride"] = g.stride;
        break;
    case LayerKind::maxpool:
        j["channels"] = g.in_channels;
        j["in_height"] = g.in_height;
        j["in_width"] = g.in_width;
        j["window"] = g.kernel;
        j["stride"] = g.stride;
        break;
    case LayerKind::relu:
    case LayerKind::softmax:
        j["size"] = g.in_features;
        break;
    }
    if (l.has_weights()) {
        j["scale"] = l.scale;
        j["bias"] = l.bias;
    }
    return j;
}

} // namespace

std::vector<std::uint8_t> encode_model(const QuantModel& model)
{
    nlohmann::json header;
    header["num_classes"] = model.num_classes();
    header["parameter_count"] = model.parameter_count();
    if (!model.metadata().empty())
        header["metadata"] = nlohmann::json::parse(model.metadata(), nullptr, false);
    header["layers"] = nlohmann::json::array();
    for (const auto& l : model.layers())
        header["layers"].push_back(layer_header(l));
    const auto text = header.dump();

    std::vector<std::uint8_t> out{'D', 'D', 'Q', 'M'};
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& l : model.layers())
        for (auto w : l.weights)
            out.push_back(static_cast<std::uint8_t>(w));
    return out;
}

QuantModel decode_model(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "DDQM", 4) != 0)
        throw FormatError("not a model file (bad magic)");
    if (get_u32(bytes, 4) != kVersion)
        throw FormatError(fmt::format("unsupported model file version {}", get_u32(bytes, 4)));
    const auto len = get_u32(bytes, 8);
    if (12 + std::size_t{len} > bytes.size())
        throw FormatError("truncated model header");
    const auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len, nullptr, false);
    if (header.is_discarded() || !header.is_object())
        throw FormatError("model header is not a JSON object");

    std::size_t cursor = 12 + len;
    std::vector<QuantLayer> layers;
    try {
        for (const auto& j : header.at("layers")) {
            const auto kind = layer_kind_from_string(j.at("kind").get<std::string>());
            QuantLayer l;
            switch (kind) {
            case LayerKind::dense:
                l = QuantLayer::dense(j.at("in_features"), j.at("out_features"), {}, {}, 1.0f);
                break;
            case LayerKind::conv2d:
                l = QuantLayer::conv2d(j.at("in_channels"), j.at("out_channels"), j.at("in_height"),
                                       j.at("in_width"), j.at("kernel"), j.at("stride"), {}, {}, 1.0f);
                break;
            case LayerKind::maxpool:
                l = QuantLayer::maxpool(j.at("channels"), j.at("in_height"), j.at("in_width"),
                                        j.at("window"), j.at("stride"));
                break;
            case LayerKind::relu:
                l = QuantLayer::relu(j.at("size"));
                break;
            case LayerKind::softmax:
                l = QuantLayer::softmax(j.at("size"));
                break;
            }
            if (l.has_weights()) {
                l.scale = j.at("scale").get<float>();
                l.bias = j.at("bias").get<std::vector<float>>();
                const auto n = l.expected_weight_count();
                if (cursor + n > bytes.size())
                    throw FormatError("weight blob shorter than the header declares");
                l.weights.resize(n);
                std::memcpy(l.weights.data(), bytes.data() + cursor, n);
                cursor += n;
            }
            layers.push_back(std::move(l));
        }
        if (cursor != bytes.size())
            throw FormatError(fmt::format("{} trailing bytes after weight blob", bytes.size() - cursor));
        std::string metadata;
        if (header.contains("metadata"))
            metadata = header["metadata"].dump();
        QuantModel model(std::move(layers), header.at("num_classes").get<std::size_t>(), std::move(metadata));
        if (header.contains("parameter_count") &&
            header["parameter_count"].get<std::size_t>() != model.parameter_count())
            throw FormatError("parameter_count does not match the layer weights");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model header: ") + e.what());
    }
}

void save_model(const QuantModel& model, const std::filesystem::path& path)
{
    const auto bytes = encode_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError(fmt::format("cannot write '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

QuantModel load_model(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(fmt::format("cannot open model '{}'", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_model(bytes);
}

} // namespace deepdup::qnn
