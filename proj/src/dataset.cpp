#include "deepdup/dataset.hpp"

#include "deepdup/error.hpp"
#include "deepdup/rng.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace deepdup::data {

using qnn::Dataset;
using qnn::Tensor;

Dataset make_bars(std::size_t n, double noise, std::uint64_t seed)
{
    constexpr std::size_t side = 8;
    auto rng = make_rng(seed, 0x62617273);
    std::vector<float> features(n * side * side, 0.0f);
    std::vector<int> labels(n);
    for (std::size_t s = 0; s < n; ++s) {
        const int label = static_cast<int>(uniform_index(rng, 4));
        const auto pos = 1 + uniform_index(rng, side - 2);
        float* img = features.data() + s * side * side;
        for (std::size_t j = 0; j < side; ++j) {
            switch (label) {
            case 0:
                img[pos * side + j] = 1.0f;
                break;
            case 1:
                img[j * side + pos] = 1.0f;
                break;
            case 2:
                img[j * side + j] = 1.0f;
                break;
            default:
                img[j * side + (side - 1 - j)] = 1.0f;
            }
        }
        for (std::size_t p = 0; p < side * side; ++p)
            img[p] += static_cast<float>(noise * standard_normal(rng));
        labels[s] = label;
    }
    return Dataset{Tensor({n, side * side}, std::move(features)), std::move(labels)};
}

namespace {

std::string format_float(float v)
{
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

} // namespace

Dataset read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DatasetUnreadable(fmt::format("cannot open '{}'", path.string()));
    std::vector<float> features;
    std::vector<int> labels;
    std::size_t width = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::size_t fields = 0;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (p <= end) {
            const char* comma = std::find(p, end, ',');
            if (fields == 0) {
                int label = 0;
                auto r = std::from_chars(p, comma, label);
                if (r.ec != std::errc{} || r.ptr != comma)
                    throw DatasetUnreadable(fmt::format("{}:{}: bad label", path.string(), line_no));
                labels.push_back(label);
            } else {
                float v = 0.0f;
                auto r = std::from_chars(p, comma, v);
                if (r.ec != std::errc{} || r.ptr != comma)
                    throw DatasetUnreadable(fmt::format("{}:{}: bad feature {}", path.string(), line_no, fields));
                features.push_back(v);
            }
            ++fields;
            p = comma + 1;
        }
        if (fields < 2)
            throw DatasetUnreadable(fmt::format("{}:{}: row has no features", path.string(), line_no));
        if (width == 0)
            width = fields - 1;
        else if (fields - 1 != width)
            throw DatasetUnreadable(fmt::format("{}:{}: expected {} features, got {}", path.string(),
                                                line_no, width, fields - 1));
    }
    if (labels.empty())
        throw DatasetUnreadable(fmt::format("'{}' contains no samples", path.string()));
    return Dataset{Tensor({labels.size(), width}, std::move(features)), std::move(labels)};
}

void write_csv(const Dataset& ds, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw DatasetUnreadable(fmt::format("cannot write '{}'", path.string()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.labels[i];
        for (float v : ds.features.row(i))
            out << ',' << format_float(v);
        out << '\n';
    }
}

namespace {

std::uint32_t read_be32(std::istream& in)
{
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4))
        throw DatasetUnreadable("truncated IDX header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v)
{
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b.data(), 4);
}

struct IdxHeader {
    unsigned type;
    std::vector<std::size_t> dims;
};

IdxHeader read_idx_header(std::istream& in)
{
    const auto magic = read_be32(in);
    if ((magic >> 16) != 0)
        throw DatasetUnreadable("IDX magic must start with two zero bytes");
    IdxHeader h{(magic >> 8) & 0xff, {}};
    const auto rank = magic & 0xff;
    if (rank == 0)
        throw DatasetUnreadable("IDX rank must be positive");
    for (unsigned i = 0; i < rank; ++i)
        h.dims.push_back(read_be32(in));
    return h;
}

} // namespace

Dataset read_idx(const std::filesystem::path& features, const std::filesystem::path& labels)
{
    std::ifstream fin(features, std::ios::binary);
    std::ifstream lin(labels, std::ios::binary);
    if (!fin || !lin)
        throw DatasetUnreadable(fmt::format("cannot open IDX pair '{}', '{}'", features.string(), labels.string()));

    const auto fh = read_idx_header(fin);
    std::size_t n = fh.dims[0];
    std::size_t width = 1;
    for (std::size_t i = 1; i < fh.dims.size(); ++i)
        width *= fh.dims[i];
    std::vector<float> values(n * width);
    if (fh.type == 0x0D) {
        for (auto& v : values) {
            const auto bits = read_be32(fin);
            v = std::bit_cast<float>(bits);
        }
    } else if (fh.type == 0x08) {
        std::vector<unsigned char> raw(values.size());
        if (!fin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
            throw DatasetUnreadable("truncated IDX feature payload");
        for (std::size_t i = 0; i < raw.size(); ++i)
            values[i] = static_cast<float>(raw[i]) / 255.0f;
    } else {
        throw DatasetUnreadable(fmt::format("unsupported IDX feature type 0x{:02x}", fh.type));
    }

    const auto lh = read_idx_header(lin);
    if (lh.type != 0x08 || lh.dims.size() != 1)
        throw DatasetUnreadable("IDX labels must be a rank-1 unsigned byte vector");
    if (lh.dims[0] != n)
        throw DatasetUnreadable(fmt::format("{} labels for {} samples", lh.dims[0], n));
    std::vector<unsigned char> raw(n);
    if (!lin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n)))
        throw DatasetUnreadable("truncated IDX label payload");
    if (n == 0 || width == 0)
        throw DatasetUnreadable("IDX dataset contains no samples");
    return Dataset{Tensor({n, width}, std::move(values)), std::vector<int>(raw.begin(), raw.end())};
}

void write_idx(const Dataset& ds, const std::filesystem::path& features, const std::filesystem::path& labels)
{
    std::ofstream fout(features, std::ios::binary);
    std::ofstream lout(labels, std::ios::binary);
    if (!fout || !lout)
        throw DatasetUnreadable("cannot write IDX pair");
    write_be32(fout, 0x00000D02);
    write_be32(fout, static_cast<std::uint32_t>(ds.size()));
    write_be32(fout, static_cast<std::uint32_t>(ds.features.row_size()));
    for (float v : ds.features.data())
        write_be32(fout, std::bit_cast<std::uint32_t>(v));
    write_be32(lout, 0x00000801);
    write_be32(lout, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) {
        if (l < 0 || l > 255)
            throw LabelOutOfRange(fmt::format("IDX labels are bytes; got {}", l));
        lout.put(static_cast<char>(l));
    }
}

Dataset load(const std::filesystem::path& path)
{
    if (path.extension() == ".idx") {
        auto labels = path;
        labels.replace_extension(".labels.idx");
        return read_idx(path, labels);
    }
    return read_csv(path);
}

} // namespace deepdup::data
