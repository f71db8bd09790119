#include "deepdup/channel.hpp"

#include "deepdup/error.hpp"

#include <fmt/core.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>

namespace deepdup::channel {

void ChannelConfig::validate() const
{
    if (package_width == 0)
        throw ConfigInvalid("channel.package_width", "must be at least 1");
    if (!(success_rate >= 0.0 && success_rate <= 1.0))
        throw ConfigInvalid("channel.fp", fmt::format("{} is outside [0, 1]", success_rate));
}

PackageStream::PackageStream(std::size_t package_width, std::vector<std::int8_t> bytes, std::size_t payload_size,
                             std::vector<std::size_t> layer_offsets)
    : width_(package_width), bytes_(std::move(bytes)), payload_(payload_size), offsets_(std::move(layer_offsets))
{
    if (width_ == 0)
        throw LengthMismatch("package width must be positive");
    if (bytes_.size() % width_ != 0)
        throw LengthMismatch(fmt::format("{} bytes do not fill whole packages of {}", bytes_.size(), width_));
    // Padding may only fill the tail of the last package.
    if (payload_ > bytes_.size() || (!bytes_.empty() && bytes_.size() - payload_ >= width_))
        throw LengthMismatch(fmt::format("payload {} inconsistent with {} bytes", payload_, bytes_.size()));
    for (std::size_t i = 0; i < offsets_.size(); ++i)
        if (offsets_[i] >= payload_ || (i > 0 && offsets_[i] <= offsets_[i - 1]))
            throw LengthMismatch("layer offsets must increase strictly and stay inside the payload");
}

std::vector<std::size_t> PackageStream::layer_boundaries() const
{
    std::vector<std::size_t> out;
    out.reserve(offsets_.size());
    for (auto off : offsets_)
        out.push_back(off / width_);
    return out;
}

std::pair<std::size_t, std::size_t> PackageStream::layer_span(std::size_t layer) const
{
    if (layer >= offsets_.size())
        throw IndexOutOfRange(fmt::format("weight layer {} of {}", layer, offsets_.size()));
    const auto end = layer + 1 < offsets_.size() ? offsets_[layer + 1] : payload_;
    return {offsets_[layer] / width_, (end - 1) / width_};
}

std::span<const std::int8_t> PackageStream::package(std::size_t i) const
{
    if (i >= package_count())
        throw IndexOutOfRange(fmt::format("package {} of {}", i, package_count()));
    return std::span<const std::int8_t>(bytes_).subspan(i * width_, width_);
}

std::span<std::int8_t> PackageStream::mutable_package(std::size_t i)
{
    if (i >= package_count())
        throw IndexOutOfRange(fmt::format("package {} of {}", i, package_count()));
    return std::span<std::int8_t>(bytes_).subspan(i * width_, width_);
}

PackageStream serialize(const qnn::QuantModel& model, const ChannelConfig& cfg)
{
    cfg.validate();
    const auto w = cfg.package_width;
    auto bytes = model.flat_weights();
    const auto payload = bytes.size();
    const auto packages = (payload + w - 1) / w;
    bytes.resize(packages * w, 0);
    return PackageStream(w, std::move(bytes), payload, model.weight_offsets());
}

qnn::QuantModel deserialize(const PackageStream& stream, const qnn::QuantModel& templ)
{
    const auto n = templ.parameter_count();
    const auto w = stream.package_width();
    if (stream.payload_size() != n || stream.package_count() != (n + w - 1) / w)
        throw LengthMismatch(fmt::format("stream carries {} weights in {} packages; model needs {}",
                                         stream.payload_size(), stream.package_count(), n));
    return templ.with_flat_weights(stream.payload());
}

std::size_t package_index_of(const qnn::QuantModel& model, std::size_t layer, std::size_t weight,
                             const ChannelConfig& cfg)
{
    if (layer >= model.weight_layer_count())
        throw IndexOutOfRange(fmt::format("weight layer {} of {}", layer, model.weight_layer_count()));
    const auto counts = model.layer_weight_counts();
    if (weight >= counts[layer])
        throw IndexOutOfRange(fmt::format("weight {} of {} in layer {}", weight, counts[layer], layer));
    if (cfg.package_width == 0)
        throw ConfigInvalid("channel.package_width", "must be at least 1");
    return (model.weight_offsets()[layer] + weight) / cfg.package_width;
}

StrategyFile build_strategy(std::span<const std::size_t> targets, std::size_t stream_len, const ChannelConfig& cfg,
                            std::size_t delay, std::size_t period)
{
    std::vector<std::size_t> sorted(targets.begin(), targets.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    for (auto t : sorted) {
        if (t >= stream_len)
            throw IndexOutOfRange(fmt::format("target {} outside a {}-package stream", t, stream_len));
        if (t + 1 == stream_len)
            throw TriggerOnLastPackage(fmt::format("package {} has no successor to duplicate into", t));
    }
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] - sorted[i - 1] < cfg.min_attack_gap)
            throw GapViolation(fmt::format("targets {} and {} are closer than {} packages", sorted[i - 1],
                                           sorted[i], cfg.min_attack_gap));

    StrategyFile s;
    s.header.triggering_delay = delay;
    s.header.triggering_period = period;
    s.trigger_bits.assign(stream_len, false);
    for (auto t : sorted)
        s.trigger_bits[t] = true;
    s.header.target_indexes = std::move(sorted);
    return s;
}

std::vector<std::size_t> compatible_subset(std::span<const std::size_t> targets, std::size_t stream_len,
                                           std::size_t min_attack_gap)
{
    std::vector<std::size_t> kept;
    for (auto t : targets) {
        if (t + 1 >= stream_len)
            continue;
        const bool clash = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            const auto d = t > k ? t - k : k - t;
            return d == 0 || d < min_attack_gap;
        });
        if (!clash)
            kept.push_back(t);
    }
    return kept;
}

Transmission transmit(const PackageStream& stream, const StrategyFile& strategy, const ChannelConfig& cfg, Rng& rng)
{
    const auto n = stream.package_count();
    if (strategy.trigger_bits.size() != n)
        throw LengthMismatch(fmt::format("strategy covers {} packages, stream has {}", strategy.trigger_bits.size(), n));
    if (n > 0 && strategy.trigger_bits[n - 1])
        throw TriggerOnLastPackage("the final package has no successor");

    Transmission t{stream, {}};
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (!strategy.trigger_bits[i])
            continue;
        const bool ok = bernoulli(rng, cfg.success_rate);
        t.log.push_back({i, ok});
        if (ok) {
            auto src = stream.package(i);
            std::copy(src.begin(), src.end(), t.received.mutable_package(i + 1).begin());
        }
    }
    return t;
}

namespace {

std::string base64_encode(const std::vector<std::uint8_t>& raw)
{
    std::string out(4 * ((raw.size() + 2) / 3), '\0');
    const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), raw.data(),
                                    static_cast<int>(raw.size()));
    out.resize(static_cast<std::size_t>(len));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text)
{
    if (text.size() % 4 != 0)
        throw FormatError("base64 payload length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    const int len = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                    static_cast<int>(text.size()));
    if (len < 0)
        throw FormatError("invalid base64 payload");
    // EVP_DecodeBlock keeps the bytes produced by '=' padding; drop them.
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=')
        ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=')
        ++pad;
    out.resize(static_cast<std::size_t>(len) - pad);
    return out;
}

} // namespace

std::string encode_strategy(const StrategyFile& strategy)
{
    nlohmann::ordered_json h;
    h["delay"] = strategy.header.triggering_delay;
    h["period"] = strategy.header.triggering_period;
    h["targets"] = strategy.header.target_indexes;
    h["stream_len"] = strategy.trigger_bits.size();

    std::vector<std::uint8_t> packed((strategy.trigger_bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < strategy.trigger_bits.size(); ++i)
        if (strategy.trigger_bits[i])
            packed[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
    return h.dump() + "\n" + base64_encode(packed) + "\n";
}

StrategyFile decode_strategy(std::string_view text)
{
    const auto nl = text.find('\n');
    if (nl == std::string_view::npos)
        throw FormatError("strategy file needs a header line and a payload line");
    auto header = nlohmann::json::parse(text.substr(0, nl), nullptr, false);
    if (header.is_discarded() || !header.is_object())
        throw FormatError("strategy header is not a JSON object");
    auto payload = text.substr(nl + 1);
    while (!payload.empty() && (payload.back() == '\n' || payload.back() == '\r'))
        payload.remove_suffix(1);

    StrategyFile s;
    try {
        s.header.triggering_delay = header.at("delay").get<std::size_t>();
        s.header.triggering_period = header.at("period").get<std::size_t>();
        s.header.target_indexes = header.at("targets").get<std::vector<std::size_t>>();
        const auto len = header.at("stream_len").get<std::size_t>();
        const auto packed = base64_decode(payload);
        if (packed.size() != (len + 7) / 8)
            throw FormatError(fmt::format("payload holds {} bytes, stream_len {} needs {}", packed.size(), len,
                                          (len + 7) / 8));
        s.trigger_bits.resize(len);
        for (std::size_t i = 0; i < len; ++i)
            s.trigger_bits[i] = (packed[i / 8] & (0x80u >> (i % 8))) != 0;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("strategy header: ") + e.what());
    }
    std::vector<bool> expected(s.trigger_bits.size(), false);
    for (auto t : s.header.target_indexes) {
        if (t >= expected.size())
            throw FormatError(fmt::format("target {} beyond stream_len", t));
        expected[t] = true;
    }
    if (expected != s.trigger_bits)
        throw FormatError("trigger bits disagree with the header's target list");
    return s;
}

std::string fault_log_csv(const FaultOutcomeLog& log)
{
    std::string out = "trigger_index,succeeded\n";
    for (const auto& r : log)
        out += fmt::format("{},{}\n", r.target, r.succeeded ? 1 : 0);
    return out;
}

FaultOutcomeLog parse_fault_log_csv(std::string_view text)
{
    FaultOutcomeLog log;
    std::size_t pos = text.find('\n');
    if (pos == std::string_view::npos || text.substr(0, pos) != "trigger_index,succeeded")
        throw FormatError("fault log must start with 'trigger_index,succeeded'");
    ++pos;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos)
            end = text.size();
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty())
            continue;
        const auto comma = line.find(',');
        FaultRecord r{};
        int ok = 0;
        if (comma == std::string_view::npos ||
            std::from_chars(line.data(), line.data() + comma, r.target).ec != std::errc{} ||
            std::from_chars(line.data() + comma + 1, line.data() + line.size(), ok).ec != std::errc{} ||
            (ok != 0 && ok != 1))
            throw FormatError(fmt::format("bad fault log row '{}'", line));
        r.succeeded = ok == 1;
        log.push_back(r);
    }
    return log;
}

} // namespace deepdup::channel
