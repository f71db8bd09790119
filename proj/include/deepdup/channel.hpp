#pragma once

#include "deepdup/qnn.hpp"
#include "deepdup/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace deepdup::channel {

/// Measured injection success rates of the two power-plundering circuits.
inline constexpr double kRingOscillatorRate = 0.8484;
inline constexpr double kLatchRingOscillatorRate = 0.5891;

struct ChannelConfig {
    /// int8 weights per package; 4 models a 32-bit bus.
    std::size_t package_width = 4;
    /// Probability that an armed trigger actually duplicates its package.
    double success_rate = 1.0;
    /// Minimum distance, in packages, between two triggered targets.
    std::size_t min_attack_gap = 12;
    std::uint64_t rng_seed = 0;

    /// Throws ConfigInvalid.
    void validate() const;
};

/// Weights as they cross the memory-to-buffer channel, one fixed-width
/// package per clock cycle. Only the final package may carry zero padding.
class PackageStream {
public:
    PackageStream() = default;
    /// `layer_offsets` holds the flat weight offset where each weight layer begins.
    PackageStream(std::size_t package_width, std::vector<std::int8_t> bytes, std::size_t payload_size,
                  std::vector<std::size_t> layer_offsets);

    std::size_t package_width() const noexcept { return width_; }
    std::size_t package_count() const noexcept { return width_ == 0 ? 0 : bytes_.size() / width_; }
    /// Number of real weights; the rest of the last package is padding.
    std::size_t payload_size() const noexcept { return payload_; }
    /// Package index holding the first weight of every weight layer.
    std::vector<std::size_t> layer_boundaries() const;
    const std::vector<std::size_t>& layer_offsets() const noexcept { return offsets_; }
    /// Inclusive package range holding weight layer `layer`.
    std::pair<std::size_t, std::size_t> layer_span(std::size_t layer) const;

    std::span<const std::int8_t> bytes() const noexcept { return bytes_; }
    std::span<const std::int8_t> package(std::size_t i) const;
    std::span<std::int8_t> mutable_package(std::size_t i);
    /// Real weights without tail padding.
    std::span<const std::int8_t> payload() const noexcept { return std::span(bytes_).first(payload_); }

    bool operator==(const PackageStream&) const = default;

private:
    std::size_t width_ = 0;
    std::vector<std::int8_t> bytes_;
    std::size_t payload_ = 0;
    std::vector<std::size_t> offsets_;
};

PackageStream serialize(const qnn::QuantModel& model, const ChannelConfig& cfg);

/// Rebuilds a model from received packages; `templ` supplies geometry,
/// scales and biases. Throws LengthMismatch.
qnn::QuantModel deserialize(const PackageStream& stream, const qnn::QuantModel& templ);

/// Package carrying weight `weight` of weight layer `layer`. Throws IndexOutOfRange.
std::size_t package_index_of(const qnn::QuantModel& model, std::size_t layer, std::size_t weight,
                             const ChannelConfig& cfg);

struct StrategyHeader {
    /// Clock cycles between the transmission-start marker and package 0.
    std::size_t triggering_delay = 0;
    /// Clock cycles the power-plundering circuit stays enabled per trigger.
    std::size_t triggering_period = 1;
    std::vector<std::size_t> target_indexes;

    bool operator==(const StrategyHeader&) const = default;
};

/// Per-cycle enable bitstream for the fault trigger, one bit per package.
struct StrategyFile {
    StrategyHeader header;
    std::vector<bool> trigger_bits;

    std::size_t stream_length() const noexcept { return trigger_bits.size(); }
    bool operator==(const StrategyFile&) const = default;
};

/// Sorts and de-duplicates `targets`, then checks them against the stream
/// and gap constraints. Throws IndexOutOfRange, TriggerOnLastPackage or
/// GapViolation.
StrategyFile build_strategy(std::span<const std::size_t> targets, std::size_t stream_len,
                            const ChannelConfig& cfg, std::size_t delay = 0, std::size_t period = 1);

/// Keeps targets in priority order, dropping any that repeat or sit closer
/// than min_attack_gap to one already kept, or that have no successor package.
std::vector<std::size_t> compatible_subset(std::span<const std::size_t> targets, std::size_t stream_len,
                                           std::size_t min_attack_gap);

struct FaultRecord {
    std::size_t target;
    bool succeeded;

    bool operator==(const FaultRecord&) const = default;
};
using FaultOutcomeLog = std::vector<FaultRecord>;

struct Transmission {
    PackageStream received;
    FaultOutcomeLog log;
};

/// Sends `stream` through the channel. Each armed package i duplicates into
/// slot i+1 with probability success_rate; one uniform draw per armed
/// package, in increasing index order. Duplication copies the transmitted
/// content of i, so adjacent triggers never chain.
Transmission transmit(const PackageStream& stream, const StrategyFile& strategy, const ChannelConfig& cfg,
                      Rng& rng);

/// On-disk strategy file: a one-line JSON header
/// `{"delay":D,"period":P,"targets":[...],"stream_len":N}`, a newline, the
/// trigger bits packed MSB-first into ceil(N/8) bytes and base64-encoded,
/// and a final newline.
std::string encode_strategy(const StrategyFile& strategy);
StrategyFile decode_strategy(std::string_view text);

/// `trigger_index,succeeded` header, then one row per record with 0/1.
std::string fault_log_csv(const FaultOutcomeLog& log);
FaultOutcomeLog parse_fault_log_csv(std::string_view text);

} // namespace deepdup::channel
