#pragma once

#include "deepdup/channel.hpp"
#include "deepdup/defense.hpp"
#include "deepdup/qnn.hpp"
#include "deepdup/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace deepdup::victim {

/// Clean model plus the channel that carries it to the accelerator. Every
/// delivery is one fresh transmission; the clean weights are never modified.
class ChannelSimulator {
public:
    ChannelSimulator(qnn::QuantModel clean, channel::ChannelConfig cfg, defense::DefenseConfig defense,
                     std::uint64_t seed);

    const qnn::QuantModel& clean_model() const noexcept { return clean_; }
    const channel::ChannelConfig& config() const noexcept { return cfg_; }
    const defense::DefenseConfig& defense() const noexcept { return defense_; }
    const channel::PackageStream& stream() const noexcept { return stream_; }
    std::size_t stream_length() const noexcept { return stream_.package_count(); }
    /// Transmission slots that may carry a trigger.
    const std::vector<bool>& attackable() const noexcept { return attackable_; }

    struct Delivery {
        qnn::QuantModel model;
        channel::FaultOutcomeLog log;
        defense::Permutation permutation;
    };

    /// Transmits once with `strategy` armed. Triggers on slots outside the
    /// attackable mask never fire. Under a shuffle defense the packages are
    /// permuted before the channel and restored by the receiver.
    Delivery deliver(const channel::StrategyFile& strategy);
    /// Builds a strategy from transmission-slot targets and delivers it.
    Delivery deliver(std::span<const std::size_t> targets);

    std::uint64_t transmissions() const noexcept { return round_; }

private:
    qnn::QuantModel clean_;
    channel::ChannelConfig cfg_;
    defense::DefenseConfig defense_;
    channel::PackageStream stream_;
    std::vector<bool> attackable_;
    Rng rng_;
    std::uint64_t round_ = 0;
};

/// What a black-box attacker can touch: the transmission schedule, the
/// strategy-file interface, output scores, and a reload button.
class VictimEndpoint {
public:
    virtual ~VictimEndpoint() = default;

    virtual std::size_t transmission_cycles() const = 0;
    virtual std::vector<bool> attackable_cycles() const = 0;
    virtual std::size_t min_attack_gap() const = 0;
    /// Arms the trigger and runs one weight transmission.
    virtual void load_strategy(const channel::StrategyFile& strategy) = 0;
    /// Output scores of the currently loaded weights. Counts one query.
    virtual qnn::Tensor infer(const qnn::Tensor& batch) = 0;
    /// Transmits again with no trigger armed.
    virtual void reload() = 0;
    virtual std::size_t queries() const = 0;
};

class SimulatedVictim final : public VictimEndpoint {
public:
    explicit SimulatedVictim(ChannelSimulator sim);

    std::size_t transmission_cycles() const override { return sim_.stream_length(); }
    std::vector<bool> attackable_cycles() const override { return sim_.attackable(); }
    std::size_t min_attack_gap() const override { return sim_.config().min_attack_gap; }
    void load_strategy(const channel::StrategyFile& strategy) override;
    qnn::Tensor infer(const qnn::Tensor& batch) override;
    void reload() override;
    std::size_t queries() const override { return queries_; }

    /// Test seam: direct weight access. Counted so tests can assert the
    /// black-box loop never calls it.
    const qnn::QuantModel& loaded_model();
    std::size_t weight_reads() const noexcept { return weight_reads_; }
    const channel::FaultOutcomeLog& last_log() const noexcept { return last_.log; }
    const defense::Permutation& last_permutation() const noexcept { return last_.permutation; }
    ChannelSimulator& simulator() noexcept { return sim_; }

private:
    ChannelSimulator sim_;
    ChannelSimulator::Delivery last_;
    std::size_t queries_ = 0;
    std::size_t weight_reads_ = 0;
};

} // namespace deepdup::victim
