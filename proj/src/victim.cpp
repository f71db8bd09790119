#include "deepdup/victim.hpp"

#include "deepdup/error.hpp"

#include <fmt/core.h>

namespace deepdup::victim {

namespace {

defense::ShuffleMode shuffle_mode(defense::DefenseKind kind)
{
    switch (kind) {
    case defense::DefenseKind::shuffle_predefined:
        return defense::ShuffleMode::predefined;
    case defense::DefenseKind::shuffle_random:
        return defense::ShuffleMode::random;
    default:
        return defense::ShuffleMode::none;
    }
}

} // namespace

ChannelSimulator::ChannelSimulator(qnn::QuantModel clean, channel::ChannelConfig cfg, defense::DefenseConfig defense,
                                   std::uint64_t seed)
    : clean_(std::move(clean)), cfg_(cfg), defense_(std::move(defense)), rng_(make_rng(seed, 7))
{
    cfg_.validate();
    defense_.validate(clean_);
    stream_ = channel::serialize(clean_, cfg_);
    const auto n = stream_.package_count();
    if (defense_.kind == defense::DefenseKind::protect_layers) {
        attackable_ = defense::protect(stream_, defense_.protected_layers);
    } else {
        attackable_.assign(n, true);
        if (n > 0)
            attackable_.back() = false;
    }
}

ChannelSimulator::Delivery ChannelSimulator::deliver(const channel::StrategyFile& strategy)
{
    const auto n = stream_.package_count();
    if (strategy.trigger_bits.size() != n)
        throw LengthMismatch(fmt::format("strategy covers {} cycles, stream has {}", strategy.trigger_bits.size(), n));
    auto armed = strategy;
    for (std::size_t i = 0; i < n; ++i)
        armed.trigger_bits[i] = armed.trigger_bits[i] && attackable_[i];

    const auto round = round_++;
    auto shuffled = defense::shuffle_transmission(stream_, shuffle_mode(defense_.kind), defense_.shuffle_seed, round);
    auto tx = channel::transmit(shuffled.stream, armed, cfg_, rng_);
    auto restored = defense::invert_permutation(tx.received, shuffled.permutation);
    return {channel::deserialize(restored, clean_), std::move(tx.log), std::move(shuffled.permutation)};
}

ChannelSimulator::Delivery ChannelSimulator::deliver(std::span<const std::size_t> targets)
{
    return deliver(channel::build_strategy(targets, stream_.package_count(), cfg_));
}

SimulatedVictim::SimulatedVictim(ChannelSimulator sim) : sim_(std::move(sim))
{
    reload();
}

void SimulatedVictim::load_strategy(const channel::StrategyFile& strategy)
{
    last_ = sim_.deliver(strategy);
}

qnn::Tensor SimulatedVictim::infer(const qnn::Tensor& batch)
{
    ++queries_;
    return qnn::forward(last_.model, batch);
}

void SimulatedVictim::reload()
{
    channel::StrategyFile idle;
    idle.trigger_bits.assign(sim_.stream_length(), false);
    last_ = sim_.deliver(idle);
}

const qnn::QuantModel& SimulatedVictim::loaded_model()
{
    ++weight_reads_;
    return last_.model;
}

} // namespace deepdup::victim
