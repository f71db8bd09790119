#include "deepdup/defense.hpp"

#include "deepdup/error.hpp"
#include "deepdup/rng.hpp"

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>

namespace deepdup::defense {

std::string_view to_string(DefenseKind kind) noexcept
{
    switch (kind) {
    case DefenseKind::none:
        return "none";
    case DefenseKind::widen_model:
        return "widen_model";
    case DefenseKind::protect_layers:
        return "protect_layers";
    case DefenseKind::shuffle_predefined:
        return "shuffle_predefined";
    case DefenseKind::shuffle_random:
        return "shuffle_random";
    }
    return "?";
}

DefenseKind defense_kind_from_string(std::string_view name)
{
    for (auto k : {DefenseKind::none, DefenseKind::widen_model, DefenseKind::protect_layers,
                   DefenseKind::shuffle_predefined, DefenseKind::shuffle_random})
        if (to_string(k) == name)
            return k;
    throw ConfigInvalid("defense.kind", fmt::format("unknown defense '{}'", name));
}

void DefenseConfig::validate(const qnn::QuantModel& model) const
{
    if (width_factor < 1)
        throw ConfigInvalid("defense.width_factor", "must be at least 1");
    for (auto l : protected_layers)
        if (l >= model.weight_layer_count())
            throw ConfigInvalid("defense.protected_layers",
                                fmt::format("layer {} does not exist; model has {} weight layers", l,
                                            model.weight_layer_count()));
}

qnn::TrainConfig recipe_of(const qnn::QuantModel& model)
{
    qnn::TrainConfig cfg;
    if (model.metadata().empty())
        return cfg;
    const auto meta = nlohmann::json::parse(model.metadata(), nullptr, false);
    if (!meta.is_object() || !meta.contains("train"))
        return cfg;
    const auto& t = meta["train"];
    cfg.epochs = t.value("epochs", cfg.epochs);
    cfg.batch_size = t.value("batch_size", cfg.batch_size);
    cfg.learning_rate = t.value("learning_rate", cfg.learning_rate);
    cfg.seed = t.value("seed", cfg.seed);
    return cfg;
}

qnn::QuantModel widen(const qnn::QuantModel& model, std::size_t factor, const qnn::Dataset& train,
                      const qnn::TrainConfig& recipe)
{
    for (const auto& l : model.layers())
        if (l.kind == qnn::LayerKind::softmax)
            throw UnsupportedLayerKind("cannot widen a model containing a softmax layer");
    const auto arch = qnn::widen_architecture(qnn::architecture_of(model), factor);
    return qnn::train_model(arch, train, recipe);
}

std::vector<bool> protect(const channel::PackageStream& stream, std::span<const std::size_t> protected_layers)
{
    const auto n = stream.package_count();
    std::vector<bool> holds_protected(n, false);
    for (auto layer : protected_layers) {
        const auto [first, last] = stream.layer_span(layer);
        for (auto p = first; p <= last; ++p)
            holds_protected[p] = true;
    }
    std::vector<bool> mask(n, false);
    bool any = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        mask[i] = !holds_protected[i] && !holds_protected[i + 1];
        any = any || mask[i];
    }
    if (!any)
        throw AllPackagesProtected("every package is protected or lacks a successor");
    return mask;
}

Permutation Permutation::identity(std::size_t n)
{
    Permutation p;
    p.slot_to_package.resize(n);
    std::iota(p.slot_to_package.begin(), p.slot_to_package.end(), std::size_t{0});
    return p;
}

bool Permutation::is_identity() const noexcept
{
    for (std::size_t i = 0; i < slot_to_package.size(); ++i)
        if (slot_to_package[i] != i)
            return false;
    return true;
}

Permutation make_permutation(std::size_t n, ShuffleMode mode, std::uint64_t seed, std::uint64_t round)
{
    auto p = Permutation::identity(n);
    if (mode == ShuffleMode::none)
        return p;
    auto rng = make_rng(seed, mode == ShuffleMode::predefined ? 0 : round + 1);
    for (std::size_t i = n; i > 1; --i)
        std::swap(p.slot_to_package[i - 1], p.slot_to_package[uniform_index(rng, i)]);
    return p;
}

channel::PackageStream apply_permutation(const channel::PackageStream& stream, const Permutation& perm)
{
    if (perm.size() != stream.package_count())
        throw LengthMismatch(fmt::format("permutation of {} for {} packages", perm.size(), stream.package_count()));
    auto out = stream;
    for (std::size_t s = 0; s < perm.size(); ++s) {
        auto src = stream.package(perm.slot_to_package[s]);
        std::copy(src.begin(), src.end(), out.mutable_package(s).begin());
    }
    return out;
}

channel::PackageStream invert_permutation(const channel::PackageStream& received, const Permutation& perm)
{
    if (perm.size() != received.package_count())
        throw LengthMismatch(fmt::format("permutation of {} for {} packages", perm.size(), received.package_count()));
    auto out = received;
    for (std::size_t s = 0; s < perm.size(); ++s) {
        auto src = received.package(s);
        std::copy(src.begin(), src.end(), out.mutable_package(perm.slot_to_package[s]).begin());
    }
    return out;
}

ShuffledStream shuffle_transmission(const channel::PackageStream& stream, ShuffleMode mode, std::uint64_t seed,
                                    std::uint64_t round)
{
    auto perm = make_permutation(stream.package_count(), mode, seed, round);
    auto shuffled = apply_permutation(stream, perm);
    return {std::move(shuffled), std::move(perm)};
}

} // namespace deepdup::defense
