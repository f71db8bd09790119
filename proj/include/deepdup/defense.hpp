#pragma once

#include "deepdup/channel.hpp"
#include "deepdup/qnn.hpp"
#include "deepdup/train.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace deepdup::defense {

enum class DefenseKind { none, widen_model, protect_layers, shuffle_predefined, shuffle_random };

std::string_view to_string(DefenseKind kind) noexcept;
/// Throws ConfigInvalid naming `defense.kind`.
DefenseKind defense_kind_from_string(std::string_view name);

struct DefenseConfig {
    DefenseKind kind = DefenseKind::none;
    /// Per-dimension width multiplier for widen_model.
    std::size_t width_factor = 2;
    /// Weight-layer indexes kept on-chip for protect_layers.
    std::vector<std::size_t> protected_layers;
    std::uint64_t shuffle_seed = 0;

    /// Checks factor and layer indexes against `model`. Throws ConfigInvalid.
    void validate(const qnn::QuantModel& model) const;
};

/// Retrains `model`'s architecture with every hidden width multiplied by
/// `factor`, using the same recipe. Throws UnsupportedLayerKind.
qnn::QuantModel widen(const qnn::QuantModel& model, std::size_t factor, const qnn::Dataset& train,
                      const qnn::TrainConfig& recipe);

/// Training recipe recorded in a model's metadata, or defaults.
qnn::TrainConfig recipe_of(const qnn::QuantModel& model);

/// Attackable-package mask: package i may carry a trigger only if neither i
/// nor its successor i+1 holds a weight of a protected layer, and i is not
/// the final package. Throws IndexOutOfRange or AllPackagesProtected.
std::vector<bool> protect(const channel::PackageStream& stream, std::span<const std::size_t> protected_layers);

enum class ShuffleMode { none, predefined, random };

/// slot_to_package[s] is the original package sent in transmission slot s.
struct Permutation {
    std::vector<std::size_t> slot_to_package;

    static Permutation identity(std::size_t n);
    std::size_t size() const noexcept { return slot_to_package.size(); }
    bool is_identity() const noexcept;
    bool operator==(const Permutation&) const = default;
};

/// Uniform random permutation. `predefined` ignores `round` and always
/// yields the permutation for `seed`; `random` draws a fresh one per round.
Permutation make_permutation(std::size_t n, ShuffleMode mode, std::uint64_t seed, std::uint64_t round);

struct ShuffledStream {
    channel::PackageStream stream;
    Permutation permutation;
};

/// Reorders packages for transmission. Faults then act on transmitted slots.
ShuffledStream shuffle_transmission(const channel::PackageStream& stream, ShuffleMode mode, std::uint64_t seed,
                                    std::uint64_t round = 0);
channel::PackageStream apply_permutation(const channel::PackageStream& stream, const Permutation& perm);
/// Receiver side: puts every slot back at its original package index.
channel::PackageStream invert_permutation(const channel::PackageStream& received, const Permutation& perm);

} // namespace deepdup::defense
