#pragma once

#include "deepdup/channel.hpp"
#include "deepdup/qnn.hpp"
#include "deepdup/rng.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

/// Progressive differential evolution over normalized weight-package indexes.
namespace deepdup::pdes {

enum class SearchMode {
    /// Candidate is (layer, weight-within-layer), both normalized to [0,1].
    white_box_2d,
    /// Candidate is one normalized coordinate over the flattened package stream.
    black_box_1d,
};

struct Candidate {
    double p = 0.0;
    /// Unused in black_box_1d.
    double q = 0.0;
    std::optional<double> fitness;
};

struct Population {
    std::vector<Candidate> members;
    std::size_t best_index = 0;
    std::size_t worst_index = 0;

    std::size_t size() const noexcept { return members.size(); }
    /// Recomputes best/worst from cached fitnesses (unset counts as -inf).
    /// Ties resolve to the lowest index.
    void refresh_extremes();
    double best_fitness() const;
};

struct SearchConfig {
    /// Population size, equal to the number of evolutions per iteration.
    std::size_t z = 50;
    SearchMode mode = SearchMode::white_box_2d;
    std::size_t max_iterations = 40;
    std::uint64_t rng_seed = 0;

    /// Throws ConfigInvalid.
    void validate() const;
};

/// Fitness evaluation plus the hook that puts the clean weights back.
struct FitnessOracle {
    std::function<double(const Candidate&)> evaluate;
    std::function<void()> restore;
    /// True when repeated evaluation of one candidate may differ (f_p < 1);
    /// cached fitness of the current member is then refreshed in select().
    bool stochastic = false;

    double operator()(const Candidate& c) const
    {
        const double f = evaluate(c);
        if (restore)
            restore();
        return f;
    }
};

/// Uniform [0,1) coordinates; q is left at 0 in black-box mode.
Population init_population(const SearchConfig& cfg, Rng& rng);

/// Random inputs of one mutation call: member picks a..e and factors alpha1..alpha3.
struct MutationDraw {
    std::array<std::size_t, 5> picks{};
    std::array<double, 3> alpha{};
};

/// Draws five distinct members, all different from `member_index`, then the
/// three factors. Throws PopulationTooSmall when fewer than six members exist.
MutationDraw draw_mutation(std::size_t population_size, std::size_t member_index, Rng& rng);

/// The four mutant vectors for a given draw:
///   1: a + alpha1 (b - c)
///   2: a + alpha1 (b - c) + alpha2 (d - e)
///   3: a + alpha1 (best - a) + alpha2 (b - c) + alpha3 (d - e)
///   4: a + alpha1 (best - worst)
/// applied to p and q independently. Results may leave [0,1].
std::array<Candidate, 4> mutants_from(const Population& pop, const MutationDraw& draw);

std::array<Candidate, 4> mutate(const Population& pop, std::size_t member_index, Rng& rng);

/// Keeps each mutant coordinate that lies in [0,1], otherwise the current one.
Candidate crossover(const Candidate& mutant, const Candidate& current);

struct SelectionOutcome {
    Candidate survivor;
    /// 0 = current member kept, 1..4 = trial from that strategy.
    std::size_t survivor_slot = 0;
    double current_fitness = 0.0;
    std::array<double, 4> trial_fitness{};
    std::size_t evaluations = 0;
};

/// Evaluates the trials and returns the fittest of current and trials.
/// Ties keep the current member, then the lowest strategy number.
SelectionOutcome select(const Candidate& current, std::span<const Candidate, 4> trials, const FitnessOracle& oracle);

struct SelectRecord {
    std::size_t iteration = 0;
    std::size_t member = 0;
    double current_fitness = 0.0;
    std::array<double, 4> trial_fitness{};
    std::size_t survivor = 0;
};
using TraceSink = std::function<void(const SelectRecord&)>;

/// One JSON object, no trailing newline.
std::string to_jsonl(const SelectRecord& record);

struct IterationResult {
    Candidate winner;
    std::size_t winner_index = 0;
    Population population;
    std::size_t evaluations = 0;
};

/// Evaluates any member without a cached fitness, then runs mutation,
/// crossover and selection once for every member in order, and returns the
/// fittest member (lowest index on ties).
IterationResult run_iteration(Population pop, const FitnessOracle& oracle, const SearchConfig& cfg, Rng& rng,
                              std::size_t iteration = 0, const TraceSink& trace = {});

/// Result of mapping a candidate onto the channel.
struct AttackIndex {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t layer = npos;
    std::size_t weight = npos;
    std::size_t package = 0;
};

/// The set of packages an attacker may trigger, with the geometry needed to
/// turn normalized candidates into package indexes.
class TargetSpace {
public:
    /// `attackable[i]` marks packages that may carry a trigger. When empty,
    /// every package except the last is attackable.
    static TargetSpace for_white_box(const qnn::QuantModel& model, const channel::ChannelConfig& cfg,
                                     std::vector<bool> attackable = {});
    static TargetSpace for_black_box(std::size_t stream_len, std::vector<bool> attackable = {});

    std::size_t stream_length() const noexcept { return attackable_.size(); }
    const std::vector<bool>& attackable() const noexcept { return attackable_; }
    std::size_t attackable_count() const noexcept { return valid_.size(); }

    /// White-box: layer = min(floor(p L), L-1) over layers with an attackable
    /// package, weight = min(floor(q n), n-1), then the containing package;
    /// a non-attackable package moves to the nearest attackable one in the
    /// same layer, searching downward first. Black-box: the
    /// min(floor(p V), V-1)-th of the V attackable packages.
    AttackIndex locate(const Candidate& c, SearchMode mode) const;

private:
    std::vector<bool> attackable_;
    std::vector<std::size_t> valid_;
    std::size_t package_width_ = 0;
    // White-box geometry, restricted to layers with an attackable package.
    std::vector<std::size_t> layer_ids_;
    std::vector<std::size_t> layer_offsets_;
    std::vector<std::size_t> layer_counts_;
};

/// Free-function form of TargetSpace::locate; returns the package index.
std::size_t denormalize(const Candidate& c, const TargetSpace& space, SearchMode mode);

} // namespace deepdup::pdes
