#include "deepdup/pdes.hpp"

#include "deepdup/error.hpp"

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace deepdup::pdes {

namespace {

double fitness_or_lowest(const Candidate& c)
{
    return c.fitness.value_or(-std::numeric_limits<double>::infinity());
}

bool in_unit_interval(double v)
{
    return v >= 0.0 && v <= 1.0;
}

} // namespace

void Population::refresh_extremes()
{
    best_index = 0;
    worst_index = 0;
    for (std::size_t i = 1; i < members.size(); ++i) {
        const double f = fitness_or_lowest(members[i]);
        if (f > fitness_or_lowest(members[best_index]))
            best_index = i;
        if (f < fitness_or_lowest(members[worst_index]))
            worst_index = i;
    }
}

double Population::best_fitness() const
{
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& m : members)
        best = std::max(best, fitness_or_lowest(m));
    return best;
}

void SearchConfig::validate() const
{
    if (z < 6)
        throw ConfigInvalid("search.z", fmt::format("{} is too small; mutation needs at least 6 members", z));
    if (max_iterations == 0)
        throw ConfigInvalid("search.max_iterations", "must be positive");
}

Population init_population(const SearchConfig& cfg, Rng& rng)
{
    Population pop;
    pop.members.resize(cfg.z);
    for (auto& m : pop.members) {
        m.p = uniform01(rng);
        if (cfg.mode == SearchMode::white_box_2d)
            m.q = uniform01(rng);
    }
    return pop;
}

MutationDraw draw_mutation(std::size_t population_size, std::size_t member_index, Rng& rng)
{
    if (population_size < 6)
        throw PopulationTooSmall(fmt::format("need at least 6 members, have {}", population_size));
    if (member_index >= population_size)
        throw IndexOutOfRange(fmt::format("member {} of {}", member_index, population_size));
    MutationDraw d;
    for (std::size_t k = 0; k < d.picks.size(); ++k) {
        std::size_t pick;
        do {
            pick = static_cast<std::size_t>(uniform_index(rng, population_size));
        } while (pick == member_index || std::find(d.picks.begin(), d.picks.begin() + static_cast<std::ptrdiff_t>(k),
                                                   pick) != d.picks.begin() + static_cast<std::ptrdiff_t>(k));
        d.picks[k] = pick;
    }
    for (auto& a : d.alpha)
        a = uniform01(rng);
    return d;
}

std::array<Candidate, 4> mutants_from(const Population& pop, const MutationDraw& draw)
{
    const auto& m = pop.members;
    const auto& a = m.at(draw.picks[0]);
    const auto& b = m.at(draw.picks[1]);
    const auto& c = m.at(draw.picks[2]);
    const auto& d = m.at(draw.picks[3]);
    const auto& e = m.at(draw.picks[4]);
    const auto& best = m.at(pop.best_index);
    const auto& worst = m.at(pop.worst_index);
    const auto [a1, a2, a3] = draw.alpha;

    std::array<Candidate, 4> out;
    out[0].p = a.p + a1 * (b.p - c.p);
    out[0].q = a.q + a1 * (b.q - c.q);
    out[1].p = a.p + a1 * (b.p - c.p) + a2 * (d.p - e.p);
    out[1].q = a.q + a1 * (b.q - c.q) + a2 * (d.q - e.q);
    out[2].p = a.p + a1 * (best.p - a.p) + a2 * (b.p - c.p) + a3 * (d.p - e.p);
    out[2].q = a.q + a1 * (best.q - a.q) + a2 * (b.q - c.q) + a3 * (d.q - e.q);
    out[3].p = a.p + a1 * (best.p - worst.p);
    out[3].q = a.q + a1 * (best.q - worst.q);
    return out;
}

std::array<Candidate, 4> mutate(const Population& pop, std::size_t member_index, Rng& rng)
{
    return mutants_from(pop, draw_mutation(pop.size(), member_index, rng));
}

Candidate crossover(const Candidate& mutant, const Candidate& current)
{
    Candidate trial;
    trial.p = in_unit_interval(mutant.p) ? mutant.p : current.p;
    trial.q = in_unit_interval(mutant.q) ? mutant.q : current.q;
    return trial;
}

SelectionOutcome select(const Candidate& current, std::span<const Candidate, 4> trials, const FitnessOracle& oracle)
{
    SelectionOutcome out;
    out.survivor = current;
    if (!current.fitness || oracle.stochastic) {
        out.survivor.fitness = oracle(current);
        ++out.evaluations;
    }
    out.current_fitness = *out.survivor.fitness;

    double best = out.current_fitness;
    for (std::size_t s = 0; s < trials.size(); ++s) {
        const double f = oracle(trials[s]);
        ++out.evaluations;
        out.trial_fitness[s] = f;
        if (f > best) {
            best = f;
            out.survivor = trials[s];
            out.survivor.fitness = f;
            out.survivor_slot = s + 1;
        }
    }
    return out;
}

std::string to_jsonl(const SelectRecord& r)
{
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["member"] = r.member;
    j["current"] = r.current_fitness;
    j["trials"] = r.trial_fitness;
    j["survivor"] = r.survivor;
    return j.dump();
}

IterationResult run_iteration(Population pop, const FitnessOracle& oracle, const SearchConfig& cfg, Rng& rng,
                              std::size_t iteration, const TraceSink& trace)
{
    IterationResult result;
    for (auto& m : pop.members) {
        if (!m.fitness) {
            m.fitness = oracle(m);
            ++result.evaluations;
        }
    }
    pop.refresh_extremes();

    for (std::size_t i = 0; i < pop.size(); ++i) {
        const auto mutants = mutate(pop, i, rng);
        std::array<Candidate, 4> trials;
        for (std::size_t s = 0; s < trials.size(); ++s) {
            trials[s] = crossover(mutants[s], pop.members[i]);
            if (cfg.mode == SearchMode::black_box_1d)
                trials[s].q = pop.members[i].q;
        }
        auto outcome = select(pop.members[i], trials, oracle);
        result.evaluations += outcome.evaluations;
        pop.members[i] = outcome.survivor;
        pop.refresh_extremes();
        if (trace)
            trace({iteration, i, outcome.current_fitness, outcome.trial_fitness, outcome.survivor_slot});
    }

    result.winner_index = pop.best_index;
    result.winner = pop.members[pop.best_index];
    result.population = std::move(pop);
    return result;
}

// ---------------------------------------------------------------- target space

namespace {

std::vector<bool> default_attackable(std::size_t stream_len, std::vector<bool> attackable)
{
    if (attackable.empty()) {
        attackable.assign(stream_len, true);
        if (stream_len > 0)
            attackable.back() = false;
    }
    if (attackable.size() != stream_len)
        throw LengthMismatch(fmt::format("mask covers {} packages, stream has {}", attackable.size(), stream_len));
    if (stream_len > 0)
        attackable.back() = false;
    return attackable;
}

std::size_t scaled_floor(double u, std::size_t n)
{
    const auto v = static_cast<std::size_t>(std::floor(std::clamp(u, 0.0, 1.0) * static_cast<double>(n)));
    return std::min(v, n - 1);
}

} // namespace

TargetSpace TargetSpace::for_black_box(std::size_t stream_len, std::vector<bool> attackable)
{
    TargetSpace s;
    s.attackable_ = default_attackable(stream_len, std::move(attackable));
    for (std::size_t i = 0; i < s.attackable_.size(); ++i)
        if (s.attackable_[i])
            s.valid_.push_back(i);
    if (s.valid_.empty())
        throw AllPackagesProtected("no attackable package in the stream");
    return s;
}

TargetSpace TargetSpace::for_white_box(const qnn::QuantModel& model, const channel::ChannelConfig& cfg,
                                       std::vector<bool> attackable)
{
    const auto w = cfg.package_width;
    const auto n = (model.parameter_count() + w - 1) / w;
    TargetSpace s = for_black_box(n, std::move(attackable));
    s.package_width_ = w;
    const auto counts = model.layer_weight_counts();
    for (std::size_t l = 0; l < counts.size(); ++l) {
        const auto first = model.weight_offsets()[l] / w;
        const auto last = (model.weight_offsets()[l] + counts[l] - 1) / w;
        bool any = false;
        for (auto pkg = first; pkg <= last && !any; ++pkg)
            any = s.attackable_[pkg];
        if (!any)
            continue;
        s.layer_ids_.push_back(l);
        s.layer_offsets_.push_back(model.weight_offsets()[l]);
        s.layer_counts_.push_back(counts[l]);
    }
    return s;
}

AttackIndex TargetSpace::locate(const Candidate& c, SearchMode mode) const
{
    AttackIndex idx;
    if (mode == SearchMode::black_box_1d || layer_ids_.empty()) {
        idx.package = valid_[scaled_floor(c.p, valid_.size())];
        return idx;
    }
    const auto l = scaled_floor(c.p, layer_ids_.size());
    const auto count = layer_counts_[l];
    idx.layer = layer_ids_[l];
    idx.weight = scaled_floor(c.q, count);
    const auto first = layer_offsets_[l] / package_width_;
    const auto last = (layer_offsets_[l] + count - 1) / package_width_;
    auto pkg = (layer_offsets_[l] + idx.weight) / package_width_;
    if (!attackable_[pkg]) {
        std::size_t found = pkg;
        for (std::size_t d = 1; found == pkg; ++d) {
            if (pkg >= first + d && attackable_[pkg - d])
                found = pkg - d;
            else if (pkg + d <= last && attackable_[pkg + d])
                found = pkg + d;
            else if (pkg < first + d && pkg + d > last)
                break;
        }
        pkg = found;
    }
    idx.package = pkg;
    return idx;
}

std::size_t denormalize(const Candidate& c, const TargetSpace& space, SearchMode mode)
{
    return space.locate(c, mode).package;
}

} // namespace deepdup::pdes
