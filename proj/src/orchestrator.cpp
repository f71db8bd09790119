#include "deepdup/orchestrator.hpp"

#include "deepdup/error.hpp"
#include "deepdup/rng.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <functional>
#include <numeric>

namespace deepdup::attack {

std::string_view to_string(ObjectiveKind kind) noexcept
{
    return kind == ObjectiveKind::untargeted ? "untargeted" : "targeted";
}

ObjectiveKind objective_kind_from_string(std::string_view name)
{
    if (name == "untargeted")
        return ObjectiveKind::untargeted;
    if (name == "targeted")
        return ObjectiveKind::targeted;
    throw ConfigInvalid("objective.kind", fmt::format("unknown objective '{}'", name));
}

std::string_view to_string(ThreatKind kind) noexcept
{
    return kind == ThreatKind::white_box ? "white_box" : "black_box";
}

ThreatKind threat_kind_from_string(std::string_view name)
{
    if (name == "white_box")
        return ThreatKind::white_box;
    if (name == "black_box")
        return ThreatKind::black_box;
    throw ConfigInvalid("threat.kind", fmt::format("unknown threat model '{}'", name));
}

std::string_view to_string(AttackStatus status) noexcept
{
    switch (status) {
    case AttackStatus::success:
        return "success";
    case AttackStatus::budget_exhausted:
        return "budget_exhausted";
    case AttackStatus::query_budget_exhausted:
        return "query_budget_exhausted";
    }
    return "?";
}

Objective Objective::untargeted(const qnn::Dataset& pool, std::size_t batch, std::size_t num_classes,
                                std::optional<double> threshold)
{
    Objective o;
    o.kind = ObjectiveKind::untargeted;
    o.eval_batch = pool.take(std::min(batch, pool.size()));
    o.stop_threshold = threshold.value_or(1.0 / static_cast<double>(num_classes) + 0.01);
    return o;
}

Objective Objective::targeted(const qnn::Dataset& pool, int target, std::size_t batch,
                              std::optional<double> threshold)
{
    auto own = pool.with_label(target);
    if (own.empty())
        throw NoTargetSamples(fmt::format("no samples of class {}", target));
    Objective o;
    o.kind = ObjectiveKind::targeted;
    o.target_class = target;
    o.eval_batch = own.take(std::min(batch, own.size()));
    o.stop_threshold = threshold.value_or(0.99);
    return o;
}

void Objective::validate() const
{
    if (eval_batch.empty())
        throw EmptyDataset("objective eval batch is empty");
    if (!(stop_threshold >= 0.0 && stop_threshold <= 1.0))
        throw ConfigInvalid("objective.stop_threshold", fmt::format("{} is outside [0, 1]", stop_threshold));
    if (kind == ObjectiveKind::targeted) {
        if (target_class < 0)
            throw ConfigInvalid("objective.target_class", "targeted objective needs a target class");
        for (int l : eval_batch.labels)
            if (l != target_class)
                throw ConfigInvalid("objective.eval_batch",
                                    fmt::format("label {} in a batch for target {}", l, target_class));
    }
}

void ThreatModel::validate() const
{
    if (!(assumed_fp >= 0.0 && assumed_fp <= 1.0))
        throw ConfigInvalid("threat.assumed_fp", fmt::format("{} is outside [0, 1]", assumed_fp));
}

std::vector<double> AttackReport::fitness_trajectory() const
{
    std::vector<double> out;
    out.reserve(trajectory.size());
    for (const auto& r : trajectory)
        out.push_back(r.search_fitness);
    return out;
}

double fitness_from_logits(const qnn::Tensor& logits, const Objective& objective)
{
    return qnn::cross_entropy_loss(logits, objective.eval_batch.labels);
}

double fitness_untargeted(const qnn::QuantModel& model, const Objective& objective)
{
    if (objective.kind != ObjectiveKind::untargeted)
        throw ConfigInvalid("objective.kind", "expected an untargeted objective");
    return fitness_from_logits(qnn::forward(model, objective.eval_batch.features), objective);
}

double fitness_targeted(const qnn::QuantModel& model, const Objective& objective)
{
    if (objective.kind != ObjectiveKind::targeted)
        throw ConfigInvalid("objective.kind", "expected a targeted objective");
    return fitness_from_logits(qnn::forward(model, objective.eval_batch.features), objective);
}

double fitness(const qnn::QuantModel& model, const Objective& objective)
{
    return objective.kind == ObjectiveKind::untargeted ? fitness_untargeted(model, objective)
                                                       : fitness_targeted(model, objective);
}

double asr_from_logits(const qnn::Tensor& logits, int target_class, std::span<const int> labels)
{
    const auto pred = qnn::argmax_rows(logits);
    std::size_t total = 0;
    std::size_t missed = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != target_class)
            continue;
        ++total;
        missed += pred[i] != target_class;
    }
    if (total == 0)
        throw NoTargetSamples(fmt::format("no samples of class {}", target_class));
    return static_cast<double>(missed) / static_cast<double>(total);
}

double compute_asr(const qnn::QuantModel& model, int target_class, const qnn::Dataset& dataset)
{
    return asr_from_logits(qnn::forward(model, dataset.features), target_class, dataset.labels);
}

double stop_metric(const qnn::Tensor& logits, const Objective& objective)
{
    if (objective.kind == ObjectiveKind::untargeted)
        return qnn::accuracy_from_logits(logits, objective.eval_batch.labels);
    return asr_from_logits(logits, objective.target_class, objective.eval_batch.labels);
}

bool objective_met(double metric, const Objective& objective)
{
    return objective.kind == ObjectiveKind::untargeted ? metric <= objective.stop_threshold
                                                       : metric >= objective.stop_threshold;
}

namespace {

struct QueryBudgetHit {};

void fill_metrics(AttackReport& r, const qnn::Tensor& clean, const qnn::Tensor& post, const qnn::Dataset& test,
                  const Objective& objective)
{
    r.clean_ta = qnn::accuracy_from_logits(clean, test.labels);
    r.post_ta = qnn::accuracy_from_logits(post, test.labels);
    if (objective.kind != ObjectiveKind::targeted)
        return;
    const int t = objective.target_class;
    r.clean_asr = asr_from_logits(clean, t, test.labels);
    r.asr = asr_from_logits(post, t, test.labels);
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (test.labels[i] != t)
            others.push_back(i);
    if (others.empty())
        return;
    const auto others_labels = test.subset(others).labels;
    r.clean_nontarget_ta = qnn::accuracy_from_logits(clean.gather_rows(others), others_labels);
    r.post_nontarget_ta = qnn::accuracy_from_logits(post.gather_rows(others), others_labels);
}

/// Candidate triggers: accumulated winners first, then the new package.
std::vector<std::size_t> with_candidate(const std::vector<std::size_t>& winners, std::size_t pkg, std::size_t len,
                                        std::size_t gap)
{
    auto all = winners;
    all.push_back(pkg);
    return channel::compatible_subset(all, len, gap);
}

channel::StrategyFile strategy_for(std::span<const std::size_t> targets, std::size_t len, std::size_t gap)
{
    channel::ChannelConfig cfg;
    cfg.min_attack_gap = gap;
    return channel::build_strategy(targets, len, cfg);
}

} // namespace

AttackReport white_box_attack(victim::ChannelSimulator& replica, victim::ChannelSimulator& device,
                              const Objective& objective, const pdes::SearchConfig& search,
                              const qnn::Dataset& test, const AttackOptions& options)
{
    objective.validate();
    search.validate();
    if (search.mode != pdes::SearchMode::white_box_2d)
        throw ConfigInvalid("search.mode", "white-box attacks search (layer, weight) pairs");
    if (replica.stream_length() != device.stream_length())
        throw LengthMismatch("replica and device streams differ in length");

    AttackReport report;
    report.objective = objective.kind;
    report.threat = ThreatKind::white_box;
    report.target_class = objective.target_class;
    report.seed = search.rng_seed;

    const auto len = device.stream_length();
    const auto gap = device.config().min_attack_gap;
    const auto space = pdes::TargetSpace::for_white_box(replica.clean_model(), replica.config(), replica.attackable());
    auto rng = make_rng(search.rng_seed, 3);

    pdes::FitnessOracle oracle;
    oracle.stochastic = replica.config().success_rate < 1.0;
    oracle.evaluate = [&](const pdes::Candidate& c) {
        const auto pkg = space.locate(c, search.mode).package;
        const auto targets = with_candidate(report.winners, pkg, len, gap);
        return fitness(replica.deliver(strategy_for(targets, len, gap)).model, objective);
    };

    auto deployed = device.deliver(strategy_for({}, len, gap));
    for (std::size_t it = 0; it < search.max_iterations; ++it) {
        auto result = pdes::run_iteration(pdes::init_population(search, rng), oracle, search, rng, it, options.trace);
        report.evaluations += result.evaluations;
        IterationRecord rec;
        rec.iteration = it;
        rec.winner_package = space.locate(result.winner, search.mode).package;
        rec.search_fitness = *result.winner.fitness;
        report.winners.push_back(rec.winner_package);
        report.effective_targets = channel::compatible_subset(report.winners, len, gap);

        bool met = false;
        for (std::size_t attempt = 0; attempt <= options.deployment_retries && !met; ++attempt) {
            deployed = device.deliver(strategy_for(report.effective_targets, len, gap));
            ++report.queries_used;
            ++rec.deployment_attempts;
            const auto logits = qnn::forward(deployed.model, objective.eval_batch.features);
            rec.deployed_fitness = fitness_from_logits(logits, objective);
            rec.deployed_metric = stop_metric(logits, objective);
            met = objective_met(rec.deployed_metric, objective);
        }
        rec.queries = report.queries_used;
        report.trajectory.push_back(rec);
        report.iterations_used = it + 1;
        if (met) {
            report.status = AttackStatus::success;
            break;
        }
    }

    report.fault_log = deployed.log;
    report.permutation = deployed.permutation;
    fill_metrics(report, qnn::forward(device.clean_model(), test.features),
                 qnn::forward(deployed.model, test.features), test, objective);
    return report;
}

AttackReport white_box_attack(const qnn::QuantModel& model, const Objective& objective, const ThreatModel& threat,
                              const pdes::SearchConfig& search, const channel::ChannelConfig& channel,
                              const defense::DefenseConfig& defense, const qnn::Dataset& test,
                              const AttackOptions& options)
{
    threat.validate();
    if (threat.kind != ThreatKind::white_box)
        throw ConfigInvalid("threat.kind", "white_box_attack needs a white_box threat model");
    auto assumed = channel;
    assumed.success_rate = threat.assumed_fp;
    victim::ChannelSimulator replica(model, assumed, defense, mix_seed(search.rng_seed, 1));
    victim::ChannelSimulator device(model, channel, defense, mix_seed(search.rng_seed, 2));
    return white_box_attack(replica, device, objective, search, test, options);
}

AttackReport black_box_attack(victim::VictimEndpoint& victim, const Objective& objective, const ThreatModel& threat,
                              const pdes::SearchConfig& search, const qnn::Dataset& test,
                              const AttackOptions& options)
{
    objective.validate();
    threat.validate();
    search.validate();
    if (threat.kind != ThreatKind::black_box)
        throw ConfigInvalid("threat.kind", "black_box_attack needs a black_box threat model");
    if (search.mode != pdes::SearchMode::black_box_1d)
        throw ConfigInvalid("search.mode", "black-box attacks search the flattened 1-D index");

    AttackReport report;
    report.objective = objective.kind;
    report.threat = ThreatKind::black_box;
    report.target_class = objective.target_class;
    report.seed = search.rng_seed;

    const auto len = victim.transmission_cycles();
    const auto gap = victim.min_attack_gap();
    const auto space = pdes::TargetSpace::for_black_box(len, victim.attackable_cycles());
    auto rng = make_rng(search.rng_seed, 3);

    victim.reload();
    const auto clean_test = victim.infer(test.features);
    const auto start = victim.queries();
    const auto spent = [&] { return victim.queries() - start; };
    const auto query = [&](const std::vector<std::size_t>& targets) {
        if (threat.query_budget > 0 && spent() >= threat.query_budget)
            throw QueryBudgetHit{};
        victim.load_strategy(strategy_for(targets, len, gap));
        return victim.infer(objective.eval_batch.features);
    };

    pdes::FitnessOracle oracle;
    // The true success rate is hidden, so cached fitnesses are trusted.
    oracle.stochastic = false;
    oracle.evaluate = [&](const pdes::Candidate& c) {
        const auto pkg = space.locate(c, search.mode).package;
        return fitness_from_logits(query(with_candidate(report.winners, pkg, len, gap)), objective);
    };
    oracle.restore = [&] { victim.reload(); };

    bool deployed_loaded = false;
    try {
        for (std::size_t it = 0; it < search.max_iterations; ++it) {
            auto result =
                pdes::run_iteration(pdes::init_population(search, rng), oracle, search, rng, it, options.trace);
            report.evaluations += result.evaluations;
            IterationRecord rec;
            rec.iteration = it;
            rec.winner_package = space.locate(result.winner, search.mode).package;
            rec.search_fitness = *result.winner.fitness;
            report.winners.push_back(rec.winner_package);
            report.effective_targets = channel::compatible_subset(report.winners, len, gap);
            report.iterations_used = it + 1;

            bool met = false;
            for (std::size_t attempt = 0; attempt <= options.deployment_retries && !met; ++attempt) {
                const auto logits = query(report.effective_targets);
                deployed_loaded = true;
                ++rec.deployment_attempts;
                rec.deployed_fitness = fitness_from_logits(logits, objective);
                rec.deployed_metric = stop_metric(logits, objective);
                met = objective_met(rec.deployed_metric, objective);
            }
            rec.queries = spent();
            report.trajectory.push_back(rec);
            if (met) {
                report.status = AttackStatus::success;
                break;
            }
        }
    } catch (const QueryBudgetHit&) {
        report.status = AttackStatus::query_budget_exhausted;
        deployed_loaded = false;
    }
    report.queries_used = spent();

    if (!deployed_loaded)
        victim.load_strategy(strategy_for(report.effective_targets, len, gap));
    const auto post_test = victim.infer(test.features);
    victim.reload();
    fill_metrics(report, clean_test, post_test, test, objective);
    return report;
}

AttackReport random_attack_baseline(victim::ChannelSimulator& device, const Objective& objective,
                                    std::size_t n_attacks, const qnn::Dataset& test, std::uint64_t seed)
{
    objective.validate();
    AttackReport report;
    report.objective = objective.kind;
    report.target_class = objective.target_class;
    report.seed = seed;

    const auto len = device.stream_length();
    const auto gap = device.config().min_attack_gap;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < len; ++i)
        if (device.attackable()[i])
            pool.push_back(i);
    auto rng = make_rng(seed, 5);
    for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[uniform_index(rng, i)]);
    for (auto pkg : pool) {
        if (report.winners.size() >= n_attacks)
            break;
        auto next = report.winners;
        next.push_back(pkg);
        if (channel::compatible_subset(next, len, gap).size() == next.size())
            report.winners = std::move(next);
    }
    report.effective_targets = report.winners;
    report.iterations_used = report.winners.size();

    auto deployed = device.deliver(strategy_for(report.winners, len, gap));
    report.queries_used = 1;
    const auto logits = qnn::forward(deployed.model, objective.eval_batch.features);
    report.status = objective_met(stop_metric(logits, objective), objective) ? AttackStatus::success
                                                                             : AttackStatus::budget_exhausted;
    report.fault_log = deployed.log;
    report.permutation = deployed.permutation;
    fill_metrics(report, qnn::forward(device.clean_model(), test.features),
                 qnn::forward(deployed.model, test.features), test, objective);
    return report;
}

} // namespace deepdup::attack
