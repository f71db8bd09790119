#include "fixtures.hpp"

#include "deepdup/error.hpp"
#include "deepdup/orchestrator.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace deepdup;
using namespace deepdup::attack;

namespace {

channel::ChannelConfig channel_cfg(double fp = 1.0)
{
    channel::ChannelConfig c;
    c.min_attack_gap = 2;
    c.success_rate = fp;
    return c;
}

pdes::SearchConfig search_cfg(std::uint64_t seed, std::size_t z, std::size_t max_it, pdes::SearchMode mode)
{
    pdes::SearchConfig s;
    s.rng_seed = seed;
    s.z = z;
    s.max_iterations = max_it;
    s.mode = mode;
    return s;
}

ThreatModel black_box(std::size_t budget = 0)
{
    ThreatModel t;
    t.kind = ThreatKind::black_box;
    t.query_budget = budget;
    return t;
}

/// Forwards to a simulated victim and counts every call independently of it.
class CountingVictim final : public victim::VictimEndpoint {
public:
    explicit CountingVictim(victim::SimulatedVictim& inner) : inner_(inner) {}
    std::size_t transmission_cycles() const override { return inner_.transmission_cycles(); }
    std::vector<bool> attackable_cycles() const override { return inner_.attackable_cycles(); }
    std::size_t min_attack_gap() const override { return inner_.min_attack_gap(); }
    void load_strategy(const channel::StrategyFile& s) override
    {
        ++loads;
        inner_.load_strategy(s);
    }
    qnn::Tensor infer(const qnn::Tensor& batch) override
    {
        ++infers;
        return inner_.infer(batch);
    }
    void reload() override
    {
        ++reloads;
        inner_.reload();
    }
    std::size_t queries() const override { return inner_.queries(); }

    std::size_t loads = 0, infers = 0, reloads = 0;

private:
    victim::SimulatedVictim& inner_;
};

} // namespace

TEST(Fitness, UniformLogitsGiveLogC)
{
    // Zero weights and zero bias: every class scores 0.
    const auto m = qnn::QuantModel({fixtures::dense(64, 4, std::vector<std::int8_t>(256), std::vector<float>(4))}, 4);
    const auto& t = fixtures::toy();
    const auto u = Objective::untargeted(t.test, 64, 4);
    EXPECT_NEAR(fitness_untargeted(m, u), std::log(4.0), 1e-9);
    const auto tg = Objective::targeted(t.test, 2, 32);
    EXPECT_NEAR(fitness_targeted(m, tg), std::log(4.0), 1e-9);
    EXPECT_THROW(fitness_targeted(m, u), ConfigInvalid);
    EXPECT_THROW(fitness_untargeted(m, tg), ConfigInvalid);
}

TEST(Fitness, SaturatedModelNearZero)
{
    // Bias dominates: always class 0, batch all class 0.
    const auto m = qnn::QuantModel({fixtures::dense(64, 4, std::vector<std::int8_t>(256), {1e4f, 0, 0, 0})}, 4);
    const auto tg = Objective::targeted(fixtures::toy().test, 0, 16);
    EXPECT_LT(fitness_targeted(m, tg), 1e-6);
}

TEST(Fitness, MatchesExternalRecomputation)
{
    const auto& t = fixtures::toy();
    victim::ChannelSimulator sim(t.model, channel_cfg(), {}, 1);
    const std::vector<std::size_t> targets{5, 50, 400, 470};
    const auto faulted = sim.deliver(targets).model;
    const auto u = Objective::untargeted(t.test, 256, 4);
    EXPECT_NEAR(fitness(faulted, u),
                qnn::cross_entropy_loss(qnn::forward(faulted, u.eval_batch.features), u.eval_batch.labels), 1e-9);
    const auto tg = Objective::targeted(t.test, 1, 64);
    for (int l : tg.eval_batch.labels)
        EXPECT_EQ(l, 1);
    EXPECT_NEAR(fitness(faulted, tg),
                qnn::cross_entropy_loss(qnn::forward(faulted, tg.eval_batch.features), tg.eval_batch.labels), 1e-9);
}

TEST(Asr, Examples)
{
    const auto& t = fixtures::toy();
    Objective::targeted(t.test, 3, 10);
    const auto never_zero = qnn::QuantModel({fixtures::dense(64, 4, std::vector<std::int8_t>(256), {-1, 1, 0, 0})}, 4);
    EXPECT_EQ(compute_asr(never_zero, 0, t.test), 1.0);
    const auto always_zero = qnn::QuantModel({fixtures::dense(64, 4, std::vector<std::int8_t>(256), {1, 0, 0, 0})}, 4);
    EXPECT_EQ(compute_asr(always_zero, 0, t.test), 0.0);
    EXPECT_THROW(compute_asr(always_zero, 0, t.test.without_label(0)), NoTargetSamples);
    EXPECT_THROW(Objective::targeted(t.test.without_label(2), 2, 10), NoTargetSamples);
}

TEST(Asr, MatchesManualCount)
{
    const auto& t = fixtures::toy();
    victim::ChannelSimulator sim(t.model, channel_cfg(), {}, 1);
    const std::vector<std::size_t> targets{10, 100, 384, 450, 481, 490};
    const auto faulted = sim.deliver(targets).model;
    const auto pred = qnn::predict(faulted, t.test.features);
    std::size_t n = 0, miss = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (t.test.labels[i] == 2) {
            ++n;
            miss += pred[i] != 2;
        }
    EXPECT_EQ(compute_asr(faulted, 2, t.test), static_cast<double>(miss) / n);
}

TEST(Objective, DefaultsAndValidation)
{
    const auto& t = fixtures::toy();
    EXPECT_NEAR(Objective::untargeted(t.test, 256, 4).stop_threshold, 0.26, 1e-12);
    EXPECT_EQ(Objective::targeted(t.test, 1, 64).stop_threshold, 0.99);
    EXPECT_EQ(Objective::untargeted(t.test, 100, 4).eval_batch.size(), 100u);
    EXPECT_THROW(objective_kind_from_string("sideways"), ConfigInvalid);
    EXPECT_THROW(threat_kind_from_string("grey_box"), ConfigInvalid);
    ThreatModel th;
    th.assumed_fp = 1.2;
    EXPECT_THROW(th.validate(), ConfigInvalid);
}

TEST(WhiteBox, ZeroRateNeverSucceeds)
{
    const auto& t = fixtures::toy();
    const auto obj = Objective::untargeted(t.test, 256, 4, 0.30);
    ThreatModel th;
    th.assumed_fp = 0.0;
    const auto r = white_box_attack(t.model, obj, th, search_cfg(1, 10, 3, pdes::SearchMode::white_box_2d),
                                    channel_cfg(0.0), {}, t.test);
    EXPECT_FALSE(r.succeeded());
    EXPECT_EQ(r.status, AttackStatus::budget_exhausted);
    EXPECT_EQ(r.post_ta, r.clean_ta);
    EXPECT_EQ(r.iterations_used, 3u);
    const double clean = fitness(t.model, obj);
    for (const auto& rec : r.trajectory) {
        EXPECT_EQ(rec.search_fitness, clean);
        EXPECT_EQ(rec.deployed_fitness, clean);
    }
}

TEST(WhiteBox, ReportInvariants)
{
    const auto& t = fixtures::toy();
    const auto obj = Objective::untargeted(t.test, 256, 4, 0.30);
    const auto r = white_box_attack(t.model, obj, {}, search_cfg(2, 20, 25, pdes::SearchMode::white_box_2d),
                                    channel_cfg(), {}, t.test);
    EXPECT_EQ(r.winners.size(), r.iterations_used);
    EXPECT_EQ(r.trajectory.size(), r.iterations_used);
    EXPECT_GE(r.fitness_trajectory().back(), r.fitness_trajectory().front());
    EXPECT_EQ(r.effective_targets, channel::compatible_subset(r.winners, 496, 2));
    EXPECT_EQ(r.fault_log.size(), r.effective_targets.size());
    EXPECT_LT(r.post_ta, r.clean_ta);
    // Deployment at full rate: each iteration needs one delivery unless it misses the threshold.
    std::size_t deployments = 0;
    for (const auto& rec : r.trajectory)
        deployments += rec.deployment_attempts;
    EXPECT_EQ(r.queries_used, deployments);
}

TEST(WhiteBox, WinnerSetDominatesPrefixes)
{
    const auto& t = fixtures::toy();
    const auto obj = Objective::untargeted(t.test, 256, 4, 0.0001);
    const auto r = white_box_attack(t.model, obj, {}, search_cfg(3, 20, 3, pdes::SearchMode::white_box_2d),
                                    channel_cfg(), {}, t.test);
    ASSERT_EQ(r.winners.size(), 3u);
    victim::ChannelSimulator sim(t.model, channel_cfg(), {}, 9);
    const auto deployed = [&](std::size_t k) {
        const std::vector<std::size_t> prefix(r.winners.begin(), r.winners.begin() + static_cast<long>(k));
        return fitness(sim.deliver(channel::compatible_subset(prefix, sim.stream_length(), 2)).model, obj);
    };
    const double full = deployed(3);
    for (std::size_t k = 0; k < 3; ++k)
        EXPECT_LE(deployed(k), full + 1e-12);
}

TEST(WhiteBox, Deterministic)
{
    const auto& t = fixtures::toy();
    const auto obj = Objective::targeted(t.test, 1, 64);
    const auto run = [&] {
        return white_box_attack(t.model, obj, {}, search_cfg(4, 10, 5, pdes::SearchMode::white_box_2d),
                                channel_cfg(0.8), {}, t.test);
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.winners, b.winners);
    EXPECT_EQ(a.fitness_trajectory(), b.fitness_trajectory());
    EXPECT_EQ(a.fault_log, b.fault_log);
}

TEST(WhiteBox, RejectsBlackBoxSearchMode)
{
    const auto& t = fixtures::toy();
    const auto obj = Objective::untargeted(t.test, 64, 4);
    EXPECT_THROW(white_box_attack(t.model, obj, {}, search_cfg(1, 10, 1, pdes::SearchMode::black_box_1d),
                                  channel_cfg(), {}, t.test),
                 ConfigInvalid);
}

TEST(BlackBox, QueryAccountingOracle)
{
    const auto& t = fixtures::toy();
    victim::SimulatedVictim inner(victim::ChannelSimulator(t.model, channel_cfg(0.85), {}, 3));
    CountingVictim v(inner);
    const std::size_t z = 8;
    const auto obj = Objective::targeted(t.test, 3, 64);
    const auto r = black_box_attack(v, obj, black_box(), search_cfg(5, z, 6, pdes::SearchMode::black_box_1d), t.test);
    std::size_t deployments = 0;
    for (const auto& rec : r.trajectory)
        deployments += rec.deployment_attempts;
    // Each iteration: z initial evaluations, 4 trials per member, then the deployment checks.
    EXPECT_EQ(r.queries_used, r.iterations_used * (z + 4 * z) + deployments);
    EXPECT_EQ(r.evaluations, r.iterations_used * 5 * z);
    // Two further inferences measure the clean and attacked test sets.
    EXPECT_EQ(v.infers, r.queries_used + 2);
    EXPECT_EQ(r.trajectory.back().queries, r.queries_used);
}

TEST(BlackBox, InformationBarrier)
{
    const auto& t = fixtures::toy();
    victim::SimulatedVictim v(victim::ChannelSimulator(t.model, channel_cfg(0.85), {}, 3));
    const auto obj = Objective::untargeted(t.test, 256, 4, 0.30);
    black_box_attack(v, obj, black_box(), search_cfg(1, 10, 3, pdes::SearchMode::black_box_1d), t.test);
    EXPECT_EQ(v.weight_reads(), 0u);
    v.loaded_model();
    EXPECT_EQ(v.weight_reads(), 1u);
}

TEST(BlackBox, QueryBudgetAbortRestoresVictim)
{
    const auto& t = fixtures::toy();
    victim::SimulatedVictim v(victim::ChannelSimulator(t.model, channel_cfg(), {}, 3));
    const auto clean = qnn::accuracy(v.loaded_model(), t.test);
    const auto obj = Objective::untargeted(t.test, 256, 4, 0.01);
    const auto r = black_box_attack(v, obj, black_box(37), search_cfg(1, 10, 50, pdes::SearchMode::black_box_1d), t.test);
    EXPECT_EQ(r.status, AttackStatus::query_budget_exhausted);
    EXPECT_EQ(r.queries_used, 37u);
    EXPECT_EQ(qnn::accuracy(v.loaded_model(), t.test), clean);
    EXPECT_EQ(v.loaded_model(), t.model);
}

TEST(BlackBox, RequiresBlackBoxThreat)
{
    const auto& t = fixtures::toy();
    victim::SimulatedVictim v(victim::ChannelSimulator(t.model, channel_cfg(), {}, 3));
    const auto obj = Objective::untargeted(t.test, 64, 4);
    EXPECT_THROW(black_box_attack(v, obj, {}, search_cfg(1, 10, 1, pdes::SearchMode::black_box_1d), t.test),
                 ConfigInvalid);
}

TEST(RandomBaseline, NoAttacksEqualsClean)
{
    const auto& t = fixtures::toy();
    victim::ChannelSimulator dev(t.model, channel_cfg(), {}, 1);
    const auto obj = Objective::targeted(t.test, 1, 64);
    const auto r = random_attack_baseline(dev, obj, 0, t.test, 1);
    EXPECT_TRUE(r.winners.empty());
    EXPECT_EQ(r.post_ta, r.clean_ta);
    EXPECT_EQ(r.asr, r.clean_asr);
}

TEST(RandomBaseline, RespectsGapAndCount)
{
    const auto& t = fixtures::toy();
    victim::ChannelSimulator dev(t.model, channel_cfg(), {}, 1);
    const auto obj = Objective::untargeted(t.test, 256, 4);
    const auto r = random_attack_baseline(dev, obj, 100, t.test, 7);
    EXPECT_EQ(r.winners.size(), 100u);
    EXPECT_EQ(channel::compatible_subset(r.winners, dev.stream_length(), 2), r.winners);
}

TEST(Victim, ReloadDeliversCleanModel)
{
    const auto& t = fixtures::toy();
    defense::DefenseConfig d;
    d.kind = defense::DefenseKind::shuffle_random;
    victim::SimulatedVictim v(victim::ChannelSimulator(t.model, channel_cfg(), d, 2));
    const std::vector<std::size_t> targets{3, 9};
    v.load_strategy(channel::build_strategy(targets, v.transmission_cycles(), channel_cfg()));
    EXPECT_FALSE(v.last_permutation().is_identity());
    v.reload();
    EXPECT_EQ(v.loaded_model(), t.model);
    EXPECT_EQ(v.queries(), 0u);
}
