#include "fixtures.hpp"

#include "deepdup/error.hpp"
#include "deepdup/orchestrator.hpp"
#include "deepdup/pdes.hpp"
#include "deepdup/train.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

using namespace deepdup;
using namespace deepdup::pdes;

namespace {

Population with_ps(std::vector<double> ps, std::vector<double> fitness = {})
{
    Population pop;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Candidate c;
        c.p = ps[i];
        c.q = 1.0 - ps[i];
        if (i < fitness.size())
            c.fitness = fitness[i];
        pop.members.push_back(c);
    }
    pop.refresh_extremes();
    return pop;
}

SearchConfig config(std::size_t z, SearchMode mode = SearchMode::black_box_1d, std::uint64_t seed = 1)
{
    SearchConfig c;
    c.z = z;
    c.mode = mode;
    c.rng_seed = seed;
    return c;
}

Candidate at(double p, double q = 0.0)
{
    Candidate c;
    c.p = p;
    c.q = q;
    return c;
}

} // namespace

TEST(Init, RangeAndDeterminism)
{
    auto rng = make_rng(1);
    const auto pop = init_population(config(6, SearchMode::white_box_2d), rng);
    ASSERT_EQ(pop.size(), 6u);
    for (const auto& c : pop.members) {
        EXPECT_GE(c.p, 0.0);
        EXPECT_LT(c.p, 1.0);
        EXPECT_GE(c.q, 0.0);
        EXPECT_LT(c.q, 1.0);
        EXPECT_FALSE(c.fitness.has_value());
    }
    auto r1 = make_rng(9), r2 = make_rng(9);
    const auto a = init_population(config(20), r1), b = init_population(config(20), r2);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(a.members[i].p, b.members[i].p);
        EXPECT_EQ(a.members[i].q, 0.0);
    }
}

TEST(Init, KolmogorovSmirnovAgainstUniform)
{
    auto rng = make_rng(4);
    const auto pop = init_population(config(500), rng);
    std::vector<double> ps;
    for (const auto& c : pop.members)
        ps.push_back(c.p);
    std::sort(ps.begin(), ps.end());
    double d = 0.0;
    const double n = static_cast<double>(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i)
        d = std::max({d, (i + 1) / n - ps[i], ps[i] - i / n});
    EXPECT_LT(d, 0.1);
}

TEST(SearchConfig, Validation)
{
    EXPECT_THROW(config(5).validate(), ConfigInvalid);
    EXPECT_NO_THROW(config(6).validate());
    auto c = config(6);
    c.max_iterations = 0;
    EXPECT_THROW(c.validate(), ConfigInvalid);
}

TEST(Mutation, StrategyOneArithmetic)
{
    // a=0.2, b=0.6, c=0.4 at members 1..3; member 0 is current.
    const auto pop = with_ps({0.9, 0.2, 0.6, 0.4, 0.1, 0.7}, {0, 1, 2, 3, 4, 5});
    MutationDraw d;
    d.picks = {1, 2, 3, 4, 5};
    d.alpha = {0.5, 0.25, 0.75};
    const auto m = mutants_from(pop, d);
    EXPECT_NEAR(m[0].p, 0.3, 1e-15);
    EXPECT_NEAR(m[1].p, 0.2 + 0.5 * (0.6 - 0.4) + 0.25 * (0.1 - 0.7), 1e-15);
    // best is member 5 (p 0.7), worst member 0 (p 0.9).
    EXPECT_NEAR(m[2].p, 0.2 + 0.5 * (0.7 - 0.2) + 0.25 * (0.6 - 0.4) + 0.75 * (0.1 - 0.7), 1e-15);
    EXPECT_NEAR(m[3].p, 0.2 + 0.5 * (0.7 - 0.9), 1e-15);
    EXPECT_NEAR(m[3].q, 0.8 + 0.5 * (0.3 - 0.1), 1e-15);
}

TEST(Mutation, StrategyFourDegenerate)
{
    auto rng = make_rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        // Equal fitness everywhere: best and worst are both member 0.
        auto pop = with_ps({0.5, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8}, std::vector<double>(7, 1.0));
        ASSERT_EQ(pop.best_index, pop.worst_index);
        const auto d = draw_mutation(pop.size(), 3, rng);
        const auto m = mutants_from(pop, d);
        EXPECT_EQ(m[3].p, pop.members[d.picks[0]].p);
        EXPECT_EQ(m[3].q, pop.members[d.picks[0]].q);
    }
}

TEST(Mutation, DrawsDistinctPicksExcludingCurrent)
{
    auto rng = make_rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t member = trial % 6;
        const auto d = draw_mutation(6, member, rng);
        std::set<std::size_t> s(d.picks.begin(), d.picks.end());
        EXPECT_EQ(s.size(), 5u);
        EXPECT_FALSE(s.count(member));
        for (double a : d.alpha) {
            EXPECT_GE(a, 0.0);
            EXPECT_LT(a, 1.0);
        }
    }
    EXPECT_THROW(draw_mutation(5, 0, rng), PopulationTooSmall);
}

TEST(Crossover, Examples)
{
    const auto t = crossover(at(1.2, 0.5), at(0.3, 0.9));
    EXPECT_EQ(t.p, 0.3);
    EXPECT_EQ(t.q, 0.5);
    const auto in = crossover(at(0.1, 0.7), at(0.3, 0.9));
    EXPECT_EQ(in.p, 0.1);
    EXPECT_EQ(in.q, 0.7);
    const auto out = crossover(at(-0.1, 1.7), at(0.3, 0.9));
    EXPECT_EQ(out.p, 0.3);
    EXPECT_EQ(out.q, 0.9);
    // Boundaries are in range.
    const auto edge = crossover(at(0.0, 1.0), at(0.3, 0.9));
    EXPECT_EQ(edge.p, 0.0);
    EXPECT_EQ(edge.q, 1.0);
    EXPECT_FALSE(crossover(at(0.5), at(0.2)).fitness.has_value());
}

TEST(Select, PicksTrialOne)
{
    const std::array<double, 4> f{2.0, 1.0, 0.5, 0.3};
    std::array<Candidate, 4> trials{at(0.1), at(0.2), at(0.3), at(0.4)};
    int restores = 0;
    FitnessOracle oracle;
    oracle.evaluate = [&](const Candidate& c) { return f[static_cast<std::size_t>(std::lround(c.p * 10)) - 1]; };
    oracle.restore = [&] { ++restores; };
    auto current = at(0.9);
    current.fitness = 1.5;
    const auto out = select(current, trials, oracle);
    EXPECT_EQ(out.survivor_slot, 1u);
    EXPECT_EQ(out.survivor.p, 0.1);
    EXPECT_EQ(*out.survivor.fitness, 2.0);
    EXPECT_EQ(out.evaluations, 4u);
    EXPECT_EQ(restores, 4);
}

TEST(Select, TiesKeepCurrentThenLowestStrategy)
{
    std::array<Candidate, 4> trials{at(0.1), at(0.2), at(0.3), at(0.4)};
    FitnessOracle flat;
    flat.evaluate = [](const Candidate&) { return 1.0; };
    auto current = at(0.9);
    current.fitness = 1.0;
    EXPECT_EQ(select(current, trials, flat).survivor_slot, 0u);

    FitnessOracle two_best;
    two_best.evaluate = [](const Candidate& c) { return c.p > 0.25 ? 3.0 : 0.0; };
    EXPECT_EQ(select(current, trials, two_best).survivor_slot, 3u);
}

TEST(Select, ExhaustiveArgmax)
{
    auto rng = make_rng(11);
    FitnessOracle oracle;
    // Coarse values force frequent ties.
    oracle.evaluate = [](const Candidate& c) { return std::floor(c.p * 4.0); };
    for (int trial = 0; trial < 2000; ++trial) {
        std::array<Candidate, 4> trials;
        for (auto& t : trials)
            t = at(uniform01(rng));
        auto current = at(uniform01(rng));
        current.fitness = std::floor(uniform01(rng) * 4.0);
        const auto out = select(current, trials, oracle);
        double best = *current.fitness;
        std::size_t slot = 0;
        for (std::size_t k = 0; k < 4; ++k)
            if (oracle.evaluate(trials[k]) > best) {
                best = oracle.evaluate(trials[k]);
                slot = k + 1;
            }
        EXPECT_EQ(out.survivor_slot, slot);
        EXPECT_EQ(*out.survivor.fitness, best);
    }
}

TEST(RunIteration, ConstantOracleKeepsMemberZero)
{
    auto rng = make_rng(1);
    const auto cfg = config(8);
    auto pop = init_population(cfg, rng);
    FitnessOracle oracle;
    oracle.evaluate = [](const Candidate&) { return 0.5; };
    const auto before = pop;
    const auto r = run_iteration(pop, oracle, cfg, rng);
    EXPECT_EQ(r.winner_index, 0u);
    EXPECT_EQ(r.winner.p, before.members[0].p);
    for (std::size_t i = 0; i < pop.size(); ++i)
        EXPECT_EQ(r.population.members[i].p, before.members[i].p);
    EXPECT_EQ(r.evaluations, 8u + 4u * 8u);
}

TEST(RunIteration, MonotoneBestAndTrace)
{
    auto rng = make_rng(5);
    const auto cfg = config(10, SearchMode::white_box_2d);
    FitnessOracle oracle;
    oracle.evaluate = [](const Candidate& c) { return std::sin(7 * c.p) + std::cos(5 * c.q); };
    std::vector<SelectRecord> trace;
    auto pop = init_population(cfg, rng);
    double best = -1e9;
    for (std::size_t it = 0; it < 3; ++it) {
        auto r = run_iteration(pop, oracle, cfg, rng, it, [&](const SelectRecord& s) { trace.push_back(s); });
        EXPECT_GE(r.population.best_fitness(), best);
        best = r.population.best_fitness();
        EXPECT_EQ(*r.winner.fitness, best);
        for (const auto& m : r.population.members) {
            EXPECT_GE(m.p, 0.0);
            EXPECT_LE(m.p, 1.0);
            EXPECT_GE(m.q, 0.0);
            EXPECT_LE(m.q, 1.0);
        }
        pop = r.population;
    }
    ASSERT_EQ(trace.size(), 30u);
    EXPECT_EQ(trace[10].iteration, 1u);
    EXPECT_EQ(trace[10].member, 0u);
    const auto j = nlohmann::json::parse(to_jsonl(trace[3]));
    EXPECT_EQ(j.at("member"), 3);
    EXPECT_EQ(j.at("trials").size(), 4u);
}

TEST(RunIteration, FindsDominantPackage)
{
    // 16 -> 4 dense classifier: 64 weights in 16 packages.
    auto rng = make_rng(1);
    std::vector<float> x;
    std::vector<int> y;
    for (int n = 0; n < 400; ++n) {
        const int c = static_cast<int>(uniform_index(rng, 4));
        y.push_back(c);
        for (int k = 0; k < 16; ++k)
            x.push_back(static_cast<float>((k % 4 == c) + 0.3 * standard_normal(rng)));
    }
    const qnn::Dataset ds{qnn::Tensor({400, 16}, x), y};
    const auto m = qnn::train_model(qnn::Architecture{"d64", 1, 1, 16, {{qnn::LayerKind::dense, 4}}, 4}, ds, {});
    ASSERT_EQ(m.parameter_count(), 64u);

    // Exhaustive landscape: untargeted fitness after duplicating each package once.
    const auto objective = attack::Objective::untargeted(ds, 256, 4);
    channel::ChannelConfig ch;
    const auto clean = channel::serialize(m, ch);
    std::vector<double> landscape(clean.package_count(), -1.0);
    for (std::size_t i = 0; i + 1 < clean.package_count(); ++i) {
        auto s = clean;
        const auto src = clean.package(i);
        std::copy(src.begin(), src.end(), s.mutable_package(i + 1).begin());
        landscape[i] = attack::fitness(channel::deserialize(s, m), objective);
    }
    const auto dominant = static_cast<std::size_t>(std::max_element(landscape.begin(), landscape.end()) - landscape.begin());
    ASSERT_EQ(std::count(landscape.begin(), landscape.end(), landscape[dominant]), 1);

    const auto space = TargetSpace::for_white_box(m, ch);
    FitnessOracle oracle;
    oracle.evaluate = [&](const Candidate& c) { return landscape[space.locate(c, SearchMode::white_box_2d).package]; };
    int found = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto r = make_rng(seed);
        const auto cfg = config(8, SearchMode::white_box_2d, seed);
        const auto it = run_iteration(init_population(cfg, r), oracle, cfg, r);
        found += space.locate(it.winner, SearchMode::white_box_2d).package == dominant;
    }
    EXPECT_GE(found, 90);
}

TEST(Denormalize, WhiteBoxExamples)
{
    const auto& m = fixtures::toy().model;
    channel::ChannelConfig ch;
    const auto space = TargetSpace::for_white_box(m, ch);
    const auto origin = space.locate(at(0.0, 0.0), SearchMode::white_box_2d);
    EXPECT_EQ(origin.layer, 0u);
    EXPECT_EQ(origin.weight, 0u);
    EXPECT_EQ(origin.package, 0u);
    const auto top = space.locate(at(1.0, 0.0), SearchMode::white_box_2d);
    EXPECT_EQ(top.layer, 2u);
    EXPECT_EQ(top.package, channel::package_index_of(m, 2, 0, ch));
    // The last package of the stream is never a target.
    const auto corner = space.locate(at(1.0, 1.0), SearchMode::white_box_2d);
    EXPECT_EQ(corner.package, space.stream_length() - 2);
    EXPECT_EQ(denormalize(at(0.0, 0.0), space, SearchMode::white_box_2d), 0u);
}

TEST(Denormalize, BlackBoxExamples)
{
    const auto space = TargetSpace::for_black_box(10);
    EXPECT_EQ(space.attackable_count(), 9u);
    EXPECT_EQ(denormalize(at(0.0), space, SearchMode::black_box_1d), 0u);
    EXPECT_EQ(denormalize(at(1.0), space, SearchMode::black_box_1d), 8u);
    EXPECT_EQ(denormalize(at(0.5), space, SearchMode::black_box_1d), 4u);
    std::vector<bool> mask(10, false);
    mask[2] = mask[7] = true;
    const auto sparse = TargetSpace::for_black_box(10, mask);
    EXPECT_EQ(denormalize(at(0.2), sparse, SearchMode::black_box_1d), 2u);
    EXPECT_EQ(denormalize(at(0.9), sparse, SearchMode::black_box_1d), 7u);
}

TEST(Denormalize, RangeScan)
{
    const auto& m = fixtures::toy().model;
    channel::ChannelConfig ch;
    auto mask = std::vector<bool>(496, true);
    for (std::size_t i = 100; i < 200; ++i)
        mask[i] = false;
    mask.back() = false;
    const auto space = TargetSpace::for_white_box(m, ch, mask);
    const auto bb = TargetSpace::for_black_box(496, mask);
    auto rng = make_rng(6);
    for (int i = 0; i < 1000; ++i) {
        const auto c = at(uniform01(rng), uniform01(rng));
        const auto w = space.locate(c, SearchMode::white_box_2d);
        ASSERT_LT(w.package, 496u);
        EXPECT_TRUE(mask[w.package]);
        EXPECT_LT(w.layer, 3u);
        const auto b = bb.locate(c, SearchMode::black_box_1d);
        EXPECT_TRUE(mask[b.package]);
    }
}
