#include "deepdup/verify.hpp"

#include "deepdup/channel.hpp"
#include "deepdup/dataset.hpp"
#include "deepdup/defense.hpp"
#include "deepdup/error.hpp"
#include "deepdup/model_io.hpp"
#include "deepdup/orchestrator.hpp"
#include "deepdup/pdes.hpp"
#include "deepdup/report.hpp"
#include "deepdup/rng.hpp"
#include "deepdup/train.hpp"
#include "deepdup/victim.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace deepdup::verify {

namespace {

struct Fixture {
    qnn::Dataset train;
    qnn::Dataset test;
    qnn::QuantModel model;
    channel::ChannelConfig channel;
};

const Fixture& fixture(std::uint64_t seed)
{
    static std::uint64_t cached_seed = 0;
    static Fixture f;
    if (f.model.parameter_count() == 0 || cached_seed != seed) {
        f.train = data::make_bars(1000, 0.4, mix_seed(seed, 1));
        f.test = data::make_bars(400, 0.4, mix_seed(seed, 2));
        qnn::TrainConfig tc;
        tc.seed = seed;
        f.model = qnn::train_model(qnn::mlp_small(), f.train, tc);
        f.channel.min_attack_gap = 2;
        cached_seed = seed;
    }
    return f;
}

CheckResult pass(std::string name, std::string detail = "ok")
{
    return {std::move(name), true, std::move(detail)};
}

CheckResult fail(std::string name, std::string detail)
{
    return {std::move(name), false, std::move(detail)};
}

pdes::FitnessOracle model_oracle(victim::ChannelSimulator& sim, const attack::Objective& obj,
                                 const pdes::TargetSpace& space)
{
    pdes::FitnessOracle o;
    o.evaluate = [&sim, &obj, &space](const pdes::Candidate& c) {
        const std::size_t pkg = space.locate(c, pdes::SearchMode::white_box_2d).package;
        return attack::fitness(sim.deliver(std::span<const std::size_t>(&pkg, 1)).model, obj);
    };
    return o;
}

std::vector<bool> random_bits(std::size_t n, Rng& rng)
{
    std::vector<bool> bits(n, false);
    for (std::size_t i = 0; i + 1 < n; ++i)
        bits[i] = bernoulli(rng, 0.2);
    return bits;
}

} // namespace

CheckResult selection_monotonicity(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    victim::ChannelSimulator sim(f.model, f.channel, {}, seed);
    const auto obj = attack::Objective::untargeted(f.test, 128, 4);
    const auto space = pdes::TargetSpace::for_white_box(f.model, f.channel);
    const auto oracle = model_oracle(sim, obj, space);

    pdes::SearchConfig cfg;
    cfg.z = 12;
    cfg.rng_seed = seed;
    auto rng = make_rng(seed, 11);
    auto pop = pdes::init_population(cfg, rng);
    for (auto& m : pop.members)
        m.fitness = oracle(m);
    pop.refresh_extremes();
    const double before = pop.best_fitness();

    std::size_t violations = 0;
    std::size_t checked = 0;
    const pdes::TraceSink sink = [&](const pdes::SelectRecord& r) {
        const double kept = r.survivor == 0 ? r.current_fitness : r.trial_fitness[r.survivor - 1];
        double best = r.current_fitness;
        for (double t : r.trial_fitness)
            best = std::max(best, t);
        ++checked;
        if (kept < r.current_fitness || kept != best)
            ++violations;
    };
    double after = before;
    for (std::size_t it = 0; it < 3; ++it) {
        auto res = pdes::run_iteration(pop, oracle, cfg, rng, it, sink);
        if (res.population.best_fitness() < after)
            ++violations;
        after = res.population.best_fitness();
        pop = std::move(res.population);
    }
    if (violations > 0)
        return fail("selection_monotonicity", fmt::format("{} of {} selections lost fitness", violations, checked));
    return pass("selection_monotonicity", fmt::format("{} selections, best {:.4f} -> {:.4f}", checked, before, after));
}

CheckResult crossover_closure(std::uint64_t seed)
{
    auto rng = make_rng(seed, 12);
    for (int i = 0; i < 20000; ++i) {
        pdes::Candidate mutant{4.0 * uniform01(rng) - 1.5, 4.0 * uniform01(rng) - 1.5, {}};
        pdes::Candidate current{uniform01(rng), uniform01(rng), {}};
        const auto t = pdes::crossover(mutant, current);
        if (t.p < 0.0 || t.p > 1.0 || t.q < 0.0 || t.q > 1.0)
            return fail("crossover_closure", fmt::format("trial ({}, {}) left [0,1]", t.p, t.q));
    }
    pdes::SearchConfig cfg;
    cfg.z = 10;
    auto pop = pdes::init_population(cfg, rng);
    for (std::size_t i = 0; i < pop.size(); ++i)
        pop.members[i].fitness = static_cast<double>(i);
    pop.refresh_extremes();
    for (int rep = 0; rep < 500; ++rep)
        for (std::size_t i = 0; i < pop.size(); ++i)
            for (const auto& m : pdes::mutate(pop, i, rng)) {
                const auto t = pdes::crossover(m, pop.members[i]);
                if (t.p < 0.0 || t.p > 1.0 || t.q < 0.0 || t.q > 1.0)
                    return fail("crossover_closure", "trial from a real mutant left [0,1]");
            }
    return pass("crossover_closure", "20000 random and 20000 mutant crossovers stayed in [0,1]");
}

CheckResult strategy4_degeneracy(std::uint64_t seed)
{
    auto rng = make_rng(seed, 13);
    pdes::SearchConfig cfg;
    cfg.z = 8;
    for (int rep = 0; rep < 200; ++rep) {
        auto pop = pdes::init_population(cfg, rng);
        for (auto& m : pop.members)
            m.fitness = 1.0;
        pop.members[3] = pop.members[5];
        pop.best_index = 3;
        pop.worst_index = 5;
        const auto draw = pdes::draw_mutation(pop.size(), 0, rng);
        const auto muts = pdes::mutants_from(pop, draw);
        const auto& a = pop.members[draw.picks[0]];
        if (muts[3].p != a.p || muts[3].q != a.q)
            return fail("strategy4_degeneracy", "mutant differs from base member when best == worst");
    }
    return pass("strategy4_degeneracy", "200 cases");
}

CheckResult restore_discipline(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    const double clean = qnn::accuracy(f.model, f.test);

    victim::ChannelSimulator device(f.model, f.channel, {}, seed);
    const auto obj = attack::Objective::untargeted(f.test, 128, 4, 0.0);
    pdes::SearchConfig cfg;
    cfg.z = 10;
    cfg.max_iterations = 2;
    cfg.rng_seed = seed;
    auto replica = device;
    attack::white_box_attack(replica, device, obj, cfg, f.test);
    if (qnn::accuracy(device.clean_model(), f.test) != clean ||
        qnn::accuracy(replica.clean_model(), f.test) != clean)
        return fail("restore_discipline", "white-box campaign changed the clean model");

    victim::SimulatedVictim v(victim::ChannelSimulator(f.model, f.channel, {}, seed));
    attack::ThreatModel threat;
    threat.kind = attack::ThreatKind::black_box;
    threat.query_budget = 37;
    cfg.mode = pdes::SearchMode::black_box_1d;
    const auto r = attack::black_box_attack(v, obj, threat, cfg, f.test);
    if (r.status != attack::AttackStatus::query_budget_exhausted)
        return fail("restore_discipline", "black-box campaign was expected to abort on its query budget");
    const double after = qnn::accuracy_from_logits(v.infer(f.test.features), f.test.labels);
    if (after != clean)
        return fail("restore_discipline", fmt::format("victim TA {} after aborted campaign, {} before", after, clean));
    return pass("restore_discipline", fmt::format("clean TA {:.4f} unchanged", clean));
}

CheckResult shuffle_transparency(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    const auto stream = channel::serialize(f.model, f.channel);
    for (auto mode : {defense::ShuffleMode::none, defense::ShuffleMode::predefined, defense::ShuffleMode::random}) {
        for (std::uint64_t round = 0; round < 20; ++round) {
            const auto s = defense::shuffle_transmission(stream, mode, seed, round);
            if (channel::deserialize(defense::invert_permutation(s.stream, s.permutation), f.model) != f.model)
                return fail("shuffle_transparency", fmt::format("round {} did not restore the model", round));
        }
    }
    for (auto kind : {defense::DefenseKind::shuffle_predefined, defense::DefenseKind::shuffle_random}) {
        defense::DefenseConfig d;
        d.kind = kind;
        d.shuffle_seed = seed;
        victim::ChannelSimulator sim(f.model, f.channel, d, seed);
        for (int i = 0; i < 10; ++i)
            if (sim.deliver(std::span<const std::size_t>{}).model != f.model)
                return fail("shuffle_transparency", "fault-free delivery differs from the clean model");
    }
    const auto a = defense::make_permutation(stream.package_count(), defense::ShuffleMode::random, seed, 0);
    const auto b = defense::make_permutation(stream.package_count(), defense::ShuffleMode::random, seed, 1);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        moved += a.slot_to_package[i] != b.slot_to_package[i];
    if (moved * 10 < a.size() * 9)
        return fail("shuffle_transparency", fmt::format("only {} of {} slots differ across rounds", moved, a.size()));
    return pass("shuffle_transparency", fmt::format("{} of {} slots differ across two random rounds", moved, a.size()));
}

CheckResult protection_soundness(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    const auto offsets = f.model.weight_offsets();
    const auto counts = f.model.layer_weight_counts();
    const auto clean = f.model.flat_weights();
    auto rng = make_rng(seed, 14);
    std::size_t deliveries = 0;
    for (std::size_t layer = 0; layer < f.model.weight_layer_count(); ++layer) {
        defense::DefenseConfig d;
        d.kind = defense::DefenseKind::protect_layers;
        d.protected_layers = {layer};
        victim::ChannelSimulator sim(f.model, f.channel, d, seed + layer);
        const auto untouched = [&](const qnn::QuantModel& m) {
            const auto w = m.flat_weights();
            return std::equal(w.begin() + static_cast<std::ptrdiff_t>(offsets[layer]),
                              w.begin() + static_cast<std::ptrdiff_t>(offsets[layer] + counts[layer]),
                              clean.begin() + static_cast<std::ptrdiff_t>(offsets[layer]));
        };
        for (int i = 0; i < 100; ++i) {
            channel::StrategyFile s;
            s.trigger_bits = random_bits(sim.stream_length(), rng);
            ++deliveries;
            if (!untouched(sim.deliver(s).model))
                return fail("protection_soundness", fmt::format("random triggers altered protected layer {}", layer));
        }
        pdes::SearchConfig cfg;
        cfg.z = 10;
        cfg.max_iterations = 3;
        cfg.rng_seed = seed;
        auto replica = sim;
        const auto r =
            attack::white_box_attack(replica, sim, attack::Objective::untargeted(f.test, 128, 4, 0.0), cfg, f.test);
        ++deliveries;
        if (!untouched(sim.deliver(r.effective_targets).model))
            return fail("protection_soundness", fmt::format("campaign altered protected layer {}", layer));
    }
    return pass("protection_soundness", fmt::format("{} deliveries left protected layers intact", deliveries));
}

CheckResult quantize_round_trip(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    if (qnn::decode_model(qnn::encode_model(f.model)) != f.model)
        return fail("quantize_round_trip", "model file encode/decode changed the model");
    if (channel::deserialize(channel::serialize(f.model, f.channel), f.model) != f.model)
        return fail("quantize_round_trip", "serialize/deserialize changed the model");
    auto rng = make_rng(seed, 15);
    std::vector<float> w(500);
    for (auto& x : w)
        x = static_cast<float>(standard_normal(rng));
    const auto q = qnn::quantize_symmetric(w);
    for (std::size_t i = 0; i < w.size(); ++i)
        if (std::abs(static_cast<float>(q.values[i]) * q.scale - w[i]) > 0.5f * q.scale * (1.0f + 1e-5f))
            return fail("quantize_round_trip", fmt::format("weight {} off by more than half a step", i));
    return pass("quantize_round_trip", "model file, channel and int8 rounding");
}

CheckResult determinism(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    qnn::TrainConfig tc;
    tc.seed = seed;
    tc.epochs = 5;
    if (qnn::encode_model(qnn::train_model(qnn::mlp_small(), f.train, tc)) !=
        qnn::encode_model(qnn::train_model(qnn::mlp_small(), f.train, tc)))
        return fail("determinism", "training is not reproducible");

    const auto run = [&](double fp) {
        auto ch = f.channel;
        ch.success_rate = fp;
        attack::ThreatModel threat;
        threat.assumed_fp = fp;
        pdes::SearchConfig cfg;
        cfg.z = 10;
        cfg.max_iterations = 3;
        cfg.rng_seed = seed;
        return report::to_json(attack::white_box_attack(f.model, attack::Objective::untargeted(f.test, 128, 4, 0.0),
                                                        threat, cfg, ch, {}, f.test))
            .dump();
    };
    if (run(1.0) != run(1.0) || run(0.7) != run(0.7))
        return fail("determinism", "white-box reports differ for a fixed seed");

    const auto bb = [&] {
        victim::SimulatedVictim v(victim::ChannelSimulator(f.model, f.channel, {}, seed));
        attack::ThreatModel threat;
        threat.kind = attack::ThreatKind::black_box;
        pdes::SearchConfig cfg;
        cfg.z = 8;
        cfg.max_iterations = 2;
        cfg.rng_seed = seed;
        cfg.mode = pdes::SearchMode::black_box_1d;
        return report::to_json(
                   attack::black_box_attack(v, attack::Objective::targeted(f.test, 1, 32), threat, cfg, f.test))
            .dump();
    };
    if (bb() != bb())
        return fail("determinism", "black-box reports differ for a fixed seed");
    return pass("determinism", "training, white-box and black-box runs reproduce");
}

CheckResult winner_set_dominance(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    const auto obj = attack::Objective::untargeted(f.test, 128, 4, 0.0);
    victim::ChannelSimulator device(f.model, f.channel, {}, seed);
    auto replica = device;
    pdes::SearchConfig cfg;
    cfg.z = 20;
    cfg.max_iterations = 3;
    cfg.rng_seed = seed;
    const auto r = attack::white_box_attack(replica, device, obj, cfg, f.test);

    const auto fitness_of = [&](std::size_t k) {
        const std::vector<std::size_t> prefix(r.winners.begin(), r.winners.begin() + static_cast<std::ptrdiff_t>(k));
        return attack::fitness(
            device.deliver(channel::compatible_subset(prefix, device.stream_length(), f.channel.min_attack_gap)).model,
            obj);
    };
    const double full = fitness_of(r.winners.size());
    for (std::size_t k = 0; k < r.winners.size(); ++k)
        if (fitness_of(k) > full)
            return fail("winner_set_dominance", fmt::format("prefix of {} beats the full set of {}", k, r.winners.size()));
    const auto traj = r.fitness_trajectory();
    if (traj.back() < traj.front())
        return fail("winner_set_dominance", "untargeted fitness fell between the first and last iteration");
    return pass("winner_set_dominance", fmt::format("{} winners, full-set fitness {:.4f}", r.winners.size(), full));
}

CheckResult csv_round_trip(std::uint64_t seed)
{
    const auto& f = fixture(seed);
    pdes::SearchConfig cfg;
    cfg.z = 10;
    cfg.max_iterations = 3;
    cfg.rng_seed = seed;
    std::vector<attack::AttackReport> reports;
    for (std::uint64_t s = 0; s < 2; ++s) {
        cfg.rng_seed = seed + s;
        reports.push_back(attack::white_box_attack(f.model, attack::Objective::untargeted(f.test, 128, 4, 0.0), {},
                                                   cfg, f.channel, {}, f.test));
    }
    for (const auto& t : {report::trajectory_table(reports[0]), report::aggregate_table(reports)}) {
        const auto text = report::to_csv(t);
        if (report::to_csv(report::parse_csv(text)) != text)
            return fail("csv_round_trip", "re-emitted CSV differs");
        for (const auto& row : t.rows)
            for (const auto& cell : row) {
                double v = 0;
                const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (res.ec == std::errc{} && res.ptr == cell.data() + cell.size() && report::format_number(v) != cell)
                    return fail("csv_round_trip", fmt::format("number '{}' does not round-trip", cell));
            }
    }
    const auto log_text = channel::fault_log_csv(reports[0].fault_log);
    if (channel::fault_log_csv(channel::parse_fault_log_csv(log_text)) != log_text)
        return fail("csv_round_trip", "fault log CSV differs after a round trip");
    return pass("csv_round_trip", "trajectory, aggregate and fault-log CSVs");
}

std::vector<CheckResult> run_all(std::uint64_t seed)
{
    const std::vector<std::pair<const char*, CheckResult (*)(std::uint64_t)>> checks = {
        {"selection_monotonicity", selection_monotonicity},
        {"crossover_closure", crossover_closure},
        {"strategy4_degeneracy", strategy4_degeneracy},
        {"restore_discipline", restore_discipline},
        {"shuffle_transparency", shuffle_transparency},
        {"protection_soundness", protection_soundness},
        {"quantize_round_trip", quantize_round_trip},
        {"determinism", determinism},
        {"winner_set_dominance", winner_set_dominance},
        {"csv_round_trip", csv_round_trip},
    };
    std::vector<CheckResult> out;
    for (const auto& [name, check] : checks) {
        try {
            out.push_back(check(seed));
        } catch (const std::exception& e) {
            out.push_back(fail(name, fmt::format("threw: {}", e.what())));
        }
    }
    return out;
}

} // namespace deepdup::verify
