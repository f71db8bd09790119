#pragma once

#include <cstdint>
#include <string>
#include <vector>

/// Property checks over the whole pipeline. Each builds its own small
/// fixture from `seed`, so they can run in any order.
namespace deepdup::verify {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

CheckResult selection_monotonicity(std::uint64_t seed);
CheckResult crossover_closure(std::uint64_t seed);
CheckResult strategy4_degeneracy(std::uint64_t seed);
CheckResult restore_discipline(std::uint64_t seed);
CheckResult shuffle_transparency(std::uint64_t seed);
CheckResult protection_soundness(std::uint64_t seed);
CheckResult quantize_round_trip(std::uint64_t seed);
CheckResult determinism(std::uint64_t seed);
CheckResult winner_set_dominance(std::uint64_t seed);
CheckResult csv_round_trip(std::uint64_t seed);

std::vector<CheckResult> run_all(std::uint64_t seed = 1);

} // namespace deepdup::verify
