#pragma once

#include "deepdup/channel.hpp"
#include "deepdup/defense.hpp"
#include "deepdup/pdes.hpp"
#include "deepdup/qnn.hpp"
#include "deepdup/victim.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace deepdup::attack {

enum class ObjectiveKind { untargeted, targeted };
std::string_view to_string(ObjectiveKind kind) noexcept;
/// Throws ConfigInvalid naming `objective.kind`.
ObjectiveKind objective_kind_from_string(std::string_view name);

struct Objective {
    ObjectiveKind kind = ObjectiveKind::untargeted;
    int target_class = -1;
    /// Untargeted: mixed classes. Targeted: target-class samples only.
    qnn::Dataset eval_batch;
    /// Untargeted: stop once TA on the eval batch is at or below this.
    /// Targeted: stop once ASR on the eval batch is at or above this.
    double stop_threshold = 0.0;

    /// First `batch` samples of `pool`; threshold defaults to 1/C + 0.01.
    static Objective untargeted(const qnn::Dataset& pool, std::size_t batch, std::size_t num_classes,
                                std::optional<double> threshold = {});
    /// First `batch` samples of class `target` in `pool`; threshold defaults
    /// to 0.99. Throws NoTargetSamples.
    static Objective targeted(const qnn::Dataset& pool, int target, std::size_t batch,
                              std::optional<double> threshold = {});

    /// Throws ConfigInvalid or EmptyDataset.
    void validate() const;
};

enum class ThreatKind { white_box, black_box };
std::string_view to_string(ThreatKind kind) noexcept;
ThreatKind threat_kind_from_string(std::string_view name);

struct ThreatModel {
    ThreatKind kind = ThreatKind::white_box;
    /// Success rate the white-box simulator assumes.
    double assumed_fp = 1.0;
    /// Black-box limit on victim queries; 0 means unlimited.
    std::size_t query_budget = 0;

    void validate() const;
};

enum class AttackStatus { success, budget_exhausted, query_budget_exhausted };
std::string_view to_string(AttackStatus status) noexcept;

struct IterationRecord {
    std::size_t iteration = 0;
    std::size_t winner_package = 0;
    double search_fitness = 0.0;
    /// Fitness and stop metric (TA or ASR) of the last deployment on the eval batch.
    double deployed_fitness = 0.0;
    double deployed_metric = 0.0;
    std::size_t deployment_attempts = 0;
    std::size_t queries = 0;
};

struct AttackReport {
    ObjectiveKind objective = ObjectiveKind::untargeted;
    ThreatKind threat = ThreatKind::white_box;
    int target_class = -1;
    std::uint64_t seed = 0;
    AttackStatus status = AttackStatus::budget_exhausted;

    std::vector<std::size_t> winners;
    /// Triggers actually armed at the final deployment.
    std::vector<std::size_t> effective_targets;
    std::vector<IterationRecord> trajectory;
    std::size_t iterations_used = 0;
    std::size_t queries_used = 0;
    std::size_t evaluations = 0;

    double clean_ta = 0.0;
    double post_ta = 0.0;
    /// Targeted only.
    double clean_asr = 0.0;
    double asr = 0.0;
    double clean_nontarget_ta = 0.0;
    double post_nontarget_ta = 0.0;

    /// Final deployment; empty for black-box runs.
    channel::FaultOutcomeLog fault_log;
    defense::Permutation permutation;

    bool succeeded() const noexcept { return status == AttackStatus::success; }
    std::vector<double> fitness_trajectory() const;
};

double fitness_untargeted(const qnn::QuantModel& model, const Objective& objective);
double fitness_targeted(const qnn::QuantModel& model, const Objective& objective);
/// Mean cross-entropy on the eval batch, whichever the objective kind.
double fitness(const qnn::QuantModel& model, const Objective& objective);
double fitness_from_logits(const qnn::Tensor& logits, const Objective& objective);

/// Fraction of `target_class` samples not predicted as `target_class`.
/// Throws NoTargetSamples.
double compute_asr(const qnn::QuantModel& model, int target_class, const qnn::Dataset& dataset);
double asr_from_logits(const qnn::Tensor& logits, int target_class, std::span<const int> labels);

/// TA for untargeted objectives, ASR for targeted ones.
double stop_metric(const qnn::Tensor& logits, const Objective& objective);
bool objective_met(double metric, const Objective& objective);

struct AttackOptions {
    /// Extra deployments per iteration when the first misses the threshold.
    std::size_t deployment_retries = 3;
    pdes::TraceSink trace;
};

/// Progressive search against an offline `replica`; each winner is then
/// deployed on `device`. The replica's own channel rate plays the part of
/// the attacker's assumed f_p.
AttackReport white_box_attack(victim::ChannelSimulator& replica, victim::ChannelSimulator& device,
                              const Objective& objective, const pdes::SearchConfig& search,
                              const qnn::Dataset& test, const AttackOptions& options = {});

/// Builds replica and device from `model`. The replica runs the same defense
/// as the device, so it knows the shuffle scheme but not the permutation
/// drawn for any one random-shuffle transmission.
AttackReport white_box_attack(const qnn::QuantModel& model, const Objective& objective, const ThreatModel& threat,
                              const pdes::SearchConfig& search, const channel::ChannelConfig& channel,
                              const defense::DefenseConfig& defense, const qnn::Dataset& test,
                              const AttackOptions& options = {});

/// Search driven by victim outputs alone.
AttackReport black_box_attack(victim::VictimEndpoint& victim, const Objective& objective, const ThreatModel& threat,
                              const pdes::SearchConfig& search, const qnn::Dataset& test,
                              const AttackOptions& options = {});

/// Arms up to `n_attacks` uniformly random attackable, gap-respecting
/// packages and delivers once.
AttackReport random_attack_baseline(victim::ChannelSimulator& device, const Objective& objective,
                                    std::size_t n_attacks, const qnn::Dataset& test, std::uint64_t seed);

} // namespace deepdup::attack
