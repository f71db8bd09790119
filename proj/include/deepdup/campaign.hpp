#pragma once

#include "deepdup/channel.hpp"
#include "deepdup/defense.hpp"
#include "deepdup/orchestrator.hpp"
#include "deepdup/pdes.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace deepdup::campaign {

/// One experiment, as read from a JSON campaign file:
///
///   {
///     "paths":     {"model", "dataset", "train_dataset"?, "output_dir"},
///     "objective": {"kind", "target_class"?, "eval_batch"?, "stop_threshold"?},
///     "threat":    {"kind", "assumed_fp"?, "query_budget"?},
///     "channel":   {"package_width"?, "fp"?, "min_attack_gap"?},
///     "search":    {"z"?, "max_iterations"?},
///     "defense":   {"kind"?, "width_factor"?, "protected_layers"?, "shuffle_seed"?},
///     "repeats"?, "seed"?, "deployment_retries"?, "trace"?
///   }
///
/// Unknown keys are rejected. Relative paths resolve against the file's directory.
struct CampaignConfig {
    std::filesystem::path model_path;
    std::filesystem::path dataset_path;
    std::filesystem::path train_dataset_path;
    std::filesystem::path output_dir;

    attack::ObjectiveKind objective = attack::ObjectiveKind::untargeted;
    /// -1 picks class (seed mod C) for each repeat.
    int target_class = -1;
    std::size_t eval_batch = 256;
    std::optional<double> stop_threshold;

    attack::ThreatModel threat;
    channel::ChannelConfig channel;
    pdes::SearchConfig search;
    defense::DefenseConfig defense;

    std::size_t repeats = 3;
    std::uint64_t seed = 1;
    std::size_t deployment_retries = 3;
    /// Write the per-select JSON-lines search trace.
    bool trace = false;

    /// Seed of repeat `i`.
    std::uint64_t seed_of(std::size_t i) const noexcept { return seed + i; }
};

/// Throws ConfigInvalid naming the offending field.
CampaignConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
/// Also checks that referenced input files exist.
CampaignConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const CampaignConfig& cfg);

/// Inputs of a campaign, loaded once.
struct Inputs {
    qnn::QuantModel model;
    qnn::Dataset test;
    /// Only loaded when a defense retrains the model.
    qnn::Dataset train;
};
Inputs load_inputs(const CampaignConfig& cfg);

/// Applies the model-level part of the defense (widening); the channel-level
/// part is applied inside the attack.
qnn::QuantModel defended_model(const CampaignConfig& cfg, const Inputs& in);

/// One repeat of the configured attack.
attack::AttackReport run_once(const CampaignConfig& cfg, const qnn::QuantModel& model, const qnn::Dataset& test,
                              std::uint64_t seed, const pdes::TraceSink& trace = {});

} // namespace deepdup::campaign
