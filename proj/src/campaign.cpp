#include "deepdup/campaign.hpp"

#include "deepdup/dataset.hpp"
#include "deepdup/error.hpp"
#include "deepdup/model_io.hpp"
#include "deepdup/rng.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <string>

namespace deepdup::campaign {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(std::string_view a, std::string_view b)
{
    return a.empty() ? std::string(b) : fmt::format("{}.{}", a, b);
}

const json& section(const json& doc, std::string_view name, std::initializer_list<std::string_view> keys)
{
    static const json empty = json::object();
    if (!doc.contains(name))
        return empty;
    const auto& s = doc.at(std::string(name));
    if (!s.is_object())
        throw ConfigInvalid(std::string(name), "must be an object");
    for (const auto& [k, _] : s.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw ConfigInvalid(join(name, k), "unknown key");
    return s;
}

template <typename T>
T get(const json& obj, std::string_view prefix, std::string_view key, T fallback)
{
    if (!obj.contains(key))
        return fallback;
    const auto& v = obj.at(std::string(key));
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean())
                throw ConfigInvalid(join(prefix, key), "must be true or false");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
                throw ConfigInvalid(join(prefix, key), "must be a non-negative integer");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer())
                throw ConfigInvalid(join(prefix, key), "must be an integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number())
                throw ConfigInvalid(join(prefix, key), "must be a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string())
                throw ConfigInvalid(join(prefix, key), "must be a string");
        }
        return v.get<T>();
    } catch (const json::exception& e) {
        throw ConfigInvalid(join(prefix, key), e.what());
    }
}

fs::path resolve(const fs::path& base, const std::string& p)
{
    if (p.empty())
        return {};
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

} // namespace

CampaignConfig parse_config(const json& doc, const fs::path& base_dir)
{
    if (!doc.is_object())
        throw ConfigInvalid("<root>", "campaign config must be a JSON object");
    for (const auto& [k, _] : doc.items()) {
        static const std::initializer_list<std::string_view> top = {
            "paths", "objective", "threat", "channel", "search", "defense", "repeats", "seed",
            "deployment_retries", "trace"};
        if (std::find(top.begin(), top.end(), k) == top.end())
            throw ConfigInvalid(k, "unknown key");
    }

    CampaignConfig cfg;
    const auto& paths = section(doc, "paths", {"model", "dataset", "train_dataset", "output_dir"});
    cfg.model_path = resolve(base_dir, get<std::string>(paths, "paths", "model", ""));
    cfg.dataset_path = resolve(base_dir, get<std::string>(paths, "paths", "dataset", ""));
    cfg.train_dataset_path = resolve(base_dir, get<std::string>(paths, "paths", "train_dataset", ""));
    cfg.output_dir = resolve(base_dir, get<std::string>(paths, "paths", "output_dir", "out"));
    if (cfg.model_path.empty())
        throw ConfigInvalid("paths.model", "required");
    if (cfg.dataset_path.empty())
        throw ConfigInvalid("paths.dataset", "required");

    const auto& obj = section(doc, "objective", {"kind", "target_class", "eval_batch", "stop_threshold"});
    cfg.objective = attack::objective_kind_from_string(get<std::string>(obj, "objective", "kind", "untargeted"));
    cfg.target_class = get<int>(obj, "objective", "target_class", -1);
    cfg.eval_batch = get<std::size_t>(obj, "objective", "eval_batch", cfg.eval_batch);
    if (obj.contains("stop_threshold"))
        cfg.stop_threshold = get<double>(obj, "objective", "stop_threshold", 0.0);
    if (cfg.eval_batch == 0)
        throw ConfigInvalid("objective.eval_batch", "must be positive");
    if (cfg.stop_threshold && !(*cfg.stop_threshold >= 0.0 && *cfg.stop_threshold <= 1.0))
        throw ConfigInvalid("objective.stop_threshold", "must lie in [0, 1]");
    if (cfg.target_class < -1)
        throw ConfigInvalid("objective.target_class", "must be a class id, or -1 for one per seed");

    const auto& threat = section(doc, "threat", {"kind", "assumed_fp", "query_budget"});
    cfg.threat.kind = attack::threat_kind_from_string(get<std::string>(threat, "threat", "kind", "white_box"));
    cfg.threat.assumed_fp = get<double>(threat, "threat", "assumed_fp", 1.0);
    cfg.threat.query_budget = get<std::size_t>(threat, "threat", "query_budget", 0);
    cfg.threat.validate();

    const auto& ch = section(doc, "channel", {"package_width", "fp", "min_attack_gap"});
    cfg.channel.package_width = get<std::size_t>(ch, "channel", "package_width", cfg.channel.package_width);
    cfg.channel.success_rate = get<double>(ch, "channel", "fp", cfg.channel.success_rate);
    cfg.channel.min_attack_gap = get<std::size_t>(ch, "channel", "min_attack_gap", cfg.channel.min_attack_gap);
    cfg.channel.validate();

    const auto& search = section(doc, "search", {"z", "max_iterations"});
    cfg.search.z = get<std::size_t>(search, "search", "z", cfg.search.z);
    cfg.search.max_iterations = get<std::size_t>(search, "search", "max_iterations", cfg.search.max_iterations);
    cfg.search.mode = cfg.threat.kind == attack::ThreatKind::white_box ? pdes::SearchMode::white_box_2d
                                                                       : pdes::SearchMode::black_box_1d;
    cfg.search.validate();

    const auto& def = section(doc, "defense", {"kind", "width_factor", "protected_layers", "shuffle_seed"});
    cfg.defense.kind = defense::defense_kind_from_string(get<std::string>(def, "defense", "kind", "none"));
    cfg.defense.width_factor = get<std::size_t>(def, "defense", "width_factor", cfg.defense.width_factor);
    cfg.defense.protected_layers =
        get<std::vector<std::size_t>>(def, "defense", "protected_layers", std::vector<std::size_t>{});
    cfg.defense.shuffle_seed = get<std::uint64_t>(def, "defense", "shuffle_seed", 0);
    if (cfg.defense.width_factor < 1)
        throw ConfigInvalid("defense.width_factor", "must be at least 1");
    if (cfg.defense.kind == defense::DefenseKind::widen_model && cfg.train_dataset_path.empty())
        throw ConfigInvalid("paths.train_dataset", "widen_model retrains the model and needs training data");

    cfg.repeats = get<std::size_t>(doc, "", "repeats", cfg.repeats);
    cfg.seed = get<std::uint64_t>(doc, "", "seed", cfg.seed);
    cfg.deployment_retries = get<std::size_t>(doc, "", "deployment_retries", cfg.deployment_retries);
    cfg.trace = get<bool>(doc, "", "trace", false);
    if (cfg.repeats == 0)
        throw ConfigInvalid("repeats", "must be at least 1");
    return cfg;
}

CampaignConfig load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigInvalid("<file>", fmt::format("cannot open {}", path.string()));
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigInvalid("<file>", fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
    }
    auto cfg = parse_config(doc, path.parent_path());
    const auto require = [](const fs::path& p, const char* field) {
        if (!p.empty() && !fs::exists(p))
            throw ConfigInvalid(field, fmt::format("{} does not exist", p.string()));
    };
    require(cfg.model_path, "paths.model");
    require(cfg.dataset_path, "paths.dataset");
    require(cfg.train_dataset_path, "paths.train_dataset");
    return cfg;
}

nlohmann::ordered_json to_json(const CampaignConfig& cfg)
{
    nlohmann::ordered_json j;
    j["paths"]["model"] = cfg.model_path.string();
    j["paths"]["dataset"] = cfg.dataset_path.string();
    if (!cfg.train_dataset_path.empty())
        j["paths"]["train_dataset"] = cfg.train_dataset_path.string();
    j["paths"]["output_dir"] = cfg.output_dir.string();
    j["objective"]["kind"] = attack::to_string(cfg.objective);
    j["objective"]["target_class"] = cfg.target_class;
    j["objective"]["eval_batch"] = cfg.eval_batch;
    if (cfg.stop_threshold)
        j["objective"]["stop_threshold"] = *cfg.stop_threshold;
    j["threat"]["kind"] = attack::to_string(cfg.threat.kind);
    j["threat"]["assumed_fp"] = cfg.threat.assumed_fp;
    j["threat"]["query_budget"] = cfg.threat.query_budget;
    j["channel"]["package_width"] = cfg.channel.package_width;
    j["channel"]["fp"] = cfg.channel.success_rate;
    j["channel"]["min_attack_gap"] = cfg.channel.min_attack_gap;
    j["search"]["z"] = cfg.search.z;
    j["search"]["max_iterations"] = cfg.search.max_iterations;
    j["defense"]["kind"] = defense::to_string(cfg.defense.kind);
    j["defense"]["width_factor"] = cfg.defense.width_factor;
    j["defense"]["protected_layers"] = cfg.defense.protected_layers;
    j["defense"]["shuffle_seed"] = cfg.defense.shuffle_seed;
    j["repeats"] = cfg.repeats;
    j["seed"] = cfg.seed;
    j["deployment_retries"] = cfg.deployment_retries;
    j["trace"] = cfg.trace;
    return j;
}

Inputs load_inputs(const CampaignConfig& cfg)
{
    Inputs in;
    in.model = qnn::load_model(cfg.model_path);
    in.test = data::load(cfg.dataset_path);
    if (!cfg.train_dataset_path.empty())
        in.train = data::load(cfg.train_dataset_path);
    cfg.defense.validate(in.model);
    if (cfg.target_class >= static_cast<int>(in.model.num_classes()))
        throw ConfigInvalid("objective.target_class",
                            fmt::format("{} is not a class of a {}-class model", cfg.target_class,
                                        in.model.num_classes()));
    return in;
}

qnn::QuantModel defended_model(const CampaignConfig& cfg, const Inputs& in)
{
    if (cfg.defense.kind != defense::DefenseKind::widen_model)
        return in.model;
    if (in.train.empty())
        throw ConfigInvalid("paths.train_dataset", "widen_model needs training data");
    return defense::widen(in.model, cfg.defense.width_factor, in.train, defense::recipe_of(in.model));
}

attack::AttackReport run_once(const CampaignConfig& cfg, const qnn::QuantModel& model, const qnn::Dataset& test,
                              std::uint64_t seed, const pdes::TraceSink& trace)
{
    const auto classes = model.num_classes();
    attack::Objective objective;
    if (cfg.objective == attack::ObjectiveKind::untargeted) {
        objective = attack::Objective::untargeted(test, cfg.eval_batch, classes, cfg.stop_threshold);
    } else {
        const int t = cfg.target_class >= 0 ? cfg.target_class : static_cast<int>(seed % classes);
        objective = attack::Objective::targeted(test, t, cfg.eval_batch, cfg.stop_threshold);
    }
    auto search = cfg.search;
    search.rng_seed = seed;
    attack::AttackOptions options;
    options.deployment_retries = cfg.deployment_retries;
    options.trace = trace;

    // Widening was applied to `model` already; the channel sees no further change.
    auto def = cfg.defense;
    if (def.kind == defense::DefenseKind::widen_model)
        def.kind = defense::DefenseKind::none;

    if (cfg.threat.kind == attack::ThreatKind::white_box)
        return attack::white_box_attack(model, objective, cfg.threat, search, cfg.channel, def, test, options);

    victim::SimulatedVictim victim(victim::ChannelSimulator(model, cfg.channel, def, mix_seed(seed, 2)));
    return attack::black_box_attack(victim, objective, cfg.threat, search, test, options);
}

} // namespace deepdup::campaign
