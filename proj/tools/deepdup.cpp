// deepdup: train toy victims, run attack campaigns, sweep f_p, compare
// defenses and run the invariant suite.
//
// Exit codes: 0 success, 1 runtime error, 2 configuration or usage error,
// 3 attack budget exhausted on at least one seed.

#include "deepdup/campaign.hpp"
#include "deepdup/dataset.hpp"
#include "deepdup/error.hpp"
#include "deepdup/model_io.hpp"
#include "deepdup/report.hpp"
#include "deepdup/train.hpp"
#include "deepdup/verify.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace deepdup;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBudget = 3;

std::string utc_now()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_parent(const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
}

/// Timestamps live beside the reports so the reports stay byte-reproducible.
void write_run_info(const fs::path& dir, const std::string& command, const std::string& started)
{
    nlohmann::ordered_json j;
    j["command"] = command;
    j["started"] = started;
    j["finished"] = utc_now();
    report::write_text(dir / "run_info.json", j.dump(2) + "\n");
}

int cmd_make_dataset(std::size_t n, double noise, std::uint64_t seed, const fs::path& out)
{
    const auto ds = data::make_bars(n, noise, seed);
    ensure_parent(out);
    if (out.extension() == ".idx") {
        auto labels = out;
        labels.replace_extension(".labels.idx");
        data::write_idx(ds, out, labels);
    } else {
        data::write_csv(ds, out);
    }
    fmt::print("wrote {} samples to {}\n", ds.size(), out.string());
    return 0;
}

int cmd_train_toy(const std::string& arch, const fs::path& dataset, const fs::path& test_path, const fs::path& out,
                  const qnn::TrainConfig& tc)
{
    const auto train = data::load(dataset);
    const auto model = qnn::train_model(qnn::architecture_by_name(arch), train, tc);
    ensure_parent(out);
    qnn::save_model(model, out);
    const auto eval = test_path.empty() ? train : data::load(test_path);
    fmt::print("arch {} params {} clean TA {:.4f} ({} samples)\n", arch, model.parameter_count(),
               qnn::accuracy(model, eval), eval.size());
    return 0;
}

std::vector<attack::AttackReport> run_repeats(const campaign::CampaignConfig& cfg, const qnn::QuantModel& model,
                                              const qnn::Dataset& test, const fs::path& trace_dir)
{
    std::vector<attack::AttackReport> reports;
    for (std::size_t i = 0; i < cfg.repeats; ++i) {
        const auto seed = cfg.seed_of(i);
        std::ofstream trace;
        pdes::TraceSink sink;
        if (cfg.trace && !trace_dir.empty()) {
            fs::create_directories(trace_dir);
            trace.open(trace_dir / fmt::format("trace_seed{}.jsonl", seed));
            sink = [&trace](const pdes::SelectRecord& r) { trace << pdes::to_jsonl(r) << '\n'; };
        }
        reports.push_back(campaign::run_once(cfg, model, test, seed, sink));
    }
    return reports;
}

int cmd_attack(const fs::path& config_path)
{
    const auto started = utc_now();
    const auto cfg = campaign::load_config(config_path);
    const auto in = campaign::load_inputs(cfg);
    const auto model = campaign::defended_model(cfg, in);
    const auto reports = run_repeats(cfg, model, in.test, cfg.output_dir);

    bool all_ok = true;
    for (const auto& r : reports) {
        report::write_text(cfg.output_dir / fmt::format("report_seed{}.json", r.seed), report::to_json(r).dump(2) + "\n");
        report::write_text(cfg.output_dir / fmt::format("trajectory_seed{}.csv", r.seed),
                           report::to_csv(report::trajectory_table(r)));
        fmt::print("seed {} {} iterations {} queries {} TA {:.4f} -> {:.4f}", r.seed, attack::to_string(r.status),
                   r.iterations_used, r.queries_used, r.clean_ta, r.post_ta);
        if (r.objective == attack::ObjectiveKind::targeted)
            fmt::print(" ASR(class {}) {:.4f} -> {:.4f}", r.target_class, r.clean_asr, r.asr);
        fmt::print("\n");
        all_ok = all_ok && r.succeeded();
    }
    report::write_text(cfg.output_dir / "aggregate.csv", report::to_csv(report::aggregate_table(reports)));
    write_run_info(cfg.output_dir, "attack", started);
    return all_ok ? 0 : kExitBudget;
}

int cmd_sweep_fp(const fs::path& config_path, const std::vector<double>& fps)
{
    const auto started = utc_now();
    const auto base = campaign::load_config(config_path);
    for (double fp : fps)
        if (!(fp >= 0.0 && fp <= 1.0))
            throw ConfigInvalid("fp", fmt::format("{} is outside [0, 1]", fp));
    const auto in = campaign::load_inputs(base);
    const auto model = campaign::defended_model(base, in);

    std::vector<report::SweepPoint> points;
    for (double fp : fps) {
        auto cfg = base;
        cfg.channel.success_rate = fp;
        cfg.threat.assumed_fp = fp;
        for (auto& r : run_repeats(cfg, model, in.test, {})) {
            fmt::print("fp {} seed {} {} iterations {} TA {:.4f}\n", fp, r.seed, attack::to_string(r.status),
                       r.iterations_used, r.post_ta);
            points.push_back({fp, std::move(r)});
        }
    }
    report::write_text(base.output_dir / "sweep.csv", report::to_csv(report::sweep_table(points)));
    write_run_info(base.output_dir, "sweep-fp", started);
    return 0;
}

int cmd_defense(const fs::path& config_path)
{
    const auto started = utc_now();
    const auto cfg = campaign::load_config(config_path);
    const auto in = campaign::load_inputs(cfg);

    auto baseline_cfg = cfg;
    baseline_cfg.defense = {};
    std::vector<report::DefenseRow> rows;
    for (auto& r : run_repeats(baseline_cfg, in.model, in.test, {}))
        rows.push_back({"baseline", std::move(r)});
    const auto defended = campaign::defended_model(cfg, in);
    const std::string variant(defense::to_string(cfg.defense.kind));
    for (auto& r : run_repeats(cfg, defended, in.test, {}))
        rows.push_back({variant, std::move(r)});

    for (const auto& row : rows)
        fmt::print("{} seed {} {} iterations {} TA {:.4f}\n", row.variant, row.report.seed,
                   attack::to_string(row.report.status), row.report.iterations_used, row.report.post_ta);
    report::write_text(cfg.output_dir / "defense.csv", report::to_csv(report::defense_table(rows)));
    write_run_info(cfg.output_dir, "defense", started);
    return 0;
}

int cmd_verify(std::uint64_t seed)
{
    bool all = true;
    for (const auto& r : verify::run_all(seed)) {
        fmt::print("[{}] {}: {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
        all = all && r.passed;
    }
    return all ? 0 : kExitRuntime;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adversarial weight duplication attack simulator"};
    app.require_subcommand(1);

    std::size_t n = 2000;
    double noise = 0.4;
    std::uint64_t data_seed = 1;
    fs::path data_out;
    auto* make = app.add_subcommand("make-dataset", "Write the synthetic 4-class bars dataset");
    make->add_option("--n", n, "Number of samples")->capture_default_str();
    make->add_option("--noise", noise, "Pixel noise standard deviation")->capture_default_str();
    make->add_option("--seed", data_seed, "Generator seed")->capture_default_str();
    make->add_option("--out", data_out, "Output path (.csv, or .idx for an IDX pair)")->required();

    std::string arch = "mlp_small";
    fs::path train_path, test_path, model_out;
    qnn::TrainConfig tc;
    auto* train = app.add_subcommand("train-toy", "Train and quantize a toy victim model");
    train->add_option("--arch", arch, "mlp_small or cnn_small")->capture_default_str();
    train->add_option("--dataset", train_path, "Training data (.csv or .idx)")->required();
    train->add_option("--test", test_path, "Data for the reported clean TA (default: training data)");
    train->add_option("--out", model_out, "Output model file")->required();
    train->add_option("--epochs", tc.epochs)->capture_default_str();
    train->add_option("--batch-size", tc.batch_size)->capture_default_str();
    train->add_option("--lr", tc.learning_rate)->capture_default_str();
    train->add_option("--seed", tc.seed)->capture_default_str();

    fs::path config;
    auto* attack_cmd = app.add_subcommand("attack", "Run an attack campaign from a JSON config");
    attack_cmd->add_option("--config", config, "Campaign config")->required();

    std::vector<double> fps{0.4, 0.6, 0.8};
    auto* sweep = app.add_subcommand("sweep-fp", "Repeat a campaign over several injection success rates");
    sweep->add_option("--config", config, "Campaign config")->required();
    sweep->add_option("--fp", fps, "Success rates")->delimiter(',')->capture_default_str();

    auto* def = app.add_subcommand("defense", "Compare the configured defense with an undefended baseline");
    def->add_option("--config", config, "Campaign config")->required();

    std::uint64_t verify_seed = 1;
    auto* ver = app.add_subcommand("verify", "Run the invariant suite");
    ver->add_option("--seed", verify_seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*make)
            return cmd_make_dataset(n, noise, data_seed, data_out);
        if (*train)
            return cmd_train_toy(arch, train_path, test_path, model_out, tc);
        if (*attack_cmd)
            return cmd_attack(config);
        if (*sweep)
            return cmd_sweep_fp(config, fps);
        if (*def)
            return cmd_defense(config);
        if (*ver)
            return cmd_verify(verify_seed);
    } catch (const ConfigInvalid& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
