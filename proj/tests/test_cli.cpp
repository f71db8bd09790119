#include "fixtures.hpp"

#include "deepdup/campaign.hpp"
#include "deepdup/dataset.hpp"
#include "deepdup/error.hpp"
#include "deepdup/model_io.hpp"
#include "deepdup/report.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace deepdup;
using json = nlohmann::json;

namespace {

const fs::path& workdir()
{
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "deepdup_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        const auto& t = fixtures::toy();
        data::write_csv(t.train, d / "train.csv");
        data::write_csv(t.test, d / "test.csv");
        qnn::save_model(t.model, d / "model.ddqm");
        return d;
    }();
    return dir;
}

json base_config(const std::string& out)
{
    return json{{"paths", {{"model", "model.ddqm"}, {"dataset", "test.csv"}, {"output_dir", out}}},
                {"objective", {{"kind", "untargeted"}, {"stop_threshold", 0.30}}},
                {"channel", {{"min_attack_gap", 2}}},
                {"search", {{"z", 10}, {"max_iterations", 30}}},
                {"repeats", 3},
                {"seed", 1}};
}

fs::path write_config(const std::string& name, const json& doc)
{
    const auto path = workdir() / name;
    std::ofstream(path) << doc.dump(2);
    return path;
}

struct Run {
    int code;
    std::string output;
};

Run cli(const std::string& args)
{
    const auto log = workdir() / "cli.log";
    const auto cmd = std::string(DEEPDUP_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, report::read_text(log)};
}

} // namespace

TEST(Config, ParsesAndRoundTrips)
{
    auto doc = base_config("out");
    doc["threat"] = {{"kind", "black_box"}, {"query_budget", 500}};
    doc["defense"] = {{"kind", "shuffle_random"}, {"shuffle_seed", 4}};
    doc["trace"] = true;
    const auto cfg = campaign::parse_config(doc, "/base");
    EXPECT_EQ(cfg.model_path, fs::path("/base/model.ddqm"));
    EXPECT_EQ(cfg.search.mode, pdes::SearchMode::black_box_1d);
    EXPECT_EQ(cfg.threat.query_budget, 500u);
    EXPECT_EQ(cfg.defense.kind, defense::DefenseKind::shuffle_random);
    EXPECT_TRUE(cfg.trace);
    EXPECT_EQ(cfg.seed_of(2), 3u);
    const auto again = campaign::parse_config(json::parse(campaign::to_json(cfg).dump()));
    EXPECT_EQ(campaign::to_json(again), campaign::to_json(cfg));
}

TEST(Config, FieldLevelErrors)
{
    const auto expect_field = [](json doc, const std::string& field) {
        try {
            campaign::parse_config(doc);
            ADD_FAILURE() << "no error for " << field;
        } catch (const ConfigInvalid& e) {
            EXPECT_EQ(e.field(), field);
        }
    };
    auto doc = base_config("out");
    doc["objective"]["kind"] = "sideways";
    expect_field(doc, "objective.kind");
    doc = base_config("out");
    doc["search"]["zz"] = 3;
    expect_field(doc, "search.zz");
    doc = base_config("out");
    doc["search"]["z"] = -4;
    expect_field(doc, "search.z");
    doc = base_config("out");
    doc["channel"]["fp"] = 1.5;
    expect_field(doc, "channel.fp");
    doc = base_config("out");
    doc["repeats"] = 0;
    expect_field(doc, "repeats");
    doc = base_config("out");
    doc["paths"].erase("model");
    expect_field(doc, "paths.model");
    doc = base_config("out");
    doc["defense"] = {{"kind", "widen_model"}};
    expect_field(doc, "paths.train_dataset");
    doc = base_config("out");
    doc["trace"] = 1;
    expect_field(doc, "trace");
    doc = base_config("out");
    doc["colour"] = "blue";
    expect_field(doc, "colour");
}

TEST(Config, MissingFilesRejectedOnLoad)
{
    auto doc = base_config("out");
    doc["paths"]["model"] = "absent.ddqm";
    try {
        campaign::load_config(write_config("missing.json", doc));
        ADD_FAILURE();
    } catch (const ConfigInvalid& e) {
        EXPECT_EQ(e.field(), "paths.model");
    }
}

TEST(Report, CsvRoundTripAndStats)
{
    const report::Table t{{"a", "b"}, {{"1", "0.1"}, {"2", "x"}}};
    EXPECT_EQ(report::parse_csv(report::to_csv(t)), t);
    EXPECT_THROW(report::parse_csv("a,b\n1\n"), FormatError);
    EXPECT_THROW(report::parse_csv(""), FormatError);
    const std::vector<double> xs{2, 4, 9};
    EXPECT_DOUBLE_EQ(report::mean(xs), 5.0);
    EXPECT_DOUBLE_EQ(report::sample_std(xs), std::sqrt(13.0));
    EXPECT_EQ(report::format_number(0.1), "0.1");
    EXPECT_EQ(std::stod(report::format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Cli, AttackWritesReportsAndAggregate)
{
    const auto out = workdir() / "attack";
    const auto r = cli("attack --config " + write_config("attack.json", base_config("attack")).string());
    ASSERT_EQ(r.code, 0) << r.output;
    double sum = 0;
    for (int seed = 1; seed <= 3; ++seed) {
        const auto rep = json::parse(report::read_text(out / ("report_seed" + std::to_string(seed) + ".json")));
        EXPECT_EQ(rep.at("seed"), seed);
        sum += rep.at("iterations_used").get<double>();
        EXPECT_EQ(rep.at("winners").size(), rep.at("iterations_used").get<std::size_t>());
        const auto traj = report::parse_csv(report::read_text(out / ("trajectory_seed" + std::to_string(seed) + ".csv")));
        EXPECT_EQ(traj.rows.size(), rep.at("iterations_used").get<std::size_t>());
    }
    const auto agg = report::parse_csv(report::read_text(out / "aggregate.csv"));
    EXPECT_EQ(agg.header, (std::vector<std::string>{"metric", "mean", "std", "n"}));
    EXPECT_EQ(agg.rows[0][0], "iterations_used");
    EXPECT_DOUBLE_EQ(std::stod(agg.rows[0][1]), sum / 3.0);
    EXPECT_TRUE(fs::exists(out / "run_info.json"));
    std::size_t reports = 0;
    for (const auto& e : fs::directory_iterator(out))
        reports += e.path().filename().string().rfind("report_seed", 0) == 0;
    EXPECT_EQ(reports, 3u);
}

TEST(Cli, ReportsAreByteReproducibleAndCsvsRoundTrip)
{
    auto doc = base_config("repro_a");
    doc["threat"] = {{"kind", "black_box"}};
    doc["objective"] = {{"kind", "targeted"}, {"eval_batch", 64}};
    doc["channel"]["fp"] = 0.85;
    doc["search"] = {{"z", 8}, {"max_iterations", 4}};
    doc["repeats"] = 1;
    doc["trace"] = true;
    const auto a = cli("attack --config " + write_config("repro_a.json", doc).string());
    doc["paths"]["output_dir"] = "repro_b";
    const auto b = cli("attack --config " + write_config("repro_b.json", doc).string());
    ASSERT_NE(a.code, 2) << a.output;
    EXPECT_EQ(a.code, b.code);
    for (const auto* name : {"report_seed1.json", "trajectory_seed1.csv", "aggregate.csv", "trace_seed1.jsonl"})
        EXPECT_EQ(report::read_text(workdir() / "repro_a" / name), report::read_text(workdir() / "repro_b" / name))
            << name;
    for (const auto* name : {"trajectory_seed1.csv", "aggregate.csv"}) {
        const auto text = report::read_text(workdir() / "repro_a" / name);
        EXPECT_EQ(report::to_csv(report::parse_csv(text)), text) << name;
    }
    std::ifstream trace(workdir() / "repro_a" / "trace_seed1.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(trace, line)) {
        EXPECT_NO_THROW(json::parse(line));
        ++lines;
    }
    EXPECT_EQ(lines % 8, 0u);
    EXPECT_GT(lines, 0u);
}

TEST(Cli, ExitCodes)
{
    auto doc = base_config("bad");
    doc["objective"]["kind"] = "sideways";
    const auto bad = cli("attack --config " + write_config("bad.json", doc).string());
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.output.find("objective.kind"), std::string::npos) << bad.output;

    EXPECT_EQ(cli("attack").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);

    doc = base_config("exhausted");
    doc["objective"]["stop_threshold"] = 0.0;
    doc["search"]["max_iterations"] = 1;
    doc["repeats"] = 1;
    EXPECT_EQ(cli("attack --config " + write_config("exhausted.json", doc).string()).code, 3);
}

TEST(Cli, SweepWritesOneRowPerRateAndSeed)
{
    const auto r = cli("sweep-fp --config " + write_config("sweep.json", base_config("sweep")).string() +
                       " --fp 0.4,0.6,0.8");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = report::parse_csv(report::read_text(workdir() / "sweep" / "sweep.csv"));
    ASSERT_EQ(t.rows.size(), 9u);
    EXPECT_EQ(t.rows[0][t.column("fp")], "0.4");
    EXPECT_EQ(t.rows[8][t.column("fp")], "0.8");
    EXPECT_EQ(cli("sweep-fp --config " + (workdir() / "sweep.json").string() + " --fp 0.4,1.2").code, 2);
}

TEST(Cli, DefenseBaselineMatchesAttack)
{
    const auto ref = cli("attack --config " + write_config("defense_ref.json", base_config("defense_ref")).string());
    ASSERT_EQ(ref.code, 0) << ref.output;
    auto doc = base_config("defense");
    doc["defense"] = {{"kind", "protect_layers"}, {"protected_layers", {2}}};
    const auto r = cli("defense --config " + write_config("defense.json", doc).string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = report::parse_csv(report::read_text(workdir() / "defense" / "defense.csv"));
    ASSERT_EQ(t.rows.size(), 6u);
    for (int i = 0; i < 3; ++i) {
        const auto rep = json::parse(
            report::read_text(workdir() / "defense_ref" / ("report_seed" + std::to_string(i + 1) + ".json")));
        EXPECT_EQ(t.rows[i][t.column("variant")], "baseline");
        EXPECT_EQ(std::stoul(t.rows[i][t.column("iterations")]), rep.at("iterations_used").get<std::size_t>());
        EXPECT_EQ(std::stod(t.rows[i][t.column("post_ta")]), rep.at("post_attack_ta").get<double>());
        EXPECT_EQ(t.rows[i + 3][t.column("variant")], "protect_layers");
    }
    const auto csv = report::read_text(workdir() / "defense" / "defense.csv");
    EXPECT_EQ(report::to_csv(report::parse_csv(csv)), csv);

    doc["defense"]["protected_layers"] = {0, 1, 2};
    const auto all = cli("defense --config " + write_config("protect_all.json", doc).string());
    EXPECT_EQ(all.code, 1);
    EXPECT_NE(all.output.find("AllPackagesProtected"), std::string::npos) << all.output;
}

TEST(Cli, TrainToyAndDataset)
{
    const auto d = workdir();
    ASSERT_EQ(cli("make-dataset --n 300 --seed 4 --out " + (d / "small.csv").string()).code, 0);
    const auto train = [&](const std::string& out) {
        return cli("train-toy --dataset " + (d / "small.csv").string() + " --epochs 5 --out " + (d / out).string());
    };
    const auto a = train("a.ddqm");
    ASSERT_EQ(a.code, 0) << a.output;
    EXPECT_NE(a.output.find("clean TA"), std::string::npos);
    ASSERT_EQ(train("b.ddqm").code, 0);
    EXPECT_EQ(report::read_text(d / "a.ddqm"), report::read_text(d / "b.ddqm"));

    std::ofstream(d / "empty.csv").close();
    const auto empty = cli("train-toy --dataset " + (d / "empty.csv").string() + " --out " + (d / "c.ddqm").string());
    EXPECT_EQ(empty.code, 1);
    EXPECT_NE(empty.output.find("DatasetUnreadable"), std::string::npos);
}

TEST(Cli, VerifyPasses)
{
    const auto r = cli("verify");
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}
