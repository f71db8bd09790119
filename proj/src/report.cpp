#include "deepdup/report.hpp"

#include "deepdup/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace deepdup::report {

std::string format_number(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::size_t Table::column(std::string_view name) const
{
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
        throw FormatError(fmt::format("no column '{}'", name));
    return static_cast<std::size_t>(it - header.begin());
}

namespace {

void append_row(std::string& out, const std::vector<std::string>& cells)
{
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i > 0)
            out += ',';
        out += cells[i];
    }
    out += '\n';
}

std::vector<std::string> split(std::string_view line)
{
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
        const auto comma = line.find(',', pos);
        cells.emplace_back(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos));
        if (comma == std::string_view::npos)
            return cells;
        pos = comma + 1;
    }
}

} // namespace

std::string to_csv(const Table& table)
{
    std::string out;
    append_row(out, table.header);
    for (const auto& row : table.rows)
        append_row(out, row);
    return out;
}

Table parse_csv(std::string_view text)
{
    Table t;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos)
            end = text.size();
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty())
            continue;
        auto cells = split(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size())
                throw FormatError(fmt::format("row has {} cells, header has {}", cells.size(), t.header.size()));
            t.rows.push_back(std::move(cells));
        }
    }
    if (first)
        throw FormatError("empty CSV document");
    return t;
}

double mean(std::span<const double> xs)
{
    if (xs.empty())
        return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs)
{
    if (xs.size() < 2)
        return 0.0;
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs)
        ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

nlohmann::ordered_json to_json(const attack::AttackReport& r)
{
    nlohmann::ordered_json j;
    j["objective"] = attack::to_string(r.objective);
    j["threat"] = attack::to_string(r.threat);
    if (r.objective == attack::ObjectiveKind::targeted)
        j["target_class"] = r.target_class;
    j["seed"] = r.seed;
    j["status"] = attack::to_string(r.status);
    j["iterations_used"] = r.iterations_used;
    j["queries_used"] = r.queries_used;
    j["evaluations"] = r.evaluations;
    j["winners"] = r.winners;
    j["effective_targets"] = r.effective_targets;
    j["fitness_trajectory"] = r.fitness_trajectory();
    j["clean_ta"] = r.clean_ta;
    j["post_attack_ta"] = r.post_ta;
    if (r.objective == attack::ObjectiveKind::targeted) {
        j["clean_asr"] = r.clean_asr;
        j["asr"] = r.asr;
        j["clean_nontarget_ta"] = r.clean_nontarget_ta;
        j["post_nontarget_ta"] = r.post_nontarget_ta;
    }
    auto faults = nlohmann::ordered_json::array();
    for (const auto& f : r.fault_log)
        faults.push_back({{"trigger_index", f.target}, {"succeeded", f.succeeded}});
    j["fault_log"] = faults;
    if (!r.permutation.is_identity())
        j["permutation"] = r.permutation.slot_to_package;
    return j;
}

Table trajectory_table(const attack::AttackReport& r)
{
    Table t;
    t.header = {"iteration",       "winner_package",      "search_fitness", "deployed_fitness",
                "deployed_metric", "deployment_attempts", "queries"};
    for (const auto& rec : r.trajectory)
        t.rows.push_back({std::to_string(rec.iteration), std::to_string(rec.winner_package),
                          format_number(rec.search_fitness), format_number(rec.deployed_fitness),
                          format_number(rec.deployed_metric), std::to_string(rec.deployment_attempts),
                          std::to_string(rec.queries)});
    return t;
}

Table aggregate_table(std::span<const attack::AttackReport> reports)
{
    Table t;
    t.header = {"metric", "mean", "std", "n"};
    const auto add = [&](const char* name, auto field) {
        std::vector<double> xs;
        for (const auto& r : reports)
            xs.push_back(static_cast<double>(field(r)));
        t.rows.push_back({name, format_number(mean(xs)), format_number(sample_std(xs)), std::to_string(xs.size())});
    };
    add("iterations_used", [](const auto& r) { return r.iterations_used; });
    add("queries_used", [](const auto& r) { return r.queries_used; });
    add("clean_ta", [](const auto& r) { return r.clean_ta; });
    add("post_ta", [](const auto& r) { return r.post_ta; });
    if (!reports.empty() && reports.front().objective == attack::ObjectiveKind::targeted) {
        add("asr", [](const auto& r) { return r.asr; });
        add("post_nontarget_ta", [](const auto& r) { return r.post_nontarget_ta; });
    }
    add("success", [](const auto& r) { return r.succeeded() ? 1.0 : 0.0; });
    return t;
}

Table sweep_table(std::span<const SweepPoint> points)
{
    std::map<double, std::vector<double>> by_fp;
    for (const auto& p : points)
        by_fp[p.fp].push_back(static_cast<double>(p.report.iterations_used));
    Table t;
    t.header = {"fp", "seed", "iterations", "status", "post_ta", "mean_iterations", "std_iterations"};
    for (const auto& p : points) {
        const auto& xs = by_fp[p.fp];
        t.rows.push_back({format_number(p.fp), std::to_string(p.report.seed), std::to_string(p.report.iterations_used),
                          std::string(attack::to_string(p.report.status)), format_number(p.report.post_ta),
                          format_number(mean(xs)), format_number(sample_std(xs))});
    }
    return t;
}

Table defense_table(std::span<const DefenseRow> rows)
{
    std::map<std::string, std::vector<double>> by_variant;
    for (const auto& r : rows)
        by_variant[r.variant].push_back(static_cast<double>(r.report.iterations_used));
    Table t;
    t.header = {"variant", "seed",    "iterations", "status",          "clean_ta",
                "post_ta", "asr",     "queries",    "mean_iterations", "std_iterations"};
    for (const auto& r : rows) {
        const auto& xs = by_variant[r.variant];
        t.rows.push_back({r.variant, std::to_string(r.report.seed), std::to_string(r.report.iterations_used),
                          std::string(attack::to_string(r.report.status)), format_number(r.report.clean_ta),
                          format_number(r.report.post_ta), format_number(r.report.asr),
                          std::to_string(r.report.queries_used), format_number(mean(xs)),
                          format_number(sample_std(xs))});
    }
    return t;
}

void write_text(const std::filesystem::path& path, std::string_view text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(fmt::format("cannot write {}", path.string()));
    out << text;
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(fmt::format("cannot read {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace deepdup::report
