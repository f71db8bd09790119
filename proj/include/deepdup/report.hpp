#pragma once

#include "deepdup/orchestrator.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace deepdup::report {

/// Shortest decimal form that parses back to the same double.
std::string format_number(double v);

/// Minimal CSV table: a header row and string cells. Cells never contain
/// commas, quotes or newlines, so no quoting is applied.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const;
    bool operator==(const Table&) const = default;
};

std::string to_csv(const Table& table);
/// Throws FormatError on ragged rows or an empty document.
Table parse_csv(std::string_view text);

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(std::span<const double> xs);

/// Deterministic for a given report: no timestamps or host details.
nlohmann::ordered_json to_json(const attack::AttackReport& r);

/// iteration,winner_package,search_fitness,deployed_fitness,deployed_metric,deployment_attempts,queries
Table trajectory_table(const attack::AttackReport& r);

/// metric,mean,std,n over iterations_used, queries_used, clean_ta, post_ta
/// and, for targeted runs, asr and post_nontarget_ta.
Table aggregate_table(std::span<const attack::AttackReport> reports);

/// fp,seed,iterations,status,post_ta,mean_iterations,std_iterations;
/// the last two columns summarise all seeds of that fp.
struct SweepPoint {
    double fp;
    attack::AttackReport report;
};
Table sweep_table(std::span<const SweepPoint> points);

/// variant,seed,iterations,status,clean_ta,post_ta,asr,queries,mean_iterations,std_iterations
struct DefenseRow {
    std::string variant;
    attack::AttackReport report;
};
Table defense_table(std::span<const DefenseRow> rows);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

} // namespace deepdup::report
