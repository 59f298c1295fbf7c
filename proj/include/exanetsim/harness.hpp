#ifndef EXANETSIM_HARNESS_HPP_
#define EXANETSIM_HARNESS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "exanetsim/scenario.hpp"

namespace exns {

class BadRankCount : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ReportRow {
  std::string benchmark;
  std::string path_class;
  int n_ranks = 0;
  std::int64_t size_bytes = 0;
  std::string metric;
  double value = 0;
  std::optional<double> model_value;
  std::string paper_ref;  // "<value> (<citation>)" when a reference exists
  std::optional<double> reference;
  std::optional<double> deviation_pct;  // (value - reference) / reference * 100
};

// Published measurement the harness can compare against.
struct RefEntry {
  const char* benchmark;
  const char* path;
  int n_ranks;
  std::int64_t size;
  const char* metric;
  double value;
  const char* citation;
};

const std::vector<RefEntry>& reference_table();
void annotate_references(std::vector<ReportRow>& rows);

// Benchmark drivers. Each builds isolated machine instances seeded from
// the scenario.
std::vector<ReportRow> run_osu_latency(const Scenario& s);
std::vector<ReportRow> run_osu_bw(const Scenario& s);
std::vector<ReportRow> run_osu_bibw(const Scenario& s);
std::vector<ReportRow> run_one_way_lat(const Scenario& s);
std::vector<ReportRow> run_collective_bench(const Scenario& s);
std::vector<ReportRow> run_scenario(const Scenario& s);

// One-way latency (send post to receive completion) between a rank pair
// of the given class, used to seed the broadcast prediction.
double measure_one_way_us(const Scenario& base, StepClass cls, std::int64_t size);

// Serialization of report rows.
std::string rows_to_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> rows_from_csv(const std::string& text);
std::string rows_to_json(const Scenario& s, const std::vector<ReportRow>& rows);

// Joins rows against the embedded reference table and the analytic
// model, producing deviation rows (the `compare` subcommand).
std::vector<ReportRow> compare_rows(const std::vector<ReportRow>& rows);

// Writes results.csv / results.json / meta.json into out_dir.
void write_outputs(const std::string& out_dir, const Scenario& s,
                   const std::vector<ReportRow>& rows);

// CLI entry: run | sweep | compare | trace.
int cli_main(const std::vector<std::string>& args);

}  // namespace exns

#endif  // EXANETSIM_HARNESS_HPP_
