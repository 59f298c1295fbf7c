#ifndef EXANETSIM_SCENARIO_HPP_
#define EXANETSIM_SCENARIO_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exanetsim/accel.hpp"
#include "exanetsim/latmodel.hpp"
#include "exanetsim/runtime.hpp"
#include "exanetsim/topology.hpp"

namespace exns {

enum class Benchmark {
  Latency,
  Bw,
  Bibw,
  Bcast,
  Allreduce,
  AllreduceAccel,
  OneWayLat,
};

const char* benchmark_name(Benchmark b);

class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RankSlot {
  int x = 0, y = 0, z = 0, fpga = 0, core = 0;
};

// Benchmark configuration, loadable from a flat key = value file with
// [sections].
struct Scenario {
  std::string name = "scenario";
  Benchmark benchmark = Benchmark::Latency;
  Dims dims{4, 4, 2};
  int n_ranks = 2;
  Placement placement = Placement::Block;
  Placement sw_placement = Placement::Block;  // software baseline of allreduce_accel
  std::vector<std::int64_t> sizes{0};
  int iterations = 20;
  int warmup = 2;
  int repetitions = 30;
  std::uint64_t seed = 1;
  int eager_threshold = 32;
  int window = 64;
  ReduceOp op = ReduceOp::Sum;
  Dtype dtype = Dtype::Float64;
  std::vector<std::string> paths;          // point-to-point pair presets
  std::optional<std::pair<RankSlot, RankSlot>> pair;
  double loss_pct = 0.0;
  bool trace = false;
  std::string trace_path;  // set by the CLI when tracing is on
  // (src node, dst node, Gb/s) overrides applied to the built topology
  std::vector<std::tuple<int, int, double>> link_overrides;
  CalibrationParams cal;
  AccelParams accel;

  void validate() const;

  static Scenario parse_text(const std::string& text);
  static Scenario load_file(const std::string& path);
  std::string dump_text() const;
};

// Resolves a path-class preset label to a rank pair on the scenario's
// topology.
std::pair<RankSlot, RankSlot> path_preset(const std::string& label);
std::vector<std::string> known_path_presets();

}  // namespace exns

#endif  // EXANETSIM_SCENARIO_HPP_
