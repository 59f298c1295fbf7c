#include "exanetsim/scenario.hpp"

#include <fstream>
#include <sstream>

namespace exns {

const char* benchmark_name(Benchmark b) {
  switch (b) {
    case Benchmark::Latency: return "osu_latency";
    case Benchmark::Bw: return "osu_bw";
    case Benchmark::Bibw: return "osu_bibw";
    case Benchmark::Bcast: return "osu_bcast";
    case Benchmark::Allreduce: return "osu_allreduce";
    case Benchmark::AllreduceAccel: return "osu_allreduce_accel";
    case Benchmark::OneWayLat: return "osu_one_way_lat";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

Benchmark parse_benchmark(const std::string& v) {
  if (v == "latency" || v == "osu_latency") return Benchmark::Latency;
  if (v == "bw" || v == "osu_bw") return Benchmark::Bw;
  if (v == "bibw" || v == "osu_bibw") return Benchmark::Bibw;
  if (v == "bcast" || v == "osu_bcast") return Benchmark::Bcast;
  if (v == "allreduce" || v == "osu_allreduce") return Benchmark::Allreduce;
  if (v == "allreduce_accel" || v == "osu_allreduce_accel") return Benchmark::AllreduceAccel;
  if (v == "one_way_lat" || v == "osu_one_way_lat") return Benchmark::OneWayLat;
  throw ScenarioError("unknown benchmark: " + v);
}

Placement parse_placement(const std::string& v) {
  if (v == "block") return Placement::Block;
  if (v == "spread") return Placement::Spread;
  throw ScenarioError("unknown placement: " + v);
}

RankSlot parse_slot(const std::string& v) {
  RankSlot s;
  if (std::sscanf(v.c_str(), "%d,%d,%d,%d,%d", &s.x, &s.y, &s.z, &s.fpga, &s.core) < 4)
    throw ScenarioError("bad rank slot (want x,y,z,fpga[,core]): " + v);
  return s;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

std::int64_t parse_size(const std::string& v) {
  // accepts plain bytes plus K/M suffixes (binary)
  std::size_t pos = 0;
  double x = std::stod(v, &pos);
  std::string suffix = trim(v.substr(pos));
  if (suffix == "" || suffix == "B" || suffix == "b") return static_cast<std::int64_t>(x);
  if (suffix == "K" || suffix == "KiB" || suffix == "k") return static_cast<std::int64_t>(x * 1024);
  if (suffix == "M" || suffix == "MiB" || suffix == "m")
    return static_cast<std::int64_t>(x * 1024 * 1024);
  throw ScenarioError("bad size: " + v);
}

void apply_calibration(CalibrationParams& c, const std::string& key, const std::string& v) {
  double x = std::stod(v);
  if (key == "link_latency_ns") c.link_latency_ns = x;
  else if (key == "router_block_ns") c.router_block_ns = x;
  else if (key == "local_switch_ns") c.local_switch_ns = x;
  else if (key == "base_intra_fpga_ns") c.base_intra_fpga_ns = x;
  else if (key == "pkt_hw_one_way_ns") c.pkt_hw_one_way_ns = x;
  else if (key == "copy_ns") c.copy_ns = x;
  else if (key == "rdma_rate_gbps") c.rdma_rate_gbps = x;
  else if (key == "rdma_stream_util") c.rdma_stream_util = x;
  else if (key == "ext_hop_payload_gbps") c.ext_hop_payload_gbps = x;
  else if (key == "firmware_overhead_ns") c.firmware_overhead_ns = x;
  else if (key == "rdma_small_latency_64b_ns") c.rdma_small_latency_64b_ns = x;
  else if (key == "mpi_sw_ns") c.mpi_sw_ns = x;
  else if (key == "rv_rts_sw_ns") c.rv_rts_sw_ns = x;
  else if (key == "rv_cts_sw_ns") c.rv_cts_sw_ns = x;
  else if (key == "rv_complete_sw_ns") c.rv_complete_sw_ns = x;
  else if (key == "rdma_recv_hw_ns") c.rdma_recv_hw_ns = x;
  else if (key == "intra_qfdb_gbps") c.intra_qfdb_gbps = x;
  else if (key == "external_gbps") c.external_gbps = x;
  else if (key == "pkt_timeout_ns") c.pkt_timeout_ns = x;
  else if (key == "pkt_max_retries") c.pkt_max_retries = static_cast<int>(x);
  else if (key == "block_ack_timeout_ns") c.block_ack_timeout_ns = x;
  else if (key == "fault_service_ns") c.fault_service_ns = x;
  else if (key == "tlb_walk_ns") c.tlb_walk_ns = x;
  else if (key == "mailbox_capacity") c.mailbox_capacity = static_cast<int>(x);
  else throw ScenarioError("unknown calibration key: " + key);
}

void apply_accel(AccelParams& a, const std::string& key, const std::string& v) {
  double x = std::stod(v);
  if (key == "sw_trigger_ns") a.sw_trigger_ns = x;
  else if (key == "client_dma_ns") a.client_dma_ns = x;
  else if (key == "hw_reduce_ns") a.hw_reduce_ns = x;
  else if (key == "client_write_ns") a.client_write_ns = x;
  else if (key == "sw_complete_ns") a.sw_complete_ns = x;
  else throw ScenarioError("unknown accel key: " + key);
}

}  // namespace

std::pair<RankSlot, RankSlot> path_preset(const std::string& label) {
  if (label == "intra-fpga") return {{0, 0, 0, 1, 0}, {0, 0, 0, 1, 1}};
  if (label == "intra-qfdb-sh") return {{0, 0, 0, 0, 0}, {0, 0, 0, 1, 0}};
  if (label == "intra-mezz-sh") return {{0, 0, 0, 0, 0}, {1, 0, 0, 0, 0}};
  if (label == "intra-mezz-mh2") return {{0, 0, 0, 0, 0}, {1, 0, 0, 1, 0}};
  if (label == "intra-mezz-mh3") return {{0, 0, 0, 1, 0}, {1, 0, 0, 2, 0}};
  if (label == "inter-mezz-3-1-2") return {{0, 0, 0, 1, 0}, {1, 2, 1, 2, 0}};
  throw ScenarioError("unknown path preset: " + label);
}

std::vector<std::string> known_path_presets() {
  return {"intra-fpga",     "intra-qfdb-sh",  "intra-mezz-sh",
          "intra-mezz-mh2", "intra-mezz-mh3", "inter-mezz-3-1-2"};
}

void Scenario::validate() const {
  if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw ScenarioError("dims must be >= 1");
  if (n_ranks < 1) throw ScenarioError("n_ranks must be >= 1");
  if (iterations <= warmup || warmup < 0)
    throw ScenarioError("need iterations > warmup >= 0");
  if (repetitions < 1) throw ScenarioError("repetitions must be >= 1");
  if (sizes.empty()) throw ScenarioError("need at least one message size");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] < sizes[i - 1]) throw ScenarioError("sizes must be sorted ascending");
  if (loss_pct < 0 || loss_pct > 1) throw ScenarioError("loss_pct must be in [0,1]");
  if (window < 1) throw ScenarioError("window must be >= 1");
  cal.validate();
}

Scenario Scenario::parse_text(const std::string& text) {
  Scenario s;
  std::istringstream is(text);
  std::string line, section = "scenario";
  while (std::getline(is, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = t.substr(1, t.size() - 2);
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ScenarioError("bad line: " + line);
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (section == "calibration") {
      apply_calibration(s.cal, key, val);
      continue;
    }
    if (section == "accel") {
      apply_accel(s.accel, key, val);
      continue;
    }
    if (section == "faults") {
      if (key == "loss_pct") s.loss_pct = std::stod(val);
      else throw ScenarioError("unknown faults key: " + key);
      continue;
    }
    if (section != "scenario" && section != "topology")
      throw ScenarioError("unknown section: " + section);
    if (key.rfind("link_rate_gbps.", 0) == 0) {
      int a = 0, b = 0;
      if (std::sscanf(key.c_str(), "link_rate_gbps.%d.%d", &a, &b) != 2)
        throw ScenarioError("bad link override key: " + key);
      s.link_overrides.push_back({a, b, std::stod(val)});
      continue;
    }
    if (key == "name") s.name = val;
    else if (key == "benchmark") s.benchmark = parse_benchmark(val);
    else if (key == "dims") {
      if (std::sscanf(val.c_str(), "%d,%d,%d", &s.dims.nx, &s.dims.ny, &s.dims.nz) != 3)
        throw ScenarioError("bad dims: " + val);
    } else if (key == "ranks") s.n_ranks = std::stoi(val);
    else if (key == "placement") s.placement = parse_placement(val);
    else if (key == "sw_placement") s.sw_placement = parse_placement(val);
    else if (key == "sizes") {
      s.sizes.clear();
      for (const std::string& x : split_list(val)) s.sizes.push_back(parse_size(x));
    } else if (key == "iterations") s.iterations = std::stoi(val);
    else if (key == "warmup") s.warmup = std::stoi(val);
    else if (key == "repetitions") s.repetitions = std::stoi(val);
    else if (key == "seed") s.seed = std::stoull(val);
    else if (key == "eager_threshold") s.eager_threshold = std::stoi(val);
    else if (key == "window") s.window = std::stoi(val);
    else if (key == "op") {
      if (val == "sum") s.op = ReduceOp::Sum;
      else if (val == "min") s.op = ReduceOp::Min;
      else if (val == "max") s.op = ReduceOp::Max;
      else throw ScenarioError("unknown op: " + val);
    } else if (key == "dtype") {
      if (val == "int32") s.dtype = Dtype::Int32;
      else if (val == "float32") s.dtype = Dtype::Float32;
      else if (val == "float64") s.dtype = Dtype::Float64;
      else throw ScenarioError("unknown dtype: " + val);
    } else if (key == "paths") s.paths = split_list(val);
    else if (key == "pair") {
      auto colon = val.find(':');
      if (colon == std::string::npos) throw ScenarioError("bad pair: " + val);
      s.pair = {parse_slot(trim(val.substr(0, colon))), parse_slot(trim(val.substr(colon + 1)))};
    } else if (key == "trace") s.trace = (val == "1" || val == "true" || val == "on");
    else throw ScenarioError("unknown scenario key: " + key);
  }
  return s;
}

Scenario Scenario::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ScenarioError("cannot open scenario file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse_text(os.str());
}

std::string Scenario::dump_text() const {
  std::ostringstream os;
  os << "[scenario]\n";
  os << "name = " << name << "\n";
  os << "benchmark = " << benchmark_name(benchmark) << "\n";
  os << "dims = " << dims.nx << "," << dims.ny << "," << dims.nz << "\n";
  os << "ranks = " << n_ranks << "\n";
  os << "placement = " << (placement == Placement::Block ? "block" : "spread") << "\n";
  os << "sizes =";
  for (std::size_t i = 0; i < sizes.size(); ++i) os << (i ? "," : " ") << sizes[i];
  os << "\n";
  os << "iterations = " << iterations << "\n";
  os << "warmup = " << warmup << "\n";
  os << "repetitions = " << repetitions << "\n";
  os << "seed = " << seed << "\n";
  os << "window = " << window << "\n";
  if (!paths.empty()) {
    os << "paths =";
    for (std::size_t i = 0; i < paths.size(); ++i) os << (i ? "," : " ") << paths[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace exns
