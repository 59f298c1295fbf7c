#include "exanetsim/accel.hpp"

#include <algorithm>

namespace exns {

AccelSchedule build_accel_schedule(int n_ranks) {
  if (n_ranks < 4 || n_ranks % kFpgasPerQfdb != 0)
    throw InvalidRankCount("accelerator needs a multiple of 4 ranks");
  if (n_ranks > kAccelMaxRanks)
    throw InvalidRankCount("accelerator supports at most 1024 ranks");
  if ((n_ranks & (n_ranks - 1)) != 0)
    throw InvalidRankCount("accelerator schedule needs a power-of-two rank count");
  AccelSchedule s;
  s.n_ranks = n_ranks;
  s.n_servers = n_ranks / kFpgasPerQfdb;
  for (int d = kFpgasPerQfdb; d < n_ranks; d <<= 1) s.exchange_distances.push_back(d);
  return s;
}

namespace {

// Per-run state shared by the client/server coroutines of one block.
struct AccelRun {
  Machine* m = nullptr;
  const AccelConfig* cfg = nullptr;
  AccelSchedule sched;
  std::uint32_t block_off = 0;
  std::uint32_t block_len = 0;

  std::vector<std::vector<std::uint8_t>> value;       // per server, current vector
  std::vector<std::vector<std::uint8_t>> client_in;   // per server, gathered client data
  std::vector<int> client_arrivals;                   // per server
  std::vector<std::unique_ptr<Gate>> gather_gate;     // per server
  std::vector<std::vector<std::vector<std::uint8_t>>> xch_data;  // [server][level]
  std::vector<std::vector<std::unique_ptr<Gate>>> xch_gate;
  std::vector<std::vector<std::uint8_t>> result;      // per server, broadcast result
  std::vector<std::unique_ptr<Gate>> result_gate;     // per rank
  std::vector<TimePs> done;                           // per rank
  Gate* all_done = nullptr;
  int remaining = 0;

  int server_node(int s) const { return s * kFpgasPerQfdb; }
  int rank_node(int r) const { return r; }  // one rank per FPGA

  gvas::GlobalVirtualAddress node_gva(int node) const {
    return gvas::pack_address(0, static_cast<std::uint64_t>(node), 0, 0);
  }

  void send_vector(int from_node, int to_node, int level, std::vector<std::uint8_t> bytes) {
    auto cell = std::make_shared<Cell>();
    cell->dst = node_gva(to_node);
    cell->kind = CellKind::AccelVector;
    cell->payload_len = static_cast<std::uint16_t>(bytes.size());
    cell->payload = std::move(bytes);
    AccelInfo info;
    info.level = level;
    cell->info = info;
    cell->seq = static_cast<std::uint64_t>(level + 3);
    m->fabric().inject(from_node, std::move(cell));
  }

  void combine(std::vector<std::uint8_t>& lower, const std::vector<std::uint8_t>& upper) {
    std::vector<std::uint8_t> out(lower.size());
    reduce_vectors(cfg->op, cfg->dtype, lower.data(), upper.data(), out.data(), lower.size());
    lower = std::move(out);
  }

  void on_cell(int node, CellPtr cell) {
    const AccelInfo& info = std::get<AccelInfo>(cell->info);
    int s = node / kFpgasPerQfdb;
    if (info.level == -1) {
      // client -> server gather; clients combine in FPGA order
      int idx = cell->src_node % kFpgasPerQfdb;  // 1..3
      auto& dst = client_in[static_cast<std::size_t>(s)];
      std::size_t at = static_cast<std::size_t>(idx - 1) * block_len;
      std::copy(cell->payload.begin(), cell->payload.end(), dst.begin() + at);
      if (++client_arrivals[static_cast<std::size_t>(s)] == kFpgasPerQfdb - 1)
        gather_gate[static_cast<std::size_t>(s)]->open();
    } else if (info.level >= 0) {
      xch_data[static_cast<std::size_t>(s)][static_cast<std::size_t>(info.level)] =
          cell->payload;
      xch_gate[static_cast<std::size_t>(s)][static_cast<std::size_t>(info.level)]->open();
    } else {  // -2: server -> client result
      result[static_cast<std::size_t>(s)] = cell->payload;
      result_gate[static_cast<std::size_t>(node)]->open();
    }
  }

  Task server_proc(int s) {
    EventQueue& q = m->queue();
    const AccelParams& p = cfg->params;
    co_await sleep_for(q, ns_to_ps(p.sw_trigger_ns));
    co_await sleep_for(q, ns_to_ps(p.client_dma_ns));  // own vector DMA
    co_await gather_gate[static_cast<std::size_t>(s)]->wait();
    // Level 0: reduce the QFDB's four ranks pairwise in rank order.
    co_await sleep_for(q, ns_to_ps(p.hw_reduce_ns));
    {
      auto& cin = client_in[static_cast<std::size_t>(s)];
      std::vector<std::uint8_t> v1(cin.begin(), cin.begin() + block_len);
      std::vector<std::uint8_t> v2(cin.begin() + block_len, cin.begin() + 2 * block_len);
      std::vector<std::uint8_t> v3(cin.begin() + 2 * block_len, cin.begin() + 3 * block_len);
      auto& mine = value[static_cast<std::size_t>(s)];
      combine(mine, v1);        // (r0 + r1)
      combine(v2, v3);          // (r2 + r3)
      combine(mine, v2);
    }
    // Pairwise server exchanges at doubling rank distance.
    for (std::size_t l = 0; l < sched.exchange_distances.size(); ++l) {
      int d_servers = sched.exchange_distances[l] / kFpgasPerQfdb;
      int partner = s ^ d_servers;
      send_vector(server_node(s), server_node(partner), static_cast<int>(l),
                  value[static_cast<std::size_t>(s)]);
      co_await xch_gate[static_cast<std::size_t>(s)][l]->wait();
      co_await sleep_for(q, ns_to_ps(p.hw_reduce_ns));
      auto& theirs = xch_data[static_cast<std::size_t>(s)][l];
      if (s < partner) {
        combine(value[static_cast<std::size_t>(s)], theirs);
      } else {
        std::vector<std::uint8_t> v = theirs;
        combine(v, value[static_cast<std::size_t>(s)]);
        value[static_cast<std::size_t>(s)] = std::move(v);
      }
    }
    // Final level: broadcast to the QFDB's clients, then update memory
    // and notify the software.
    for (int c = 1; c < kFpgasPerQfdb; ++c)
      send_vector(server_node(s), server_node(s) + c, -2, value[static_cast<std::size_t>(s)]);
    result[static_cast<std::size_t>(s)] = value[static_cast<std::size_t>(s)];
    co_await sleep_for(q, ns_to_ps(p.client_write_ns + p.sw_complete_ns));
    finish_rank(server_node(s));
  }

  Task client_proc(int r) {
    EventQueue& q = m->queue();
    const AccelParams& p = cfg->params;
    int s = r / kFpgasPerQfdb;
    co_await sleep_for(q, ns_to_ps(p.sw_trigger_ns));
    co_await sleep_for(q, ns_to_ps(p.client_dma_ns));
    send_vector(rank_node(r), server_node(s), -1, value_of_rank(r));
    co_await result_gate[static_cast<std::size_t>(rank_node(r))]->wait();
    co_await sleep_for(q, ns_to_ps(p.client_write_ns + p.sw_complete_ns));
    finish_rank(rank_node(r));
  }

  std::function<std::vector<std::uint8_t>(int)> rank_block;
  std::vector<std::uint8_t> value_of_rank(int r) { return rank_block(r); }

  void finish_rank(int node) {
    done[static_cast<std::size_t>(node)] = m->queue().now();
    if (--remaining == 0) all_done->open();
  }
};

}  // namespace

AccelResult accel_allreduce(Machine& m, const AccelConfig& cfg,
                            const std::vector<std::vector<std::uint8_t>>& inputs) {
  AccelSchedule sched;
  try {
    sched = build_accel_schedule(cfg.n_ranks);
  } catch (const InvalidRankCount& e) {
    throw FallbackToSoftware(e.what());
  }
  if (cfg.n_ranks > m.num_nodes())
    throw FallbackToSoftware("not enough FPGAs for one rank per FPGA");
  int ds = dtype_size(cfg.dtype);
  if (cfg.vector_bytes == 0 || cfg.vector_bytes % static_cast<std::uint32_t>(ds) != 0)
    throw FallbackToSoftware("vector size not a multiple of the datatype");
  if (static_cast<int>(inputs.size()) != cfg.n_ranks)
    throw FallbackToSoftware("one input vector per rank required");

  AccelResult out;
  out.vectors.assign(static_cast<std::size_t>(cfg.n_ranks), {});
  TimePs t0 = m.now();

  std::uint32_t n_blocks = (cfg.vector_bytes + kAccelBlockBytes - 1) / kAccelBlockBytes;
  int levels = static_cast<int>(sched.exchange_distances.size());

  // Bigger vectors run as independent 256-byte operations, triggered
  // back to back.
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    AccelRun run;
    run.m = &m;
    run.cfg = &cfg;
    run.sched = sched;
    run.block_off = b * kAccelBlockBytes;
    run.block_len = std::min<std::uint32_t>(kAccelBlockBytes, cfg.vector_bytes - run.block_off);

    int ns = sched.n_servers;
    run.value.resize(static_cast<std::size_t>(ns));
    run.client_in.assign(static_cast<std::size_t>(ns),
                         std::vector<std::uint8_t>(3 * run.block_len));
    run.client_arrivals.assign(static_cast<std::size_t>(ns), 0);
    run.result.resize(static_cast<std::size_t>(ns));
    run.done.assign(static_cast<std::size_t>(cfg.n_ranks), 0);
    run.remaining = cfg.n_ranks;
    Gate all_done(m.queue());
    run.all_done = &all_done;
    for (int s = 0; s < ns; ++s) {
      run.gather_gate.push_back(std::make_unique<Gate>(m.queue()));
      run.xch_gate.emplace_back();
      run.xch_data.emplace_back(static_cast<std::size_t>(levels));
      for (int l = 0; l < levels; ++l)
        run.xch_gate.back().push_back(std::make_unique<Gate>(m.queue()));
    }
    for (int r = 0; r < cfg.n_ranks; ++r)
      run.result_gate.push_back(std::make_unique<Gate>(m.queue()));

    run.rank_block = [&](int r) {
      const auto& in = inputs[static_cast<std::size_t>(r)];
      std::vector<std::uint8_t> v(in.begin() + run.block_off,
                                  in.begin() + run.block_off + run.block_len);
      return v;
    };
    for (int s = 0; s < ns; ++s)
      run.value[static_cast<std::size_t>(s)] = run.rank_block(s * kFpgasPerQfdb);

    m.set_accel_handler([&run](int node, CellPtr cell) { run.on_cell(node, std::move(cell)); });

    for (int r = 0; r < cfg.n_ranks; ++r) {
      if (r % kFpgasPerQfdb == 0)
        spawn_task(run.server_proc(r / kFpgasPerQfdb));
      else
        spawn_task(run.client_proc(r));
    }
    m.run_all();
    m.set_accel_handler({});
    if (!all_done.is_open())
      throw std::logic_error("accelerated allreduce did not complete");

    for (int r = 0; r < cfg.n_ranks; ++r) {
      auto& v = out.vectors[static_cast<std::size_t>(r)];
      const auto& res = run.result[static_cast<std::size_t>(r / kFpgasPerQfdb)];
      v.insert(v.end(), res.begin(), res.end());
    }
  }
  out.latency_ps = m.now() - t0;
  return out;
}

}  // namespace exns
