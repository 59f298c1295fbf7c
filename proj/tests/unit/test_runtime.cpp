#include <doctest.h>

#include <algorithm>

#include "exanetsim/runtime.hpp"

using namespace exns;

namespace {

struct Env {
  Machine m;
  MpiRuntime rt;
  Env(int n_ranks, Placement p, Dims dims = Dims{4, 4, 2})
      : m(dims), rt(m, n_ranks, p) {}
};

std::vector<std::uint8_t> pattern(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> v(n);
  for (auto& x : v) x = static_cast<std::uint8_t>(rng.next_below(256));
  return v;
}

// Independent fold oracle mirroring the canonical combining order: a
// balanced tree over rank-contiguous ranges, extras folded in first.
std::vector<std::uint8_t> tree_reduce_oracle(ReduceOp op, Dtype dt,
                                             std::vector<std::vector<std::uint8_t>> v) {
  std::size_t p2 = 1;
  while (p2 * 2 <= v.size()) p2 *= 2;
  for (std::size_t r = p2; r < v.size(); ++r) {
    std::vector<std::uint8_t> out(v[0].size());
    reduce_vectors(op, dt, v[r - p2].data(), v[r].data(), out.data(), out.size());
    v[r - p2] = out;
  }
  v.resize(p2);
  while (v.size() > 1) {
    std::vector<std::vector<std::uint8_t>> next;
    for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
      std::vector<std::uint8_t> out(v[i].size());
      reduce_vectors(op, dt, v[i].data(), v[i + 1].data(), out.data(), out.size());
      next.push_back(std::move(out));
    }
    v = std::move(next);
  }
  return v[0];
}

}  // namespace

TEST_CASE("rank maps place ranks block-first or one per FPGA") {
  RankMap block{512, Placement::Block, {}};
  CHECK(block.node_of(0) == 0);
  CHECK(block.node_of(3) == 0);
  CHECK(block.node_of(4) == 1);
  CHECK(block.core_of(5) == 1);
  CHECK(block.nodes_needed() == 128);
  CHECK(block.class_between(0, 1) == StepClass::SameFpga);
  CHECK(block.class_between(0, 4) == StepClass::IntraQfdb);
  CHECK(block.class_between(0, 16) == StepClass::InterQfdb);
  RankMap spread{8, Placement::Spread, {}};
  CHECK(spread.node_of(5) == 5);
  CHECK(spread.core_of(5) == 0);
}

TEST_CASE("0-byte eager latency composes to the calibrated constants") {
  auto run = [](Placement p, std::vector<std::pair<int, int>> slots) {
    Machine m(Dims{4, 4, 2});
    RankMap map{2, p, std::move(slots)};
    MpiRuntime rt(m, map);
    std::uint64_t s = rt.alloc_buffer(0, 8), r = rt.alloc_buffer(1, 8);
    TimePs t_done = 0;
    spawn_task([](MpiRuntime& rt, std::uint64_t va, TimePs& out) -> Task {
      co_await rt.recv(1, 0, 5, 1, va, 0);
      out = rt.machine().now();
    }(rt, r, t_done));
    spawn_task([](MpiRuntime& rt, std::uint64_t va) -> Task {
      co_await rt.send(0, 1, 5, 1, va, 0);
    }(rt, s));
    m.run_all();
    return ps_to_us(t_done);
  };
  // same FPGA
  CHECK(run(Placement::Explicit, {{1, 0}, {1, 1}}) == doctest::Approx(1.17));
  // one intra-QFDB hop
  CHECK(run(Placement::Explicit, {{0, 0}, {1, 0}}) == doctest::Approx(1.29));
}

TEST_CASE("recv posted before or after the send yields the same bytes") {
  for (bool recv_first : {true, false}) {
    Env e(2, Placement::Spread);
    auto data = pattern(24, 42);
    std::uint64_t s = e.rt.alloc_buffer(0, 24), r = e.rt.alloc_buffer(1, 24);
    e.rt.write_buffer(0, s, data.data(), data.size());
    auto sender = [](MpiRuntime& rt, std::uint64_t va) -> Task {
      co_await rt.send(0, 1, 7, 1, va, 24);
    };
    auto receiver = [](MpiRuntime& rt, std::uint64_t va, bool late) -> Task {
      if (late) co_await sleep_for(rt.machine().queue(), ns_to_ps(5000.0));
      co_await rt.recv(1, 0, 7, 1, va, 24);
    };
    if (recv_first) {
      spawn_task(receiver(e.rt, r, false));
      spawn_task(sender(e.rt, s));
    } else {
      spawn_task(sender(e.rt, s));
      spawn_task(receiver(e.rt, r, true));
    }
    e.m.run_all();
    std::vector<std::uint8_t> got(24);
    e.rt.read_buffer(1, r, got.data(), got.size());
    CHECK(got == data);
  }
}

TEST_CASE("eager messages never touch the RDMA engine; larger ones always do") {
  for (std::uint32_t size : {0u, 16u, 32u, 33u, 64u, 4096u}) {
    Env e(2, Placement::Spread);
    auto data = pattern(size ? size : 1, size);
    std::uint64_t s = e.rt.alloc_buffer(0, size + 1), r = e.rt.alloc_buffer(1, size + 1);
    e.rt.write_buffer(0, s, data.data(), size);
    spawn_task([](MpiRuntime& rt, std::uint64_t va, std::uint32_t n) -> Task {
      co_await rt.recv(1, 0, 7, 1, va, n);
    }(e.rt, r, size));
    spawn_task([](MpiRuntime& rt, std::uint64_t va, std::uint32_t n) -> Task {
      co_await rt.send(0, 1, 7, 1, va, n);
    }(e.rt, s, size));
    e.m.run_all();
    std::uint64_t transfers = e.m.node(0).rdma->stats().transfers_started;
    if (size <= 32) CHECK(transfers == 0);
    else CHECK(transfers == 1);
    std::vector<std::uint8_t> got(size ? size : 1);
    e.rt.read_buffer(1, r, got.data(), size);
    for (std::uint32_t i = 0; i < size; ++i) CHECK(got[i] == data[i]);
  }
}

TEST_CASE("matching is FIFO per source, tag and context") {
  Env e(2, Placement::Spread);
  std::uint64_t s1 = e.rt.alloc_buffer(0, 8), s2 = e.rt.alloc_buffer(0, 8);
  std::uint64_t r1 = e.rt.alloc_buffer(1, 8), r2 = e.rt.alloc_buffer(1, 8);
  std::uint8_t a = 0xaa, b = 0xbb;
  e.rt.write_buffer(0, s1, &a, 1);
  e.rt.write_buffer(0, s2, &b, 1);
  spawn_task([](MpiRuntime& rt, std::uint64_t x, std::uint64_t y) -> Task {
    co_await rt.send(0, 1, 9, 1, x, 1);
    co_await rt.send(0, 1, 9, 1, y, 1);
  }(e.rt, s1, s2));
  spawn_task([](MpiRuntime& rt, std::uint64_t x, std::uint64_t y) -> Task {
    co_await rt.recv(1, 0, 9, 1, x, 1);
    co_await rt.recv(1, 0, 9, 1, y, 1);
  }(e.rt, r1, r2));
  e.m.run_all();
  CHECK(e.m.node(1).mem->peek(r1) == 0xaa);
  CHECK(e.m.node(1).mem->peek(r2) == 0xbb);
}

TEST_CASE("barrier rounds and the no-early-exit property") {
  for (int n : {1, 2, 6}) {
    Env e(n, Placement::Spread);
    std::vector<TimePs> enter(static_cast<std::size_t>(n)), exit_(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      spawn_task([](MpiRuntime& rt, int rank, TimePs& en, TimePs& ex, int rk) -> Task {
        // stagger the entries
        co_await sleep_for(rt.machine().queue(), ns_to_ps(100.0 * rk));
        en = rt.machine().now();
        co_await rt.barrier(rank);
        ex = rt.machine().now();
      }(e.rt, r, enter[static_cast<std::size_t>(r)], exit_[static_cast<std::size_t>(r)], r));
    }
    e.m.run_all();
    TimePs max_enter = *std::max_element(enter.begin(), enter.end());
    TimePs min_exit = *std::min_element(exit_.begin(), exit_.end());
    CHECK(min_exit >= max_enter);
    if (n == 1) CHECK(exit_[0] == enter[0]);
  }
}

TEST_CASE("binomial schedule step counts") {
  for (int n = 2; n <= 512; ++n) {
    auto steps = bcast_schedule(n, 0);
    int expect = 0;
    while ((1 << expect) < n) ++expect;
    CHECK(static_cast<int>(steps.size()) == expect);
    int receivers = 0;
    for (const BcastStep& s : steps) receivers += static_cast<int>(s.pairs.size());
    CHECK(receivers == n - 1);  // every rank is reached exactly once
  }
  RankMap map{512, Placement::Block, {}};
  CHECK(bcast_step_counts(map, 0) == BcastStepCounts{2, 2, 5});
  RankMap small{4, Placement::Explicit, {{1, 0}, {1, 1}, {1, 2}, {1, 3}}};
  CHECK(bcast_step_counts(small, 0) == BcastStepCounts{2, 0, 0});
}

TEST_CASE("broadcast delivers the root payload to every rank") {
  for (int n : {1, 5, 16}) {
    Env e(n, Placement::Block);
    auto data = pattern(48, static_cast<std::uint64_t>(n));
    std::vector<std::uint64_t> va;
    std::vector<TimePs> done(static_cast<std::size_t>(n), 0);
    for (int r = 0; r < n; ++r) va.push_back(e.rt.alloc_buffer(r, 48));
    e.rt.write_buffer(0, va[0], data.data(), data.size());
    for (int r = 0; r < n; ++r)
      spawn_task(e.rt.bcast_rank(r, 0, 1000, va[static_cast<std::size_t>(r)], 48, &done));
    e.m.run_all();
    for (int r = 0; r < n; ++r) {
      std::vector<std::uint8_t> got(48);
      e.rt.read_buffer(r, va[static_cast<std::size_t>(r)], got.data(), got.size());
      CHECK(got == data);
      if (n > 1) CHECK(done[static_cast<std::size_t>(r)] > 0);
    }
  }
}

TEST_CASE("four ranks on one FPGA broadcast in two steps") {
  Machine m(Dims{1, 1, 1});
  RankMap map{4, Placement::Explicit, {{1, 0}, {1, 1}, {1, 2}, {1, 3}}};
  MpiRuntime rt(m, map);
  std::vector<std::uint64_t> va;
  std::vector<TimePs> done(4, 0);
  for (int r = 0; r < 4; ++r) va.push_back(rt.alloc_buffer(r, 8));
  for (int r = 0; r < 4; ++r) spawn_task(rt.bcast_rank(r, 0, 1000, va[static_cast<std::size_t>(r)], 1, &done));
  m.run_all();
  TimePs last = *std::max_element(done.begin(), done.end());
  // two sequential same-FPGA one-way latencies
  CHECK(ps_to_us(last) == doctest::Approx(2 * 1.17));
}

TEST_CASE("allreduce sum of rank ids matches the scalar fold") {
  int n = 8;
  Env e(n, Placement::Block);
  std::vector<std::uint64_t> in, out;
  std::vector<TimePs> done(static_cast<std::size_t>(n), 0);
  for (int r = 0; r < n; ++r) {
    in.push_back(e.rt.alloc_buffer(r, 16));
    out.push_back(e.rt.alloc_buffer(r, 16));
    std::int32_t vals[4] = {r, r, r, r};
    e.rt.write_buffer(r, in.back(), reinterpret_cast<std::uint8_t*>(vals), 16);
  }
  for (int r = 0; r < n; ++r)
    spawn_task(e.rt.allreduce_rank(r, ReduceOp::Sum, Dtype::Int32,
                                   in[static_cast<std::size_t>(r)],
                                   out[static_cast<std::size_t>(r)], 16, &done));
  e.m.run_all();
  for (int r = 0; r < n; ++r) {
    std::int32_t got[4];
    e.rt.read_buffer(r, out[static_cast<std::size_t>(r)], reinterpret_cast<std::uint8_t*>(got), 16);
    for (std::int32_t g : got) CHECK(g == 28);  // 0+1+...+7
  }
}

TEST_CASE("allreduce agrees with the tree-fold oracle for every op and dtype") {
  for (int n : {3, 4, 6, 8}) {
    for (ReduceOp op : {ReduceOp::Sum, ReduceOp::Min, ReduceOp::Max}) {
      for (Dtype dt : {Dtype::Int32, Dtype::Float32, Dtype::Float64}) {
        Env e(n, Placement::Block);
        std::uint32_t bytes = 16 * static_cast<std::uint32_t>(dtype_size(dt));
        std::vector<std::vector<std::uint8_t>> inputs;
        std::vector<std::uint64_t> in, out;
        std::vector<TimePs> done(static_cast<std::size_t>(n), 0);
        for (int r = 0; r < n; ++r) {
          inputs.push_back(pattern(bytes, static_cast<std::uint64_t>(n * 100 + r)));
          in.push_back(e.rt.alloc_buffer(r, bytes));
          out.push_back(e.rt.alloc_buffer(r, bytes));
          e.rt.write_buffer(r, in.back(), inputs.back().data(), bytes);
        }
        for (int r = 0; r < n; ++r)
          spawn_task(e.rt.allreduce_rank(r, op, dt, in[static_cast<std::size_t>(r)],
                                         out[static_cast<std::size_t>(r)], bytes, &done));
        e.m.run_all();
        auto expect = tree_reduce_oracle(op, dt, inputs);
        for (int r = 0; r < n; ++r) {
          std::vector<std::uint8_t> got(bytes);
          e.rt.read_buffer(r, out[static_cast<std::size_t>(r)], got.data(), bytes);
          CHECK(got == expect);  // bit exact, fixed combining order
        }
      }
    }
  }
}

TEST_CASE("integer sum is order independent: tree fold equals sequential fold") {
  auto vecs = std::vector<std::vector<std::uint8_t>>{};
  for (int r = 0; r < 6; ++r) vecs.push_back(pattern(16, static_cast<std::uint64_t>(r)));
  auto tree = tree_reduce_oracle(ReduceOp::Sum, Dtype::Int32, vecs);
  std::vector<std::uint8_t> seq = vecs[0];
  for (std::size_t r = 1; r < vecs.size(); ++r) {
    std::vector<std::uint8_t> out(16);
    reduce_vectors(ReduceOp::Sum, Dtype::Int32, seq.data(), vecs[r].data(), out.data(), 16);
    seq = out;
  }
  CHECK(tree == seq);
}
