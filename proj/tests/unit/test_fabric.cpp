#include <doctest.h>

#include <map>

#include "exanetsim/fabric.hpp"

using namespace exns;

namespace {

struct RawNet {
  EventQueue q;
  Topology topo;
  CalibrationParams cal;
  Fabric fab;
  std::vector<std::pair<TimePs, CellPtr>> delivered;

  explicit RawNet(Dims dims, FabricConfig cfg = {})
      : topo(dims), fab(q, topo, cal, cfg) {
    for (int n = 0; n < topo.num_nodes(); ++n)
      fab.set_deliver_fn(n, [this](CellPtr c) { delivered.push_back({q.now(), std::move(c)}); });
  }

  CellPtr make_cell(int dst_node, int payload, std::uint64_t seq = 0) {
    auto c = std::make_shared<Cell>();
    c->dst = gvas::pack_address(0, static_cast<std::uint64_t>(dst_node), 0, 0);
    c->kind = CellKind::Raw;
    c->payload_len = static_cast<std::uint16_t>(payload);
    c->payload.assign(static_cast<std::size_t>(payload), 0xab);
    c->seq = seq;
    return c;
  }
};

}  // namespace

TEST_CASE("payload segmentation") {
  CHECK(segment_payload(256) == std::vector<int>{256});
  CHECK(segment_payload(300) == std::vector<int>{256, 44});
  CHECK(segment_payload(0) == std::vector<int>{0});
  auto block = segment_payload(16384);
  CHECK(block.size() == 64);
  for (int piece : block) CHECK(piece == 256);
}

TEST_CASE("full-cell serialization time on a 16 Gb/s link") {
  // 288 wire bytes = 2304 bits
  CHECK(tx_time_ps(2304, 16.0) == 144000);
}

TEST_CASE("intra-FPGA switch latency is two clock cycles at 150 MHz") {
  CalibrationParams p;
  CHECK(ns_to_ps(p.local_switch_ns) == 13333);
}

TEST_CASE("single cell over one mesh hop arrives after the calibrated lump") {
  RawNet net(Dims{1, 1, 1});
  net.fab.inject(0, net.make_cell(1, 256));
  net.fab.drain();
  REQUIRE(net.delivered.size() == 1);
  // hop lump (L_l - switch) plus the local switch at the destination
  CHECK(net.delivered[0].first == ns_to_ps(120.0));
}

TEST_CASE("zero-payload cell still consumes a credit and carries 32 wire bytes") {
  RawNet net(Dims{1, 1, 1});
  auto c = net.make_cell(1, 0);
  CHECK(c->wire_bytes() == 32);
  int link = net.topo.find_link(0, 1);
  int before = net.fab.credits(link, 0);
  net.fab.inject(0, std::move(c));
  net.q.step();  // enqueue + transmit
  CHECK(net.fab.credits(link, 0) == before - 1);
  net.fab.drain();
  CHECK(net.fab.credits(link, 0) == before);
}

TEST_CASE("two flows sharing one egress link serialize by at least the cell time") {
  // Both sources sit behind the same external link F1(0,0,0) -> F1(1,0,0).
  RawNet net(Dims{2, 1, 1});
  int dst = net.topo.node_index(NodeId{{1, 0, 0}, 0});
  net.fab.inject(net.topo.node_index(NodeId{{0, 0, 0}, 1}), net.make_cell(dst, 256, 1));
  net.fab.inject(net.topo.node_index(NodeId{{0, 0, 0}, 2}), net.make_cell(dst, 256, 2));
  net.fab.drain();
  REQUIRE(net.delivered.size() == 2);
  TimePs gap = net.delivered[1].first - net.delivered[0].first;
  CalibrationParams p;
  CHECK(gap >= ns_to_ps(p.router_fwd_ns_per_cell(256)) - 1);
}

TEST_CASE("virtual channel allocation follows the dateline rule") {
  Topology topo(Dims{4, 1, 1});
  // x=0 -> x=2 goes positive with no wraparound: both hops on VC 0
  auto r1 = topo.route(NodeId{{0, 0, 0}, 0}, NodeId{{2, 0, 0}, 0});
  CHECK(allocate_virtual_channels(topo, r1) == std::vector<int>{0, 0});
  // x=0 -> x=3 takes the negative wrap link: VC 1 from the crossing on
  auto r2 = topo.route(NodeId{{0, 0, 0}, 0}, NodeId{{3, 0, 0}, 0});
  REQUIRE(r2.size() == 1);
  CHECK(topo.link(r2[0].link).wrap);
  CHECK(allocate_virtual_channels(topo, r2) == std::vector<int>{1});
  // mesh hops stay on VC 0
  auto r3 = topo.route(NodeId{{3, 0, 0}, 1}, NodeId{{1, 0, 0}, 2});
  auto vcs = allocate_virtual_channels(topo, r3);
  CHECK(vcs.front() == 0);
  CHECK(vcs.back() == 0);
  CHECK(vcs[1] == 1);  // 3 -> 0 crosses the wraparound
}

TEST_CASE("adversarial ring permutation drains with the dateline discipline") {
  RawNet net(Dims{4, 1, 1});
  for (int x = 0; x < 4; ++x) {
    int src = net.topo.node_index(NodeId{{x, 0, 0}, 0});
    int dst = net.topo.node_index(NodeId{{(x + 2) % 4, 0, 0}, 0});
    for (int k = 0; k < 16; ++k)
      net.fab.inject(src, net.make_cell(dst, 256, static_cast<std::uint64_t>(k)));
  }
  FabricStats st = net.fab.drain();  // throws DeadlockDetected on failure
  CHECK(st.delivered == 64);
  CHECK(st.dropped == 0);
}

TEST_CASE("the same permutation deadlocks when the dateline is bypassed") {
  RawNet net(Dims{4, 1, 1});
  for (int x = 0; x < 4; ++x) {
    int src = net.topo.node_index(NodeId{{x, 0, 0}, 0});
    int dst = net.topo.node_index(NodeId{{(x + 2) % 4, 0, 0}, 0});
    for (int k = 0; k < 16; ++k) {
      auto c = net.make_cell(dst, 256, static_cast<std::uint64_t>(k));
      // Force both hops onto VC 0: the classic cyclic-credit dependency.
      c->route = net.topo.route(src, dst);
      c->vcs.assign(c->route.size(), 0);
      net.fab.inject(src, std::move(c));
    }
  }
  CHECK_THROWS_AS(net.fab.drain(), DeadlockDetected);
}

TEST_CASE("advance also reports a deadlock once events run dry") {
  RawNet net(Dims{4, 1, 1});
  for (int x = 0; x < 4; ++x) {
    int src = net.topo.node_index(NodeId{{x, 0, 0}, 0});
    int dst = net.topo.node_index(NodeId{{(x + 2) % 4, 0, 0}, 0});
    for (int k = 0; k < 16; ++k) {
      auto c = net.make_cell(dst, 256, static_cast<std::uint64_t>(k));
      c->route = net.topo.route(src, dst);
      c->vcs.assign(c->route.size(), 0);
      net.fab.inject(src, std::move(c));
    }
  }
  CHECK_THROWS_AS(net.fab.advance(ns_to_ps(1e9)), DeadlockDetected);
}

TEST_CASE("uniform random traffic is lossless with bounded buffers and per-flow FIFO") {
  RawNet net(Dims{4, 4, 2});
  Rng rng(404);
  int injected = 0;
  for (int i = 0; i < 4000; ++i) {
    int src = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(net.topo.num_nodes())));
    int dst = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(net.topo.num_nodes())));
    if (src == dst) continue;
    int payload = static_cast<int>(rng.next_below(257));
    net.fab.inject(src, net.make_cell(dst, payload, static_cast<std::uint64_t>(i)));
    ++injected;
  }
  FabricStats st = net.fab.drain();
  CHECK(st.delivered == static_cast<std::uint64_t>(injected));
  CHECK(st.dropped == 0);
  CHECK(st.max_port_occupancy_bytes <= kPortBufferBytes);

  // per-flow FIFO: sequence numbers arrive in injection order
  std::map<std::pair<int, int>, std::uint64_t> last;
  for (auto& [t, c] : net.delivered) {
    auto key = std::make_pair(c->src_node, static_cast<int>(gvas::unpack_address(c->dst).node));
    auto it = last.find(key);
    if (it != last.end()) CHECK(c->seq > it->second);
    last[key] = c->seq;
  }
}

TEST_CASE("credits are conserved across a drain") {
  RawNet net(Dims{2, 2, 1});
  std::vector<int> before;
  for (int l = 0; l < net.topo.num_links(); ++l) {
    before.push_back(net.fab.credits(l, 0));
  }
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    int src = static_cast<int>(rng.next_below(16));
    int dst = static_cast<int>(rng.next_below(16));
    if (src != dst) net.fab.inject(src, net.make_cell(dst, 128, static_cast<std::uint64_t>(i)));
  }
  net.fab.drain();
  for (int l = 0; l < net.topo.num_links(); ++l) CHECK(net.fab.credits(l, 0) == before[static_cast<std::size_t>(l)]);
}

TEST_CASE("advance dispatches up to the requested time and reports counters") {
  RawNet net(Dims{1, 1, 1});
  FabricStats st = net.fab.advance(ns_to_ps(1000.0));
  CHECK(st.delivered == 0);
  CHECK(st.injected == 0);
  net.fab.inject(0, net.make_cell(1, 64));
  st = net.fab.advance(net.q.now() + ns_to_ps(10.0));
  CHECK(st.delivered == 0);  // still in flight
  st = net.fab.advance(net.q.now() + ns_to_ps(1000.0));
  CHECK(st.delivered == 1);
}

TEST_CASE("cells above the payload limit are rejected") {
  RawNet net(Dims{1, 1, 1});
  auto c = net.make_cell(1, 0);
  c->payload_len = 257;
  CHECK_THROWS_AS(net.fab.inject(0, std::move(c)), std::invalid_argument);
}
