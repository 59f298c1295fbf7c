#include <doctest.h>

#include "exanetsim/machine.hpp"

using namespace exns;

namespace {

struct RdmaPair {
  Machine m;
  explicit RdmaPair(Dims dims = Dims{1, 1, 1}, FabricConfig fc = {},
                    CalibrationParams cal = {})
      : m(dims, cal, fc) {
    for (int n = 0; n < m.num_nodes(); ++n) m.assign_pdid(n, 7);
  }

  gvas::GlobalVirtualAddress gva(int node, std::uint64_t va) {
    return gvas::pack_address(7, static_cast<std::uint64_t>(node), 0, va);
  }

  std::vector<std::uint8_t> pattern(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::uint8_t> v(n);
    for (auto& x : v) x = static_cast<std::uint8_t>(rng.next_below(256));
    return v;
  }
};

}  // namespace

TEST_CASE("descriptors serialize to exactly 64 bytes and round trip") {
  RdmaDescriptor d;
  d.src_va = 0x123456;
  d.dst = gvas::pack_address(7, 3, 1, 0xabcd);
  d.size = 1 << 20;
  d.notif = gvas::pack_address(7, 3, 0, 0x42);
  auto bytes = d.to_bytes();
  CHECK(bytes.size() == 64);
  RdmaDescriptor e = RdmaDescriptor::from_bytes(bytes);
  CHECK(e.src_va == d.src_va);
  CHECK(e.dst == d.dst);
  CHECK(e.size == d.size);
  REQUIRE(e.notif.has_value());
  CHECK(*e.notif == *d.notif);
}

TEST_CASE("transfers split into 16 KiB blocks") {
  RdmaPair p;
  auto data = p.pattern(1 << 20, 1);
  std::uint64_t src = p.m.node(0).mem->alloc(data.size());
  std::uint64_t dst = p.m.node(1).mem->alloc(data.size());
  p.m.node(0).mem->write(src, data.data(), data.size());
  RdmaDescriptor d;
  d.src_va = src;
  d.dst = p.gva(1, dst);
  d.size = data.size();
  TransferState* t = p.m.node(0).rdma->write(0, 0, d);
  CHECK(t->blocks.size() == 64);  // 1 MiB / 16 KiB
  for (const TransferBlock& b : t->blocks) CHECK(b.length == 16384);
  p.m.run_all();
  CHECK(t->done);
}

TEST_CASE("a single 16 KiB block moves as 64 data cells plus one block ack") {
  RdmaPair p;
  auto data = p.pattern(16384, 2);
  std::uint64_t src = p.m.node(0).mem->alloc(data.size());
  std::uint64_t dst = p.m.node(1).mem->alloc(data.size());
  p.m.node(0).mem->write(src, data.data(), data.size());
  RdmaDescriptor d;
  d.src_va = src;
  d.dst = p.gva(1, dst);
  d.size = data.size();
  p.m.node(0).rdma->write(0, 0, d);
  p.m.run_all();
  CHECK(p.m.fabric().stats().delivered == 65);
}

TEST_CASE("channel and protection validation") {
  RdmaPair p;
  RdmaDescriptor d;
  d.src_va = 4096;
  d.dst = gvas::pack_address(9, 1, 0, 4096);  // wrong domain
  d.size = 64;
  CHECK_THROWS_AS(p.m.node(0).rdma->write(0, 0, d), PdidMismatch);
  d.dst = p.gva(1, 4096);
  p.m.node(0).rdma->write(0, 3, d);
  CHECK_THROWS_AS(p.m.node(0).rdma->write(0, 3, d), ChannelBusy);
}

TEST_CASE("delivery is byte exact and the notification is never early") {
  RdmaPair p;
  auto data = p.pattern(50000, 3);
  std::uint64_t src = p.m.node(0).mem->alloc(data.size());
  std::uint64_t dst = p.m.node(1).mem->alloc(data.size());
  std::uint64_t notif = p.m.node(1).mem->alloc(8);
  p.m.node(0).mem->write(src, data.data(), data.size());
  RdmaDescriptor d;
  d.src_va = src;
  d.dst = p.gva(1, dst);
  d.size = data.size();
  d.notif = p.gva(1, notif);
  bool checked = false;
  p.m.node(1).rdma->watch_notif(notif, [&] {
    // At notification time every payload byte must already be visible.
    std::vector<std::uint8_t> got(data.size());
    p.m.node(1).mem->read(dst, got.data(), got.size());
    CHECK(got == data);
    checked = true;
  });
  p.m.node(0).rdma->write(0, 0, d);
  p.m.run_all();
  CHECK(checked);
}

TEST_CASE("sustained single-transfer rate converges to the path ceiling") {
  auto sustained = [](Dims dims, int dst_node) {
    RdmaPair p(dims);
    std::uint64_t bytes = 4ull << 20;
    std::uint64_t src = p.m.node(0).mem->alloc(bytes);
    std::uint64_t dst = p.m.node(dst_node).mem->alloc(bytes);
    RdmaDescriptor d;
    d.src_va = src;
    d.dst = p.gva(dst_node, dst);
    d.size = bytes;
    TimePs t0 = p.m.now();
    TransferState* t = p.m.node(0).rdma->write(0, 0, d);
    p.m.run_all();
    double secs =
        ps_to_ns(t->completed_ps - t0 - ns_to_ps(p.m.cal().firmware_overhead_ns)) * 1e-9;
    return 8.0 * static_cast<double>(bytes) / 1e9 / secs;
  };
  // intra-QFDB: the engine's single-transfer rate binds
  CHECK(sustained(Dims{1, 1, 1}, 1) == doctest::Approx(12.475).epsilon(0.02));
  // one external hop: the router-limited payload ceiling binds
  CHECK(sustained(Dims{2, 1, 1}, 4) == doctest::Approx(6.42).epsilon(0.02));
}

TEST_CASE("transaction overhead is additive at transfer initiation") {
  RdmaPair base;
  CalibrationParams cal;
  cal.firmware_overhead_ns = 0.0001;  // effectively zero, must stay positive
  RdmaPair zero(Dims{1, 1, 1}, {}, cal);
  CHECK(base.m.node(0).rdma->transaction_overhead_ns() == doctest::Approx(3000.0));

  auto run = [](RdmaPair& p) {
    std::uint64_t src = p.m.node(0).mem->alloc(64);
    std::uint64_t dst = p.m.node(1).mem->alloc(64);
    RdmaDescriptor d;
    d.src_va = src;
    d.dst = p.gva(1, dst);
    d.size = 64;
    TimePs t0 = p.m.now();
    TransferState* t = p.m.node(0).rdma->write(0, 0, d);
    p.m.run_all();
    return t->completed_ps - t0;
  };
  TimePs with = run(base), without = run(zero);
  CHECK(with - without == ns_to_ps(3000.0) - ns_to_ps(0.0001));
}

TEST_CASE("translate: resident pages hit the TLB on reuse, non-resident fault") {
  CalibrationParams cal;
  cal.tlb_walk_ns = 200.0;
  Smmu smmu(cal.tlb_walk_ns);
  auto r1 = smmu.translate(8192);
  CHECK_FALSE(r1.fault);
  CHECK_FALSE(r1.tlb_hit);
  CHECK(r1.extra_ns == doctest::Approx(200.0));
  auto r2 = smmu.translate(8200);
  CHECK(r2.tlb_hit);
  CHECK(r2.extra_ns == 0.0);
  smmu.mark_nonresident(5);
  CHECK(smmu.translate(5 * kPageBytes + 4).fault);
  smmu.mark_resident(5);
  CHECK_FALSE(smmu.translate(5 * kPageBytes + 4).fault);
}

TEST_CASE("page faults replay blocks and the result matches a fault-free run") {
  auto run = [](bool faults) {
    RdmaPair p;
    std::uint64_t bytes = 64 * 16384;
    std::uint64_t src = p.m.node(0).mem->alloc(bytes);
    std::uint64_t dst = p.m.node(1).mem->alloc(bytes);
    Rng rng(77);
    std::vector<std::uint8_t> data(bytes);
    for (auto& x : data) x = static_cast<std::uint8_t>(rng.next_below(256));
    p.m.node(0).mem->write(src, data.data(), data.size());
    if (faults)
      for (std::uint32_t blk : {3u, 17u, 40u})
        p.m.node(1).smmu->mark_nonresident((dst + blk * 16384) / kPageBytes);
    RdmaDescriptor d;
    d.src_va = src;
    d.dst = p.gva(1, dst);
    d.size = bytes;
    p.m.node(0).rdma->write(0, 0, d);
    p.m.run_all();
    std::vector<std::uint8_t> got(bytes);
    p.m.node(1).mem->read(dst, got.data(), got.size());
    return std::make_tuple(got, p.m.node(1).rdma->stats().block_faults,
                           p.m.node(0).rdma->stats().blocks_retransmitted);
  };
  auto [clean, f0, r0] = run(false);
  auto [faulted, f3, r3] = run(true);
  CHECK(f0 == 0);
  CHECK(r0 == 0);
  CHECK(f3 == 3);
  CHECK(r3 == 3);  // exactly the faulted blocks are replayed, nothing else
  CHECK(clean == faulted);
}

TEST_CASE("cell loss is recovered by block retransmission, byte exact") {
  FabricConfig fc;
  fc.loss_prob = 0.05;
  fc.seed = 1234;
  RdmaPair p(Dims{1, 1, 1}, fc);
  std::uint64_t bytes = 8 * 16384;
  std::uint64_t src = p.m.node(0).mem->alloc(bytes);
  std::uint64_t dst = p.m.node(1).mem->alloc(bytes);
  auto data = p.pattern(bytes, 5);
  p.m.node(0).mem->write(src, data.data(), data.size());
  RdmaDescriptor d;
  d.src_va = src;
  d.dst = p.gva(1, dst);
  d.size = bytes;
  TransferState* t = p.m.node(0).rdma->write(0, 0, d);
  p.m.run_all();
  CHECK(t->done);
  CHECK(p.m.node(0).rdma->stats().blocks_retransmitted > 0);
  std::vector<std::uint8_t> got(bytes);
  p.m.node(1).mem->read(dst, got.data(), got.size());
  CHECK(got == data);
}

TEST_CASE("rdma read completes with a write back and a local notification") {
  RdmaPair p(Dims{2, 1, 1});
  int remote = 4;  // network FPGA of the second QFDB
  std::uint64_t bytes = 16384;
  auto data = p.pattern(bytes, 6);
  std::uint64_t rsrc = p.m.node(remote).mem->alloc(bytes);
  p.m.node(remote).mem->write(rsrc, data.data(), data.size());
  std::uint64_t ldst = p.m.node(0).mem->alloc(bytes);
  std::uint64_t notif = p.m.node(0).mem->alloc(8);
  bool done = false;
  p.m.node(0).rdma->read(rsrc, remote, ldst, bytes, p.gva(0, notif), 7, [&] { done = true; });
  p.m.run_all();
  CHECK(done);
  std::vector<std::uint8_t> got(bytes);
  p.m.node(0).mem->read(ldst, got.data(), got.size());
  CHECK(got == data);
}

TEST_CASE("read of zero bytes delivers only the notification") {
  RdmaPair p(Dims{2, 1, 1});
  std::uint64_t notif = p.m.node(0).mem->alloc(8);
  bool done = false;
  p.m.node(0).rdma->read(4096, 4, 8192, 0, p.gva(0, notif), 7, [&] { done = true; });
  p.m.run_all();
  CHECK(done);
  CHECK(p.m.node(4).rdma->stats().transfers_completed == 1);
}

TEST_CASE("read with a foreign protection domain allocates nothing") {
  RdmaPair p(Dims{2, 1, 1});
  std::uint64_t notif = p.m.node(0).mem->alloc(8);
  bool done = false;
  p.m.node(0).rdma->read(4096, 4, 8192, 64, gvas::pack_address(9, 0, 0, notif), 9,
                         [&] { done = true; });
  p.m.run_all();
  CHECK_FALSE(done);
  CHECK(p.m.node(4).rdma->stats().transfers_started == 0);
}

TEST_CASE("concurrent reads queue on the available read channels and all finish") {
  RdmaPair p(Dims{2, 1, 1});
  int remote = 4;
  int n = 40;  // more than the 32 read channels of the page
  std::uint64_t bytes = 4096;
  std::vector<std::uint64_t> notifs;
  int done = 0;
  for (int i = 0; i < n; ++i) {
    std::uint64_t rsrc = p.m.node(remote).mem->alloc(bytes);
    auto data = p.pattern(bytes, 100 + static_cast<std::uint64_t>(i));
    p.m.node(remote).mem->write(rsrc, data.data(), data.size());
    std::uint64_t ldst = p.m.node(0).mem->alloc(bytes);
    std::uint64_t nv = p.m.node(0).mem->alloc(8);
    notifs.push_back(nv);
    p.m.node(0).rdma->read(rsrc, remote, ldst, bytes, p.gva(0, nv), 7, [&] { ++done; });
  }
  p.m.run_all();
  CHECK(done == n);
}
