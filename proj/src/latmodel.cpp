#include "exanetsim/latmodel.hpp"

#include <cmath>

namespace exns {

namespace {

// Fabric crossing cost of one small-message path: every hop costs L_l,
// and external paths engage external-hops+1 routing blocks.
double crossing_ns(const PathClass& pc, const CalibrationParams& p) {
  double c = pc.total_hops() * p.link_latency_ns;
  if (pc.external_hops() > 0) c += (pc.external_hops() + 1) * p.router_block_ns;
  return c;
}

double engine_stream_ns(std::int64_t bytes, const CalibrationParams& p) {
  if (bytes <= 0) return 0.0;
  constexpr std::int64_t kBlock = 16384;
  std::int64_t blocks = (bytes + kBlock - 1) / kBlock;
  return 8.0 * static_cast<double>(bytes) / p.rdma_stream_gbps() +
         static_cast<double>(blocks - 1) * p.block_gap_ns(kBlock);
}

}  // namespace

double path_latency_ns(const PathClass& pc, std::int64_t msg_bytes, const CalibrationParams& p,
                       int eager_threshold) {
  double cross = crossing_ns(pc, p);
  if (msg_bytes <= eager_threshold) {
    // Single packetizer message; payload serialization is inside L_l.
    return p.base_intra_fpga_ns + cross;
  }
  // Rendezvous: RTS and CTS control messages, firmware-initiated RDMA
  // stream, receive-unit completion and notification poll.
  double ctrl_leg = p.copy_ns + p.pkt_inject_hw_ns() + cross + p.mbox_accept_hw_ns();
  double rts = p.rv_rts_sw_ns + ctrl_leg;
  double cts = p.rv_cts_sw_ns + ctrl_leg;
  double data = p.firmware_overhead_ns + engine_stream_ns(msg_bytes, p) + cross;
  return rts + cts + data + p.rdma_recv_hw_ns + p.rv_complete_sw_ns;
}

}  // namespace exns
