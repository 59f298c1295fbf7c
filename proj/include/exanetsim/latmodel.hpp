#ifndef EXANETSIM_LATMODEL_HPP_
#define EXANETSIM_LATMODEL_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

#include "exanetsim/topology.hpp"

namespace exns {

// Measured constants the whole timing model hangs off. Defaults are the
// values observed on the prototype; everything else in the simulator is
// derived from these so the analytic model and the event simulation stay
// in lockstep.
struct CalibrationParams {
  // Per-hop link latency (L_l) and the routing-block latency (L_ER) paid
  // at every network FPGA a path engages for external routing.
  double link_latency_ns = 120.0;
  double router_block_ns = 145.0;
  // 2 clock cycles at 150 MHz for the small input-queued switch in every
  // FPGA, paid at each non-router node a cell enters after a hop.
  double local_switch_ns = 13.333;

  // Endpoint-to-endpoint latency of a 0-byte MPI message between two
  // ranks on the same FPGA (no link traversal at all).
  double base_intra_fpga_ns = 1170.0;
  // One-way packetizer->mailbox latency over one intra-QFDB hop when
  // driven from user space with no MPI processing.
  double pkt_hw_one_way_ns = 470.0;
  // One endpoint copy (memory <-> packetizer/mailbox), applied once per
  // side of a small-message transfer.
  double copy_ns = 125.0;

  // RDMA engine throughput sustained by a single long transfer, and the
  // fraction of the intra-QFDB link rate the engine streams payload at
  // when several transfers keep it busy back to back. The difference
  // becomes a per-16KiB-block bookkeeping gap on single transfers.
  double rdma_rate_gbps = 12.475;
  double rdma_stream_util = 0.819;
  // Payload throughput a 10 Gb/s external hop sustains once the router's
  // per-cell forwarding work is accounted for.
  double ext_hop_payload_gbps = 6.42;

  // Transaction-level firmware cost paid once when a transfer starts.
  double firmware_overhead_ns = 3000.0;
  // Reference one-way latency of a 64-byte message over one intra-QFDB
  // hop; the rendezvous software constants below compose to this.
  double rdma_small_latency_64b_ns = 5157.0;

  // MPI software processing per side for matching/bookkeeping of a data
  // message, derived from base_intra_fpga unless overridden (<0 means
  // derive).
  double mpi_sw_ns = -1.0;
  // Rendezvous control-path software costs: sender RTS issue, receiver
  // match + CTS issue, receiver completion processing.
  double rv_rts_sw_ns = 350.0;
  double rv_cts_sw_ns = 400.0;
  double rv_complete_sw_ns = 350.0;
  // Receive-unit per-transfer hardware cost (final block bookkeeping and
  // notification write).
  double rdma_recv_hw_ns = 208.0;

  double intra_qfdb_gbps = kIntraQfdbGbps;
  double external_gbps = kExternalGbps;

  // Endpoint reliability knobs.
  double pkt_timeout_ns = 10000.0;
  int pkt_max_retries = 8;
  double block_ack_timeout_ns = 50000.0;
  double fault_service_ns = 100000.0;
  double tlb_walk_ns = 0.0;  // folded into the calibrated rates by default
  int mailbox_capacity = 256;

  // --- derived quantities ---
  double derived_mpi_sw_ns() const {
    if (mpi_sw_ns >= 0) return mpi_sw_ns;
    // base = 2*sw + (pkt_hw one-way minus its single hop)
    return (base_intra_fpga_ns - (pkt_hw_one_way_ns - link_latency_ns)) / 2.0;
  }
  // packetizer inject + mailbox accept, split evenly.
  double endpoint_hw_ns() const {
    return pkt_hw_one_way_ns - 2.0 * copy_ns - link_latency_ns;
  }
  double pkt_inject_hw_ns() const { return endpoint_hw_ns() / 2.0; }
  double mbox_accept_hw_ns() const { return endpoint_hw_ns() / 2.0; }
  double rdma_stream_gbps() const { return intra_qfdb_gbps * rdma_stream_util; }
  // Non-overlapped R5 bookkeeping between consecutive blocks of one
  // transfer; zero or positive by the rdma_rate <= stream rate invariant.
  double block_gap_ns(int block_bytes) const {
    double bits = 8.0 * block_bytes;
    return bits / rdma_rate_gbps - bits / rdma_stream_gbps();
  }
  // Per-cell forwarding occupancy of the external router, expressed so a
  // stream of full cells sustains ext_hop_payload_gbps of payload.
  double router_fwd_ns_per_cell(int payload_bytes) const {
    return 8.0 * payload_bytes / ext_hop_payload_gbps;
  }

  void validate() const {
    auto pos = [](double v, const char* n) {
      if (!(v > 0)) throw std::invalid_argument(std::string("calibration: ") + n + " must be > 0");
    };
    pos(link_latency_ns, "link_latency_ns");
    pos(router_block_ns, "router_block_ns");
    pos(base_intra_fpga_ns, "base_intra_fpga_ns");
    pos(pkt_hw_one_way_ns, "pkt_hw_one_way_ns");
    pos(copy_ns, "copy_ns");
    pos(rdma_rate_gbps, "rdma_rate_gbps");
    pos(ext_hop_payload_gbps, "ext_hop_payload_gbps");
    pos(firmware_overhead_ns, "firmware_overhead_ns");
    pos(intra_qfdb_gbps, "intra_qfdb_gbps");
    pos(external_gbps, "external_gbps");
    if (rdma_rate_gbps > intra_qfdb_gbps * 16.0 / 18.0 + 1e-9)
      throw std::invalid_argument("calibration: rdma_rate_gbps exceeds intra-QFDB payload ceiling");
    if (endpoint_hw_ns() < 0)
      throw std::invalid_argument("calibration: pkt_hw_one_way_ns smaller than copies + hop");
    if (derived_mpi_sw_ns() < 0)
      throw std::invalid_argument("calibration: base_intra_fpga_ns too small");
    if (rdma_stream_gbps() < rdma_rate_gbps)
      throw std::invalid_argument("calibration: stream rate below single-transfer rate");
  }
};

class NonPositiveTime : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Analytic one-way latency of an MPI message of msg_bytes over a path.
// For 0-byte (and all eager) messages this composes as
//   base + S*L_ER (when external hops exist) + H*L_l
// with H the total hop count and S = external hops + 1. Larger messages
// follow the rendezvous decomposition the simulator uses.
double path_latency_ns(const PathClass& pc, std::int64_t msg_bytes, const CalibrationParams& p,
                       int eager_threshold = 32);

// Expected broadcast latency: per-class step counts from the binomial
// schedule, multiplied by one-way latencies measured per class.
struct BcastStepCounts {
  int same_fpga = 0;   // Ns_MPSoC
  int intra_qfdb = 0;  // Ns_QFDB
  int inter_qfdb = 0;  // Ns_mezzanine
  friend bool operator==(const BcastStepCounts&, const BcastStepCounts&) = default;
};

struct BcastClassLatencies {
  double same_fpga_ns = 0;
  double intra_qfdb_ns = 0;
  double inter_qfdb_ns = 0;
};

inline double bcast_expected_ns(const BcastStepCounts& c, const BcastClassLatencies& l) {
  return c.same_fpga * l.same_fpga_ns + c.intra_qfdb * l.intra_qfdb_ns +
         c.inter_qfdb * l.inter_qfdb_ns;
}

enum class ScalingMode { Weak, Strong };

struct SpeedupEfficiency {
  double speedup = 0;
  double efficiency = 0;
};

inline SpeedupEfficiency speedup_and_efficiency(double t1, double tn, int n, ScalingMode mode) {
  if (!(t1 > 0) || !(tn > 0)) throw NonPositiveTime("speedup requires positive times");
  if (n < 1) throw std::invalid_argument("speedup requires n >= 1");
  SpeedupEfficiency r;
  r.speedup = mode == ScalingMode::Weak ? n * t1 / tn : t1 / tn;
  r.efficiency = r.speedup / n;
  return r;
}

}  // namespace exns

#endif  // EXANETSIM_LATMODEL_HPP_
