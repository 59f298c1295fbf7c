#ifndef EXANETSIM_FABRIC_HPP_
#define EXANETSIM_FABRIC_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "exanetsim/gvas.hpp"
#include "exanetsim/latmodel.hpp"
#include "exanetsim/sim.hpp"
#include "exanetsim/topology.hpp"

namespace exns {

constexpr int kCellPayloadMax = 256;
constexpr int kCellOverheadBytes = 32;  // 16 B header + 16 B footer
constexpr int kCellWireMax = kCellPayloadMax + kCellOverheadBytes;
constexpr int kPortBufferBytes = 4096;
constexpr int kRdmaBlockBytes = 16384;

enum class CellKind : std::uint8_t {
  Raw,
  PktMsg,
  PktAck,
  PktNack,
  RdmaData,
  RdmaBlockAck,
  RdmaBlockNack,
  RdmaNotif,
  AccelVector,
};

const char* cell_kind_name(CellKind k);

enum class NackReason : std::uint8_t { None, PdidMismatch, MailboxFull, NoReadChannel };

struct AckInfo {
  int iface = -1;
  int channel = -1;
  NackReason reason = NackReason::None;
};

struct RdmaInfo {
  std::uint64_t transfer_id = 0;
  std::uint32_t block = 0;
  std::uint64_t offset = 0;
  std::uint64_t total_size = 0;
  gvas::GlobalVirtualAddress notif{};
  bool fault = false;
};

struct AccelInfo {
  int level = -1;  // -1 = client gather, levels 0.. = server exchange, -2 = result
  int block = 0;
};

// Fabric transfer unit: up to 256 B of payload plus 16 B header and
// 16 B footer (the checksum field in the footer is a placeholder and is
// always valid; error injection happens at delivery).
struct Cell {
  gvas::GlobalVirtualAddress dst;
  CellKind kind = CellKind::Raw;
  std::uint16_t payload_len = 0;

  int src_node = -1;
  int src_iface = -1;
  int src_channel = -1;
  std::uint64_t seq = 0;

  std::vector<std::uint8_t> payload;
  std::variant<std::monostate, AckInfo, RdmaInfo, AccelInfo> info;

  std::vector<RouteHop> route;
  std::vector<int> vcs;
  int hop = 0;
  int prev_link = -1;
  int prev_vc = 0;

  int wire_bytes() const { return kCellOverheadBytes + payload_len; }
};

using CellPtr = std::shared_ptr<Cell>;

struct FabricStats {
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;  // injected faults only; flow control never drops
  std::uint64_t queued_peak = 0;
  int max_port_occupancy_bytes = 0;
};

struct FabricConfig {
  double loss_prob = 0.0;  // applied at delivery, models end-node packet errors
  std::uint64_t seed = 1;
};

using TraceFn = std::function<void(TimePs, std::string_view ev, int src, int dst,
                                   std::uint64_t seq, std::string_view port)>;
using DeliverFn = std::function<void(CellPtr)>;

// Ceil-split of a payload into cell-sized pieces; 0 bytes yields one
// zero-payload control cell.
std::vector<int> segment_payload(std::int64_t n_bytes);

// Dateline discipline: external links carry two virtual channels per
// torus dimension; hops from the wraparound crossing onward ride VC 1.
// Intra-QFDB hops use the single VC 0.
std::vector<int> allocate_virtual_channels(const Topology& topo,
                                           const std::vector<RouteHop>& route);

// Moves cells across switches and links: cut-through hop latency from
// the calibrated lumps, credit-based link flow control, lossless unless
// delivery faults are injected.
class Fabric {
 public:
  Fabric(EventQueue& q, const Topology& topo, const CalibrationParams& cal,
         FabricConfig cfg = {});

  EventQueue& queue() { return q_; }
  const Topology& topology() const { return topo_; }

  void set_deliver_fn(int node, DeliverFn fn) { deliver_[static_cast<std::size_t>(node)] = std::move(fn); }
  void set_trace(TraceFn fn) { trace_ = std::move(fn); }

  // Shared trace sink for higher layers (transfer-level records).
  void trace_event(std::string_view ev, int src, int dst, std::uint64_t seq,
                   std::string_view port) {
    if (trace_) trace_(q_.now(), ev, src, dst, seq, port);
  }

  // Injects at the current simulated time from src_node toward
  // cell->dst. The source store-and-forward cost is charged by the
  // injecting endpoint. Queues on the source port when out of credits.
  void inject(int src_node, CellPtr cell);

  // Cells waiting to transmit on this link at its upstream node.
  int queue_len(int link) const;
  int total_queued() const;
  // One-shot callback when queue_len(link) drops below `below`.
  void notify_on_drain(int link, int below, std::function<void()> fn);

  const FabricStats& stats() const { return stats_; }
  int credits(int link, int vc) const { return ports_[static_cast<std::size_t>(link)].credits[static_cast<std::size_t>(vc)]; }
  // Highest input-buffer occupancy the port behind this link has seen.
  int port_max_occupancy_bytes(int link) const {
    return ports_[static_cast<std::size_t>(link)].max_occ_slots * kCellWireMax;
  }
  std::uint64_t in_flight() const { return stats_.injected - stats_.delivered - stats_.dropped; }

  // Dispatches events up to and including until_ps.
  FabricStats advance(TimePs until_ps);
  // Runs to quiescence; throws DeadlockDetected if cells remain stuck.
  FabricStats drain();

  TimePs link_lump_ps(const Link& l) const;
  TimePs occupancy_ps(const Cell& c, const Link& l) const;

 private:
  struct Port {
    std::vector<std::deque<CellPtr>> vc_queues;  // upstream, awaiting tx
    std::vector<int> credits;                    // downstream buffer slots
    TimePs busy_until = 0;
    int rr = 0;
    int occ_slots = 0;  // downstream input-buffer occupancy, in cell slots
    int max_occ_slots = 0;
    std::vector<std::pair<int, std::function<void()>>> drain_cbs;
  };

  void kick(int link);
  void check_stuck() const;
  void enqueue(CellPtr cell, int link, int vc);
  void arrive(CellPtr cell, int link);
  void deliver(CellPtr cell, int node);
  void release_slot(int link, int vc);
  void fire_drain_cbs(int link);
  int num_vcs(const Link& l) const { return l.cls == LinkClass::IntraQfdb ? 1 : 2; }
  void trace(std::string_view ev, const Cell& c, std::string_view port);

  EventQueue& q_;
  const Topology& topo_;
  const CalibrationParams& cal_;
  FabricConfig cfg_;
  Rng rng_;
  std::vector<Port> ports_;
  std::vector<DeliverFn> deliver_;
  TraceFn trace_;
  FabricStats stats_;
  TimePs local_switch_ps_;
  TimePs router_block_ps_;
  TimePs mesh_lump_ps_;
  TimePs ext_lump_ps_;
  TimePs credit_return_ps_;
  double ext_eff_gbps_ = kExternalGbps;
};

}  // namespace exns

#endif  // EXANETSIM_FABRIC_HPP_
