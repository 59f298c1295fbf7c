#ifndef EXANETSIM_RDMA_HPP_
#define EXANETSIM_RDMA_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "exanetsim/endpoints.hpp"
#include "exanetsim/fabric.hpp"
#include "exanetsim/memory.hpp"

namespace exns {

constexpr int kRdmaPages = 16;
constexpr int kWriteChannelsPerPage = 32;
constexpr int kReadChannelsPerPage = 32;

class PdidMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NoReadChannelAvailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 64-byte transfer request: local source VA, destination GVA, size and
// an optional notification GVA.
struct RdmaDescriptor {
  std::uint64_t src_va = 0;
  gvas::GlobalVirtualAddress dst{};
  std::uint64_t size = 0;
  std::optional<gvas::GlobalVirtualAddress> notif;

  std::array<std::uint8_t, 64> to_bytes() const;
  static RdmaDescriptor from_bytes(const std::array<std::uint8_t, 64>& b);
};

enum class BlockStatus : std::uint8_t { Pending, InFlight, Acked, Faulted };

struct TransferBlock {
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
  BlockStatus status = BlockStatus::Pending;
  int retries = 0;
  std::uint32_t epoch = 0;
  int cells_sent = 0;
};

struct TransferState {
  std::uint64_t id = 0;
  int src_node = -1;
  int page = -1;
  int channel = -1;
  bool read_channel = false;
  RdmaDescriptor desc;
  std::vector<TransferBlock> blocks;
  std::size_t acked = 0;
  bool done = false;
  std::function<void()> on_complete;
  TimePs started_ps = 0;
  TimePs completed_ps = 0;

  // send-engine streaming state
  std::deque<std::uint32_t> pending_stream;
  int stream_cell = 0;
  TimePs gap_until = 0;
  std::vector<RouteHop> route;
  std::vector<int> vcs;
  int first_link = -1;
  bool drain_wait = false;
};

// Wire form of a read request (and its protocol NACK), carried as a
// packetizer message to the remote send unit's control mailbox.
struct ReadRequestWire {
  std::uint64_t src_va = 0;
  std::uint64_t size = 0;
  gvas::GlobalVirtualAddress dst{};
  gvas::GlobalVirtualAddress notif{};
  std::uint16_t pdid = 0;
  std::uint8_t is_nack = 0;
  std::uint8_t nack_reason = 0;
  std::uint64_t req_id = 0;

  std::vector<std::uint8_t> encode() const;
  static ReadRequestWire decode(const std::vector<std::uint8_t>& b);
};

struct RdmaStats {
  std::uint64_t transfers_started = 0;
  std::uint64_t transfers_completed = 0;
  std::uint64_t blocks_retransmitted = 0;
  std::uint64_t block_faults = 0;
  std::uint64_t notifications = 0;
};

// Descriptor-driven bulk engine: the transaction layer (R5 firmware
// model) splits transfers into 16 KiB blocks with end-to-end per-block
// acknowledgements; the send engine streams cells at the calibrated
// payload rate, interleaving active channels per cell.
class RdmaUnit {
 public:
  using NotifWatch = std::function<void()>;

  RdmaUnit(EventQueue& q, Fabric& fabric, const CalibrationParams& cal, int node,
           Memory& mem, Smmu& smmu, Packetizer& pkt);

  void set_page_owner(int page, std::uint16_t pdid);
  std::uint16_t page_owner(int page) const { return page_owner_[static_cast<std::size_t>(page)]; }
  void set_peer_lookup(std::function<RdmaUnit*(int node)> fn) { peer_ = std::move(fn); }

  // Write path: validates the channel and protection domain, charges the
  // firmware cost, then hands blocks to the send engine.
  TransferState* write(int page, int channel, const RdmaDescriptor& desc,
                       std::function<void()> on_complete = {});

  // Read path: ships a read request through the packetizer to the remote
  // send unit's control mailbox; the remote completes it with a write
  // back to us and the notification fires locally.
  void read(std::uint64_t remote_src_va, int remote_node, std::uint64_t local_dst_va,
            std::uint64_t size, const gvas::GlobalVirtualAddress& notif, std::uint16_t pdid,
            std::function<void()> on_complete = {});

  // Returns the transaction-layer cost charged when a transfer starts;
  // per-block acknowledgment handling is pipelined behind streaming.
  double transaction_overhead_ns() const { return cal_.firmware_overhead_ns; }

  // Cell ingress from the machine dispatcher.
  void on_data(CellPtr cell);
  void on_block_ack(CellPtr cell);
  void on_block_nack(CellPtr cell);
  void on_notif(CellPtr cell);
  // Control messages that arrived on the reserved mailbox interface.
  void on_ctrl(const MboxMessage& m);

  void watch_notif(std::uint64_t va, NotifWatch w) { watches_[va].push_back(std::move(w)); }

  const RdmaStats& stats() const { return stats_; }
  const TransferState* transfer(std::uint64_t id) const;
  int free_write_channel(int page) const;

 private:
  struct RxBlock {
    std::uint64_t received_mask = 0;
    bool complete = false;
    bool fault_signaled = false;
  };
  struct RxState {
    std::uint64_t total = 0;
    std::uint64_t blocks_done = 0;
    std::vector<RxBlock> blocks;
    bool notified = false;
    RdmaInfo info;
  };

  void engine_enqueue(TransferState* t);
  void engine_pump();
  void schedule_pump();
  void finish_transfer(TransferState* t);
  void arm_block_timer(TransferState* t, std::uint32_t block);
  void complete_rx_block(int src_node, RxState& rx, std::uint32_t block, const RdmaInfo& info);
  void write_notification(const RdmaInfo& info);
  void fire_watches(std::uint64_t va);
  void send_read_request(const ReadRequestWire& w, int remote_node);
  std::uint64_t rx_key(int src_node, std::uint64_t transfer_id) const;

  EventQueue& q_;
  Fabric& fabric_;
  const CalibrationParams& cal_;
  int node_;
  Memory& mem_;
  Smmu& smmu_;
  Packetizer& pkt_;
  std::function<RdmaUnit*(int)> peer_;

  std::array<std::uint16_t, kRdmaPages> page_owner_{};
  std::array<std::uint32_t, kRdmaPages> write_busy_{};  // bitmask per page
  std::array<std::uint32_t, kRdmaPages> read_busy_{};

  std::unordered_map<std::uint64_t, std::unique_ptr<TransferState>> transfers_;
  std::uint64_t next_transfer_ = 1;
  std::uint64_t next_read_req_ = 1;

  // send engine
  std::vector<std::uint64_t> engine_rr_;  // transfer ids with cells ready
  std::size_t rr_idx_ = 0;
  TimePs engine_busy_until_ = 0;
  bool pump_pending_ = false;

  std::unordered_map<std::uint64_t, RxState> rx_;
  std::unordered_map<std::uint64_t, std::vector<NotifWatch>> watches_;
  RdmaStats stats_;
};

}  // namespace exns

#endif  // EXANETSIM_RDMA_HPP_
