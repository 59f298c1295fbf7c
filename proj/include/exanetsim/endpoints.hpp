#ifndef EXANETSIM_ENDPOINTS_HPP_
#define EXANETSIM_ENDPOINTS_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "exanetsim/fabric.hpp"

namespace exns {

constexpr int kIfacesPerNode = 64;
constexpr int kChannelsPerIface = 4;
constexpr int kPktPayloadMax = 64;
constexpr int kDedupWindow = 64;
// Interface reserved for the RDMA unit's control mailbox.
constexpr int kRdmaCtrlIface = kIfacesPerNode - 1;

class PayloadTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class ChannelBusy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ChannelState : std::uint8_t {
  Idle,
  Ongoing,
  Acknowledged,
  NegativelyAcknowledged,
  TimedOut,
};

const char* channel_state_name(ChannelState s);

struct MboxMessage {
  int src_node = -1;
  int src_iface = -1;
  std::uint64_t seq = 0;
  std::uint16_t pdid = 0;
  std::vector<std::uint8_t> payload;
  TimePs arrived_ps = 0;
  CellKind kind = CellKind::PktMsg;
  std::variant<std::monostate, AckInfo, RdmaInfo, AccelInfo> info;
};

// Virtualized sender block: 64 interfaces of 4 memory-mapped channels
// each, with hardware retransmission timers.
class Packetizer {
 public:
  using SettleFn = std::function<void(ChannelState, NackReason)>;

  Packetizer(EventQueue& q, Fabric& fabric, const CalibrationParams& cal, int node);

  void set_iface_owner(int iface, std::uint16_t pdid);
  std::uint16_t iface_owner(int iface) const;

  // Copies the payload into the channel and fires the engine. The cell
  // carries the interface owner's PDID. Charges copy + inject hardware
  // time before the cell enters the fabric. on_settle runs when the
  // channel leaves Ongoing.
  void send(int iface, int channel, const gvas::GlobalVirtualAddress& dst,
            std::vector<std::uint8_t> payload, SettleFn on_settle = {},
            CellKind kind = CellKind::PktMsg);

  ChannelState poll(int iface, int channel) const;

  // Finds an idle channel on the interface, or -1.
  int free_channel(int iface) const;

  // Fabric feedback.
  void on_ack(const AckInfo& info);
  void on_nack(const AckInfo& info);

  std::uint64_t next_seq(int iface) { return seqs_[static_cast<std::size_t>(iface)]++; }

 private:
  struct Channel {
    ChannelState state = ChannelState::Idle;
    std::uint64_t seq = 0;
    int retries = 0;
    std::uint32_t epoch = 0;
    CellPtr wire;  // retransmission copy
    SettleFn on_settle;
  };

  Channel& ch(int iface, int channel);
  const Channel& ch(int iface, int channel) const;
  void transmit(int iface, int channel);
  void arm_timer(int iface, int channel);
  void settle(int iface, int channel, ChannelState st, NackReason r);

  EventQueue& q_;
  Fabric& fabric_;
  const CalibrationParams& cal_;
  int node_;
  std::vector<std::uint16_t> owners_;
  std::vector<std::uint64_t> seqs_;
  std::vector<Channel> channels_;
};

// Virtualized receiver block: 64 interfaces with per-source duplicate
// suppression and NACK generation for protection or capacity failures.
class Mailbox {
 public:
  using ArrivalFn = std::function<void(int iface)>;

  Mailbox(EventQueue& q, Fabric& fabric, const CalibrationParams& cal, int node);

  void set_iface_owner(int iface, std::uint16_t pdid);
  std::uint16_t iface_owner(int iface) const;
  // The RDMA unit's control mailbox accepts any PDID; the protection
  // check happens at page allocation instead.
  void set_iface_wildcard(int iface, bool on);
  void set_capacity(int msgs) { capacity_ = msgs; }
  void set_arrival_fn(int iface, ArrivalFn fn);

  // Hardware-side delivery of an incoming cell (already charged the
  // fabric path). Performs the PDID check, duplicate suppression and
  // ACK/NACK generation after the mailbox accept time.
  void deliver(CellPtr cell);

  std::optional<MboxMessage> dequeue(int iface);
  int queue_len(int iface) const;

  std::uint64_t enqueued_total() const { return enqueued_total_; }
  std::uint64_t duplicates_suppressed() const { return dups_; }

 private:
  struct SourceWindow {
    std::uint64_t highest = 0;
    std::uint64_t bitmap = 0;  // bit i = seen (highest - i)
    bool any = false;
  };
  struct Iface {
    std::uint16_t pdid = 0;
    bool wildcard = false;
    std::deque<MboxMessage> queue;
    std::unordered_map<std::uint64_t, SourceWindow> windows;
    ArrivalFn on_arrival;
  };

  void respond(const Cell& cell, CellKind kind, NackReason r);
  bool seen_before(const Iface& f, std::uint64_t key, std::uint64_t seq) const;
  void record_seen(Iface& f, std::uint64_t key, std::uint64_t seq);

  EventQueue& q_;
  Fabric& fabric_;
  const CalibrationParams& cal_;
  int node_;
  int capacity_ = 256;
  std::vector<Iface> ifaces_;
  std::uint64_t enqueued_total_ = 0;
  std::uint64_t dups_ = 0;
};

}  // namespace exns

#endif  // EXANETSIM_ENDPOINTS_HPP_
