#include "exanetsim/endpoints.hpp"

namespace exns {

const char* channel_state_name(ChannelState s) {
  switch (s) {
    case ChannelState::Idle: return "idle";
    case ChannelState::Ongoing: return "ongoing";
    case ChannelState::Acknowledged: return "acknowledged";
    case ChannelState::NegativelyAcknowledged: return "negatively_acknowledged";
    case ChannelState::TimedOut: return "timed_out";
  }
  return "?";
}

Packetizer::Packetizer(EventQueue& q, Fabric& fabric, const CalibrationParams& cal, int node)
    : q_(q), fabric_(fabric), cal_(cal), node_(node) {
  owners_.assign(kIfacesPerNode, 0);
  seqs_.assign(kIfacesPerNode, 1);
  channels_.resize(kIfacesPerNode * kChannelsPerIface);
}

void Packetizer::set_iface_owner(int iface, std::uint16_t pdid) {
  owners_[static_cast<std::size_t>(iface)] = pdid;
}
std::uint16_t Packetizer::iface_owner(int iface) const {
  return owners_[static_cast<std::size_t>(iface)];
}

Packetizer::Channel& Packetizer::ch(int iface, int channel) {
  return channels_[static_cast<std::size_t>(iface * kChannelsPerIface + channel)];
}
const Packetizer::Channel& Packetizer::ch(int iface, int channel) const {
  return channels_[static_cast<std::size_t>(iface * kChannelsPerIface + channel)];
}

int Packetizer::free_channel(int iface) const {
  for (int c = 0; c < kChannelsPerIface; ++c)
    if (ch(iface, c).state != ChannelState::Ongoing) return c;
  return -1;
}

ChannelState Packetizer::poll(int iface, int channel) const { return ch(iface, channel).state; }

void Packetizer::send(int iface, int channel, const gvas::GlobalVirtualAddress& dst,
                      std::vector<std::uint8_t> payload, SettleFn on_settle, CellKind kind) {
  if (payload.size() > kPktPayloadMax)
    throw PayloadTooLarge("packetizer payload of " + std::to_string(payload.size()) +
                          " bytes exceeds 64");
  Channel& c = ch(iface, channel);
  if (c.state == ChannelState::Ongoing)
    throw ChannelBusy("packetizer channel busy");

  auto cell = std::make_shared<Cell>();
  // The PDID carried by the packet mirrors the interface owner's.
  auto d = gvas::unpack_address(dst);
  cell->dst = gvas::pack_address(owners_[static_cast<std::size_t>(iface)], d.node, d.rank, d.va);
  cell->kind = kind;
  cell->payload_len = static_cast<std::uint16_t>(payload.size());
  cell->payload = std::move(payload);
  cell->src_node = node_;
  cell->src_iface = iface;
  cell->src_channel = channel;
  cell->seq = next_seq(iface);

  c.state = ChannelState::Ongoing;
  c.seq = cell->seq;
  c.retries = 0;
  ++c.epoch;
  c.wire = std::move(cell);
  c.on_settle = std::move(on_settle);
  transmit(iface, channel);
}

void Packetizer::transmit(int iface, int channel) {
  Channel& c = ch(iface, channel);
  // store payload into the channel page, then the engine builds the cell
  TimePs cost = ns_to_ps(cal_.copy_ns + cal_.pkt_inject_hw_ns());
  CellPtr wire = c.wire;
  q_.post(q_.now() + cost, [this, wire] {
    auto copy = std::make_shared<Cell>(*wire);
    copy->route.clear();
    copy->vcs.clear();
    fabric_.inject(node_, std::move(copy));
  });
  arm_timer(iface, channel);
}

void Packetizer::arm_timer(int iface, int channel) {
  Channel& c = ch(iface, channel);
  std::uint32_t epoch = c.epoch;
  int retries = c.retries;
  q_.post(q_.now() + ns_to_ps(cal_.pkt_timeout_ns), [this, iface, channel, epoch, retries] {
    Channel& cc = ch(iface, channel);
    if (cc.epoch != epoch || cc.state != ChannelState::Ongoing) return;
    if (cc.retries != retries) return;  // a NACK already rescheduled this send
    if (cc.retries >= cal_.pkt_max_retries) {
      settle(iface, channel, ChannelState::TimedOut, NackReason::None);
      return;
    }
    ++cc.retries;
    transmit(iface, channel);
  });
}

void Packetizer::settle(int iface, int channel, ChannelState st, NackReason r) {
  Channel& c = ch(iface, channel);
  c.state = st;
  ++c.epoch;
  c.wire.reset();
  if (c.on_settle) {
    auto fn = std::move(c.on_settle);
    c.on_settle = {};
    fn(st, r);
  }
}

void Packetizer::on_ack(const AckInfo& info) {
  Channel& c = ch(info.iface, info.channel);
  if (c.state != ChannelState::Ongoing) return;
  settle(info.iface, info.channel, ChannelState::Acknowledged, NackReason::None);
}

void Packetizer::on_nack(const AckInfo& info) {
  Channel& c = ch(info.iface, info.channel);
  if (c.state != ChannelState::Ongoing) return;
  if (info.reason == NackReason::MailboxFull) {
    // Transient: retry after the timeout period until retries run out.
    if (c.retries >= cal_.pkt_max_retries) {
      settle(info.iface, info.channel, ChannelState::NegativelyAcknowledged, info.reason);
      return;
    }
    ++c.retries;
    ++c.epoch;
    std::uint32_t epoch = c.epoch;
    q_.post(q_.now() + ns_to_ps(cal_.pkt_timeout_ns), [this, info, epoch] {
      Channel& cc = ch(info.iface, info.channel);
      if (cc.epoch != epoch || cc.state != ChannelState::Ongoing) return;
      transmit(info.iface, info.channel);
    });
    return;
  }
  settle(info.iface, info.channel, ChannelState::NegativelyAcknowledged, info.reason);
}

Mailbox::Mailbox(EventQueue& q, Fabric& fabric, const CalibrationParams& cal, int node)
    : q_(q), fabric_(fabric), cal_(cal), node_(node) {
  ifaces_.resize(kIfacesPerNode);
  capacity_ = cal.mailbox_capacity;
}

void Mailbox::set_iface_owner(int iface, std::uint16_t pdid) {
  ifaces_[static_cast<std::size_t>(iface)].pdid = pdid;
}
std::uint16_t Mailbox::iface_owner(int iface) const {
  return ifaces_[static_cast<std::size_t>(iface)].pdid;
}
void Mailbox::set_arrival_fn(int iface, ArrivalFn fn) {
  ifaces_[static_cast<std::size_t>(iface)].on_arrival = std::move(fn);
}
void Mailbox::set_iface_wildcard(int iface, bool on) {
  ifaces_[static_cast<std::size_t>(iface)].wildcard = on;
}

void Mailbox::respond(const Cell& cell, CellKind kind, NackReason r) {
  auto resp = std::make_shared<Cell>();
  // Route the ACK back to the originating packetizer interface.
  resp->dst = gvas::pack_address(cell.dst.hi, static_cast<std::uint64_t>(cell.src_node), 0,
                                 static_cast<std::uint64_t>(cell.src_iface));
  resp->kind = kind;
  resp->payload_len = 0;
  resp->seq = cell.seq;
  resp->info = AckInfo{cell.src_iface, cell.src_channel, r};
  fabric_.inject(node_, std::move(resp));
}

bool Mailbox::seen_before(const Iface& f, std::uint64_t key, std::uint64_t seq) const {
  auto it = f.windows.find(key);
  if (it == f.windows.end() || !it->second.any) return false;
  const SourceWindow& w = it->second;
  if (seq > w.highest) return false;
  std::uint64_t back = w.highest - seq;
  if (back >= kDedupWindow) return true;  // far past the window: stale duplicate
  return (w.bitmap & (1ull << back)) != 0;
}

// Recorded only once the message is actually enqueued, so a NACKed
// attempt can be retried with the same sequence number.
void Mailbox::record_seen(Iface& f, std::uint64_t key, std::uint64_t seq) {
  SourceWindow& w = f.windows[key];
  if (!w.any) {
    w.any = true;
    w.highest = seq;
    w.bitmap = 1;
    return;
  }
  if (seq > w.highest) {
    std::uint64_t shift = seq - w.highest;
    w.bitmap = shift >= 64 ? 0 : (w.bitmap << shift);
    w.bitmap |= 1;
    w.highest = seq;
    return;
  }
  std::uint64_t back = w.highest - seq;
  if (back < kDedupWindow) w.bitmap |= 1ull << back;
}

void Mailbox::deliver(CellPtr cell) {
  TimePs cost = ns_to_ps(cal_.mbox_accept_hw_ns());
  q_.post(q_.now() + cost, [this, cell] {
    auto dstf = gvas::unpack_address(cell->dst);
    int iface_id = static_cast<int>(dstf.va);
    Iface& f = ifaces_[static_cast<std::size_t>(iface_id)];
    if (!f.wildcard && !gvas::check_protection(dstf.pdid, f.pdid)) {
      respond(*cell, CellKind::PktNack, NackReason::PdidMismatch);
      return;
    }
    std::uint64_t key = (static_cast<std::uint64_t>(cell->src_node) << 8) |
                        static_cast<std::uint64_t>(cell->src_iface & 0xff);
    if (seen_before(f, key, cell->seq)) {
      ++dups_;
      respond(*cell, CellKind::PktAck, NackReason::None);  // re-ACK, no enqueue
      return;
    }
    if (static_cast<int>(f.queue.size()) >= capacity_) {
      respond(*cell, CellKind::PktNack, NackReason::MailboxFull);
      return;
    }
    record_seen(f, key, cell->seq);
    MboxMessage m;
    m.src_node = cell->src_node;
    m.src_iface = cell->src_iface;
    m.seq = cell->seq;
    m.pdid = dstf.pdid;
    m.payload = cell->payload;
    m.arrived_ps = q_.now();
    m.kind = cell->kind;
    m.info = cell->info;
    f.queue.push_back(std::move(m));
    ++enqueued_total_;
    respond(*cell, CellKind::PktAck, NackReason::None);
    if (f.on_arrival) f.on_arrival(iface_id);
  });
}

std::optional<MboxMessage> Mailbox::dequeue(int iface) {
  Iface& f = ifaces_[static_cast<std::size_t>(iface)];
  if (f.queue.empty()) return std::nullopt;
  MboxMessage m = std::move(f.queue.front());
  f.queue.pop_front();
  return m;
}

int Mailbox::queue_len(int iface) const {
  return static_cast<int>(ifaces_[static_cast<std::size_t>(iface)].queue.size());
}

}  // namespace exns
