#include "exanetsim/rdma.hpp"

#include <algorithm>
#include <cstring>

namespace exns {

namespace {

void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (56 - 8 * i));
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::array<std::uint8_t, 64> RdmaDescriptor::to_bytes() const {
  std::array<std::uint8_t, 64> b{};
  put_u64(&b[0], src_va);
  auto d = gvas::to_bytes(dst);
  std::copy(d.begin(), d.end(), b.begin() + 8);
  put_u64(&b[18], size);
  b[26] = notif.has_value() ? 1 : 0;
  if (notif) {
    auto n = gvas::to_bytes(*notif);
    std::copy(n.begin(), n.end(), b.begin() + 27);
  }
  return b;
}

RdmaDescriptor RdmaDescriptor::from_bytes(const std::array<std::uint8_t, 64>& b) {
  RdmaDescriptor d;
  d.src_va = get_u64(&b[0]);
  std::array<std::uint8_t, 10> g{};
  std::copy(b.begin() + 8, b.begin() + 18, g.begin());
  d.dst = gvas::from_bytes(g);
  d.size = get_u64(&b[18]);
  if (b[26]) {
    std::array<std::uint8_t, 10> n{};
    std::copy(b.begin() + 27, b.begin() + 37, n.begin());
    d.notif = gvas::from_bytes(n);
  }
  return d;
}

RdmaUnit::RdmaUnit(EventQueue& q, Fabric& fabric, const CalibrationParams& cal, int node,
                   Memory& mem, Smmu& smmu, Packetizer& pkt)
    : q_(q), fabric_(fabric), cal_(cal), node_(node), mem_(mem), smmu_(smmu), pkt_(pkt) {}

void RdmaUnit::set_page_owner(int page, std::uint16_t pdid) {
  page_owner_[static_cast<std::size_t>(page)] = pdid;
}

int RdmaUnit::free_write_channel(int page) const {
  std::uint32_t busy = write_busy_[static_cast<std::size_t>(page)];
  for (int c = 0; c < kWriteChannelsPerPage; ++c)
    if (!(busy & (1u << c))) return c;
  return -1;
}

const TransferState* RdmaUnit::transfer(std::uint64_t id) const {
  auto it = transfers_.find(id);
  return it == transfers_.end() ? nullptr : it->second.get();
}

TransferState* RdmaUnit::write(int page, int channel, const RdmaDescriptor& desc,
                               std::function<void()> on_complete) {
  auto dstf = gvas::unpack_address(desc.dst);
  if (!gvas::check_protection(dstf.pdid, page_owner_[static_cast<std::size_t>(page)]))
    throw PdidMismatch("descriptor destination PDID does not match the page owner");
  std::uint32_t& busy = write_busy_[static_cast<std::size_t>(page)];
  if (busy & (1u << channel)) throw ChannelBusy("rdma write channel busy");
  busy |= 1u << channel;

  auto t = std::make_unique<TransferState>();
  t->id = next_transfer_++;
  t->src_node = node_;
  t->page = page;
  t->channel = channel;
  t->desc = desc;
  t->on_complete = std::move(on_complete);
  t->started_ps = q_.now();
  for (std::uint64_t off = 0; off < desc.size; off += kRdmaBlockBytes) {
    TransferBlock b;
    b.offset = off;
    b.length = static_cast<std::uint32_t>(
        std::min<std::uint64_t>(kRdmaBlockBytes, desc.size - off));
    t->blocks.push_back(b);
  }
  TransferState* raw = t.get();
  transfers_[raw->id] = std::move(t);
  ++stats_.transfers_started;
  fabric_.trace_event("xfer_start", node_, static_cast<int>(dstf.node), raw->id, "rdma");

  // Transaction-layer (R5) cost at initiation, then the engine streams.
  q_.post(q_.now() + ns_to_ps(transaction_overhead_ns()), [this, raw] { engine_enqueue(raw); });
  return raw;
}

void RdmaUnit::finish_transfer(TransferState* t) {
  t->done = true;
  t->completed_ps = q_.now();
  fabric_.trace_event("xfer_done", node_, static_cast<int>(gvas::unpack_address(t->desc.dst).node),
                      t->id, "rdma");
  std::uint32_t& busy = t->read_channel ? read_busy_[static_cast<std::size_t>(t->page)]
                                        : write_busy_[static_cast<std::size_t>(t->page)];
  busy &= ~(1u << t->channel);
  ++stats_.transfers_completed;
  if (t->on_complete) t->on_complete();
}

void RdmaUnit::engine_enqueue(TransferState* t) {
  if (t->blocks.empty()) {
    // Degenerate size: notification only, no data cells.
    RdmaInfo info;
    info.transfer_id = t->id;
    info.total_size = 0;
    if (t->desc.notif) {
      info.notif = *t->desc.notif;
      write_notification(info);
    }
    finish_transfer(t);
    return;
  }
  auto dstf = gvas::unpack_address(t->desc.dst);
  int dst_node = static_cast<int>(dstf.node);
  if (dst_node != node_) {
    t->route = fabric_.topology().route(node_, dst_node);
    t->vcs = allocate_virtual_channels(fabric_.topology(), t->route);
    t->first_link = t->route[0].link;
  }
  for (std::uint32_t b = 0; b < t->blocks.size(); ++b) t->pending_stream.push_back(b);
  engine_rr_.push_back(t->id);
  engine_pump();
}

void RdmaUnit::schedule_pump() {
  if (pump_pending_) return;
  pump_pending_ = true;
  q_.post(engine_busy_until_, [this] {
    pump_pending_ = false;
    engine_pump();
  });
}

void RdmaUnit::engine_pump() {
  if (q_.now() < engine_busy_until_) {
    schedule_pump();
    return;
  }
  if (engine_rr_.size() > 64) {
    std::erase_if(engine_rr_, [this](std::uint64_t id) {
      auto it = transfers_.find(id);
      return it == transfers_.end() || it->second->done;
    });
    rr_idx_ = 0;
  }
  std::size_t n = engine_rr_.size();
  for (std::size_t probe = 0; probe < n; ++probe) {
    std::size_t idx = (rr_idx_ + probe) % n;
    auto it = transfers_.find(engine_rr_[idx]);
    if (it == transfers_.end()) continue;
    TransferState* t = it->second.get();
    if (t->done || t->pending_stream.empty()) continue;
    if (t->gap_until > q_.now()) continue;  // wake event already scheduled
    if (t->first_link >= 0 && fabric_.queue_len(t->first_link) >= 4) {
      if (!t->drain_wait) {
        t->drain_wait = true;
        fabric_.notify_on_drain(t->first_link, 4, [this, t] {
          t->drain_wait = false;
          engine_pump();
        });
      }
      continue;
    }
    std::uint32_t block = t->pending_stream.front();
    TransferBlock& blk = t->blocks[block];
    if (blk.status == BlockStatus::Acked) {  // stale retransmit entry
      t->pending_stream.pop_front();
      t->stream_cell = 0;
      q_.post_now([this] { engine_pump(); });
      return;
    }
    if (t->stream_cell == 0) {
      // Block start: the send engine translates the source buffer here.
      TranslateResult tr = smmu_.translate(t->desc.src_va + blk.offset);
      if (tr.fault) {
        ++stats_.block_faults;
        blk.status = BlockStatus::Faulted;
        std::uint64_t page = (t->desc.src_va + blk.offset) / kPageBytes;
        t->pending_stream.pop_front();
        TimePs service = ns_to_ps(cal_.fault_service_ns);
        q_.post(q_.now() + service, [this, t, block, page] {
          smmu_.mark_resident(page);
          t->blocks[block].status = BlockStatus::Pending;
          t->pending_stream.push_back(block);
          engine_pump();
        });
        continue;
      }
      blk.status = BlockStatus::InFlight;
    }

    int cells_in_block = static_cast<int>((blk.length + kCellPayloadMax - 1) / kCellPayloadMax);
    std::uint64_t cell_off = blk.offset +
                             static_cast<std::uint64_t>(t->stream_cell) * kCellPayloadMax;
    int cell_len = static_cast<int>(std::min<std::uint64_t>(
        kCellPayloadMax, t->desc.size - cell_off));

    auto cell = std::make_shared<Cell>();
    cell->dst = t->desc.dst;
    cell->kind = CellKind::RdmaData;
    cell->payload_len = static_cast<std::uint16_t>(cell_len);
    cell->payload.resize(static_cast<std::size_t>(cell_len));
    mem_.read(t->desc.src_va + cell_off, cell->payload.data(), cell->payload.size());
    cell->seq = (t->id << 20) | (static_cast<std::uint64_t>(block) << 8) |
                static_cast<std::uint64_t>(t->stream_cell & 0xff);
    RdmaInfo info;
    info.transfer_id = t->id;
    info.block = block;
    info.offset = cell_off;
    info.total_size = t->desc.size;
    if (t->desc.notif) info.notif = *t->desc.notif;
    cell->info = info;
    if (!t->route.empty()) {
      cell->route = t->route;
      cell->vcs = t->vcs;
    }
    // Engine streams payload at the calibrated fraction of the link
    // rate; the cell enters the fabric once its payload is fully read
    // from memory (store-and-forward at the source).
    TimePs occ = tx_time_ps(8ll * std::max(cell_len, 1), cal_.rdma_stream_gbps());
    engine_busy_until_ = q_.now() + occ;
    q_.post(engine_busy_until_, [this, cell] { fabric_.inject(node_, cell); });

    ++t->stream_cell;
    if (t->stream_cell >= cells_in_block) {
      t->pending_stream.pop_front();
      t->stream_cell = 0;
      // R5 bookkeeping before this channel's next block; other channels
      // stream meanwhile.
      t->gap_until = engine_busy_until_ + ns_to_ps(cal_.block_gap_ns(kRdmaBlockBytes));
      q_.post(t->gap_until, [this] { engine_pump(); });
      arm_block_timer(t, block);
    }
    rr_idx_ = (idx + 1) % n;
    schedule_pump();
    return;
  }
}

void RdmaUnit::arm_block_timer(TransferState* t, std::uint32_t block) {
  TransferBlock& blk = t->blocks[block];
  std::uint32_t epoch = ++blk.epoch;
  q_.post(q_.now() + ns_to_ps(cal_.block_ack_timeout_ns), [this, t, block, epoch] {
    TransferBlock& b = t->blocks[block];
    // A faulted block is replayed by the fault-service path, not here.
    if (t->done || b.status == BlockStatus::Acked || b.status == BlockStatus::Faulted ||
        b.epoch != epoch)
      return;
    ++b.retries;
    ++stats_.blocks_retransmitted;
    b.status = BlockStatus::Pending;
    t->pending_stream.push_back(block);
    engine_pump();
  });
}

std::uint64_t RdmaUnit::rx_key(int src_node, std::uint64_t transfer_id) const {
  return (static_cast<std::uint64_t>(src_node) << 40) ^ transfer_id;
}

void RdmaUnit::on_data(CellPtr cell) {
  const RdmaInfo& info = std::get<RdmaInfo>(cell->info);
  auto dstf = gvas::unpack_address(cell->dst);
  std::uint64_t dst_va = gvas::node_level_va(cell->dst);
  std::uint64_t key = rx_key(cell->src_node, info.transfer_id);
  RxState& rx = rx_[key];
  if (rx.blocks.empty()) {
    rx.total = info.total_size;
    rx.blocks.resize((info.total_size + kRdmaBlockBytes - 1) / kRdmaBlockBytes);
    rx.info = info;
  }
  std::uint32_t block = info.block;
  RxBlock& rb = rx.blocks[block];

  // Address translation at the receive unit; a non-resident page NACKs
  // the whole block for replay after the fault service delay.
  TranslateResult tr = smmu_.translate(dst_va + info.offset);
  if (tr.fault) {
    if (!rb.fault_signaled) {
      rb.fault_signaled = true;
      ++stats_.block_faults;
      fabric_.trace_event("block_fault", cell->src_node, node_,
                          (info.transfer_id << 20) | info.block, "rdma");
      std::uint64_t page = (dst_va + info.offset) / kPageBytes;
      auto nack = std::make_shared<Cell>();
      nack->dst = gvas::pack_address(dstf.pdid, static_cast<std::uint64_t>(cell->src_node), 0, 0);
      nack->kind = CellKind::RdmaBlockNack;
      nack->seq = cell->seq;
      RdmaInfo ni = info;
      ni.fault = true;
      nack->info = ni;
      fabric_.inject(node_, std::move(nack));
      TimePs service = ns_to_ps(cal_.fault_service_ns);
      q_.post(q_.now() + service, [this, page, key, block] {
        smmu_.mark_resident(page);
        auto it = rx_.find(key);
        if (it != rx_.end()) it->second.blocks[block].fault_signaled = false;
      });
    }
    return;
  }

  mem_.write(dst_va + info.offset, cell->payload.data(), cell->payload.size());

  std::uint64_t blk_start = static_cast<std::uint64_t>(block) * kRdmaBlockBytes;
  std::uint64_t blk_len = std::min<std::uint64_t>(kRdmaBlockBytes, rx.total - blk_start);
  int cell_idx = static_cast<int>((info.offset - blk_start) / kCellPayloadMax);
  int cells_in_block = static_cast<int>((blk_len + kCellPayloadMax - 1) / kCellPayloadMax);
  rb.received_mask |= 1ull << cell_idx;
  std::uint64_t full = cells_in_block >= 64 ? ~0ull : ((1ull << cells_in_block) - 1);
  bool was_complete = rb.complete;
  if ((rb.received_mask & full) == full) rb.complete = true;

  bool block_end_cell = cell_idx == cells_in_block - 1;
  if (rb.complete && (block_end_cell || !was_complete)) {
    if (!was_complete) ++rx.blocks_done;
    complete_rx_block(cell->src_node, rx, block, info);
  }
}

void RdmaUnit::complete_rx_block(int src_node, RxState& rx, std::uint32_t block,
                                 const RdmaInfo& info) {
  auto ack = std::make_shared<Cell>();
  ack->dst = gvas::pack_address(0, static_cast<std::uint64_t>(src_node), 0, 0);
  ack->kind = CellKind::RdmaBlockAck;
  ack->seq = (info.transfer_id << 20) | block;
  RdmaInfo ai = info;
  ai.block = block;
  ack->info = ai;
  fabric_.inject(node_, std::move(ack));

  if (rx.blocks_done == rx.blocks.size() && !rx.notified) {
    rx.notified = true;
    if (info.notif.hi != 0 || info.notif.lo != 0) {
      ++stats_.notifications;
      // Receive-unit completion bookkeeping before the notification
      // becomes observable.
      RdmaInfo ni = info;
      q_.post(q_.now() + ns_to_ps(cal_.rdma_recv_hw_ns), [this, ni] { write_notification(ni); });
    }
  }
}

void RdmaUnit::write_notification(const RdmaInfo& info) {
  auto nf = gvas::unpack_address(info.notif);
  std::uint64_t va = gvas::node_level_va(info.notif);
  if (static_cast<int>(nf.node) == node_) {
    std::uint8_t v[8];
    put_u64(v, info.transfer_id);
    mem_.write(va, v, 8);
    fire_watches(va);
    return;
  }
  auto cell = std::make_shared<Cell>();
  cell->dst = info.notif;
  cell->kind = CellKind::RdmaNotif;
  cell->payload_len = 8;
  cell->payload.resize(8);
  put_u64(cell->payload.data(), info.transfer_id);
  RdmaInfo ni = info;
  cell->info = ni;
  cell->seq = info.transfer_id;
  fabric_.inject(node_, std::move(cell));
}

void RdmaUnit::fire_watches(std::uint64_t va) {
  auto it = watches_.find(va);
  if (it == watches_.end()) return;
  auto fns = std::move(it->second);
  watches_.erase(it);
  for (auto& f : fns) f();
}

void RdmaUnit::on_block_ack(CellPtr cell) {
  const RdmaInfo& info = std::get<RdmaInfo>(cell->info);
  auto it = transfers_.find(info.transfer_id);
  if (it == transfers_.end()) return;
  TransferState* t = it->second.get();
  TransferBlock& blk = t->blocks[info.block];
  if (blk.status == BlockStatus::Acked) return;
  blk.status = BlockStatus::Acked;
  ++blk.epoch;  // cancel retransmit timer
  ++t->acked;
  fabric_.trace_event("block_ack", cell->src_node, node_, (t->id << 20) | info.block, "rdma");
  if (t->acked == t->blocks.size() && !t->done) finish_transfer(t);
}

void RdmaUnit::on_block_nack(CellPtr cell) {
  const RdmaInfo& info = std::get<RdmaInfo>(cell->info);
  auto it = transfers_.find(info.transfer_id);
  if (it == transfers_.end()) return;
  TransferState* t = it->second.get();
  TransferBlock& blk = t->blocks[info.block];
  if (blk.status == BlockStatus::Acked || t->done) return;
  blk.status = BlockStatus::Faulted;
  ++blk.epoch;
  std::uint32_t block = info.block;
  // Replay after the fault service delay; the receiver's page is
  // resident again by then.
  q_.post(q_.now() + ns_to_ps(cal_.fault_service_ns), [this, t, block] {
    if (t->done || t->blocks[block].status == BlockStatus::Acked) return;
    t->blocks[block].status = BlockStatus::Pending;
    t->pending_stream.push_back(block);
    ++stats_.blocks_retransmitted;
    engine_pump();
  });
}

void RdmaUnit::on_notif(CellPtr cell) {
  std::uint64_t va = gvas::node_level_va(cell->dst);
  mem_.write(va, cell->payload.data(), cell->payload.size());
  fire_watches(va);
}

// --- RDMA read ---

std::vector<std::uint8_t> ReadRequestWire::encode() const {
  std::vector<std::uint8_t> b(56, 0);
  put_u64(&b[0], src_va);
  put_u64(&b[8], size);
  auto d = gvas::to_bytes(dst);
  std::copy(d.begin(), d.end(), b.begin() + 16);
  auto n = gvas::to_bytes(notif);
  std::copy(n.begin(), n.end(), b.begin() + 26);
  b[36] = static_cast<std::uint8_t>(pdid >> 8);
  b[37] = static_cast<std::uint8_t>(pdid & 0xff);
  b[38] = is_nack;
  b[39] = nack_reason;
  put_u64(&b[40], req_id);
  return b;
}

ReadRequestWire ReadRequestWire::decode(const std::vector<std::uint8_t>& b) {
  ReadRequestWire r{};
  r.src_va = get_u64(&b[0]);
  r.size = get_u64(&b[8]);
  std::array<std::uint8_t, 10> g{};
  std::copy(b.begin() + 16, b.begin() + 26, g.begin());
  r.dst = gvas::from_bytes(g);
  std::copy(b.begin() + 26, b.begin() + 36, g.begin());
  r.notif = gvas::from_bytes(g);
  r.pdid = static_cast<std::uint16_t>((b[36] << 8) | b[37]);
  r.is_nack = b[38];
  r.nack_reason = b[39];
  r.req_id = get_u64(&b[40]);
  return r;
}

void RdmaUnit::read(std::uint64_t remote_src_va, int remote_node, std::uint64_t local_dst_va,
                    std::uint64_t size, const gvas::GlobalVirtualAddress& notif,
                    std::uint16_t pdid, std::function<void()> on_complete) {
  ReadRequestWire w{};
  w.src_va = remote_src_va;
  w.size = size;
  w.dst = gvas::pack_address(pdid, static_cast<std::uint64_t>(node_), 0, local_dst_va);
  w.notif = notif;
  w.pdid = pdid;
  w.req_id = next_read_req_++;
  if (on_complete) {
    std::uint64_t nva = gvas::node_level_va(notif);
    watch_notif(nva, std::move(on_complete));
  }
  send_read_request(w, remote_node);
}

void RdmaUnit::send_read_request(const ReadRequestWire& w, int remote_node) {
  pkt_.set_iface_owner(kRdmaCtrlIface, w.pdid);
  gvas::GlobalVirtualAddress dst = gvas::pack_address(
      w.pdid, static_cast<std::uint64_t>(remote_node), 0, kRdmaCtrlIface);
  int ch = pkt_.free_channel(kRdmaCtrlIface);
  if (ch < 0) {
    q_.post(q_.now() + ns_to_ps(cal_.pkt_timeout_ns),
            [this, w, remote_node] { send_read_request(w, remote_node); });
    return;
  }
  pkt_.send(kRdmaCtrlIface, ch, dst, w.encode());
}

void RdmaUnit::on_ctrl(const MboxMessage& m) {
  ReadRequestWire w = ReadRequestWire::decode(m.payload);
  if (w.is_nack) {
    // Our earlier read request bounced. Retry unless it was a protection
    // failure.
    if (w.nack_reason == static_cast<std::uint8_t>(NackReason::NoReadChannel)) {
      q_.post(q_.now() + ns_to_ps(cal_.pkt_timeout_ns), [this, w, m] {
        ReadRequestWire retry = w;
        retry.is_nack = 0;
        retry.nack_reason = 0;
        send_read_request(retry, m.src_node);
      });
    }
    return;
  }

  // Incoming read request: allocate a read channel on the page whose
  // owner matches the request's protection domain.
  int page = -1;
  for (int p = 0; p < kRdmaPages; ++p)
    if (page_owner_[static_cast<std::size_t>(p)] == w.pdid) {
      page = p;
      break;
    }
  int channel = -1;
  if (page >= 0) {
    std::uint32_t busy = read_busy_[static_cast<std::size_t>(page)];
    for (int c = 0; c < kReadChannelsPerPage; ++c)
      if (!(busy & (1u << c))) {
        channel = c;
        break;
      }
  }
  if (page < 0 || channel < 0) {
    ReadRequestWire nack = w;
    nack.is_nack = 1;
    nack.nack_reason = static_cast<std::uint8_t>(
        page < 0 ? NackReason::PdidMismatch : NackReason::NoReadChannel);
    pkt_.set_iface_owner(kRdmaCtrlIface, w.pdid);
    gvas::GlobalVirtualAddress back = gvas::pack_address(
        w.pdid, static_cast<std::uint64_t>(m.src_node), 0, kRdmaCtrlIface);
    int ch = pkt_.free_channel(kRdmaCtrlIface);
    if (ch >= 0) pkt_.send(kRdmaCtrlIface, ch, back, nack.encode());
    return;
  }

  read_busy_[static_cast<std::size_t>(page)] |= 1u << channel;
  auto t = std::make_unique<TransferState>();
  t->id = next_transfer_++;
  t->src_node = node_;
  t->page = page;
  t->channel = channel;
  t->read_channel = true;
  t->desc.src_va = w.src_va;
  t->desc.dst = w.dst;
  t->desc.size = w.size;
  t->desc.notif = w.notif;
  t->started_ps = q_.now();
  for (std::uint64_t off = 0; off < w.size; off += kRdmaBlockBytes) {
    TransferBlock b;
    b.offset = off;
    b.length = static_cast<std::uint32_t>(std::min<std::uint64_t>(kRdmaBlockBytes, w.size - off));
    t->blocks.push_back(b);
  }
  TransferState* raw = t.get();
  transfers_[raw->id] = std::move(t);
  ++stats_.transfers_started;
  fabric_.trace_event("xfer_start", node_, static_cast<int>(gvas::unpack_address(w.dst).node),
                      raw->id, "rdma_read");
  q_.post(q_.now() + ns_to_ps(transaction_overhead_ns()), [this, raw] { engine_enqueue(raw); });
}

}  // namespace exns
