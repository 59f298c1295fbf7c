#include "exanetsim/runtime.hpp"

#include <algorithm>
#include <cmath>

namespace exns {

namespace {

constexpr std::uint8_t kEager = 1, kRts = 2, kCts = 3, kFin = 4, kBar = 5;
constexpr std::uint16_t kBarrierCtx = 0xffff;

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}
std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | b[at + i];
  return v;
}

std::vector<std::uint8_t> encode_envelope(const MessageEnvelope& e, std::size_t extra = 0) {
  std::vector<std::uint8_t> b(16 + extra, 0);
  b[0] = e.kind;
  put_u32(b, 1, static_cast<std::uint32_t>(e.tag));
  b[5] = static_cast<std::uint8_t>(e.ctx >> 8);
  b[6] = static_cast<std::uint8_t>(e.ctx & 0xff);
  put_u32(b, 7, e.src_rank);
  put_u32(b, 11, e.size);
  return b;
}

MessageEnvelope decode_envelope(const std::vector<std::uint8_t>& b) {
  MessageEnvelope e;
  e.kind = b[0];
  e.tag = static_cast<std::int32_t>(get_u32(b, 1));
  e.ctx = static_cast<std::uint16_t>((b[5] << 8) | b[6]);
  e.src_rank = get_u32(b, 7);
  e.size = get_u32(b, 11);
  return e;
}

}  // namespace

int dtype_size(Dtype d) {
  switch (d) {
    case Dtype::Int32: return 4;
    case Dtype::Float32: return 4;
    case Dtype::Float64: return 8;
  }
  return 0;
}

void reduce_vectors(ReduceOp op, Dtype d, const std::uint8_t* a, const std::uint8_t* b,
                    std::uint8_t* out, std::size_t bytes) {
  switch (d) {
    case Dtype::Int32: {
      std::size_t n = bytes / 4;
      for (std::size_t i = 0; i < n; ++i) {
        std::int32_t x, y, r;
        std::memcpy(&x, a + 4 * i, 4);
        std::memcpy(&y, b + 4 * i, 4);
        switch (op) {
          case ReduceOp::Sum:
            r = static_cast<std::int32_t>(static_cast<std::uint32_t>(x) +
                                          static_cast<std::uint32_t>(y));
            break;
          case ReduceOp::Min: r = std::min(x, y); break;
          case ReduceOp::Max: r = std::max(x, y); break;
          default: throw UnsupportedOp("reduce op");
        }
        std::memcpy(out + 4 * i, &r, 4);
      }
      break;
    }
    case Dtype::Float32: {
      std::size_t n = bytes / 4;
      for (std::size_t i = 0; i < n; ++i) {
        float x, y, r;
        std::memcpy(&x, a + 4 * i, 4);
        std::memcpy(&y, b + 4 * i, 4);
        switch (op) {
          case ReduceOp::Sum: r = x + y; break;
          case ReduceOp::Min: r = std::min(x, y); break;
          case ReduceOp::Max: r = std::max(x, y); break;
          default: throw UnsupportedOp("reduce op");
        }
        std::memcpy(out + 4 * i, &r, 4);
      }
      break;
    }
    case Dtype::Float64: {
      std::size_t n = bytes / 8;
      for (std::size_t i = 0; i < n; ++i) {
        double x, y, r;
        std::memcpy(&x, a + 8 * i, 8);
        std::memcpy(&y, b + 8 * i, 8);
        switch (op) {
          case ReduceOp::Sum: r = x + y; break;
          case ReduceOp::Min: r = std::min(x, y); break;
          case ReduceOp::Max: r = std::max(x, y); break;
          default: throw UnsupportedOp("reduce op");
        }
        std::memcpy(out + 8 * i, &r, 8);
      }
      break;
    }
    default:
      throw UnsupportedOp("reduce dtype");
  }
}

std::vector<BcastStep> bcast_schedule(int n_ranks, int root) {
  // Step k: every relative rank below 2^k relays to rank + 2^k.
  std::vector<BcastStep> steps;
  for (int mask = 1; mask < n_ranks; mask <<= 1) {
    BcastStep s;
    for (int r = 0; r < mask && r + mask < n_ranks; ++r)
      s.pairs.push_back({(r + root) % n_ranks, (r + mask + root) % n_ranks});
    steps.push_back(std::move(s));
  }
  return steps;
}

BcastStepCounts bcast_step_counts(const RankMap& map, int root) {
  BcastStepCounts c;
  for (const BcastStep& s : bcast_schedule(map.n_ranks, root)) {
    StepClass worst = StepClass::SameFpga;
    for (auto [a, b] : s.pairs) {
      StepClass sc = map.class_between(a, b);
      if (static_cast<int>(sc) > static_cast<int>(worst)) worst = sc;
    }
    switch (worst) {
      case StepClass::SameFpga: ++c.same_fpga; break;
      case StepClass::IntraQfdb: ++c.intra_qfdb; break;
      case StepClass::InterQfdb: ++c.inter_qfdb; break;
    }
  }
  return c;
}

MpiRuntime::MpiRuntime(Machine& m, RankMap map, int eager_threshold, std::uint16_t pdid)
    : m_(m), map_(std::move(map)), eager_threshold_(eager_threshold), pdid_(pdid) {
  if (map_.nodes_needed() > m_.num_nodes())
    throw std::invalid_argument("rank map needs " + std::to_string(map_.nodes_needed()) +
                                " nodes but topology has " + std::to_string(m_.num_nodes()));
  if (eager_threshold_ + 16 > kMpiPayloadBudget)
    throw std::invalid_argument("eager threshold exceeds the packetizer payload budget");
  ranks_.resize(static_cast<std::size_t>(map_.n_ranks));
  node_backlog_.resize(static_cast<std::size_t>(m_.num_nodes()));
  for (int n = 0; n < map_.nodes_needed(); ++n) m_.assign_pdid(n, pdid_);
  for (int r = 0; r < map_.n_ranks; ++r) {
    RankState& rs = ranks_[static_cast<std::size_t>(r)];
    rs.node = map_.node_of(r);
    rs.core = map_.core_of(r);
    Node& nd = m_.node(rs.node);
    nd.mbox->set_arrival_fn(rs.core, [this, r](int) { on_mbox_arrival(r); });
  }
}

std::uint64_t MpiRuntime::alloc_buffer(int rank, std::uint64_t bytes) {
  return m_.node(ranks_[static_cast<std::size_t>(rank)].node).mem->alloc(bytes);
}
void MpiRuntime::write_buffer(int rank, std::uint64_t va, const std::uint8_t* data,
                              std::uint64_t n) {
  m_.node(ranks_[static_cast<std::size_t>(rank)].node).mem->write(va, data, n);
}
void MpiRuntime::read_buffer(int rank, std::uint64_t va, std::uint8_t* out,
                             std::uint64_t n) const {
  m_.node(ranks_[static_cast<std::size_t>(rank)].node).mem->read(va, out, n);
}

gvas::GlobalVirtualAddress MpiRuntime::mbox_gva(int rank) const {
  const RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  return gvas::pack_address(pdid_, static_cast<std::uint64_t>(rs.node),
                            static_cast<std::uint64_t>(rs.core),
                            static_cast<std::uint64_t>(rs.core));
}

gvas::GlobalVirtualAddress MpiRuntime::buffer_gva(int rank, std::uint64_t nlva) const {
  const RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  return gvas::pack_address(pdid_, static_cast<std::uint64_t>(rs.node),
                            (nlva >> gvas::kVaBits) & 0x7,
                            nlva & gvas::bit_mask(gvas::kVaBits));
}

std::uint64_t MpiRuntime::take_notif_slot(int rank) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  if (!rs.notif_free.empty()) {
    std::uint64_t va = rs.notif_free.back();
    rs.notif_free.pop_back();
    return va;
  }
  return alloc_buffer(rank, 8);
}
void MpiRuntime::return_notif_slot(int rank, std::uint64_t va) {
  ranks_[static_cast<std::size_t>(rank)].notif_free.push_back(va);
}

Task MpiRuntime::pkt_send_rank(int rank, gvas::GlobalVirtualAddress dst,
                               std::vector<std::uint8_t> payload, bool wait_ack) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  Node& nd = m_.node(rs.node);
  int iface = rs.core;
  int ch = nd.pkt->free_channel(iface);
  while (ch < 0) {
    co_await sleep_for(m_.queue(), ns_to_ps(50));
    ch = nd.pkt->free_channel(iface);
  }
  if (wait_ack) {
    Gate* g = new_gate();
    nd.pkt->send(iface, ch, dst, std::move(payload),
                 [g](ChannelState, NackReason) { g->open(); });
    co_await g->wait();
  } else {
    nd.pkt->send(iface, ch, dst, std::move(payload));
  }
}

Gate* MpiRuntime::new_gate() {
  gates_.push_back(std::make_unique<Gate>(m_.queue()));
  return gates_.back().get();
}

Task MpiRuntime::send(int src_rank, int dst_rank, int tag, std::uint16_t ctx,
                      std::uint64_t src_va, std::uint32_t size) {
  return send_body(src_rank, dst_rank, tag, ctx, src_va, size, true);
}

Task MpiRuntime::send_body(int src_rank, int dst_rank, int tag, std::uint16_t ctx,
                           std::uint64_t src_va, std::uint32_t size, bool charge_sw) {
  RankState& rs = ranks_[static_cast<std::size_t>(src_rank)];
  MessageEnvelope env;
  env.tag = tag;
  env.ctx = ctx;
  env.src_rank = static_cast<std::uint32_t>(src_rank);
  env.size = size;

  if (size <= static_cast<std::uint32_t>(eager_threshold_)) {
    env.kind = kEager;
    if (charge_sw) co_await sleep_for(m_.queue(), ns_to_ps(m_.cal().derived_mpi_sw_ns()));
    auto payload = encode_envelope(env, size);
    m_.node(rs.node).mem->read(src_va, payload.data() + 16, size);
    // Blocking semantics: the channel's hardware acknowledgement is the
    // send completion.
    co_await pkt_send_rank(src_rank, mbox_gva(dst_rank), std::move(payload), true);
    co_return;
  }

  // Rendezvous: RTS -> CTS -> RDMA write with parallel notification ->
  // final acknowledgement back to the sender.
  env.kind = kRts;
  if (charge_sw) co_await sleep_for(m_.queue(), ns_to_ps(m_.cal().rv_rts_sw_ns));
  std::uint32_t msg_seq = rs.next_msg_seq++;
  Gate* fin = new_gate();
  PendingSend ps;
  ps.msg_seq = msg_seq;
  ps.dst_rank = dst_rank;
  ps.src_va = src_va;
  ps.size = size;
  ps.fin_gate = fin;
  rs.sends[msg_seq] = ps;
  auto payload = encode_envelope(env, 4);
  put_u32(payload, 16, msg_seq);
  co_await pkt_send_rank(src_rank, mbox_gva(dst_rank), std::move(payload), false);
  co_await fin->wait();
  rs.sends.erase(msg_seq);
}

Task MpiRuntime::recv(int dst_rank, int src_rank, int tag, std::uint16_t ctx,
                      std::uint64_t dst_va, std::uint32_t size) {
  return recv_body(dst_rank, src_rank, tag, ctx, dst_va, size);
}

Task MpiRuntime::recv_body(int dst_rank, int src_rank, int tag, std::uint16_t ctx,
                           std::uint64_t dst_va, std::uint32_t size) {
  RankState& rs = ranks_[static_cast<std::size_t>(dst_rank)];
  for (auto it = rs.unexpected.begin(); it != rs.unexpected.end(); ++it) {
    if (it->env.src_rank == static_cast<std::uint32_t>(src_rank) && it->env.tag == tag &&
        it->env.ctx == ctx) {
      UnexpMsg um = std::move(*it);
      rs.unexpected.erase(it);
      if (!um.is_rts) {
        co_await sleep_for(m_.queue(),
                           ns_to_ps(m_.cal().copy_ns + m_.cal().derived_mpi_sw_ns()));
        m_.node(rs.node).mem->write(dst_va, um.payload.data() + 16,
                                    std::min<std::uint64_t>(um.env.size, size));
        co_return;
      }
      PendingRecv pr;
      pr.src = src_rank;
      pr.tag = tag;
      pr.ctx = ctx;
      pr.dst_va = dst_va;
      pr.size = size;
      pr.gate = new_gate();
      start_rv_receive(dst_rank, pr, um.env, um.msg_seq);
      co_await pr.gate->wait();
      co_return;
    }
  }
  PendingRecv pr;
  pr.src = src_rank;
  pr.tag = tag;
  pr.ctx = ctx;
  pr.dst_va = dst_va;
  pr.size = size;
  pr.gate = new_gate();
  rs.posted.push_back(pr);
  co_await pr.gate->wait();
}

void MpiRuntime::on_mbox_arrival(int rank) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  Node& nd = m_.node(rs.node);
  while (auto m = nd.mbox->dequeue(rs.core)) {
    MessageEnvelope env = decode_envelope(m->payload);
    switch (env.kind) {
      case kEager: handle_eager(rank, env, *m); break;
      case kRts: handle_rts(rank, env, *m); break;
      case kCts: handle_cts(rank, *m); break;
      case kFin: handle_fin(rank, *m); break;
      case kBar: handle_barrier(rank, *m); break;
      default: break;
    }
  }
}

void MpiRuntime::handle_eager(int rank, const MessageEnvelope& env, const MboxMessage& m) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  for (auto it = rs.posted.begin(); it != rs.posted.end(); ++it) {
    if (it->src == static_cast<int>(env.src_rank) && it->tag == env.tag && it->ctx == env.ctx) {
      PendingRecv pr = *it;
      rs.posted.erase(it);
      complete_eager(rank, pr, env, m.payload);
      return;
    }
  }
  UnexpMsg um;
  um.env = env;
  um.payload = m.payload;
  rs.unexpected.push_back(std::move(um));
}

void MpiRuntime::complete_eager(int rank, const PendingRecv& pr, const MessageEnvelope& env,
                                const std::vector<std::uint8_t>& payload) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  TimePs cost = ns_to_ps(m_.cal().copy_ns + m_.cal().derived_mpi_sw_ns());
  std::vector<std::uint8_t> data(payload.begin() + 16, payload.end());
  std::uint64_t dst_va = pr.dst_va;
  std::uint64_t n = std::min<std::uint64_t>(env.size, pr.size);
  Gate* g = pr.gate;
  int node = rs.node;
  m_.queue().post(m_.queue().now() + cost, [this, node, dst_va, data, n, g] {
    m_.node(node).mem->write(dst_va, data.data(), n);
    g->open();
  });
}

void MpiRuntime::handle_rts(int rank, const MessageEnvelope& env, const MboxMessage& m) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  std::uint32_t msg_seq = get_u32(m.payload, 16);
  for (auto it = rs.posted.begin(); it != rs.posted.end(); ++it) {
    if (it->src == static_cast<int>(env.src_rank) && it->tag == env.tag && it->ctx == env.ctx) {
      PendingRecv pr = *it;
      rs.posted.erase(it);
      start_rv_receive(rank, pr, env, msg_seq);
      return;
    }
  }
  UnexpMsg um;
  um.env = env;
  um.is_rts = true;
  um.msg_seq = msg_seq;
  rs.unexpected.push_back(std::move(um));
}

void MpiRuntime::start_rv_receive(int rank, const PendingRecv& pr, const MessageEnvelope& env,
                                  std::uint32_t msg_seq) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  std::uint64_t notif_va = take_notif_slot(rank);
  int src_rank = static_cast<int>(env.src_rank);
  Gate* g = pr.gate;
  std::uint64_t dst_va = pr.dst_va;

  // The receiver polls the notification address; once it lands, the data
  // is complete in rbuf and the final acknowledgement goes back.
  m_.node(rs.node).rdma->watch_notif(notif_va, [this, rank, notif_va, g, src_rank, msg_seq] {
    TimePs cost = ns_to_ps(m_.cal().rv_complete_sw_ns);
    m_.queue().post(m_.queue().now() + cost, [this, rank, notif_va, g, src_rank, msg_seq] {
      return_notif_slot(rank, notif_va);
      g->open();
      MessageEnvelope fin;
      fin.kind = kFin;
      fin.src_rank = static_cast<std::uint32_t>(rank);
      auto payload = encode_envelope(fin, 4);
      put_u32(payload, 16, msg_seq);
      spawn_task(pkt_send_rank(rank, mbox_gva(src_rank), std::move(payload), false));
    });
  });

  TimePs cost = ns_to_ps(m_.cal().rv_cts_sw_ns);
  m_.queue().post(m_.queue().now() + cost, [this, rank, src_rank, msg_seq, dst_va, notif_va] {
    MessageEnvelope cts;
    cts.kind = kCts;
    cts.src_rank = static_cast<std::uint32_t>(rank);
    auto payload = encode_envelope(cts, 24);
    put_u32(payload, 16, msg_seq);
    auto rbuf = gvas::to_bytes(buffer_gva(rank, dst_va));
    std::copy(rbuf.begin(), rbuf.end(), payload.begin() + 20);
    auto notif = gvas::to_bytes(buffer_gva(rank, notif_va));
    std::copy(notif.begin(), notif.end(), payload.begin() + 30);
    spawn_task(pkt_send_rank(rank, mbox_gva(src_rank), std::move(payload), false));
  });
}

void MpiRuntime::handle_cts(int rank, const MboxMessage& m) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  std::uint32_t msg_seq = get_u32(m.payload, 16);
  auto it = rs.sends.find(msg_seq);
  if (it == rs.sends.end()) return;
  PendingSend& ps = it->second;
  std::array<std::uint8_t, 10> rb{}, nb{};
  std::copy(m.payload.begin() + 20, m.payload.begin() + 30, rb.begin());
  std::copy(m.payload.begin() + 30, m.payload.begin() + 40, nb.begin());
  RdmaDescriptor desc;
  desc.src_va = ps.src_va;
  desc.dst = gvas::from_bytes(rb);
  desc.size = ps.size;
  desc.notif = gvas::from_bytes(nb);
  issue_rdma(rs.node, desc, {});
}

void MpiRuntime::issue_rdma(int node, const RdmaDescriptor& desc, std::function<void()> done) {
  RdmaUnit& unit = *m_.node(node).rdma;
  int ch = unit.free_write_channel(0);
  if (ch < 0) {
    node_backlog_[static_cast<std::size_t>(node)].push_back({desc, std::move(done)});
    return;
  }
  auto fin = [this, node, done = std::move(done)] {
    if (done) done();
    auto& bl = node_backlog_[static_cast<std::size_t>(node)];
    if (!bl.empty()) {
      auto front = std::move(bl.front());
      bl.pop_front();
      issue_rdma(node, front.first, std::move(front.second));
    }
  };
  unit.write(0, ch, desc, std::move(fin));
}

void MpiRuntime::handle_fin(int rank, const MboxMessage& m) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  std::uint32_t msg_seq = get_u32(m.payload, 16);
  auto it = rs.sends.find(msg_seq);
  if (it == rs.sends.end()) return;
  it->second.fin_gate->open();
}

// --- barrier ---

void MpiRuntime::handle_barrier(int rank, const MboxMessage& m) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  MessageEnvelope env = decode_envelope(m.payload);
  std::uint64_t epoch = (static_cast<std::uint64_t>(get_u32(m.payload, 16)) << 32) |
                        get_u32(m.payload, 20);
  auto key = std::make_pair(epoch, static_cast<int>(env.tag));
  auto wit = rs.barrier_wait.find(key);
  if (wit != rs.barrier_wait.end()) {
    Gate* g = wit->second;
    rs.barrier_wait.erase(wit);
    g->open();
    return;
  }
  rs.barrier_seen[key] = true;
}

Task MpiRuntime::barrier(int rank) {
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  std::uint64_t epoch = ++rs.barrier_epoch;
  int n = map_.n_ranks;
  if (n <= 1) co_return;
  int rounds = 0;
  while ((1 << rounds) < n) ++rounds;
  for (int k = 0; k < rounds; ++k) {
    int to = (rank + (1 << k)) % n;
    MessageEnvelope env;
    env.kind = kBar;
    env.tag = k;
    env.ctx = kBarrierCtx;
    env.src_rank = static_cast<std::uint32_t>(rank);
    auto payload = encode_envelope(env, 8);
    put_u32(payload, 16, static_cast<std::uint32_t>(epoch >> 32));
    put_u32(payload, 20, static_cast<std::uint32_t>(epoch & 0xffffffff));
    co_await pkt_send_rank(rank, mbox_gva(to), std::move(payload), false);
    auto key = std::make_pair(epoch, k);
    auto sit = rs.barrier_seen.find(key);
    if (sit != rs.barrier_seen.end()) {
      rs.barrier_seen.erase(sit);
      continue;
    }
    Gate* g = new_gate();
    rs.barrier_wait[key] = g;
    co_await g->wait();
  }
}

// --- tokens ---

MpiRuntime::Token* MpiRuntime::isend(int src_rank, int dst_rank, int tag, std::uint16_t ctx,
                                     std::uint64_t src_va, std::uint32_t size) {
  tokens_.push_back(std::make_unique<Token>(m_.queue()));
  Token* t = tokens_.back().get();
  spawn_task(isend_body(t, src_rank, dst_rank, tag, ctx, src_va, size));
  return t;
}

Task MpiRuntime::isend_body(Token* t, int src_rank, int dst_rank, int tag, std::uint16_t ctx,
                            std::uint64_t src_va, std::uint32_t size) {
  co_await send_body(src_rank, dst_rank, tag, ctx, src_va, size, false);
  t->done_ps = m_.queue().now();
  t->gate.open();
}

MpiRuntime::Token* MpiRuntime::irecv(int dst_rank, int src_rank, int tag, std::uint16_t ctx,
                                     std::uint64_t dst_va, std::uint32_t size) {
  tokens_.push_back(std::make_unique<Token>(m_.queue()));
  Token* t = tokens_.back().get();
  spawn_task(irecv_body(t, dst_rank, src_rank, tag, ctx, dst_va, size));
  return t;
}

Task MpiRuntime::irecv_body(Token* t, int dst_rank, int src_rank, int tag, std::uint16_t ctx,
                            std::uint64_t dst_va, std::uint32_t size) {
  co_await recv_body(dst_rank, src_rank, tag, ctx, dst_va, size);
  t->done_ps = m_.queue().now();
  t->gate.open();
}

Task MpiRuntime::wait_token(Token* t) { co_await t->gate.wait(); }

// --- collectives ---

Task MpiRuntime::bcast_rank(int rank, int root, int tag_base, std::uint64_t va,
                            std::uint32_t size, std::vector<TimePs>* done) {
  int n = map_.n_ranks;
  if (n > 1) {
    int relative = (rank - root + n) % n;
    std::uint16_t ctx = 0xfffe;
    int mask = 1;
    while (mask < n) {
      if (relative & mask) {
        int src = (rank - mask + n) % n;
        co_await recv_body(rank, src, tag_base, ctx, va, size);
        break;
      }
      mask <<= 1;
    }
    // Relay to children, farthest first.
    mask >>= 1;
    while (mask > 0) {
      if (relative + mask < n) {
        int dst = (rank + mask) % n;
        co_await send_body(rank, dst, tag_base, ctx, va, size, true);
      }
      mask >>= 1;
    }
  }
  (*done)[static_cast<std::size_t>(rank)] = m_.queue().now();
}

Task MpiRuntime::sendrecv_exchange(int rank, int partner, int tag, std::uint16_t ctx,
                                   std::uint64_t send_va, std::uint64_t recv_va,
                                   std::uint32_t bytes) {
  // Serialized exchange: the lower rank ships its vector, then the
  // partner answers. Deterministic and deadlock-free at any size.
  if (rank < partner) {
    co_await send_body(rank, partner, tag, ctx, send_va, bytes, true);
    co_await recv_body(rank, partner, tag + 1, ctx, recv_va, bytes);
  } else {
    co_await recv_body(rank, partner, tag, ctx, recv_va, bytes);
    co_await send_body(rank, partner, tag + 1, ctx, send_va, bytes, true);
  }
}

Task MpiRuntime::allreduce_rank(int rank, ReduceOp op, Dtype dt, std::uint64_t in_va,
                                std::uint64_t out_va, std::uint32_t bytes,
                                std::vector<TimePs>* done) {
  int n = map_.n_ranks;
  std::uint16_t ctx = 0xfffd;
  const double copy_ns = m_.cal().copy_ns;
  RankState& rs = ranks_[static_cast<std::size_t>(rank)];
  Node& nd = m_.node(rs.node);

  std::uint64_t tmp_va = alloc_buffer(rank, bytes);
  std::uint64_t peer_va = alloc_buffer(rank, bytes);

  // staging copy into the intermediate buffer
  co_await sleep_for(m_.queue(), ns_to_ps(copy_ns));
  std::vector<std::uint8_t> mine(bytes), theirs(bytes), outv(bytes);
  nd.mem->read(in_va, mine.data(), bytes);
  nd.mem->write(tmp_va, mine.data(), bytes);

  int p2 = 1;
  while (p2 * 2 <= n) p2 *= 2;
  int n_extra = n - p2;

  auto local_reduce = [&](bool self_is_lower) {
    nd.mem->read(tmp_va, mine.data(), bytes);
    nd.mem->read(peer_va, theirs.data(), bytes);
    if (self_is_lower)
      reduce_vectors(op, dt, mine.data(), theirs.data(), outv.data(), bytes);
    else
      reduce_vectors(op, dt, theirs.data(), mine.data(), outv.data(), bytes);
    nd.mem->write(tmp_va, outv.data(), bytes);
  };

  if (rank >= p2) {
    // Fold into the partner below the power-of-two cut, then wait for
    // the redistributed result.
    co_await send_body(rank, rank - p2, 9000, ctx, tmp_va, bytes, true);
    co_await recv_body(rank, rank - p2, 9001, ctx, tmp_va, bytes);
  } else {
    if (rank < n_extra) {
      co_await recv_body(rank, rank + p2, 9000, ctx, peer_va, bytes);
      co_await sleep_for(m_.queue(), ns_to_ps(copy_ns));
      local_reduce(true);
    }
    int tag = 9100;
    for (int d = 1; d < p2; d <<= 1, tag += 2) {
      int partner = rank ^ d;
      co_await sendrecv_exchange(rank, partner, tag, ctx, tmp_va, peer_va, bytes);
      co_await sleep_for(m_.queue(), ns_to_ps(copy_ns));  // local reduce
      local_reduce((rank & d) == 0);
    }
    if (rank < n_extra)
      co_await send_body(rank, rank + p2, 9001, ctx, tmp_va, bytes, true);
  }

  // final copy into the result buffer
  co_await sleep_for(m_.queue(), ns_to_ps(copy_ns));
  nd.mem->read(tmp_va, mine.data(), bytes);
  nd.mem->write(out_va, mine.data(), bytes);
  (*done)[static_cast<std::size_t>(rank)] = m_.queue().now();
}

}  // namespace exns
