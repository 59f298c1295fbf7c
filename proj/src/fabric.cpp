#include "exanetsim/fabric.hpp"

#include <algorithm>

namespace exns {

const char* cell_kind_name(CellKind k) {
  switch (k) {
    case CellKind::Raw: return "raw";
    case CellKind::PktMsg: return "pkt_msg";
    case CellKind::PktAck: return "pkt_ack";
    case CellKind::PktNack: return "pkt_nack";
    case CellKind::RdmaData: return "rdma_data";
    case CellKind::RdmaBlockAck: return "block_ack";
    case CellKind::RdmaBlockNack: return "block_nack";
    case CellKind::RdmaNotif: return "notif";
    case CellKind::AccelVector: return "accel_vec";
  }
  return "?";
}

std::vector<int> segment_payload(std::int64_t n_bytes) {
  std::vector<int> sizes;
  if (n_bytes <= 0) {
    sizes.push_back(0);
    return sizes;
  }
  while (n_bytes > 0) {
    int piece = static_cast<int>(std::min<std::int64_t>(n_bytes, kCellPayloadMax));
    sizes.push_back(piece);
    n_bytes -= piece;
  }
  return sizes;
}

std::vector<int> allocate_virtual_channels(const Topology& topo,
                                           const std::vector<RouteHop>& route) {
  std::vector<int> vcs(route.size(), 0);
  int cur_dim = -2;
  bool crossed = false;
  for (std::size_t i = 0; i < route.size(); ++i) {
    const Link& l = topo.link(route[i].link);
    if (l.cls == LinkClass::IntraQfdb) {
      vcs[i] = 0;
      cur_dim = -2;
      crossed = false;
      continue;
    }
    if (l.dim != cur_dim) {
      cur_dim = l.dim;
      crossed = false;
    }
    if (l.wrap) crossed = true;  // the crossing hop itself rides VC 1
    vcs[i] = crossed ? 1 : 0;
  }
  return vcs;
}

Fabric::Fabric(EventQueue& q, const Topology& topo, const CalibrationParams& cal,
               FabricConfig cfg)
    : q_(q), topo_(topo), cal_(cal), cfg_(cfg), rng_(cfg.seed ^ 0xfab41cull) {
  ports_.resize(static_cast<std::size_t>(topo_.num_links()));
  deliver_.resize(static_cast<std::size_t>(topo_.num_nodes()));
  for (int i = 0; i < topo_.num_links(); ++i) {
    const Link& l = topo_.link(i);
    Port& p = ports_[static_cast<std::size_t>(i)];
    int vcs = num_vcs(l);
    p.vc_queues.resize(static_cast<std::size_t>(vcs));
    int slots = kPortBufferBytes / kCellWireMax / vcs;  // 14 mesh, 7+7 external
    p.credits.assign(static_cast<std::size_t>(vcs), slots);
  }
  local_switch_ps_ = ns_to_ps(cal_.local_switch_ns);
  router_block_ps_ = ns_to_ps(cal_.router_block_ns);
  // Per-hop lumps are calibrated so a small control cell sees exactly
  // the measured per-hop latency; cell size shows up as occupancy.
  mesh_lump_ps_ = ns_to_ps(cal_.link_latency_ns) - local_switch_ps_;
  ext_lump_ps_ = ns_to_ps(cal_.link_latency_ns);
  credit_return_ps_ = ns_to_ps(cal_.link_latency_ns);
  // The router's per-cell forwarding work makes an external link behave
  // like a slower wire; full cells stream at the observed payload rate.
  ext_eff_gbps_ = 8.0 * kCellWireMax / cal_.router_fwd_ns_per_cell(kCellPayloadMax);
}

TimePs Fabric::link_lump_ps(const Link& l) const {
  return l.cls == LinkClass::IntraQfdb ? mesh_lump_ps_ : ext_lump_ps_;
}

TimePs Fabric::occupancy_ps(const Cell& c, const Link& l) const {
  double rate = l.rate_gbps;
  if (l.cls != LinkClass::IntraQfdb) rate = std::min(rate, ext_eff_gbps_);
  return tx_time_ps(8ll * c.wire_bytes(), rate);
}

void Fabric::trace(std::string_view ev, const Cell& c, std::string_view port) {
  if (trace_)
    trace_(q_.now(), ev, c.src_node, static_cast<int>(gvas::unpack_address(c.dst).node),
           c.seq, port);
}

void Fabric::inject(int src_node, CellPtr cell) {
  if (cell->payload_len > kCellPayloadMax)
    throw std::invalid_argument("cell payload exceeds 256 bytes");
  ++stats_.injected;
  auto dstf = gvas::unpack_address(cell->dst);
  int dst_node = static_cast<int>(dstf.node);
  cell->src_node = src_node;
  trace("inject", *cell, "ni");
  if (dst_node == src_node) {
    // Same-FPGA delivery loops back inside the NI.
    q_.post_now([this, cell, dst_node] { deliver(cell, dst_node); });
    return;
  }
  if (cell->route.empty()) {
    cell->route = topo_.route(src_node, dst_node);
    cell->vcs = allocate_virtual_channels(topo_, cell->route);
  }
  cell->hop = 0;
  cell->prev_link = -1;
  cell->prev_vc = 0;
  const Link& first = topo_.link(cell->route[0].link);
  TimePs src_cost = first.cls != LinkClass::IntraQfdb ? router_block_ps_ : 0;
  int link = cell->route[0].link;
  int vc = cell->vcs[0];
  q_.post(q_.now() + src_cost, [this, cell, link, vc] { enqueue(cell, link, vc); });
}

void Fabric::enqueue(CellPtr cell, int link, int vc) {
  Port& p = ports_[static_cast<std::size_t>(link)];
  p.vc_queues[static_cast<std::size_t>(vc)].push_back(std::move(cell));
  kick(link);
}

int Fabric::queue_len(int link) const {
  const Port& p = ports_[static_cast<std::size_t>(link)];
  std::size_t n = 0;
  for (const auto& qd : p.vc_queues) n += qd.size();
  return static_cast<int>(n);
}

int Fabric::total_queued() const {
  int n = 0;
  for (int i = 0; i < topo_.num_links(); ++i) n += queue_len(i);
  return n;
}

void Fabric::notify_on_drain(int link, int below, std::function<void()> fn) {
  if (queue_len(link) < below) {
    q_.post_now(std::move(fn));
    return;
  }
  ports_[static_cast<std::size_t>(link)].drain_cbs.push_back({below, std::move(fn)});
}

void Fabric::kick(int link) {
  Port& p = ports_[static_cast<std::size_t>(link)];
  if (q_.now() < p.busy_until) return;
  const Link& l = topo_.link(link);
  int vcs = static_cast<int>(p.vc_queues.size());
  for (int probe = 0; probe < vcs; ++probe) {
    int vc = (p.rr + probe) % vcs;
    auto& qd = p.vc_queues[static_cast<std::size_t>(vc)];
    if (qd.empty() || p.credits[static_cast<std::size_t>(vc)] <= 0) continue;
    p.rr = (vc + 1) % vcs;
    CellPtr cell = qd.front();
    qd.pop_front();
    --p.credits[static_cast<std::size_t>(vc)];
    if (cell->prev_link >= 0) release_slot(cell->prev_link, cell->prev_vc);
    cell->prev_link = link;
    cell->prev_vc = vc;
    TimePs occ = occupancy_ps(*cell, l);
    p.busy_until = q_.now() + occ;
    trace("hop", *cell, link_class_name(l.cls));
    q_.post(q_.now() + link_lump_ps(l), [this, cell, link] { arrive(cell, link); });
    q_.post(p.busy_until, [this, link] { kick(link); });
    fire_drain_cbs(link);
    return;  // one transmit per busy window
  }
}

void Fabric::fire_drain_cbs(int link) {
  Port& p = ports_[static_cast<std::size_t>(link)];
  if (p.drain_cbs.empty()) return;
  int len = queue_len(link);
  auto cbs = std::move(p.drain_cbs);
  p.drain_cbs.clear();
  for (auto& cb : cbs) {
    if (len < cb.first)
      q_.post_now(std::move(cb.second));
    else
      p.drain_cbs.push_back(std::move(cb));
  }
}

void Fabric::release_slot(int link, int vc) {
  Port& p = ports_[static_cast<std::size_t>(link)];
  --p.occ_slots;
  q_.post(q_.now() + credit_return_ps_, [this, link, vc] {
    Port& pp = ports_[static_cast<std::size_t>(link)];
    ++pp.credits[static_cast<std::size_t>(vc)];
    kick(link);
  });
}

void Fabric::arrive(CellPtr cell, int link) {
  Port& p = ports_[static_cast<std::size_t>(link)];
  ++p.occ_slots;
  p.max_occ_slots = std::max(p.max_occ_slots, p.occ_slots);
  stats_.max_port_occupancy_bytes =
      std::max(stats_.max_port_occupancy_bytes, p.occ_slots * kCellWireMax);

  const Link& in = topo_.link(link);
  int node = in.dst;
  bool last = cell->hop + 1 >= static_cast<int>(cell->route.size());
  bool in_ext = in.cls != LinkClass::IntraQfdb;
  bool out_ext = false;
  if (!last) {
    const Link& out = topo_.link(cell->route[static_cast<std::size_t>(cell->hop) + 1].link);
    out_ext = out.cls != LinkClass::IntraQfdb;
  }
  TimePs cost = (in_ext || out_ext) ? router_block_ps_ : local_switch_ps_;
  if (last) {
    q_.post(q_.now() + cost, [this, cell, node, link] {
      release_slot(link, cell->prev_vc);
      deliver(cell, node);
    });
  } else {
    ++cell->hop;
    int next = cell->route[static_cast<std::size_t>(cell->hop)].link;
    int vc = cell->vcs[static_cast<std::size_t>(cell->hop)];
    q_.post(q_.now() + cost, [this, cell, next, vc] { enqueue(cell, next, vc); });
  }
}

void Fabric::deliver(CellPtr cell, int node) {
  if (cfg_.loss_prob > 0 && rng_.chance(cfg_.loss_prob)) {
    ++stats_.dropped;
    trace("drop", *cell, "rx");
    return;
  }
  ++stats_.delivered;
  trace("deliver", *cell, "rx");
  auto& fn = deliver_[static_cast<std::size_t>(node)];
  if (fn) fn(std::move(cell));
}

FabricStats Fabric::advance(TimePs until_ps) {
  q_.run_until(until_ps);
  if (q_.empty()) check_stuck();
  FabricStats s = stats_;
  s.queued_peak = static_cast<std::uint64_t>(total_queued());
  return s;
}

FabricStats Fabric::drain() {
  q_.run_all();
  check_stuck();
  return stats_;
}

void Fabric::check_stuck() const {
  for (int i = 0; i < topo_.num_links(); ++i)
    if (queue_len(i) > 0)
      throw DeadlockDetected("cells stuck on link " + std::to_string(i) +
                             " with no runnable events");
}

}  // namespace exns
