#include "exanetsim/machine.hpp"

namespace exns {

Machine::Machine(Dims dims, CalibrationParams cal, FabricConfig fcfg)
    : cal_(cal), topo_(dims), fabric_(q_, topo_, cal_, fcfg) {
  cal_.validate();
  nodes_.resize(static_cast<std::size_t>(topo_.num_nodes()));
  for (int i = 0; i < topo_.num_nodes(); ++i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    n.mem = std::make_unique<Memory>();
    n.smmu = std::make_unique<Smmu>(cal_.tlb_walk_ns);
    n.pkt = std::make_unique<Packetizer>(q_, fabric_, cal_, i);
    n.mbox = std::make_unique<Mailbox>(q_, fabric_, cal_, i);
    n.rdma = std::make_unique<RdmaUnit>(q_, fabric_, cal_, i, *n.mem, *n.smmu, *n.pkt);
    n.mbox->set_iface_wildcard(kRdmaCtrlIface, true);
    n.mbox->set_arrival_fn(kRdmaCtrlIface, [this, i](int iface) {
      Node& nn = nodes_[static_cast<std::size_t>(i)];
      auto m = nn.mbox->dequeue(iface);
      if (m) nn.rdma->on_ctrl(*m);
    });
    fabric_.set_deliver_fn(i, [this, i](CellPtr c) { dispatch(i, std::move(c)); });
  }
  for (int i = 0; i < topo_.num_nodes(); ++i) {
    nodes_[static_cast<std::size_t>(i)].rdma->set_peer_lookup(
        [this](int node) { return nodes_[static_cast<std::size_t>(node)].rdma.get(); });
  }
}

void Machine::assign_pdid(int node, std::uint16_t pdid) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  for (int i = 0; i < kIfacesPerNode; ++i) {
    n.pkt->set_iface_owner(i, pdid);
    if (i != kRdmaCtrlIface) n.mbox->set_iface_owner(i, pdid);
  }
  for (int p = 0; p < kRdmaPages; ++p) n.rdma->set_page_owner(p, pdid);
}

void Machine::dispatch(int node, CellPtr cell) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  switch (cell->kind) {
    case CellKind::PktAck:
      n.pkt->on_ack(std::get<AckInfo>(cell->info));
      break;
    case CellKind::PktNack:
      n.pkt->on_nack(std::get<AckInfo>(cell->info));
      break;
    case CellKind::PktMsg:
      n.mbox->deliver(std::move(cell));
      break;
    case CellKind::RdmaData:
      n.rdma->on_data(std::move(cell));
      break;
    case CellKind::RdmaBlockAck:
      n.rdma->on_block_ack(std::move(cell));
      break;
    case CellKind::RdmaBlockNack:
      n.rdma->on_block_nack(std::move(cell));
      break;
    case CellKind::RdmaNotif:
      n.rdma->on_notif(std::move(cell));
      break;
    case CellKind::AccelVector:
      if (accel_handler_) accel_handler_(node, std::move(cell));
      break;
    default:
      break;  // Raw cells are consumed by their test drivers
  }
}

}  // namespace exns
