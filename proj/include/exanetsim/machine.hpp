#ifndef EXANETSIM_MACHINE_HPP_
#define EXANETSIM_MACHINE_HPP_

#include <memory>
#include <vector>

#include "exanetsim/endpoints.hpp"
#include "exanetsim/fabric.hpp"
#include "exanetsim/memory.hpp"
#include "exanetsim/rdma.hpp"

namespace exns {

// One simulated FPGA node: endpoints, bulk engine, memory and SMMU.
struct Node {
  std::unique_ptr<Memory> mem;
  std::unique_ptr<Smmu> smmu;
  std::unique_ptr<Packetizer> pkt;
  std::unique_ptr<Mailbox> mbox;
  std::unique_ptr<RdmaUnit> rdma;
};

// A complete simulated system instance. Instances are isolated; several
// may run concurrently on different host threads.
class Machine {
 public:
  Machine(Dims dims, CalibrationParams cal = {}, FabricConfig fcfg = {});

  EventQueue& queue() { return q_; }
  const Topology& topology() const { return topo_; }
  Fabric& fabric() { return fabric_; }
  const CalibrationParams& cal() const { return cal_; }
  Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  int num_nodes() const { return topo_.num_nodes(); }
  TimePs now() const { return q_.now(); }
  void run_all() { q_.run_all(); }

  // Assigns the protection domain to every endpoint interface and RDMA
  // page on the node (the common single-domain setup).
  void assign_pdid(int node, std::uint16_t pdid);

  // Per-link rate override (takes effect for cells transmitted after
  // the call).
  void override_link_rate(int src, int dst, double gbps) {
    int id = topo_.find_link(src, dst);
    if (id < 0) throw std::invalid_argument("no link between the given nodes");
    topo_.override_link_rate(id, gbps);
  }

  // Consumer for accelerator vector cells.
  void set_accel_handler(std::function<void(int node, CellPtr)> fn) {
    accel_handler_ = std::move(fn);
  }

 private:
  void dispatch(int node, CellPtr cell);
  std::function<void(int, CellPtr)> accel_handler_;

  CalibrationParams cal_;
  EventQueue q_;
  Topology topo_;
  Fabric fabric_;
  std::vector<Node> nodes_;
};

}  // namespace exns

#endif  // EXANETSIM_MACHINE_HPP_
