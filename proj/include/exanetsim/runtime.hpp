#ifndef EXANETSIM_RUNTIME_HPP_
#define EXANETSIM_RUNTIME_HPP_

#include <algorithm>
#include <coroutine>
#include <cstring>
#include <deque>
#include <list>
#include <map>
#include <optional>
#include <utility>

#include "exanetsim/latmodel.hpp"
#include "exanetsim/machine.hpp"

namespace exns {

enum class Placement { Block, Spread, Explicit };
enum class StepClass { SameFpga, IntraQfdb, InterQfdb };

// rank -> (node, core) assignment. Block placement fills 4 ranks per
// FPGA, then FPGAs within the QFDB, then QFDBs; Spread places one rank
// per FPGA; Explicit pins each rank to a (node, core) slot.
struct RankMap {
  int n_ranks = 0;
  Placement placement = Placement::Block;
  std::vector<std::pair<int, int>> slots;  // Explicit only

  int node_of(int rank) const {
    if (placement == Placement::Explicit) return slots[static_cast<std::size_t>(rank)].first;
    return placement == Placement::Block ? rank / kCoresPerFpga : rank;
  }
  int core_of(int rank) const {
    if (placement == Placement::Explicit) return slots[static_cast<std::size_t>(rank)].second;
    return placement == Placement::Block ? rank % kCoresPerFpga : 0;
  }
  StepClass class_between(int a, int b) const {
    if (node_of(a) == node_of(b)) return StepClass::SameFpga;
    if (node_of(a) / kFpgasPerQfdb == node_of(b) / kFpgasPerQfdb) return StepClass::IntraQfdb;
    return StepClass::InterQfdb;
  }
  int nodes_needed() const {
    int hi = 0;
    for (int r = 0; r < n_ranks; ++r) hi = std::max(hi, node_of(r));
    return hi + 1;
  }
};

enum class ReduceOp { Sum, Min, Max };
enum class Dtype { Int32, Float32, Float64 };

class UnsupportedOp : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

int dtype_size(Dtype d);
// Elementwise combine of two raw vectors; `a` is the lower rank range.
void reduce_vectors(ReduceOp op, Dtype d, const std::uint8_t* a, const std::uint8_t* b,
                    std::uint8_t* out, std::size_t bytes);

// Binomial broadcast schedule: step k pairs (sender, receiver) with the
// MPICH largest-mask-first unrolling.
struct BcastStep {
  std::vector<std::pair<int, int>> pairs;
};
std::vector<BcastStep> bcast_schedule(int n_ranks, int root);
BcastStepCounts bcast_step_counts(const RankMap& map, int root);

struct MessageEnvelope {
  std::uint8_t kind = 0;  // eager / rts / cts / fin / barrier
  std::int32_t tag = 0;
  std::uint16_t ctx = 0;
  std::uint32_t src_rank = 0;
  std::uint32_t size = 0;
};

// MPI-like runtime over the packetizer/mailbox and RDMA engines: eager
// and rendezvous point-to-point, binomial broadcast, recursive-doubling
// allreduce and a dissemination barrier.
class MpiRuntime {
 public:
  static constexpr int kMpiPayloadBudget = 56;

  MpiRuntime(Machine& m, RankMap map, int eager_threshold = 32, std::uint16_t pdid = 7);
  MpiRuntime(Machine& m, int n_ranks, Placement placement, int eager_threshold = 32,
             std::uint16_t pdid = 7)
      : MpiRuntime(m, RankMap{n_ranks, placement, {}}, eager_threshold, pdid) {}

  Machine& machine() { return m_; }
  const RankMap& rank_map() const { return map_; }
  int eager_threshold() const { return eager_threshold_; }
  std::uint16_t pdid() const { return pdid_; }

  // Per-rank scratch buffers in node memory.
  std::uint64_t alloc_buffer(int rank, std::uint64_t bytes);
  void write_buffer(int rank, std::uint64_t va, const std::uint8_t* data, std::uint64_t n);
  void read_buffer(int rank, std::uint64_t va, std::uint8_t* out, std::uint64_t n) const;

  // Point-to-point. Buffers are node-level VAs on the rank's node.
  Task send(int src_rank, int dst_rank, int tag, std::uint16_t ctx, std::uint64_t src_va,
            std::uint32_t size);
  Task recv(int dst_rank, int src_rank, int tag, std::uint16_t ctx, std::uint64_t dst_va,
            std::uint32_t size);

  struct Token {
    Gate gate;
    TimePs done_ps = 0;
    explicit Token(EventQueue& q) : gate(q) {}
  };
  Token* isend(int src_rank, int dst_rank, int tag, std::uint16_t ctx, std::uint64_t src_va,
               std::uint32_t size);
  Token* irecv(int dst_rank, int src_rank, int tag, std::uint16_t ctx, std::uint64_t dst_va,
               std::uint32_t size);
  Task wait_token(Token* t);

  Task barrier(int rank);

  // Collectives; roots and vectors live in rank buffers. Completion
  // times are recorded per rank in *done (picoseconds).
  Task bcast_rank(int rank, int root, int tag_base, std::uint64_t va, std::uint32_t size,
                  std::vector<TimePs>* done);
  Task allreduce_rank(int rank, ReduceOp op, Dtype dt, std::uint64_t in_va,
                      std::uint64_t out_va, std::uint32_t bytes, std::vector<TimePs>* done);

 private:
  struct PendingRecv {
    int src = 0;
    std::int32_t tag = 0;
    std::uint16_t ctx = 0;
    std::uint64_t dst_va = 0;
    std::uint32_t size = 0;
    Gate* gate = nullptr;
  };
  struct UnexpMsg {
    MessageEnvelope env;
    std::vector<std::uint8_t> payload;  // eager payload; empty for RTS
    std::uint32_t msg_seq = 0;          // rendezvous handle
    bool is_rts = false;
  };
  struct PendingSend {
    std::uint32_t msg_seq = 0;
    int dst_rank = 0;
    std::uint64_t src_va = 0;
    std::uint32_t size = 0;
    Gate* fin_gate = nullptr;
  };
  struct RankState {
    int node = 0;
    int core = 0;
    std::list<PendingRecv> posted;
    std::list<UnexpMsg> unexpected;
    std::map<std::uint32_t, PendingSend> sends;  // by msg_seq
    std::uint32_t next_msg_seq = 1;
    std::uint64_t barrier_epoch = 0;
    std::map<std::pair<std::uint64_t, int>, bool> barrier_seen;  // (epoch, round)
    std::map<std::pair<std::uint64_t, int>, Gate*> barrier_wait;
    std::vector<std::uint64_t> notif_free;
  };

  gvas::GlobalVirtualAddress mbox_gva(int rank) const;
  gvas::GlobalVirtualAddress buffer_gva(int rank, std::uint64_t nlva) const;
  Gate* new_gate();
  Task pkt_send_rank(int rank, gvas::GlobalVirtualAddress dst,
                     std::vector<std::uint8_t> payload, bool wait_ack);
  Task send_body(int src_rank, int dst_rank, int tag, std::uint16_t ctx, std::uint64_t src_va,
                 std::uint32_t size, bool charge_sw);
  Task recv_body(int dst_rank, int src_rank, int tag, std::uint16_t ctx, std::uint64_t dst_va,
                 std::uint32_t size);
  Task sendrecv_exchange(int rank, int partner, int tag, std::uint16_t ctx,
                         std::uint64_t send_va, std::uint64_t recv_va, std::uint32_t bytes);
  Task isend_body(Token* t, int src_rank, int dst_rank, int tag, std::uint16_t ctx,
                  std::uint64_t src_va, std::uint32_t size);
  Task irecv_body(Token* t, int dst_rank, int src_rank, int tag, std::uint16_t ctx,
                  std::uint64_t dst_va, std::uint32_t size);
  void on_mbox_arrival(int rank);
  void handle_eager(int rank, const MessageEnvelope& env, const MboxMessage& m);
  void handle_rts(int rank, const MessageEnvelope& env, const MboxMessage& m);
  void handle_cts(int rank, const MboxMessage& m);
  void handle_fin(int rank, const MboxMessage& m);
  void handle_barrier(int rank, const MboxMessage& m);
  void start_rv_receive(int rank, const PendingRecv& pr, const MessageEnvelope& env,
                        std::uint32_t msg_seq);
  void complete_eager(int rank, const PendingRecv& pr, const MessageEnvelope& env,
                      const std::vector<std::uint8_t>& payload);
  void issue_rdma(int node, const RdmaDescriptor& desc, std::function<void()> done);
  std::uint64_t take_notif_slot(int rank);
  void return_notif_slot(int rank, std::uint64_t va);

  Machine& m_;
  RankMap map_;
  int eager_threshold_;
  std::uint16_t pdid_;
  std::vector<RankState> ranks_;
  std::vector<std::deque<std::pair<RdmaDescriptor, std::function<void()>>>> node_backlog_;
  std::deque<std::unique_ptr<Token>> tokens_;
  std::deque<std::unique_ptr<Gate>> gates_;
};

}  // namespace exns

#endif  // EXANETSIM_RUNTIME_HPP_
