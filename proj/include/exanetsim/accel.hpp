#ifndef EXANETSIM_ACCEL_HPP_
#define EXANETSIM_ACCEL_HPP_

#include <cstdint>
#include <vector>

#include "exanetsim/machine.hpp"
#include "exanetsim/runtime.hpp"

namespace exns {

class InvalidRankCount : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class FallbackToSoftware : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kAccelMaxRanks = 1024;
constexpr int kAccelBlockBytes = 256;

// Module timing of the hardware allreduce: software interactions happen
// only at the start and end; DMA, reduction and the exchange pattern run
// inside the accelerator.
struct AccelParams {
  double sw_trigger_ns = 1650.0;
  double client_dma_ns = 400.0;
  double hw_reduce_ns = 455.0;
  double client_write_ns = 400.0;
  double sw_complete_ns = 1650.0;
};

struct AccelConfig {
  ReduceOp op = ReduceOp::Sum;
  Dtype dtype = Dtype::Int32;
  int n_ranks = 0;
  std::uint32_t vector_bytes = 0;
  AccelParams params;
};

// One rank per FPGA over whole QFDBs: clients on the three non-network
// FPGAs feed the server on the network FPGA; servers then exchange
// pairwise at rank distances 4, 8, ..., N/2 and broadcast back.
struct AccelSchedule {
  int n_ranks = 0;
  int n_servers = 0;
  std::vector<int> exchange_distances;  // in rank units
};

AccelSchedule build_accel_schedule(int n_ranks);

struct AccelResult {
  std::vector<std::vector<std::uint8_t>> vectors;  // per rank
  TimePs latency_ps = 0;
};

// Runs the accelerated allreduce on the machine. Throws
// FallbackToSoftware when any constraint is violated; the caller then
// routes the operation to the software implementation.
AccelResult accel_allreduce(Machine& m, const AccelConfig& cfg,
                            const std::vector<std::vector<std::uint8_t>>& inputs);

}  // namespace exns

#endif  // EXANETSIM_ACCEL_HPP_
