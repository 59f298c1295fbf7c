#ifndef EXANETSIM_MEMORY_HPP_
#define EXANETSIM_MEMORY_HPP_

#include <cstdint>
#include <unordered_set>
#include <vector>

#include "exanetsim/sim.hpp"

namespace exns {

constexpr std::uint64_t kPageBytes = 4096;

// Flat per-node memory image with a bump allocator for virtual
// addresses. Addresses are node-level VAs (rank | va).
class Memory {
 public:
  std::uint64_t alloc(std::uint64_t bytes, std::uint64_t align = 64) {
    std::uint64_t a = (next_ + align - 1) / align * align;
    next_ = a + bytes;
    if (next_ > bytes_.size()) bytes_.resize(next_);
    return a;
  }
  void write(std::uint64_t va, const std::uint8_t* data, std::uint64_t n) {
    if (va + n > bytes_.size()) bytes_.resize(va + n);
    for (std::uint64_t i = 0; i < n; ++i) bytes_[va + i] = data[i];
  }
  void read(std::uint64_t va, std::uint8_t* out, std::uint64_t n) const {
    for (std::uint64_t i = 0; i < n; ++i) out[i] = va + i < bytes_.size() ? bytes_[va + i] : 0;
  }
  std::uint8_t peek(std::uint64_t va) const { return va < bytes_.size() ? bytes_[va] : 0; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t next_ = kPageBytes;  // keep VA 0 unused
};

struct TranslateResult {
  bool fault = false;
  bool tlb_hit = false;
  double extra_ns = 0;
};

// SMMU stand-in: synthetic page table where pages are resident unless a
// scenario marks them out, plus a small TLB whose misses cost a
// configurable walk.
class Smmu {
 public:
  explicit Smmu(double walk_ns, int tlb_entries = 64)
      : walk_ns_(walk_ns), tlb_entries_(tlb_entries) {}

  void mark_nonresident(std::uint64_t va_page) { nonresident_.insert(va_page); }
  void mark_resident(std::uint64_t va_page) { nonresident_.erase(va_page); }
  bool resident(std::uint64_t va) const { return !nonresident_.count(va / kPageBytes); }

  TranslateResult translate(std::uint64_t va) {
    TranslateResult r;
    std::uint64_t page = va / kPageBytes;
    if (nonresident_.count(page)) {
      r.fault = true;
      return r;
    }
    for (std::uint64_t p : tlb_)
      if (p == page) {
        r.tlb_hit = true;
        return r;
      }
    r.extra_ns = walk_ns_;
    tlb_.push_back(page);
    if (static_cast<int>(tlb_.size()) > tlb_entries_) tlb_.erase(tlb_.begin());
    return r;
  }

 private:
  double walk_ns_;
  int tlb_entries_;
  std::vector<std::uint64_t> tlb_;
  std::unordered_set<std::uint64_t> nonresident_;
};

}  // namespace exns

#endif  // EXANETSIM_MEMORY_HPP_
