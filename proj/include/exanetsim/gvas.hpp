#ifndef EXANETSIM_GVAS_HPP_
#define EXANETSIM_GVAS_HPP_

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace exns::gvas {

// Field widths of the 80-bit global virtual address, most significant
// field first: protection domain, destination node, local port (rank),
// user-level virtual address.
constexpr int kPdidBits = 16;
constexpr int kNodeBits = 22;
constexpr int kRankBits = 3;
constexpr int kVaBits = 39;
constexpr int kTotalBits = kPdidBits + kNodeBits + kRankBits + kVaBits;
static_assert(kTotalBits == 80);

class FieldOverflow : public std::invalid_argument {
 public:
  FieldOverflow(const std::string& field, std::uint64_t value, int bits)
      : std::invalid_argument("gvas field '" + field + "' value " + std::to_string(value) +
                              " exceeds " + std::to_string(bits) + " bits"),
        field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Packed 80-bit address. The pdid occupies the most significant 16 bits
// (hi); node, rank and va pack into the low 64 bits (lo), in that order.
struct GlobalVirtualAddress {
  std::uint16_t hi = 0;
  std::uint64_t lo = 0;

  friend bool operator==(const GlobalVirtualAddress&, const GlobalVirtualAddress&) = default;
  friend auto operator<=>(const GlobalVirtualAddress&, const GlobalVirtualAddress&) = default;
};

struct AddressFields {
  std::uint16_t pdid = 0;
  std::uint32_t node = 0;
  std::uint8_t rank = 0;
  std::uint64_t va = 0;

  friend bool operator==(const AddressFields&, const AddressFields&) = default;
};

inline constexpr std::uint64_t bit_mask(int bits) {
  return bits >= 64 ? ~0ull : ((1ull << bits) - 1);
}

inline GlobalVirtualAddress pack_address(std::uint64_t pdid, std::uint64_t node,
                                         std::uint64_t rank, std::uint64_t va) {
  if (pdid > bit_mask(kPdidBits)) throw FieldOverflow("pdid", pdid, kPdidBits);
  if (node > bit_mask(kNodeBits)) throw FieldOverflow("node", node, kNodeBits);
  if (rank > bit_mask(kRankBits)) throw FieldOverflow("rank", rank, kRankBits);
  if (va > bit_mask(kVaBits)) throw FieldOverflow("va", va, kVaBits);
  GlobalVirtualAddress a;
  a.hi = static_cast<std::uint16_t>(pdid);
  a.lo = (node << (kRankBits + kVaBits)) | (rank << kVaBits) | va;
  return a;
}

inline GlobalVirtualAddress pack_address(const AddressFields& f) {
  return pack_address(f.pdid, f.node, f.rank, f.va);
}

inline AddressFields unpack_address(const GlobalVirtualAddress& a) {
  AddressFields f;
  f.pdid = a.hi;
  f.node = static_cast<std::uint32_t>((a.lo >> (kRankBits + kVaBits)) & bit_mask(kNodeBits));
  f.rank = static_cast<std::uint8_t>((a.lo >> kVaBits) & bit_mask(kRankBits));
  f.va = a.lo & bit_mask(kVaBits);
  return f;
}

// rank and va together form the 42-bit node-level virtual address.
inline std::uint64_t node_level_va(const GlobalVirtualAddress& a) {
  return a.lo & bit_mask(kRankBits + kVaBits);
}

inline bool check_protection(std::uint16_t packet_pdid, std::uint16_t endpoint_pdid) {
  return packet_pdid == endpoint_pdid;
}

// Canonical 10-byte big-endian serialization used inside cell headers
// and trace files.
inline std::array<std::uint8_t, 10> to_bytes(const GlobalVirtualAddress& a) {
  std::array<std::uint8_t, 10> b{};
  b[0] = static_cast<std::uint8_t>(a.hi >> 8);
  b[1] = static_cast<std::uint8_t>(a.hi & 0xff);
  for (int i = 0; i < 8; ++i) b[2 + i] = static_cast<std::uint8_t>(a.lo >> (56 - 8 * i));
  return b;
}

inline GlobalVirtualAddress from_bytes(const std::array<std::uint8_t, 10>& b) {
  GlobalVirtualAddress a;
  a.hi = static_cast<std::uint16_t>((b[0] << 8) | b[1]);
  a.lo = 0;
  for (int i = 0; i < 8; ++i) a.lo = (a.lo << 8) | b[2 + i];
  return a;
}

// Generic layout over four packed fields in one machine word. The
// production address uses the fixed 16/22/3/39 split above; this exists
// so reduced-width layouts can be checked exhaustively.
struct AddressLayout {
  std::array<int, 4> widths;

  int total_bits() const { return widths[0] + widths[1] + widths[2] + widths[3]; }

  std::uint64_t pack(const std::array<std::uint64_t, 4>& f) const {
    std::uint64_t v = 0;
    static const char* names[4] = {"pdid", "node", "rank", "va"};
    for (int i = 0; i < 4; ++i) {
      if (f[i] > bit_mask(widths[i])) throw FieldOverflow(names[i], f[i], widths[i]);
      v = (v << widths[i]) | f[i];
    }
    return v;
  }

  std::array<std::uint64_t, 4> unpack(std::uint64_t v) const {
    std::array<std::uint64_t, 4> f{};
    for (int i = 3; i >= 0; --i) {
      f[i] = v & bit_mask(widths[i]);
      v >>= widths[i];
    }
    return f;
  }
};

}  // namespace exns::gvas

#endif  // EXANETSIM_GVAS_HPP_
