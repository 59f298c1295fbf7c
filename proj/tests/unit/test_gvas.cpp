#include <doctest.h>

#include "exanetsim/gvas.hpp"
#include "exanetsim/sim.hpp"

using namespace exns;
using namespace exns::gvas;

TEST_CASE("field widths sum to 80 bits") {
  CHECK(kPdidBits + kNodeBits + kRankBits + kVaBits == 80);
}

TEST_CASE("all-zero tuple packs to the all-zero address") {
  auto a = pack_address(0, 0, 0, 0);
  CHECK(a.hi == 0);
  CHECK(a.lo == 0);
}

TEST_CASE("pack/unpack round trip") {
  auto f = unpack_address(pack_address(5, 7, 2, 4096));
  CHECK(f.pdid == 5);
  CHECK(f.node == 7);
  CHECK(f.rank == 2);
  CHECK(f.va == 4096);
}

TEST_CASE("round trip holds for random tuples") {
  Rng rng(12345);
  for (int i = 0; i < 1000; ++i) {
    AddressFields f;
    f.pdid = static_cast<std::uint16_t>(rng.next_below(1ull << kPdidBits));
    f.node = static_cast<std::uint32_t>(rng.next_below(1ull << kNodeBits));
    f.rank = static_cast<std::uint8_t>(rng.next_below(1ull << kRankBits));
    f.va = rng.next_below(1ull << kVaBits);
    CHECK(unpack_address(pack_address(f)) == f);
  }
}

TEST_CASE("fields at width boundaries") {
  CHECK_NOTHROW(pack_address(bit_mask(16), bit_mask(22), bit_mask(3), bit_mask(39)));
  CHECK_THROWS_AS(pack_address(1ull << 16, 0, 0, 0), FieldOverflow);
  CHECK_THROWS_AS(pack_address(0, 1ull << 22, 0, 0), FieldOverflow);
  CHECK_THROWS_AS(pack_address(0, 0, 1ull << 3, 0), FieldOverflow);
  CHECK_THROWS_AS(pack_address(0, 0, 0, 1ull << 39), FieldOverflow);
  try {
    pack_address(0, 1ull << 22, 0, 0);
  } catch (const FieldOverflow& e) {
    CHECK(e.field() == "node");
  }
}

TEST_CASE("rank and va compose the 42-bit node-level virtual address") {
  auto a = pack_address(5, 7, 2, 4096);
  CHECK(node_level_va(a) == ((2ull << kVaBits) | 4096));
  CHECK(node_level_va(a) < (1ull << 42));
}

TEST_CASE("protection check accepts equal domains only") {
  CHECK(check_protection(42, 42));
  CHECK_FALSE(check_protection(42, 43));
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    auto a = static_cast<std::uint16_t>(rng.next_u64());
    auto b = static_cast<std::uint16_t>(rng.next_u64());
    CHECK(check_protection(a, b) == (a == b));
  }
}

TEST_CASE("canonical 10-byte big-endian serialization") {
  auto a = pack_address(0x0102, 1, 1, 2);
  auto b = to_bytes(a);
  CHECK(b[0] == 0x01);
  CHECK(b[1] == 0x02);
  CHECK(from_bytes(b) == a);

  Rng rng(99);
  for (int i = 0; i < 500; ++i) {
    auto f = pack_address(static_cast<std::uint16_t>(rng.next_u64()),
                          rng.next_below(1ull << 22), rng.next_below(8),
                          rng.next_below(1ull << 39));
    CHECK(from_bytes(to_bytes(f)) == f);
  }
}

TEST_CASE("reduced-width mirror layout matches a bit-mask oracle exhaustively") {
  AddressLayout layout{{2, 3, 2, 3}};
  REQUIRE(layout.total_bits() == 10);
  for (std::uint64_t v = 0; v < (1ull << 10); ++v) {
    auto f = layout.unpack(v);
    // independent oracle: mask arithmetic from the least significant end
    std::uint64_t va = v & 0x7;
    std::uint64_t rank = (v >> 3) & 0x3;
    std::uint64_t node = (v >> 5) & 0x7;
    std::uint64_t pdid = (v >> 8) & 0x3;
    CHECK(f[0] == pdid);
    CHECK(f[1] == node);
    CHECK(f[2] == rank);
    CHECK(f[3] == va);
    CHECK(layout.pack(f) == v);
  }
}
