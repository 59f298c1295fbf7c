#ifndef EXANETSIM_TOPOLOGY_HPP_
#define EXANETSIM_TOPOLOGY_HPP_

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace exns {

// One QFDB holds four MPSoCs ("FPGAs"); fpga index 0 is the network
// FPGA that owns all external links.
constexpr int kFpgasPerQfdb = 4;
constexpr int kCoresPerFpga = 4;
constexpr int kNetworkFpga = 0;

struct Dims {
  int nx = 4;
  int ny = 4;
  int nz = 2;
  int qfdbs() const { return nx * ny * nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct QfdbCoord {
  int x = 0, y = 0, z = 0;
  friend bool operator==(const QfdbCoord&, const QfdbCoord&) = default;
};

struct NodeId {
  QfdbCoord qfdb;
  int fpga = 0;  // 0..3
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

enum class LinkClass { IntraQfdb, IntraMezz, InterMezz };

const char* link_class_name(LinkClass c);

// 16 Gb/s inside a QFDB, 10 Gb/s for every external (torus) link.
constexpr double kIntraQfdbGbps = 16.0;
constexpr double kExternalGbps = 10.0;

inline double link_class_rate_gbps(LinkClass c) {
  return c == LinkClass::IntraQfdb ? kIntraQfdbGbps : kExternalGbps;
}

// Per-class hop counts along a route.
struct PathClass {
  int intra_qfdb = 0;
  int intra_mezz = 0;
  int inter_mezz = 0;

  int total_hops() const { return intra_qfdb + intra_mezz + inter_mezz; }
  int external_hops() const { return intra_mezz + inter_mezz; }
  friend bool operator==(const PathClass&, const PathClass&) = default;
};

std::string path_class_label(const PathClass& pc);

struct Link {
  int id = -1;
  int src = -1;  // dense node index
  int dst = -1;
  LinkClass cls = LinkClass::IntraQfdb;
  int dim = -1;      // 0/1/2 for X/Y/Z torus links, -1 for intra-QFDB
  bool wrap = false;  // torus wraparound edge (ring max -> 0 in its direction)
  double rate_gbps = kIntraQfdbGbps;
};

class InvalidDims : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class SameNode : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RouteHop {
  int link = -1;
};

// Prototype fabric graph: full mesh of the 4 FPGAs inside each QFDB,
// plus X/Y/Z torus rings of 10 Gb/s links between network FPGAs.
// Immutable once built.
class Topology {
 public:
  explicit Topology(Dims dims);

  const Dims& dims() const { return dims_; }
  int num_qfdbs() const { return dims_.qfdbs(); }
  int num_nodes() const { return num_qfdbs() * kFpgasPerQfdb; }
  int num_links() const { return static_cast<int>(links_.size()); }
  const std::vector<Link>& links() const { return links_; }
  const Link& link(int id) const { return links_[id]; }

  int qfdb_index(const QfdbCoord& c) const {
    return c.x + dims_.nx * (c.y + dims_.ny * c.z);
  }
  QfdbCoord qfdb_coord(int qfdb) const {
    QfdbCoord c;
    c.x = qfdb % dims_.nx;
    c.y = (qfdb / dims_.nx) % dims_.ny;
    c.z = qfdb / (dims_.nx * dims_.ny);
    return c;
  }

  // Dense node index; doubles as the statically mapped GVAS node id.
  int node_index(const NodeId& n) const { return qfdb_index(n.qfdb) * kFpgasPerQfdb + n.fpga; }
  NodeId node_id(int index) const {
    NodeId n;
    n.qfdb = qfdb_coord(index / kFpgasPerQfdb);
    n.fpga = index % kFpgasPerQfdb;
    return n;
  }
  bool is_network_fpga(int index) const { return index % kFpgasPerQfdb == kNetworkFpga; }
  int qfdb_of(int index) const { return index / kFpgasPerQfdb; }

  // Directed link between two nodes, or -1.
  int find_link(int src, int dst) const;

  // Deterministic dimension-ordered route. Intra-QFDB pairs take the
  // direct mesh link; everything else transits the network FPGAs with
  // X, then Y, then Z resolved minimally (ties go the positive way).
  std::vector<RouteHop> route(const NodeId& src, const NodeId& dst) const;
  std::vector<RouteHop> route(int src_index, int dst_index) const;

  PathClass classify_path(const NodeId& src, const NodeId& dst) const;
  PathClass classify_path(int src_index, int dst_index) const;

  // Structured text form: dims plus optional per-link rate overrides.
  std::string dump_text() const;
  static Topology load_text(const std::string& text);

  void override_link_rate(int link_id, double gbps) { links_[link_id].rate_gbps = gbps; }

 private:
  void add_link(int src, int dst, LinkClass cls, int dim, bool wrap, double gbps);
  void ring_hop(std::vector<RouteHop>& hops, int dim, QfdbCoord& at, int target) const;

  Dims dims_;
  std::vector<Link> links_;
  std::vector<std::vector<int>> out_links_;  // per node
};

}  // namespace exns

#endif  // EXANETSIM_TOPOLOGY_HPP_
