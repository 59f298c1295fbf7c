#include "exanetsim/topology.hpp"

#include <cstdio>
#include <sstream>

namespace exns {

const char* link_class_name(LinkClass c) {
  switch (c) {
    case LinkClass::IntraQfdb: return "intra_qfdb";
    case LinkClass::IntraMezz: return "intra_mezz";
    case LinkClass::InterMezz: return "inter_mezz";
  }
  return "?";
}

std::string path_class_label(const PathClass& pc) {
  // Table-style naming: the generic long path reads inter-mezz(i,j,k)
  // with i inter-mezzanine, j intra-mezzanine and k intra-QFDB hops.
  std::ostringstream os;
  if (pc.external_hops() == 0) {
    os << (pc.intra_qfdb == 1 ? "intra-qfdb-sh" : "intra-fpga");
    if (pc.intra_qfdb > 1) os << "(" << pc.intra_qfdb << ")";
    if (pc.total_hops() == 0) return "intra-fpga";
    return os.str();
  }
  if (pc.inter_mezz == 0) {
    if (pc.total_hops() == 1) return "intra-mezz-sh";
    os << "intra-mezz-mh(" << pc.total_hops() << ")";
    return os.str();
  }
  os << "inter-mezz(" << pc.inter_mezz << "," << pc.intra_mezz << "," << pc.intra_qfdb << ")";
  return os.str();
}

Topology::Topology(Dims dims) : dims_(dims) {
  if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1)
    throw InvalidDims("topology dims must all be >= 1");
  out_links_.resize(static_cast<std::size_t>(num_nodes()));

  // Full mesh inside every QFDB.
  for (int q = 0; q < num_qfdbs(); ++q) {
    int base = q * kFpgasPerQfdb;
    for (int a = 0; a < kFpgasPerQfdb; ++a)
      for (int b = 0; b < kFpgasPerQfdb; ++b)
        if (a != b) add_link(base + a, base + b, LinkClass::IntraQfdb, -1, false, kIntraQfdbGbps);
  }

  // Torus rings between network FPGAs. X rings stay within a mezzanine;
  // Y and Z rings cross mezzanines. A ring of size 2 keeps a single link
  // pair; rings of size 1 have no external links.
  auto f1 = [&](QfdbCoord c) { return qfdb_index(c) * kFpgasPerQfdb + kNetworkFpga; };
  int sizes[3] = {dims_.nx, dims_.ny, dims_.nz};
  for (int dim = 0; dim < 3; ++dim) {
    int n = sizes[dim];
    if (n < 2) continue;
    LinkClass cls = dim == 0 ? LinkClass::IntraMezz : LinkClass::InterMezz;
    for (int z = 0; z < (dim == 2 ? 1 : dims_.nz); ++z)
      for (int y = 0; y < (dim == 1 ? 1 : dims_.ny); ++y)
        for (int x = 0; x < (dim == 0 ? 1 : dims_.nx); ++x)
          for (int i = 0; i < n; ++i) {
            int j = (i + 1) % n;
            if (n == 2 && i == 1) continue;  // avoid a parallel second pair
            QfdbCoord a{x, y, z}, b{x, y, z};
            (dim == 0 ? a.x : dim == 1 ? a.y : a.z) = i;
            (dim == 0 ? b.x : dim == 1 ? b.y : b.z) = j;
            // Both directions of the (n-1,0) edge cross the wraparound.
            bool wrap = (n > 2) && (j == 0);
            add_link(f1(a), f1(b), cls, dim, wrap, kExternalGbps);
            add_link(f1(b), f1(a), cls, dim, wrap, kExternalGbps);
          }
  }
}

void Topology::add_link(int src, int dst, LinkClass cls, int dim, bool wrap, double gbps) {
  Link l;
  l.id = static_cast<int>(links_.size());
  l.src = src;
  l.dst = dst;
  l.cls = cls;
  l.dim = dim;
  l.wrap = wrap;
  l.rate_gbps = gbps;
  out_links_[static_cast<std::size_t>(src)].push_back(l.id);
  links_.push_back(l);
}

int Topology::find_link(int src, int dst) const {
  for (int id : out_links_[static_cast<std::size_t>(src)])
    if (links_[static_cast<std::size_t>(id)].dst == dst) return id;
  return -1;
}

void Topology::ring_hop(std::vector<RouteHop>& hops, int dim, QfdbCoord& at, int target) const {
  int n = dim == 0 ? dims_.nx : dim == 1 ? dims_.ny : dims_.nz;
  int* coord = dim == 0 ? &at.x : dim == 1 ? &at.y : &at.z;
  while (*coord != target) {
    int fwd = (target - *coord + n) % n;
    int bwd = n - fwd;
    int step = fwd <= bwd ? 1 : -1;  // equal distance goes positive
    QfdbCoord next = at;
    int* nc = dim == 0 ? &next.x : dim == 1 ? &next.y : &next.z;
    *nc = (*coord + step + n) % n;
    int link = find_link(qfdb_index(at) * kFpgasPerQfdb, qfdb_index(next) * kFpgasPerQfdb);
    hops.push_back(RouteHop{link});
    at = next;
  }
}

std::vector<RouteHop> Topology::route(const NodeId& src, const NodeId& dst) const {
  return route(node_index(src), node_index(dst));
}

std::vector<RouteHop> Topology::route(int src_index, int dst_index) const {
  if (src_index == dst_index) throw SameNode("route requires distinct nodes");
  NodeId src = node_id(src_index);
  NodeId dst = node_id(dst_index);
  std::vector<RouteHop> hops;

  if (src.qfdb == dst.qfdb) {  // direct mesh link
    hops.push_back(RouteHop{find_link(src_index, dst_index)});
    return hops;
  }

  QfdbCoord at = src.qfdb;
  if (src.fpga != kNetworkFpga)
    hops.push_back(RouteHop{find_link(src_index, qfdb_index(at) * kFpgasPerQfdb)});
  ring_hop(hops, 0, at, dst.qfdb.x);
  ring_hop(hops, 1, at, dst.qfdb.y);
  ring_hop(hops, 2, at, dst.qfdb.z);
  if (dst.fpga != kNetworkFpga)
    hops.push_back(RouteHop{find_link(qfdb_index(at) * kFpgasPerQfdb, dst_index)});
  return hops;
}

PathClass Topology::classify_path(const NodeId& src, const NodeId& dst) const {
  return classify_path(node_index(src), node_index(dst));
}

PathClass Topology::classify_path(int src_index, int dst_index) const {
  PathClass pc;
  for (const RouteHop& h : route(src_index, dst_index)) {
    switch (links_[static_cast<std::size_t>(h.link)].cls) {
      case LinkClass::IntraQfdb: ++pc.intra_qfdb; break;
      case LinkClass::IntraMezz: ++pc.intra_mezz; break;
      case LinkClass::InterMezz: ++pc.inter_mezz; break;
    }
  }
  return pc;
}

std::string Topology::dump_text() const {
  std::ostringstream os;
  os << "[topology]\n";
  os << "dims = " << dims_.nx << "," << dims_.ny << "," << dims_.nz << "\n";
  for (const Link& l : links_) {
    double def = l.cls == LinkClass::IntraQfdb ? kIntraQfdbGbps : kExternalGbps;
    if (l.rate_gbps != def)
      os << "link_rate_gbps." << l.src << "." << l.dst << " = " << l.rate_gbps << "\n";
  }
  return os.str();
}

Topology Topology::load_text(const std::string& text) {
  Dims dims;
  std::vector<std::pair<std::pair<int, int>, double>> overrides;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "dims") {
      if (std::sscanf(val.c_str(), "%d,%d,%d", &dims.nx, &dims.ny, &dims.nz) != 3)
        throw InvalidDims("bad dims: " + val);
    } else if (key.rfind("link_rate_gbps.", 0) == 0) {
      int a = 0, b = 0;
      double g = 0;
      if (std::sscanf(key.c_str(), "link_rate_gbps.%d.%d", &a, &b) == 2) {
        g = std::stod(val);
        overrides.push_back({{a, b}, g});
      }
    }
  }
  Topology t(dims);
  for (auto& o : overrides) {
    int id = t.find_link(o.first.first, o.first.second);
    if (id >= 0) t.override_link_rate(id, o.second);
  }
  return t;
}

}  // namespace exns
