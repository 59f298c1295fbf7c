#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "exanetsim/accel.hpp"
#include "exanetsim/harness.hpp"

namespace py = pybind11;
using namespace exns;

namespace {

py::dict row_to_dict(const ReportRow& r) {
  py::dict d;
  d["benchmark"] = r.benchmark;
  d["path_class"] = r.path_class;
  d["n_ranks"] = r.n_ranks;
  d["size_bytes"] = r.size_bytes;
  d["metric"] = r.metric;
  d["value"] = r.value;
  if (r.model_value) d["model_value"] = *r.model_value;
  if (!r.paper_ref.empty()) d["paper_ref"] = r.paper_ref;
  if (r.deviation_pct) d["deviation_pct"] = *r.deviation_pct;
  return d;
}

}  // namespace

PYBIND11_MODULE(_exanetsim, m) {
  m.doc() = "ExaNet interconnect simulator: addressing, routing, latency models and "
            "OSU-style benchmarks";

  py::register_exception<gvas::FieldOverflow>(m, "FieldOverflow");
  py::register_exception<ScenarioError>(m, "ScenarioError");

  m.def(
      "pack_address",
      [](std::uint64_t pdid, std::uint64_t node, std::uint64_t rank, std::uint64_t va) {
        auto a = gvas::pack_address(pdid, node, rank, va);
        return py::make_tuple(a.hi, a.lo);
      },
      py::arg("pdid"), py::arg("node"), py::arg("rank"), py::arg("va"),
      "Packs the four fields into the 80-bit global virtual address (hi16, lo64)");
  m.def(
      "unpack_address",
      [](std::uint16_t hi, std::uint64_t lo) {
        auto f = gvas::unpack_address(gvas::GlobalVirtualAddress{hi, lo});
        return py::make_tuple(f.pdid, f.node, f.rank, f.va);
      },
      py::arg("hi"), py::arg("lo"));
  m.def("check_protection", &gvas::check_protection, py::arg("packet_pdid"),
        py::arg("endpoint_pdid"));
  m.def(
      "address_bytes",
      [](std::uint16_t hi, std::uint64_t lo) {
        auto b = gvas::to_bytes(gvas::GlobalVirtualAddress{hi, lo});
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      },
      "Canonical 10-byte big-endian serialization");

  m.def("segment_payload", &segment_payload, py::arg("n_bytes"));

  m.def(
      "route_hops",
      [](int nx, int ny, int nz, py::tuple src, py::tuple dst) {
        Topology topo(Dims{nx, ny, nz});
        NodeId a{{src[0].cast<int>(), src[1].cast<int>(), src[2].cast<int>()},
                 src[3].cast<int>()};
        NodeId b{{dst[0].cast<int>(), dst[1].cast<int>(), dst[2].cast<int>()},
                 dst[3].cast<int>()};
        std::vector<std::string> out;
        for (const RouteHop& h : topo.route(a, b))
          out.push_back(link_class_name(topo.link(h.link).cls));
        return out;
      },
      py::arg("nx"), py::arg("ny"), py::arg("nz"), py::arg("src"), py::arg("dst"),
      "Dimension-ordered route as a list of per-hop link classes; src/dst are (x,y,z,fpga)");
  m.def(
      "classify_path",
      [](int nx, int ny, int nz, py::tuple src, py::tuple dst) {
        Topology topo(Dims{nx, ny, nz});
        NodeId a{{src[0].cast<int>(), src[1].cast<int>(), src[2].cast<int>()},
                 src[3].cast<int>()};
        NodeId b{{dst[0].cast<int>(), dst[1].cast<int>(), dst[2].cast<int>()},
                 dst[3].cast<int>()};
        PathClass pc = topo.classify_path(a, b);
        return py::make_tuple(pc.intra_qfdb, pc.intra_mezz, pc.inter_mezz);
      },
      py::arg("nx"), py::arg("ny"), py::arg("nz"), py::arg("src"), py::arg("dst"));

  m.def(
      "path_latency_us",
      [](int intra_qfdb, int intra_mezz, int inter_mezz, std::int64_t msg_bytes) {
        PathClass pc{intra_qfdb, intra_mezz, inter_mezz};
        CalibrationParams cal;
        return path_latency_ns(pc, msg_bytes, cal) / 1000.0;
      },
      py::arg("intra_qfdb"), py::arg("intra_mezz"), py::arg("inter_mezz"),
      py::arg("msg_bytes") = 0,
      "Analytic one-way latency with the default calibration");

  m.def(
      "speedup_and_efficiency",
      [](double t1, double tn, int n, const std::string& mode) {
        auto r = speedup_and_efficiency(t1, tn, n,
                                        mode == "weak" ? ScalingMode::Weak : ScalingMode::Strong);
        return py::make_tuple(r.speedup, r.efficiency);
      },
      py::arg("t1"), py::arg("tn"), py::arg("n"), py::arg("mode"));

  m.def(
      "accel_schedule_distances",
      [](int n_ranks) { return build_accel_schedule(n_ranks).exchange_distances; },
      py::arg("n_ranks"), "Server-exchange rank distances of the accelerated allreduce");

  m.def(
      "run_scenario_text",
      [](const std::string& text) {
        Scenario s = Scenario::parse_text(text);
        auto rows = run_scenario(s);
        py::list out;
        for (const ReportRow& r : rows) out.append(row_to_dict(r));
        return out;
      },
      py::arg("text"), "Parses a scenario document and runs it, returning report rows");
  m.def(
      "run_scenario_file",
      [](const std::string& path) {
        Scenario s = Scenario::load_file(path);
        auto rows = run_scenario(s);
        py::list out;
        for (const ReportRow& r : rows) out.append(row_to_dict(r));
        return out;
      },
      py::arg("path"));

  m.def("reference_table", [] {
    py::list out;
    for (const RefEntry& e : reference_table()) {
      py::dict d;
      d["benchmark"] = e.benchmark;
      d["path_class"] = e.path;
      d["n_ranks"] = e.n_ranks;
      d["size_bytes"] = e.size;
      d["metric"] = e.metric;
      d["value"] = e.value;
      d["citation"] = e.citation;
      out.append(d);
    }
    return out;
  });
}
