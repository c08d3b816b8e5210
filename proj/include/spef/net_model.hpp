#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "spef/errors.hpp"

namespace spef {

using NodeId = std::string;
using LinkId = std::string;

// Link weights (or any other per-link scalar) keyed by link id.
using WeightVector = std::map<LinkId, double>;

struct Link {
  LinkId id;
  NodeId src;
  NodeId dst;
  double capacity = 0.0;
  // Optional propagation delay, used by the delay-weight mode. Defaults to 1
  // so that delay weights degrade to hop counts when no delays are given.
  double delay = 1.0;
};

// Directed capacitated graph. Node ids are opaque strings; every tie-break in
// the toolkit uses their lexicographic order. Parallel links are allowed,
// self-loops are not. Immutable after construction.
class Topology {
 public:
  Topology(std::vector<NodeId> nodes, std::vector<Link> links);

  // Sorted lexicographically.
  const std::vector<NodeId>& nodes() const { return nodes_; }
  // Input order, stable across runs for a given file.
  const std::vector<Link>& links() const { return links_; }

  bool has_node(const NodeId& n) const { return node_index_.count(n) > 0; }
  bool has_link(const LinkId& id) const { return link_index_.count(id) > 0; }
  const Link& link(const LinkId& id) const;
  int node_index(const NodeId& n) const;
  int link_index(const LinkId& id) const;

  // Link indices into links(), in input order.
  const std::vector<int>& out_links(const NodeId& n) const;
  const std::vector<int>& in_links(const NodeId& n) const;

  double max_capacity() const { return max_capacity_; }

 private:
  std::vector<NodeId> nodes_;
  std::vector<Link> links_;
  std::map<NodeId, int> node_index_;
  std::map<LinkId, int> link_index_;
  std::vector<std::vector<int>> out_;
  std::vector<std::vector<int>> in_;
  double max_capacity_ = 0.0;
};

// Demands keyed by (src, dst). Zero entries are dropped on insert so the
// destination set stays minimal; negative or self demands are rejected.
class DemandMatrix {
 public:
  DemandMatrix() = default;

  void set(const NodeId& src, const NodeId& dst, double demand);
  double at(const NodeId& src, const NodeId& dst) const;  // 0 if absent
  const std::map<std::pair<NodeId, NodeId>, double>& entries() const {
    return entries_;
  }

  // Destinations with positive inbound demand, sorted.
  std::vector<NodeId> destinations() const;
  // src -> demand for one destination, sorted by src.
  std::map<NodeId, double> toward(const NodeId& dst) const;
  double total() const;
  bool empty() const { return entries_.empty(); }

 private:
  std::map<std::pair<NodeId, NodeId>, double> entries_;
};

// Per-destination link flows, sparse: flows[t][link] = f^t on that link.
// Links absent from a destination's map carry zero flow for it.
class FlowAssignment {
 public:
  FlowAssignment() = default;

  void set(const NodeId& dest, const LinkId& link, double flow);
  void add(const NodeId& dest, const LinkId& link, double flow);
  double at(const NodeId& dest, const LinkId& link) const;
  const std::map<NodeId, std::map<LinkId, double>>& per_dest() const {
    return flows_;
  }

  // Sum over destinations; sparse, only links that carry flow appear.
  std::map<LinkId, double> aggregate() const;

 private:
  std::map<NodeId, std::map<LinkId, double>> flows_;
};

struct FlowReport {
  bool feasible = true;
  double max_capacity_violation = 0.0;    // max(0, load - c) over links
  double max_conservation_residual = 0.0; // |out - in - rhs| over (node, dest)
  double min_flow = 0.0;                  // most negative single flow value
};

// Checks a flow assignment against the multi-commodity constraints:
// aggregate loads within capacity, per-destination conservation with the
// demands as right-hand side, and nonnegativity. Unknown link ids or
// destinations raise StructuralError; constraint violations only lower the
// feasible flag.
FlowReport validate_flow(const Topology& topo, const DemandMatrix& dm,
                         const FlowAssignment& fa, double tol = 1e-9);

struct LinkLoad {
  double load = 0.0;
  double spare = 0.0;
  double utilization = 0.0;
};

// Aggregate per-link load, spare capacity and utilization. Every topology
// link gets an entry.
std::map<LinkId, LinkLoad> aggregate_loads(const Topology& topo,
                                           const FlowAssignment& fa);

// --- serialization ---

// Topology JSON: {"nodes": ["a", ...],
//                 "links": [{"id", "src", "dst", "capacity", "delay"?}, ...]}
Topology topology_from_json_text(const std::string& text);
Topology load_topology(const std::string& path);
std::string topology_to_json_text(const Topology& topo);

// Demand CSV with header "src,dst,demand".
DemandMatrix demands_from_csv_text(const std::string& text,
                                   const Topology& topo);
DemandMatrix load_demands(const std::string& path, const Topology& topo);
std::string demands_to_csv_text(const DemandMatrix& dm);

// FlowAssignment JSON: {"flows": {dest: {link: value, ...}, ...}}
FlowAssignment flows_from_json_text(const std::string& text,
                                    const Topology& topo);
FlowAssignment load_flows(const std::string& path, const Topology& topo);
std::string flows_to_json_text(const FlowAssignment& fa);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Shortest round-trip decimal form, locale independent. Used by every CSV
// writer so equal inputs give byte-equal files.
std::string format_double(double v);

}  // namespace spef
