#pragma once

#include <optional>
#include <vector>

#include "spef/net_model.hpp"

namespace spef {

// Equal-cost multipath structure toward each destination: link (i,j) is kept
// when dist(j) < dist(i) and |dist(i) - (w_ij + dist(j))| <= tol, so every
// kept link strictly decreases the remaining distance and the per-destination
// subgraph is acyclic.
struct EcmpDag {
  struct PerDest {
    std::map<NodeId, double> dist;
    // Successor links per node, kept sorted by (head node, link id). Only
    // nodes with at least one successor appear.
    std::map<NodeId, std::vector<LinkId>> successors;
    bool contains(const LinkId& link) const;
  };
  double tol = 0.0;
  bool relative = false;  // true when tol is a multiplicative slack
  std::map<NodeId, PerDest> per_dest;

  const PerDest& toward(const NodeId& dest) const;
};

// Builds the ECMP DAG for the given destinations. Weights must be finite and
// strictly positive. tol presets: 1e-9 for real-valued weights, 0.3 or 1.0
// for rounded integer weights.
EcmpDag build_ecmp_dag(const Topology& topo, const WeightVector& w,
                       const std::vector<NodeId>& dests, double tol = 1e-9);

// Same DAG with a multiplicative tie test instead of an absolute one: link
// (i,j) is kept when dist(j) < dist(i) and w_ij + dist(j) <= (1+rel)*dist(i).
// Scale free in both the weights and the path lengths, which makes it the
// right membership rule when the weights carry relative error (the pipeline's
// averaged first weights). Ties broken this way stay safe: a swept-in link
// that is not tied at the optimum carries a zero target load.
EcmpDag build_ecmp_dag_relative(const Topology& topo, const WeightVector& w,
                                const std::vector<NodeId>& dests, double rel);

// Split ratios across next hops from explicit per-next-hop path length lists:
// each next hop's share is proportional to the sum of exp(-length) over its
// paths. Stable in log space for large lengths; exactly 1/m when all masses
// are equal.
std::vector<double> exponential_split(
    const std::vector<std::vector<double>>& lengths_per_next_hop);

// Per-destination subtree masses and per-link split ratios under second
// weights v, computed by the downstream recursion (never by enumerating
// paths). Masses are kept as logs when any v exceeds 30.
struct SplitRatios {
  // log of Z^t(n): the total exp(-v-length) mass of all DAG paths n -> t.
  std::map<NodeId, double> log_mass;
  // ratio per successor link, same order as the DAG successor lists.
  std::map<NodeId, std::vector<double>> ratio;
};
SplitRatios split_ratios(const Topology& topo, const EcmpDag::PerDest& dag,
                         const NodeId& dest, const WeightVector& v);

// Traffic distribution: walks nodes in decreasing distance order, splitting
// each node's accumulated demand across its DAG successors with the
// exponential ratios. Conservation is exact by construction.
FlowAssignment traffic_distribution(const Topology& topo,
                                    const DemandMatrix& dm, const EcmpDag& dag,
                                    const WeightVector& v);

struct NemConfig {
  std::optional<double> gamma;    // default 1 / max target load
  std::optional<double> epsilon;  // default 1e-3 * max target load
  int max_iters = 20000;
  int trace_stride = 1;
};

struct NemTracePoint {
  int iteration = 0;
  double max_excess = 0.0;
  double dual_objective = 0.0;
};

struct SecondWeights {
  WeightVector v;
  std::vector<NemTracePoint> trace;
  bool converged = false;
  int iterations = 0;
  double epsilon = 0.0;
  double max_excess = 0.0;  // at the returned v
};

// Entropy-penalty second weights: starting from v = 0, iterates
//   v <- (v - gamma * (f_target - f(v)))_+
// until the realized loads are within epsilon of the targets on every link.
SecondWeights solve_second_weights(const Topology& topo,
                                   const DemandMatrix& dm, const EcmpDag& dag,
                                   const std::map<LinkId, double>& f_target,
                                   const NemConfig& config = {});

struct NextHopEntry {
  LinkId link;
  NodeId via;
  double ratio = 0.0;
  double mass = 0.0;  // exp(-v) * Z of the subtree behind this hop
};

struct ForwardingTable {
  // (dest, node) -> next hop entries sorted by (via, link).
  std::map<std::pair<NodeId, NodeId>, std::vector<NextHopEntry>> rows;

  std::string to_json_text(const SecondWeights* sw = nullptr) const;
};

// One row per (node, dest) where the node has DAG successors toward dest.
ForwardingTable build_forwarding_tables(const Topology& topo,
                                        const EcmpDag& dag,
                                        const WeightVector& v);

}  // namespace spef
