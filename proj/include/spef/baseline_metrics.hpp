#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spef/net_model.hpp"
#include "spef/spef_split.hpp"

namespace spef {

// Inverse-capacity link weights, the classic OSPF default.
WeightVector invcap_weights(const Topology& topo);

// Splits each node's accumulated demand evenly across its equal-cost
// successors (ratio exactly 1/m per next hop). This is deployed-router ECMP,
// applied per node over the DAG rather than per path.
FlowAssignment even_split_distribution(const Topology& topo,
                                       const DemandMatrix& dm,
                                       const EcmpDag& dag);

struct BaselineResult {
  WeightVector weights;
  EcmpDag dag;
  FlowAssignment flows;
};

// Full OSPF/InvCap baseline: 1/c weights, ECMP DAG, even split.
BaselineResult ospf_invcap(const Topology& topo, const DemandMatrix& dm,
                           double tol = 1e-9);

struct PathCount {
  std::uint64_t count = 0;
  bool saturated = false;
};

// Number of equal-cost shortest paths from src to the DAG's destination,
// saturating at 2^32.
PathCount count_paths_from(const Topology& topo, const EcmpDag::PerDest& dag,
                           const NodeId& src);

struct EcmpHistogram {
  // path count -> number of demanded pairs with that many equal-cost paths
  std::map<std::uint64_t, int> pairs_by_path_count;
  bool any_saturated = false;
};

EcmpHistogram count_ecmp_paths(const Topology& topo, const EcmpDag& dag,
                               const DemandMatrix& dm);

struct MetricsReport {
  double mlu = 0.0;
  // Sum of log(1 - utilization) over links; empty when MLU >= 1 (the
  // utility is minus infinity there, serialized as null).
  std::optional<double> normalized_utility;
  std::vector<double> sorted_utilizations;  // descending, one per link
  EcmpHistogram ecmp_histogram;
  double network_load = 0.0;  // total demand / total capacity

  std::string to_json_text() const;
};

// dag is optional; without it the ECMP histogram is left empty.
MetricsReport compute_metrics(const Topology& topo, const DemandMatrix& dm,
                              const FlowAssignment& fa,
                              const EcmpDag* dag = nullptr);

// "rank,utilization" rows, rank 1 = most loaded link.
std::string sorted_utilization_csv(const MetricsReport& report);

}  // namespace spef
