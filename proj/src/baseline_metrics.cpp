#include "spef/baseline_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace spef {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kPathCountCap = std::uint64_t{1} << 32;

}  // namespace

WeightVector invcap_weights(const Topology& topo) {
  WeightVector w;
  for (const Link& l : topo.links()) w[l.id] = 1.0 / l.capacity;
  return w;
}

FlowAssignment even_split_distribution(const Topology& topo,
                                       const DemandMatrix& dm,
                                       const EcmpDag& dag) {
  FlowAssignment fa;
  for (const NodeId& dest : dm.destinations()) {
    const EcmpDag::PerDest& pd = dag.toward(dest);
    std::map<NodeId, double> pending = dm.toward(dest);
    for (const auto& [src, d] : pending) {
      (void)d;
      auto it = pd.dist.find(src);
      if (it == pd.dist.end() || it->second == kInf)
        throw RoutingError("no shortest path from " + src + " to " + dest);
    }
    std::vector<std::pair<double, NodeId>> order;
    for (const auto& [node, d] : pd.dist)
      if (d != kInf && node != dest) order.emplace_back(d, node);
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return b < a; });
    for (const auto& [d, node] : order) {
      (void)d;
      auto pit = pending.find(node);
      if (pit == pending.end() || pit->second <= 0.0) continue;
      double carried = pit->second;
      auto sit = pd.successors.find(node);
      if (sit == pd.successors.end())
        throw RoutingError("node " + node + " carries demand toward " + dest +
                           " but has no equal-cost successor");
      const std::vector<LinkId>& succ = sit->second;
      double share = carried / static_cast<double>(succ.size());
      double assigned = 0.0;
      for (size_t k = 0; k < succ.size(); ++k) {
        double fl = (k + 1 == succ.size()) ? carried - assigned : share;
        assigned += fl;
        fa.add(dest, succ[k], fl);
        pending[topo.link(succ[k]).dst] += fl;
      }
    }
  }
  return fa;
}

BaselineResult ospf_invcap(const Topology& topo, const DemandMatrix& dm,
                           double tol) {
  BaselineResult r;
  r.weights = invcap_weights(topo);
  r.dag = build_ecmp_dag(topo, r.weights, dm.destinations(), tol);
  r.flows = even_split_distribution(topo, dm, r.dag);
  return r;
}

PathCount count_paths_from(const Topology& topo, const EcmpDag::PerDest& dag,
                           const NodeId& src) {
  // Counts accumulate dest-outward, so process nodes by increasing distance.
  std::vector<std::pair<double, NodeId>> order;
  NodeId dest;
  double best = kInf;
  for (const auto& [node, d] : dag.dist) {
    if (d != kInf) order.emplace_back(d, node);
    if (d < best) {
      best = d;
      dest = node;
    }
  }
  PathCount pc;
  auto sit = dag.dist.find(src);
  if (sit == dag.dist.end() || sit->second == kInf) return pc;
  std::sort(order.begin(), order.end());
  std::map<NodeId, PathCount> counts;
  counts[dest] = {1, false};
  for (const auto& [d, node] : order) {
    (void)d;
    if (node == dest) continue;
    auto succ = dag.successors.find(node);
    if (succ == dag.successors.end()) continue;
    PathCount c;
    for (const LinkId& l : succ->second) {
      const PathCount& down = counts.at(topo.link(l).dst);
      c.count += down.count;
      c.saturated = c.saturated || down.saturated;
      if (c.count >= kPathCountCap) {
        c.count = kPathCountCap;
        c.saturated = true;
      }
    }
    counts[node] = c;
  }
  auto it = counts.find(src);
  if (it != counts.end()) pc = it->second;
  return pc;
}

EcmpHistogram count_ecmp_paths(const Topology& topo, const EcmpDag& dag,
                               const DemandMatrix& dm) {
  EcmpHistogram h;
  for (const auto& [pair, d] : dm.entries()) {
    (void)d;
    PathCount pc = count_paths_from(topo, dag.toward(pair.second), pair.first);
    ++h.pairs_by_path_count[pc.count];
    h.any_saturated = h.any_saturated || pc.saturated;
  }
  return h;
}

MetricsReport compute_metrics(const Topology& topo, const DemandMatrix& dm,
                              const FlowAssignment& fa, const EcmpDag* dag) {
  MetricsReport r;
  std::map<LinkId, LinkLoad> loads = aggregate_loads(topo, fa);
  for (const Link& l : topo.links())
    r.sorted_utilizations.push_back(loads.at(l.id).utilization);
  std::sort(r.sorted_utilizations.begin(), r.sorted_utilizations.end(),
            std::greater<>());
  r.mlu = r.sorted_utilizations.empty() ? 0.0 : r.sorted_utilizations.front();
  if (r.mlu < 1.0) {
    double sum = 0.0;
    for (double u : r.sorted_utilizations) sum += std::log1p(-u);
    r.normalized_utility = sum;
  }
  double total_cap = 0.0;
  for (const Link& l : topo.links()) total_cap += l.capacity;
  r.network_load = total_cap > 0.0 ? dm.total() / total_cap : 0.0;
  if (dag != nullptr) r.ecmp_histogram = count_ecmp_paths(topo, *dag, dm);
  return r;
}

std::string MetricsReport::to_json_text() const {
  json j;
  j["mlu"] = mlu;
  if (normalized_utility)
    j["normalized_utility"] = *normalized_utility;
  else
    j["normalized_utility"] = nullptr;
  j["network_load"] = network_load;
  j["sorted_utilizations"] = sorted_utilizations;
  json h = json::object();
  for (const auto& [paths, pairs] : ecmp_histogram.pairs_by_path_count)
    h[std::to_string(paths)] = pairs;
  j["ecmp_histogram"] = h;
  j["histogram_saturated"] = ecmp_histogram.any_saturated;
  return j.dump(2) + "\n";
}

std::string sorted_utilization_csv(const MetricsReport& report) {
  std::string out = "rank,utilization\n";
  for (size_t i = 0; i < report.sorted_utilizations.size(); ++i) {
    out += std::to_string(i + 1);
    out += ',';
    out += format_double(report.sorted_utilizations[i]);
    out += '\n';
  }
  return out;
}

}  // namespace spef
