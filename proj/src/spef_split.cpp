#include "spef/spef_split.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "spef/weight_solver.hpp"

namespace spef {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Above this second-weight magnitude the masses are kept as logs.
constexpr double kLogSpaceThreshold = 30.0;

double log_sum_exp(const std::vector<double>& xs) {
  double m = -kInf;
  for (double x : xs) m = std::max(m, x);
  if (m == -kInf) return -kInf;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

bool all_equal(const std::vector<double>& xs) {
  for (size_t i = 1; i < xs.size(); ++i)
    if (xs[i] != xs[0]) return false;
  return true;
}

double v_for_link(const WeightVector& v, const LinkId& link) {
  auto it = v.find(link);
  if (it == v.end())
    throw StructuralError("second weights: missing entry for link " + link);
  if (!std::isfinite(it->second) || it->second < 0.0)
    throw StructuralError("second weights: entry for link " + link +
                          " must be finite and >= 0");
  return it->second;
}

}  // namespace

bool EcmpDag::PerDest::contains(const LinkId& link) const {
  for (const auto& [node, succ] : successors) {
    (void)node;
    if (std::find(succ.begin(), succ.end(), link) != succ.end()) return true;
  }
  return false;
}

const EcmpDag::PerDest& EcmpDag::toward(const NodeId& dest) const {
  auto it = per_dest.find(dest);
  if (it == per_dest.end())
    throw StructuralError("ECMP DAG has no destination " + dest);
  return it->second;
}

namespace {

EcmpDag build_dag_impl(const Topology& topo, const WeightVector& w,
                       const std::vector<NodeId>& dests, double tol,
                       bool relative) {
  if (!(tol >= 0.0))
    throw StructuralError("build_ecmp_dag: tol must be >= 0");
  for (const Link& l : topo.links()) {
    auto it = w.find(l.id);
    if (it == w.end())
      throw StructuralError("weight vector: missing entry for link " + l.id);
    if (!std::isfinite(it->second) || it->second <= 0.0)
      throw StructuralError("build_ecmp_dag: weight for link " + l.id +
                            " must be finite and > 0");
  }
  EcmpDag dag;
  dag.tol = tol;
  dag.relative = relative;
  for (const NodeId& dest : dests) {
    if (dag.per_dest.count(dest)) continue;
    EcmpDag::PerDest pd;
    pd.dist = distances_to(topo, w, dest);
    for (const Link& l : topo.links()) {
      double di = pd.dist[l.src];
      double dj = pd.dist[l.dst];
      if (di == kInf || dj == kInf) continue;
      if (!(dj < di)) continue;
      double slack = relative ? tol * di : tol;
      if (w.at(l.id) + dj - di <= slack)
        pd.successors[l.src].push_back(l.id);
    }
    for (auto& [node, succ] : pd.successors) {
      (void)node;
      std::sort(succ.begin(), succ.end(),
                [&](const LinkId& a, const LinkId& b) {
                  const Link& la = topo.link(a);
                  const Link& lb = topo.link(b);
                  if (la.dst != lb.dst) return la.dst < lb.dst;
                  return la.id < lb.id;
                });
    }
    dag.per_dest[dest] = std::move(pd);
  }
  return dag;
}

}  // namespace

EcmpDag build_ecmp_dag(const Topology& topo, const WeightVector& w,
                       const std::vector<NodeId>& dests, double tol) {
  return build_dag_impl(topo, w, dests, tol, false);
}

EcmpDag build_ecmp_dag_relative(const Topology& topo, const WeightVector& w,
                                const std::vector<NodeId>& dests, double rel) {
  return build_dag_impl(topo, w, dests, rel, true);
}

std::vector<double> exponential_split(
    const std::vector<std::vector<double>>& lengths_per_next_hop) {
  if (lengths_per_next_hop.empty())
    throw StructuralError("exponential_split: no next hops");
  double max_len = 0.0;
  for (const auto& lens : lengths_per_next_hop) {
    if (lens.empty())
      throw StructuralError("exponential_split: next hop with no paths");
    for (double l : lens) {
      if (!std::isfinite(l))
        throw StructuralError("exponential_split: non-finite path length");
      max_len = std::max(max_len, std::fabs(l));
    }
  }
  const size_t m = lengths_per_next_hop.size();
  std::vector<double> masses(m);
  if (max_len <= kLogSpaceThreshold) {
    double total = 0.0;
    for (size_t k = 0; k < m; ++k) {
      double mk = 0.0;
      for (double l : lengths_per_next_hop[k]) mk += std::exp(-l);
      masses[k] = mk;
      total += mk;
    }
    std::vector<double> out(m);
    if (all_equal(masses)) {
      for (size_t k = 0; k < m; ++k) out[k] = 1.0 / static_cast<double>(m);
    } else {
      for (size_t k = 0; k < m; ++k) out[k] = masses[k] / total;
    }
    return out;
  }
  // Log space.
  std::vector<double> log_masses(m);
  for (size_t k = 0; k < m; ++k) {
    std::vector<double> neg(lengths_per_next_hop[k].size());
    for (size_t p = 0; p < neg.size(); ++p)
      neg[p] = -lengths_per_next_hop[k][p];
    log_masses[k] = log_sum_exp(neg);
  }
  std::vector<double> out(m);
  if (all_equal(log_masses)) {
    for (size_t k = 0; k < m; ++k) out[k] = 1.0 / static_cast<double>(m);
    return out;
  }
  double lz = log_sum_exp(log_masses);
  for (size_t k = 0; k < m; ++k) out[k] = std::exp(log_masses[k] - lz);
  return out;
}

SplitRatios split_ratios(const Topology& topo, const EcmpDag::PerDest& dag,
                         const NodeId& dest, const WeightVector& v) {
  bool log_space = false;
  for (const auto& [node, succ] : dag.successors) {
    (void)node;
    for (const LinkId& l : succ)
      if (v_for_link(v, l) > kLogSpaceThreshold) log_space = true;
  }
  // Nodes in increasing distance order; successors always point downhill.
  std::vector<std::pair<double, NodeId>> order;
  for (const auto& [node, d] : dag.dist)
    if (d != kInf) order.emplace_back(d, node);
  std::sort(order.begin(), order.end());

  SplitRatios out;
  out.log_mass[dest] = 0.0;
  for (const auto& [d, node] : order) {
    (void)d;
    if (node == dest) continue;
    auto sit = dag.successors.find(node);
    if (sit == dag.successors.end()) continue;
    const std::vector<LinkId>& succ = sit->second;
    std::vector<double> log_contrib(succ.size());
    for (size_t k = 0; k < succ.size(); ++k) {
      const Link& l = topo.link(succ[k]);
      auto zit = out.log_mass.find(l.dst);
      if (zit == out.log_mass.end())
        throw StructuralError("ECMP DAG successor " + l.dst +
                              " has no mass; DAG is inconsistent");
      log_contrib[k] = -v_for_link(v, succ[k]) + zit->second;
    }
    std::vector<double>& ratio = out.ratio[node];
    ratio.resize(succ.size());
    if (all_equal(log_contrib)) {
      double even = 1.0 / static_cast<double>(succ.size());
      for (size_t k = 0; k < succ.size(); ++k) ratio[k] = even;
      out.log_mass[node] =
          log_contrib[0] + std::log(static_cast<double>(succ.size()));
      continue;
    }
    if (!log_space) {
      double total = 0.0;
      std::vector<double> contrib(succ.size());
      for (size_t k = 0; k < succ.size(); ++k) {
        contrib[k] = std::exp(log_contrib[k]);
        total += contrib[k];
      }
      for (size_t k = 0; k < succ.size(); ++k) ratio[k] = contrib[k] / total;
      out.log_mass[node] = std::log(total);
    } else {
      double lz = log_sum_exp(log_contrib);
      for (size_t k = 0; k < succ.size(); ++k)
        ratio[k] = std::exp(log_contrib[k] - lz);
      out.log_mass[node] = lz;
    }
  }
  return out;
}

namespace {

// Shared distribution walk: splits each node's accumulated demand across its
// DAG successors using the given per-node ratios.
void distribute_on_dag(const Topology& topo, const EcmpDag::PerDest& dag,
                       const NodeId& dest,
                       const std::map<NodeId, double>& demand_toward,
                       const SplitRatios& ratios, FlowAssignment& fa) {
  std::map<NodeId, double> pending = demand_toward;
  for (const auto& [src, d] : demand_toward) {
    if (d < 0.0 || !std::isfinite(d))
      throw StructuralError("demand toward " + dest + " from " + src +
                            " must be finite and >= 0");
    auto it = dag.dist.find(src);
    if (it == dag.dist.end() || it->second == kInf)
      throw RoutingError("no shortest path from " + src + " to " + dest);
  }
  // Decreasing distance order.
  std::vector<std::pair<double, NodeId>> order;
  for (const auto& [node, d] : dag.dist)
    if (d != kInf && node != dest) order.emplace_back(d, node);
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return b < a; });
  for (const auto& [d, node] : order) {
    (void)d;
    auto pit = pending.find(node);
    if (pit == pending.end() || pit->second <= 0.0) continue;
    double carried = pit->second;
    auto sit = dag.successors.find(node);
    if (sit == dag.successors.end())
      throw RoutingError("node " + node + " carries demand toward " + dest +
                         " but has no equal-cost successor");
    const std::vector<LinkId>& succ = sit->second;
    const std::vector<double>& ratio = ratios.ratio.at(node);
    double assigned = 0.0;
    for (size_t k = 0; k < succ.size(); ++k) {
      // Last successor takes the exact remainder so conservation is exact.
      double fl = (k + 1 == succ.size()) ? carried - assigned
                                         : carried * ratio[k];
      assigned += fl;
      fa.add(dest, succ[k], fl);
      pending[topo.link(succ[k]).dst] += fl;
    }
  }
}

}  // namespace

FlowAssignment traffic_distribution(const Topology& topo,
                                    const DemandMatrix& dm, const EcmpDag& dag,
                                    const WeightVector& v) {
  FlowAssignment fa;
  for (const NodeId& dest : dm.destinations()) {
    const EcmpDag::PerDest& pd = dag.toward(dest);
    SplitRatios ratios = split_ratios(topo, pd, dest, v);
    distribute_on_dag(topo, pd, dest, dm.toward(dest), ratios, fa);
  }
  return fa;
}

SecondWeights solve_second_weights(const Topology& topo,
                                   const DemandMatrix& dm, const EcmpDag& dag,
                                   const std::map<LinkId, double>& f_target,
                                   const NemConfig& config) {
  SecondWeights sw;
  // Union of DAG links over the demanded destinations.
  std::vector<LinkId> dag_links;
  for (const NodeId& dest : dm.destinations()) {
    const EcmpDag::PerDest& pd = dag.toward(dest);
    for (const auto& [node, succ] : pd.successors) {
      (void)node;
      for (const LinkId& l : succ) dag_links.push_back(l);
    }
  }
  std::sort(dag_links.begin(), dag_links.end());
  dag_links.erase(std::unique(dag_links.begin(), dag_links.end()),
                  dag_links.end());
  if (dm.empty() || dag_links.empty()) {
    sw.converged = true;
    return sw;
  }

  std::map<LinkId, double> target;
  double max_target = 0.0;
  for (const LinkId& l : dag_links) {
    auto it = f_target.find(l);
    if (it == f_target.end())
      throw StructuralError("target loads: missing entry for link " + l);
    target[l] = std::max(0.0, it->second);
    max_target = std::max(max_target, target[l]);
  }
  for (const auto& [l, t] : f_target) {
    (void)l;
    max_target = std::max(max_target, t);
  }
  if (max_target <= 0.0) {
    sw.converged = true;
    for (const LinkId& l : dag_links) sw.v[l] = 0.0;
    return sw;
  }

  double gamma = config.gamma ? *config.gamma : 1.0 / max_target;
  if (!std::isfinite(gamma) || gamma <= 0.0)
    throw StructuralError("second-weight solver: gamma must be > 0");
  const double gamma_floor = gamma / 1024.0;
  double eps = config.epsilon ? *config.epsilon : 1e-3 * max_target;
  if (!std::isfinite(eps) || eps <= 0.0)
    throw StructuralError("second-weight solver: epsilon must be > 0");
  sw.epsilon = eps;

  for (const LinkId& l : dag_links) sw.v[l] = 0.0;

  std::vector<NodeId> dests = dm.destinations();
  double best_excess = kInf;
  int best_iter = 0;
  const int stall_window = 2000;

  int k = 0;
  for (k = 0; k <= config.max_iters; ++k) {
    FlowAssignment fa;
    double dual = 0.0;
    for (const NodeId& dest : dests) {
      const EcmpDag::PerDest& pd = dag.toward(dest);
      SplitRatios ratios = split_ratios(topo, pd, dest, sw.v);
      distribute_on_dag(topo, pd, dest, dm.toward(dest), ratios, fa);
      for (const auto& [src, d] : dm.toward(dest))
        dual += d * ratios.log_mass.at(src);
    }
    std::map<LinkId, double> agg = fa.aggregate();
    double max_excess = -kInf;
    for (const LinkId& l : dag_links) {
      auto it = agg.find(l);
      double load = it == agg.end() ? 0.0 : it->second;
      max_excess = std::max(max_excess, load - target[l]);
      dual += sw.v[l] * target[l];
    }
    sw.max_excess = max_excess;
    int stride = std::max(1, config.trace_stride);
    if (k % stride == 0 || k == config.max_iters)
      sw.trace.push_back({k, max_excess, dual});
    if (max_excess <= eps) {
      sw.converged = true;
      break;
    }
    if (k == config.max_iters) break;
    if (max_excess < best_excess) {
      best_excess = max_excess;
      best_iter = k;
    } else if (k - best_iter > stall_window && gamma > gamma_floor) {
      gamma = std::max(gamma * 0.5, gamma_floor);
      best_iter = k;
    }
    for (const LinkId& l : dag_links) {
      auto it = agg.find(l);
      double load = it == agg.end() ? 0.0 : it->second;
      sw.v[l] = std::max(0.0, sw.v[l] - gamma * (target[l] - load));
    }
  }
  sw.iterations = std::min(k, config.max_iters);
  return sw;
}

ForwardingTable build_forwarding_tables(const Topology& topo,
                                        const EcmpDag& dag,
                                        const WeightVector& v) {
  ForwardingTable table;
  for (const auto& [dest, pd] : dag.per_dest) {
    SplitRatios ratios = split_ratios(topo, pd, dest, v);
    for (const auto& [node, succ] : pd.successors) {
      std::vector<NextHopEntry> entries;
      const std::vector<double>& ratio = ratios.ratio.at(node);
      for (size_t k = 0; k < succ.size(); ++k) {
        const Link& l = topo.link(succ[k]);
        NextHopEntry e;
        e.link = l.id;
        e.via = l.dst;
        e.ratio = ratio[k];
        e.mass = std::exp(-v_for_link(v, l.id) +
                          ratios.log_mass.at(l.dst));
        entries.push_back(std::move(e));
      }
      table.rows[{dest, node}] = std::move(entries);
    }
  }
  return table;
}

std::string ForwardingTable::to_json_text(const SecondWeights* sw) const {
  json j;
  if (sw != nullptr) {
    json v = json::object();
    for (const auto& [link, val] : sw->v) v[link] = val;
    j["second_weights"] = v;
    j["converged"] = sw->converged;
    j["iterations"] = sw->iterations;
  }
  j["tables"] = json::array();
  for (const auto& [key, entries] : rows) {
    json row;
    row["dest"] = key.first;
    row["node"] = key.second;
    row["nexthops"] = json::array();
    for (const NextHopEntry& e : entries) {
      row["nexthops"].push_back({{"via", e.via},
                                 {"link", e.link},
                                 {"ratio", e.ratio},
                                 {"mass", e.mass}});
    }
    j["tables"].push_back(row);
  }
  return j.dump(2) + "\n";
}

}  // namespace spef
