#include "spef/weight_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <random>

namespace spef {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> indexed_weights(const Topology& topo,
                                    const WeightVector& w) {
  std::vector<double> out(topo.links().size());
  for (size_t i = 0; i < topo.links().size(); ++i) {
    const Link& l = topo.links()[i];
    auto it = w.find(l.id);
    if (it == w.end())
      throw StructuralError("weight vector: missing entry for link " + l.id);
    if (!std::isfinite(it->second) || it->second < 0.0)
      throw StructuralError("weight vector: weight for link " + l.id +
                            " must be finite and >= 0");
    out[i] = it->second;
  }
  return out;
}

// Integer-indexed adjacency, built once per solve. The subgradient loop runs
// hundreds of thousands of Dijkstra passes; going through the string-keyed
// topology maps inside them dominates the runtime.
struct IndexedGraph {
  std::vector<std::vector<int>> out, in;  // link indices per node index
  std::vector<int> head, tail;            // node indices per link index
};

IndexedGraph index_graph(const Topology& topo) {
  IndexedGraph g;
  g.out.resize(topo.nodes().size());
  g.in.resize(topo.nodes().size());
  g.head.resize(topo.links().size());
  g.tail.resize(topo.links().size());
  for (size_t i = 0; i < topo.links().size(); ++i) {
    const Link& l = topo.links()[i];
    g.tail[i] = topo.node_index(l.src);
    g.head[i] = topo.node_index(l.dst);
    g.out[g.tail[i]].push_back(static_cast<int>(i));
    g.in[g.head[i]].push_back(static_cast<int>(i));
  }
  return g;
}

// Reverse Dijkstra: distances from every node to dest, plus the outgoing
// link each node uses on one shortest path (-1 at dest and unreachable
// nodes). Ties go to the smallest head node, then the smallest link id.
// Routing along the parents instead of re-deriving a "best downhill link"
// afterwards matters for termination: a zero-weight iterate (the projected
// subgradient update does produce them) can put a whole cycle at one
// distance, where every link looks equally good and a local chooser can walk
// in circles. A parent is only ever assigned while its head is being
// settled, so parent chains always move strictly down the settle order and
// reach dest no matter how degenerate the weights are.
void dijkstra_to(const Topology& topo, const IndexedGraph& g,
                 const std::vector<double>& w, int dest,
                 std::vector<double>& dist, std::vector<int>& parent) {
  const size_t nn = g.out.size();
  dist.assign(nn, kInf);
  parent.assign(nn, -1);
  std::vector<char> settled(nn, 0);
  dist[dest] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  pq.emplace(0.0, dest);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (settled[u] || d > dist[u]) continue;
    settled[u] = 1;
    for (int li : g.in[u]) {
      int v = g.tail[li];
      double nd = d + w[li];
      if (nd < dist[v]) {
        dist[v] = nd;
        parent[v] = li;
        pq.emplace(nd, v);
      } else if (nd == dist[v] && !settled[v] && parent[v] >= 0) {
        int cur_head = g.head[parent[v]];
        if (u < cur_head ||
            (u == cur_head &&
             topo.links()[li].id < topo.links()[parent[v]].id))
          parent[v] = li;
      }
    }
  }
}

// Sends each source's demand down its chosen-link path. Adds flows into
// f_out (indexed by link) and returns the routing cost sum(w * flow).
double distribute_demand(const Topology& topo, const IndexedGraph& g,
                         const std::vector<double>& w,
                         const std::vector<int>& chosen, int dest,
                         const std::vector<std::pair<int, double>>& sources,
                         const NodeId& dest_name, std::vector<double>& f_out) {
  double cost = 0.0;
  const size_t nn = g.out.size();
  for (const auto& [src, d] : sources) {
    if (chosen[src] < 0)
      throw RoutingError("no route from " + topo.nodes()[src] + " to " +
                         dest_name);
    int u = src;
    size_t steps = 0;
    while (u != dest) {
      int li = chosen[u];
      if (li < 0 || ++steps > nn)
        throw RoutingError("routing loop or dead end between " +
                           topo.nodes()[src] + " and " + dest_name);
      f_out[li] += d;
      cost += w[li] * d;
      u = g.head[li];
    }
  }
  return cost;
}

double link_subproblem_fast(double beta, double q, double w, double cap) {
  if (w <= 0.0) return cap;
  double s = std::pow(q / w, 1.0 / beta);
  return std::min(s, cap);
}

}  // namespace

std::map<NodeId, double> distances_to(const Topology& topo,
                                      const WeightVector& w,
                                      const NodeId& dest) {
  std::vector<double> wi = indexed_weights(topo, w);
  IndexedGraph g = index_graph(topo);
  std::vector<double> dist;
  std::vector<int> parent;
  dijkstra_to(topo, g, wi, topo.node_index(dest), dist, parent);
  std::map<NodeId, double> out;
  for (size_t u = 0; u < topo.nodes().size(); ++u)
    out[topo.nodes()[u]] = dist[u];
  return out;
}

std::map<LinkId, double> route_to_destination(
    const Topology& topo, const WeightVector& w, const NodeId& dest,
    const std::map<NodeId, double>& demand_toward) {
  std::vector<double> wi = indexed_weights(topo, w);
  IndexedGraph g = index_graph(topo);
  int di = topo.node_index(dest);
  std::vector<double> dist;
  std::vector<int> chosen;
  dijkstra_to(topo, g, wi, di, dist, chosen);
  std::vector<std::pair<int, double>> sources;
  for (const auto& [src, d] : demand_toward) {
    if (d < 0.0 || !std::isfinite(d))
      throw StructuralError("demand toward " + dest + " from " + src +
                            " must be finite and >= 0");
    if (d == 0.0) continue;
    if (src == dest)
      throw StructuralError("self demand not allowed: " + src);
    sources.emplace_back(topo.node_index(src), d);
  }
  std::vector<double> f(topo.links().size(), 0.0);
  distribute_demand(topo, g, wi, chosen, di, sources, dest, f);
  std::map<LinkId, double> out;
  for (size_t i = 0; i < f.size(); ++i)
    if (f[i] != 0.0) out[topo.links()[i].id] = f[i];
  return out;
}

double dual_gap(const Topology& topo, const WeightVector& w,
                const std::map<LinkId, double>& spare,
                const std::map<LinkId, double>& load) {
  double gap = 0.0;
  for (const Link& l : topo.links()) {
    auto wit = w.find(l.id);
    auto sit = spare.find(l.id);
    if (wit == w.end() || sit == spare.end())
      throw StructuralError("dual_gap: missing entry for link " + l.id);
    auto fit = load.find(l.id);
    double f = fit == load.end() ? 0.0 : fit->second;
    gap += wit->second * (f + sit->second - l.capacity);
  }
  return gap;
}

SolveResult solve_first_weights(const Topology& topo, const DemandMatrix& dm,
                                const UtilitySpec& spec,
                                const SolverConfig& config) {
  const auto& links = topo.links();
  const int nl = static_cast<int>(links.size());
  const double beta = spec.beta;

  std::vector<double> q(nl), cap(nl);
  for (int i = 0; i < nl; ++i) {
    q[i] = spec.q_for(links[i]);
    cap[i] = links[i].capacity;
    if (!std::isfinite(q[i]) || q[i] <= 0.0)
      throw StructuralError("utility spec: q must be finite and > 0 on link " +
                            links[i].id);
  }

  // Destination list and per-destination sources, in node order.
  struct Dest {
    int node;
    NodeId name;
    std::vector<std::pair<int, double>> sources;
  };
  std::vector<Dest> dests;
  for (const NodeId& t : dm.destinations()) {
    Dest d;
    d.node = topo.node_index(t);
    d.name = t;
    for (const auto& [src, dem] : dm.toward(t))
      d.sources.emplace_back(topo.node_index(src), dem);
    dests.push_back(std::move(d));
  }

  SolveResult result;

  auto emit = [&](const std::vector<double>& v) {
    WeightVector out;
    for (int i = 0; i < nl; ++i) out[links[i].id] = v[i];
    return out;
  };

  const IndexedGraph graph = index_graph(topo);

  if (beta == 0.0) {
    // Linear utility: the optimal weights are the q (delay) values
    // themselves; one routing pass gives the flow. The subgradient loop has
    // no interior fixed point here, so the closed form is used instead.
    std::vector<double> w = q;
    std::vector<double> f(nl, 0.0), dist;
    std::vector<int> chosen;
    double route_cost = 0.0;
    for (const Dest& d : dests) {
      dijkstra_to(topo, graph, w, d.node, dist, chosen);
      route_cost += distribute_demand(topo, graph, w, chosen, d.node,
                                      d.sources, d.name, f);
    }
    for (int i = 0; i < nl; ++i) {
      if (f[i] > cap[i] * (1.0 + 1e-9))
        throw InfeasibleError("min-hop routing overloads link " + links[i].id);
    }
    std::vector<double> s(nl);
    double gap = 0.0, dual = 0.0;
    for (int i = 0; i < nl; ++i) {
      s[i] = cap[i] - f[i];
      gap += w[i] * (f[i] + s[i] - cap[i]);
      dual += utility(spec, q[i], s[i]) - w[i] * s[i] + w[i] * cap[i];
    }
    dual -= route_cost;
    result.first_weights = emit(w);
    result.spare = emit(s);
    result.target_load = emit(f);
    result.trace.push_back({0, gap, dual});
    result.converged = true;
    result.iterations = 0;
    return result;
  }

  // Initial weights: inverse capacity unless given.
  std::vector<double> w(nl);
  if (config.initial_weights) {
    w = indexed_weights(topo, *config.initial_weights);
  } else {
    for (int i = 0; i < nl; ++i) w[i] = 1.0 / cap[i];
  }
  double gamma0 = config.gamma ? *config.gamma : 1.0 / topo.max_capacity();
  if (!std::isfinite(gamma0) || gamma0 <= 0.0)
    throw StructuralError("solver: gamma must be finite and > 0");
  if (config.max_iters < 1)
    throw StructuralError("solver: max_iters must be >= 1");

  std::vector<double> s(nl), f(nl), dist;
  std::vector<int> chosen;
  std::vector<double> s_sum(nl, 0.0), f_sum(nl, 0.0), f_last(nl, 0.0);
  long window_count = 0;
  const int burn_start = config.max_iters / 2;

  // Adaptive mode: exponentiated subgradient, w <- w * exp(-rate * g / c),
  // with a per-link rate that grows while the subgradient keeps its sign and
  // shrinks when it flips. Optimal weights scale like (c/s)^beta, so the
  // distance to cover is bounded in log space even when it is astronomic in
  // the weights; keeping the magnitude in the exponent (not just the sign)
  // preserves the averaged stationarity avg(c - f - s) = 0 at a routing tie,
  // where sign-only steps deadlock in a symmetric alternation. The rate
  // floor scales as 1/beta: an orbit of that log amplitude leaves a relative
  // error of about amplitude/beta in the recovered spares.
  // The rate floor is phase dependent: a loose floor while far out keeps the
  // drift through a routing tie fast (the tie flips the sign every other
  // iteration, pinning the rate at its floor), a tight one once the
  // averaging window opens keeps the orbit small where it matters.
  std::vector<double> rate(nl, 0.5);
  std::vector<int> prev_sign(nl, 0);
  const double rate_max = 2.0;
  const double rate_min_late = std::min(0.5, 2.0 / std::max(beta, 1.0));
  if (config.schedule == StepSchedule::adaptive)
    for (int i = 0; i < nl; ++i) w[i] = std::max(w[i], 1e-60);

  bool gap_rule_fired = false;
  int k = 0;
  for (k = 1; k <= config.max_iters; ++k) {
    for (int i = 0; i < nl; ++i)
      s[i] = link_subproblem_fast(beta, q[i], w[i], cap[i]);

    std::fill(f.begin(), f.end(), 0.0);
    double route_cost = 0.0;
    for (const Dest& d : dests) {
      dijkstra_to(topo, graph, w, d.node, dist, chosen);
      route_cost += distribute_demand(topo, graph, w, chosen, d.node,
                                      d.sources, d.name, f);
    }

    double gap = 0.0, dual = 0.0;
    for (int i = 0; i < nl; ++i) {
      gap += w[i] * (f[i] + s[i] - cap[i]);
      dual += utility(spec, q[i], s[i]) - w[i] * s[i] + w[i] * cap[i];
    }
    dual -= route_cost;
    int stride = std::max(1, config.trace_stride);
    if (k % stride == 0 || k == config.max_iters)
      result.trace.push_back({k, gap, dual});

    if (std::fabs(gap) < config.gap_tol) {
      gap_rule_fired = true;
      f_last = f;
      break;
    }
    if (k > burn_start) {
      for (int i = 0; i < nl; ++i) {
        s_sum[i] += s[i];
        f_sum[i] += f[i];
      }
      ++window_count;
    }
    f_last = f;

    // Update w <- (w - gamma_k * (c - f - s))_+
    switch (config.schedule) {
      case StepSchedule::constant: {
        for (int i = 0; i < nl; ++i)
          w[i] = std::max(0.0, w[i] - gamma0 * (cap[i] - f[i] - s[i]));
        break;
      }
      case StepSchedule::diminishing: {
        double gk = gamma0 / k;
        for (int i = 0; i < nl; ++i)
          w[i] = std::max(0.0, w[i] - gk * (cap[i] - f[i] - s[i]));
        break;
      }
      case StepSchedule::adaptive: {
        double rate_min = k <= burn_start ? 0.5 : rate_min_late;
        for (int i = 0; i < nl; ++i) {
          double g = (cap[i] - f[i] - s[i]) / cap[i];
          int sign = (g > 0.0) - (g < 0.0);
          if (sign != 0) {
            if (prev_sign[i] == sign)
              rate[i] = std::min(rate[i] * 1.5, rate_max);
            else if (prev_sign[i] == -sign)
              rate[i] = std::max(rate[i] * 0.6, rate_min);
            w[i] = std::clamp(w[i] * std::exp(-rate[i] * g), 1e-60, 1e60);
            prev_sign[i] = sign;
          }
        }
        break;
      }
    }
  }
  result.iterations = std::min(k, config.max_iters);

  // Recover s*: window average when available, else the final iterate.
  std::vector<double> s_star(nl), f_bar(nl, 0.0);
  if (window_count > 0) {
    for (int i = 0; i < nl; ++i) {
      s_star[i] = s_sum[i] / static_cast<double>(window_count);
      f_bar[i] = f_sum[i] / static_cast<double>(window_count);
    }
  } else {
    for (int i = 0; i < nl; ++i)
      s_star[i] = link_subproblem_fast(beta, q[i], w[i], cap[i]);
    f_bar = f_last;
  }

  bool saturated = false;
  std::vector<double> w_star(nl), f_star(nl);
  for (int i = 0; i < nl; ++i) {
    double floor_i = 1e-12 * cap[i];
    if (s_star[i] < floor_i) {
      saturated = true;
      s_star[i] = floor_i;
    }
    w_star[i] = q[i] / std::pow(s_star[i], beta);
  }
  if (saturated) {
    // The inverse map is unreliable at the floor; fall back to the last
    // routing iterate and say so.
    result.primal_from_routing = true;
    result.warning =
        "spare capacity at the numeric floor on some links; target loads "
        "taken from the last routing iterate";
    f_star = f_last;
    for (int i = 0; i < nl; ++i) {
      if (f_star[i] > cap[i] * (1.0 + 1e-6))
        throw InfeasibleError("demands appear infeasible: link " +
                              links[i].id + " would need " +
                              std::to_string(f_star[i]) + " of capacity " +
                              std::to_string(cap[i]));
    }
  } else {
    for (int i = 0; i < nl; ++i) f_star[i] = cap[i] - s_star[i];
  }

  // Converged: the per-iterate gap rule, or (full budget) small
  // complementarity residuals at the averaged recovery point. The raw
  // per-iterate gap of a constant-step run orbits without settling even when
  // the average is accurate, so the averaged point is the meaningful test
  // there. The residual is normalized per link; a single astronomic weight
  // (large beta) must not be allowed to swamp the scale of every other link.
  double worst_rel = 0.0;
  for (int i = 0; i < nl; ++i) {
    double resid = std::fabs(w_star[i] * (f_bar[i] + s_star[i] - cap[i]));
    worst_rel = std::max(worst_rel, resid / (1.0 + w_star[i] * cap[i]));
  }
  result.converged =
      gap_rule_fired ||
      (window_count > 0 && worst_rel <= 1e-2 && !saturated);

  result.first_weights = emit(w_star);
  result.spare = emit(s_star);
  result.target_load = emit(f_star);
  return result;
}

double KktReport::worst() const {
  return std::max({primal_residual, gradient_residual, potential_residual});
}

KktReport verify_kkt(const Topology& topo, const DemandMatrix& dm,
                     const UtilitySpec& spec, const WeightVector& w,
                     const std::map<LinkId, double>& spare,
                     const FlowAssignment& fa) {
  KktReport report;
  std::map<LinkId, double> agg = fa.aggregate();
  for (const Link& l : topo.links()) {
    auto sit = spare.find(l.id);
    auto wit = w.find(l.id);
    if (sit == spare.end() || wit == w.end())
      throw StructuralError("verify_kkt: missing entry for link " + l.id);
    double s = sit->second;
    double wi = wit->second;
    auto fit = agg.find(l.id);
    double f = fit == agg.end() ? 0.0 : fit->second;
    report.primal_residual =
        std::max(report.primal_residual, std::fabs(l.capacity - f - s));
    double v = marginal_utility(spec, spec.q_for(l), s);
    if (s > 0.0)
      report.gradient_residual =
          std::max(report.gradient_residual, std::fabs(v - wi));
    else
      report.gradient_residual =
          std::max(report.gradient_residual, std::max(0.0, v - wi));
  }
  // Potentials: per destination, shortest distances under w.
  for (const NodeId& t : dm.destinations()) {
    std::map<NodeId, double> dist = distances_to(topo, w, t);
    auto flows_it = fa.per_dest().find(t);
    for (const Link& l : topo.links()) {
      double di = dist[l.src];
      double dj = dist[l.dst];
      if (di == kInf || dj == kInf) continue;
      double slack = di - w.at(l.id) - dj;
      double ft = 0.0;
      if (flows_it != fa.per_dest().end()) {
        auto it = flows_it->second.find(l.id);
        if (it != flows_it->second.end()) ft = it->second;
      }
      if (ft > 1e-12)
        report.potential_residual =
            std::max(report.potential_residual, std::fabs(slack));
      else
        report.potential_residual =
            std::max(report.potential_residual, std::max(0.0, slack));
    }
  }
  return report;
}

double balance_sum(const Topology& topo, const UtilitySpec& spec,
                   const FlowAssignment& fa_star, const FlowAssignment& fa) {
  std::map<LinkId, double> star = fa_star.aggregate();
  std::map<LinkId, double> cand = fa.aggregate();
  double sum = 0.0;
  for (const Link& l : topo.links()) {
    auto sit = star.find(l.id);
    double fs = sit == star.end() ? 0.0 : sit->second;
    auto cit = cand.find(l.id);
    double fc = cit == cand.end() ? 0.0 : cit->second;
    double s_star = std::max(l.capacity - fs, 1e-12 * l.capacity);
    double s = l.capacity - fc;
    sum += spec.q_for(l) * (s - s_star) / std::pow(s_star, spec.beta);
  }
  return sum;
}

BalanceReport verify_balance(const Topology& topo, const DemandMatrix& dm,
                             const UtilitySpec& spec,
                             const FlowAssignment& fa_star, int samples,
                             std::uint64_t seed, double tol) {
  BalanceReport report;
  report.worst_sum = -kInf;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> wdist(0.1, 10.0);
  std::exponential_distribution<double> edist(1.0);
  const int mixture_size = 4;
  int attempts_left = samples * 50;

  std::vector<NodeId> dests = dm.destinations();
  while (report.samples_checked < samples) {
    if (--attempts_left < 0)
      throw SamplingError(
          "verify_balance: could not draw enough feasible flow samples");
    // Vertex flows under random weights, convexly combined.
    std::vector<FlowAssignment> vertices(mixture_size);
    std::vector<double> lambda(mixture_size);
    double lsum = 0.0;
    for (int m = 0; m < mixture_size; ++m) {
      WeightVector w;
      for (const Link& l : topo.links()) w[l.id] = wdist(rng);
      for (const NodeId& t : dests) {
        auto flows = route_to_destination(topo, w, t, dm.toward(t));
        for (const auto& [link, fl] : flows) vertices[m].add(t, link, fl);
      }
      lambda[m] = edist(rng);
      lsum += lambda[m];
    }
    FlowAssignment mix;
    for (int m = 0; m < mixture_size; ++m) {
      double lm = lambda[m] / lsum;
      for (const auto& [t, per_link] : vertices[m].per_dest())
        for (const auto& [link, fl] : per_link) mix.add(t, link, lm * fl);
    }
    // Reject mixtures outside capacity.
    bool ok = true;
    std::map<LinkId, double> agg = mix.aggregate();
    for (const Link& l : topo.links()) {
      auto it = agg.find(l.id);
      if (it != agg.end() && it->second > l.capacity) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    double sum = balance_sum(topo, spec, fa_star, mix);
    report.worst_sum = std::max(report.worst_sum, sum);
    if (sum > tol) report.passed = false;
    ++report.samples_checked;
  }
  return report;
}

WeightVector round_weights(const WeightVector& w,
                           const std::map<LinkId, double>& spare) {
  if (w.empty()) return {};
  double max_s = 0.0;
  for (const auto& [link, s] : spare) {
    (void)link;
    max_s = std::max(max_s, s);
  }
  if (max_s <= 0.0)
    throw StructuralError("round_weights: no positive spare capacity");
  WeightVector out;
  for (const auto& [link, wi] : w)
    out[link] = std::max(1.0, std::round(wi * max_s));
  return out;
}

}  // namespace spef
