#include "support/oracles.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>

namespace spef::test {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void dfs_paths(const Topology& topo, int u, int dest,
               std::vector<char>& on_path, std::vector<LinkId>& stack,
               std::vector<Path>& out, std::size_t cap) {
  if (u == dest) {
    if (out.size() >= cap)
      throw SamplingError("path enumeration exceeded " + std::to_string(cap) +
                          " paths");
    out.push_back({stack});
    return;
  }
  on_path[u] = 1;
  for (int li : topo.out_links(topo.nodes()[u])) {
    const Link& l = topo.links()[li];
    int v = topo.node_index(l.dst);
    if (on_path[v]) continue;
    stack.push_back(l.id);
    dfs_paths(topo, v, dest, on_path, stack, out, cap);
    stack.pop_back();
  }
  on_path[u] = 0;
}

void dfs_dag_paths(const Topology& topo, const EcmpDag::PerDest& dag,
                   const NodeId& u, const NodeId& dest,
                   std::vector<LinkId>& stack, std::vector<Path>& out,
                   std::size_t cap) {
  if (u == dest) {
    if (out.size() >= cap)
      throw SamplingError("DAG path enumeration exceeded " +
                          std::to_string(cap) + " paths");
    out.push_back({stack});
    return;
  }
  auto sit = dag.successors.find(u);
  if (sit == dag.successors.end()) return;  // dead end, no path this way
  for (const LinkId& li : sit->second) {
    stack.push_back(li);
    dfs_dag_paths(topo, dag, topo.link(li).dst, dest, stack, out, cap);
    stack.pop_back();
  }
}

}  // namespace

double log_sum_exp(const std::vector<double>& xs) {
  double m = -kInf;
  for (double x : xs) m = std::max(m, x);
  if (m == -kInf) return -kInf;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

std::vector<Path> enumerate_paths(const Topology& topo, const NodeId& src,
                                  const NodeId& dest, std::size_t cap) {
  std::vector<Path> out;
  std::vector<char> on_path(topo.nodes().size(), 0);
  std::vector<LinkId> stack;
  dfs_paths(topo, topo.node_index(src), topo.node_index(dest), on_path, stack,
            out, cap);
  return out;
}

std::vector<Path> enumerate_dag_paths(const Topology& topo,
                                      const EcmpDag::PerDest& dag,
                                      const NodeId& src, const NodeId& dest,
                                      std::size_t cap) {
  std::vector<Path> out;
  std::vector<LinkId> stack;
  dfs_dag_paths(topo, dag, src, dest, stack, out, cap);
  return out;
}

double path_length(const Path& p, const WeightVector& w) {
  double len = 0.0;
  for (const LinkId& l : p.links) len += w.at(l);
  return len;
}

std::map<NodeId, double> bellman_ford_to(const Topology& topo,
                                         const WeightVector& w,
                                         const NodeId& dest) {
  std::map<NodeId, double> dist;
  for (const NodeId& n : topo.nodes()) dist[n] = kInf;
  dist[dest] = 0.0;
  for (size_t round = 0; round + 1 < topo.nodes().size(); ++round) {
    bool changed = false;
    for (const Link& l : topo.links()) {
      double via = w.at(l.id) + dist[l.dst];
      if (via < dist[l.src]) {
        dist[l.src] = via;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return dist;
}

double fd_derivative(const std::function<double(double)>& f, double x,
                     double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

double golden_max(const std::function<double(double)>& f, double lo, double hi,
                  double tol) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 300 && (b - a) > tol * (1.0 + std::fabs(a) + std::fabs(b));
       ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2.0;
}

std::vector<double> project_simplex(std::vector<double> x, double total) {
  std::vector<double> u = x;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  int rho = 0;
  for (size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    double t = (cum - total) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) {
      rho = static_cast<int>(j + 1);
      tau = t;
    }
  }
  (void)rho;
  for (double& xi : x) xi = std::max(0.0, xi - tau);
  return x;
}

double total_utility(const Topology& topo, const UtilitySpec& spec,
                     const std::map<LinkId, double>& load) {
  double u = 0.0;
  for (const Link& l : topo.links()) {
    auto it = load.find(l.id);
    double f = it == load.end() ? 0.0 : it->second;
    u += utility(spec, spec.q_for(l), l.capacity - f);
  }
  return u;
}

PathFlowSolution solve_path_flows(const Topology& topo, const DemandMatrix& dm,
                                  const UtilitySpec& spec, int max_iters) {
  struct Commodity {
    double demand;
    std::vector<std::vector<int>> paths;  // link indices per path
  };
  std::vector<Commodity> comms;
  for (const auto& [pair, d] : dm.entries()) {
    Commodity c;
    c.demand = d;
    for (const Path& p : enumerate_paths(topo, pair.first, pair.second)) {
      std::vector<int> idx;
      for (const LinkId& l : p.links) idx.push_back(topo.link_index(l));
      c.paths.push_back(std::move(idx));
    }
    if (c.paths.empty())
      throw RoutingError("no path for demand " + pair.first + "->" +
                         pair.second);
    comms.push_back(std::move(c));
  }

  const int nl = static_cast<int>(topo.links().size());
  std::vector<double> cap(nl), q(nl);
  for (int i = 0; i < nl; ++i) {
    cap[i] = topo.links()[i].capacity;
    q[i] = spec.q_for(topo.links()[i]);
  }

  auto loads_of = [&](const std::vector<std::vector<double>>& x) {
    std::vector<double> f(nl, 0.0);
    for (size_t r = 0; r < comms.size(); ++r)
      for (size_t p = 0; p < comms[r].paths.size(); ++p)
        for (int li : comms[r].paths[p]) f[li] += x[r][p];
    return f;
  };
  auto value_of = [&](const std::vector<double>& f) {
    double u = 0.0;
    for (int i = 0; i < nl; ++i) u += utility(spec, q[i], cap[i] - f[i]);
    return u;
  };

  // Even split start; fall back to everything on the fewest-hop path when
  // the even split is over capacity somewhere.
  std::vector<std::vector<double>> x(comms.size());
  for (size_t r = 0; r < comms.size(); ++r)
    x[r].assign(comms[r].paths.size(),
                comms[r].demand / static_cast<double>(comms[r].paths.size()));
  {
    std::vector<double> f = loads_of(x);
    bool over = false;
    for (int i = 0; i < nl; ++i) over = over || f[i] > cap[i];
    if (over) {
      for (size_t r = 0; r < comms.size(); ++r) {
        size_t best = 0;
        for (size_t p = 1; p < comms[r].paths.size(); ++p)
          if (comms[r].paths[p].size() < comms[r].paths[best].size()) best = p;
        std::fill(x[r].begin(), x[r].end(), 0.0);
        x[r][best] = comms[r].demand;
      }
      f = loads_of(x);
      double u0 = value_of(f);
      for (int i = 0; i < nl; ++i)
        if (f[i] > cap[i] || (spec.beta >= 1.0 && !(u0 > -kInf)))
          throw InfeasibleError(
              "path-flow oracle: no feasible interior start");
    }
  }

  PathFlowSolution sol;
  std::vector<double> f = loads_of(x);
  double value = value_of(f);
  double step = 1.0;
  int plateau = 0;
  int k = 0;
  for (k = 1; k <= max_iters; ++k) {
    // Marginal cost of each path; minus the gradient of the utility.
    std::vector<double> vprime(nl);
    for (int i = 0; i < nl; ++i)
      vprime[i] = marginal_utility(spec, q[i], cap[i] - f[i]);
    std::vector<std::vector<double>> grad(comms.size());
    for (size_t r = 0; r < comms.size(); ++r) {
      grad[r].resize(comms[r].paths.size());
      for (size_t p = 0; p < comms[r].paths.size(); ++p) {
        double gsum = 0.0;
        for (int li : comms[r].paths[p]) gsum += vprime[li];
        grad[r][p] = -gsum;
      }
    }
    // Backtracking ascent step, kept monotone.
    step *= 2.0;
    bool moved = false;
    for (int half = 0; half < 70; ++half) {
      std::vector<std::vector<double>> cand(comms.size());
      for (size_t r = 0; r < comms.size(); ++r) {
        std::vector<double> y = x[r];
        for (size_t p = 0; p < y.size(); ++p) y[p] += step * grad[r][p];
        cand[r] = project_simplex(std::move(y), comms[r].demand);
      }
      std::vector<double> cf = loads_of(cand);
      bool feasible = true;
      for (int i = 0; i < nl; ++i)
        if (cf[i] > cap[i] + (spec.beta < 1.0 ? 1e-12 : 0.0)) feasible = false;
      double cv = feasible ? value_of(cf) : -kInf;
      if (cv > value - 1e-15 * std::fabs(value) && cv > -kInf) {
        double gain = cv - value;
        x = std::move(cand);
        f = std::move(cf);
        value = cv;
        moved = true;
        plateau = gain <= 1e-12 * (1.0 + std::fabs(value)) ? plateau + 1 : 0;
        break;
      }
      step *= 0.5;
    }
    if (!moved) ++plateau;
    if (plateau >= 25) {
      sol.converged = true;
      break;
    }
  }
  sol.iterations = std::min(k, max_iters);
  sol.utility = value;
  for (int i = 0; i < nl; ++i)
    if (f[i] != 0.0) sol.load[topo.links()[i].id] = f[i];
  return sol;
}

std::vector<double> path_probs_under(const std::vector<Path>& paths,
                                     const WeightVector& v) {
  std::vector<double> neg_len(paths.size());
  for (size_t p = 0; p < paths.size(); ++p)
    neg_len[p] = -path_length(paths[p], v);
  double lz = log_sum_exp(neg_len);
  std::vector<double> out(paths.size());
  for (size_t p = 0; p < paths.size(); ++p) out[p] = std::exp(neg_len[p] - lz);
  return out;
}

EntropyPathSolution entropy_path_distribution(
    const Topology& topo, const DemandMatrix& dm, const EcmpDag& dag,
    const std::map<LinkId, double>& f_target) {
  struct Commodity {
    std::pair<NodeId, NodeId> pair;
    double demand;
    std::vector<std::vector<int>> paths;  // indices into the link list below
  };
  // Dual variables live on the union of links any enumerated path uses.
  std::vector<LinkId> links;
  std::map<LinkId, int> link_idx;
  std::vector<Commodity> comms;
  for (const auto& [pair, d] : dm.entries()) {
    Commodity c;
    c.pair = pair;
    c.demand = d;
    for (const Path& p :
         enumerate_dag_paths(topo, dag.toward(pair.second), pair.first,
                             pair.second)) {
      std::vector<int> idx;
      for (const LinkId& l : p.links) {
        auto [it, fresh] = link_idx.emplace(l, static_cast<int>(links.size()));
        if (fresh) links.push_back(l);
        idx.push_back(it->second);
      }
      c.paths.push_back(std::move(idx));
    }
    if (c.paths.empty())
      throw RoutingError("entropy oracle: no DAG path for " + pair.first +
                         "->" + pair.second);
    comms.push_back(std::move(c));
  }

  const int nl = static_cast<int>(links.size());
  std::vector<double> target(nl, 0.0);
  double max_target = 1e-30;
  for (int i = 0; i < nl; ++i) {
    auto it = f_target.find(links[i]);
    target[i] = it == f_target.end() ? 0.0 : std::max(0.0, it->second);
    max_target = std::max(max_target, target[i]);
  }

  // Dual value and gradient at v; the gradient is target - realized load.
  auto eval = [&](const std::vector<double>& v, std::vector<double>& grad) {
    double g = 0.0;
    grad = target;
    for (const Commodity& c : comms) {
      std::vector<double> neg_len(c.paths.size());
      for (size_t p = 0; p < c.paths.size(); ++p) {
        double len = 0.0;
        for (int li : c.paths[p]) len += v[li];
        neg_len[p] = -len;
      }
      double lz = log_sum_exp(neg_len);
      g += c.demand * lz;
      for (size_t p = 0; p < c.paths.size(); ++p) {
        double prob = std::exp(neg_len[p] - lz);
        for (int li : c.paths[p]) grad[li] -= c.demand * prob;
      }
    }
    for (int i = 0; i < nl; ++i) g += v[i] * target[i];
    return g;
  };

  std::vector<double> v(nl, 0.0), grad;
  double value = eval(v, grad);
  double step = 1.0 / max_target;
  // Tight enough to sit far below any comparison tolerance the tests use,
  // loose enough that line-search descent can still certify it in doubles.
  const double tol = 1e-7 * max_target;
  EntropyPathSolution sol;
  for (int k = 0; k < 200000; ++k) {
    // Stationarity on the nonnegative orthant: gradient zero where v > 0,
    // nonnegative where v = 0.
    double worst = 0.0;
    for (int i = 0; i < nl; ++i)
      worst = std::max(worst, v[i] > 0.0 ? std::fabs(grad[i])
                                         : std::max(0.0, -grad[i]));
    if (worst <= tol) {
      sol.converged = true;
      break;
    }
    step *= 2.0;
    for (int half = 0; half < 80; ++half) {
      std::vector<double> cand(nl);
      for (int i = 0; i < nl; ++i)
        cand[i] = std::max(0.0, v[i] - step * grad[i]);
      std::vector<double> cgrad;
      double cv = eval(cand, cgrad);
      if (cv <= value) {
        v = std::move(cand);
        grad = std::move(cgrad);
        value = cv;
        break;
      }
      step *= 0.5;
    }
  }

  for (int i = 0; i < nl; ++i) sol.v[links[i]] = v[i];
  for (const Commodity& c : comms) {
    std::vector<double> neg_len(c.paths.size());
    for (size_t p = 0; p < c.paths.size(); ++p) {
      double len = 0.0;
      for (int li : c.paths[p]) len += v[li];
      neg_len[p] = -len;
    }
    double lz = log_sum_exp(neg_len);
    std::vector<double> probs(c.paths.size());
    for (size_t p = 0; p < c.paths.size(); ++p)
      probs[p] = std::exp(neg_len[p] - lz);
    sol.path_prob[c.pair] = std::move(probs);
  }
  return sol;
}

RandomInstance random_instance(std::uint64_t seed, int max_nodes,
                               int max_demands) {
  std::mt19937_64 rng(seed);
  int n = std::uniform_int_distribution<int>(4, max_nodes)(rng);
  std::vector<NodeId> nodes;
  for (int i = 0; i < n; ++i) nodes.push_back(std::string(1, 'a' + i));

  // Ring for strong connectivity, then random chords.
  std::vector<std::pair<int, int>> arcs;
  std::map<std::pair<int, int>, bool> have;
  for (int i = 0; i < n; ++i) {
    arcs.push_back({i, (i + 1) % n});
    have[arcs.back()] = true;
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && !have.count({i, j}) && coin(rng) < 0.25) {
        arcs.push_back({i, j});
        have[{i, j}] = true;
      }

  std::uniform_int_distribution<int> node_pick(0, n - 1);
  std::uniform_real_distribution<double> dem_dist(0.3, 1.0);
  int k = std::uniform_int_distribution<int>(1, max_demands)(rng);
  DemandMatrix dm;
  std::map<std::pair<int, int>, bool> used;
  for (int r = 0; r < k; ++r) {
    int s, t;
    do {
      s = node_pick(rng);
      t = node_pick(rng);
    } while (s == t || used.count({s, t}));
    used[{s, t}] = true;
    dm.set(nodes[s], nodes[t], dem_dist(rng));
  }
  double total = dm.total();

  std::uniform_real_distribution<double> cap_dist(1.3, 3.0);
  std::vector<Link> links;
  for (const auto& [i, j] : arcs) {
    Link l;
    l.src = nodes[i];
    l.dst = nodes[j];
    l.id = l.src + "-" + l.dst;
    l.capacity = total * cap_dist(rng);
    links.push_back(std::move(l));
  }
  return {Topology(std::move(nodes), std::move(links)), std::move(dm)};
}

LayeredCase random_layered_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  // Two shapes, both at most 8 nodes: 2 hidden layers of width 2..3, or
  // 3 hidden layers of width 2, plus the single sink.
  std::vector<int> widths;
  if (coin(rng) < 0.5) {
    std::uniform_int_distribution<int> wdist(2, 3);
    widths = {wdist(rng), wdist(rng)};
  } else {
    widths = {2, 2, 2};
  }
  std::vector<std::vector<NodeId>> layers;
  char next = 'a';
  for (int w : widths) {
    std::vector<NodeId> layer;
    for (int i = 0; i < w; ++i) layer.push_back(std::string(1, next++));
    layers.push_back(std::move(layer));
  }
  NodeId sink(1, next);
  layers.push_back({sink});

  std::vector<NodeId> nodes;
  for (const auto& layer : layers)
    nodes.insert(nodes.end(), layer.begin(), layer.end());

  std::vector<Link> links;
  std::map<std::pair<NodeId, NodeId>, bool> have;
  auto add_link = [&](const NodeId& a, const NodeId& b) {
    if (have.count({a, b})) return;
    have[{a, b}] = true;
    links.push_back({a + "-" + b, a, b, 1000.0, 1.0});
  };
  for (size_t i = 0; i + 1 < layers.size(); ++i) {
    for (const NodeId& u : layers[i])
      for (const NodeId& w : layers[i + 1])
        if (coin(rng) < 0.75) add_link(u, w);
    // Patch so every node has a way forward and every next-layer node a way
    // in; otherwise the layer structure (and the DAG) falls apart.
    for (const NodeId& u : layers[i]) {
      bool has_out = false;
      for (const NodeId& w : layers[i + 1]) has_out |= have.count({u, w}) > 0;
      if (!has_out)
        add_link(u, layers[i + 1][std::uniform_int_distribution<size_t>(
                        0, layers[i + 1].size() - 1)(rng)]);
    }
    for (const NodeId& w : layers[i + 1]) {
      bool has_in = false;
      for (const NodeId& u : layers[i]) has_in |= have.count({u, w}) > 0;
      if (!has_in)
        add_link(layers[i][std::uniform_int_distribution<size_t>(
                     0, layers[i].size() - 1)(rng)],
                 w);
    }
  }

  LayeredCase out{Topology(nodes, links), {}, {}, {}, {}};

  std::uniform_real_distribution<double> dem_dist(1.0, 4.0);
  bool any = false;
  for (size_t i = 0; i + 1 < layers.size(); ++i)
    for (const NodeId& u : layers[i])
      if (coin(rng) < 0.55) {
        out.demands.set(u, sink, dem_dist(rng));
        any = true;
      }
  if (!any) out.demands.set(layers[0][0], sink, dem_dist(rng));

  WeightVector unit;
  for (const Link& l : out.topo.links()) unit[l.id] = 1.0;
  out.dag = build_ecmp_dag(out.topo, unit, {sink}, 1e-9);

  std::uniform_real_distribution<double> v_dist(0.1, 2.0);
  for (const Link& l : out.topo.links())
    out.v_true[l.id] = coin(rng) < 0.3 ? 0.0 : v_dist(rng);

  out.target =
      traffic_distribution(out.topo, out.demands, out.dag, out.v_true)
          .aggregate();
  // Aggregation drops zero-flow links, but the second-weight solver wants a
  // target for every DAG successor link; the ones no demand touches are 0.
  for (const auto& [node, succ] : out.dag.toward(sink).successors) {
    (void)node;
    for (const LinkId& l : succ) out.target.emplace(l, 0.0);
  }
  return out;
}

std::string make_temp_dir(const std::string& hint) {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() /
             ("spef_" + hint + "_" + std::to_string(rd()) + "_" +
              std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace spef::test
