#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "spef/baseline_metrics.hpp"
#include "spef/harness.hpp"
#include "support/oracles.hpp"

using namespace spef;

namespace {

FlowAssignment triangle_optimal_flows() {
  FlowAssignment fa;
  fa.set("3", "1-3", 2.0 / 3.0);
  fa.set("3", "1-2", 1.0 / 3.0);
  fa.set("3", "2-3", 1.0 / 3.0);
  fa.set("4", "3-4", 0.9);
  return fa;
}

// m diamonds in series; every diamond doubles the number of equal-cost
// two-hop routes, so src -> sink has 2^m shortest paths under unit weights.
Topology diamond_chain(int m) {
  std::vector<NodeId> nodes;
  std::vector<Link> links;
  auto name = [](int i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "n%02d", i);
    return std::string(buf);
  };
  for (int i = 0; i <= m; ++i) nodes.push_back(name(i));
  for (int i = 0; i < m; ++i) {
    for (char side : {'a', 'b'}) {
      NodeId mid = name(i) + side;
      nodes.push_back(mid);
      links.push_back({name(i) + "-" + mid, name(i), mid, 1.0, 1.0});
      links.push_back({mid + "-" + name(i + 1), mid, name(i + 1), 1.0, 1.0});
    }
  }
  return Topology(nodes, links);
}

}  // namespace

TEST_CASE("invcap weights are one over capacity") {
  Topology t({"a", "b"}, {{"a-b", "a", "b", 4.0, 1.0},
                          {"b-a", "b", "a", 0.5, 1.0}});
  WeightVector w = invcap_weights(t);
  CHECK(w.at("a-b") == 0.25);
  CHECK(w.at("b-a") == 2.0);
}

TEST_CASE("invcap baseline routes the builtin instance onto the short path") {
  Topology t = builtin_triangle();
  BaselineResult r = ospf_invcap(t, builtin_triangle_demands());
  CHECK(r.weights.at("1-3") == 1.0);
  // Unit weights make the direct link strictly shorter; no split.
  auto agg = r.flows.aggregate();
  CHECK(agg.at("1-3") == 1.0);
  CHECK(agg.at("3-4") == 0.9);
  CHECK(agg.count("1-2") == 0);
  CHECK(agg.count("2-3") == 0);
  const auto& succ = r.dag.toward("3").successors;
  CHECK(succ.at("1") == std::vector<LinkId>{"1-3"});
}

TEST_CASE("even split puts exactly 1/m on each next hop and conserves flow") {
  Topology t({"s", "p", "q", "r", "t"}, {{"s-p", "s", "p", 9.0, 1.0},
                                         {"s-q", "s", "q", 9.0, 1.0},
                                         {"s-r", "s", "r", 9.0, 1.0},
                                         {"p-t", "p", "t", 9.0, 1.0},
                                         {"q-t", "q", "t", 9.0, 1.0},
                                         {"r-t", "r", "t", 9.0, 1.0}});
  DemandMatrix dm;
  dm.set("s", "t", 1.0);
  WeightVector unit;
  for (const Link& l : t.links()) unit[l.id] = 1.0;
  EcmpDag dag = build_ecmp_dag(t, unit, {"t"});
  FlowAssignment fa = even_split_distribution(t, dm, dag);
  auto agg = fa.aggregate();
  CHECK(agg.at("s-p") == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(agg.at("s-q") == agg.at("s-p"));
  // The outgoing shares sum to the inflow exactly, not just approximately.
  CHECK(agg.at("s-p") + agg.at("s-q") + agg.at("s-r") == 1.0);
  FlowReport rep = validate_flow(t, dm, fa, 1e-15);
  CHECK(rep.feasible);
  CHECK(rep.max_conservation_residual == 0.0);
}

TEST_CASE("count_paths_from agrees with enumeration on layered graphs") {
  for (std::uint64_t seed : {71u, 72u, 73u, 74u}) {
    test::LayeredCase c = test::random_layered_case(seed);
    const NodeId dest = c.demands.destinations().front();
    const EcmpDag::PerDest& dag = c.dag.toward(dest);
    for (const NodeId& n : c.topo.nodes()) {
      PathCount pc = count_paths_from(c.topo, dag, n);
      CHECK_FALSE(pc.saturated);
      if (n == dest) {
        CHECK(pc.count == 1);
        continue;
      }
      auto paths = test::enumerate_dag_paths(c.topo, dag, n, dest);
      if (dag.dist.at(n) == std::numeric_limits<double>::infinity())
        CHECK(pc.count == 0);
      else
        CHECK(pc.count == paths.size());
    }
  }
}

TEST_CASE("count_paths_from doubles per diamond and saturates at 2^32") {
  WeightVector unit;
  Topology two = diamond_chain(2);
  for (const Link& l : two.links()) unit[l.id] = 1.0;
  EcmpDag dag = build_ecmp_dag(two, unit, {"n02"});
  PathCount pc = count_paths_from(two, dag.toward("n02"), "n00");
  CHECK(pc.count == 4);
  CHECK_FALSE(pc.saturated);

  Topology deep = diamond_chain(33);
  unit.clear();
  for (const Link& l : deep.links()) unit[l.id] = 1.0;
  EcmpDag deep_dag = build_ecmp_dag(deep, unit, {"n33"});
  PathCount deep_pc = count_paths_from(deep, deep_dag.toward("n33"), "n00");
  CHECK(deep_pc.count == (std::uint64_t{1} << 32));
  CHECK(deep_pc.saturated);

  DemandMatrix dm;
  dm.set("n00", "n33", 1.0);
  EcmpHistogram h = count_ecmp_paths(deep, deep_dag, dm);
  CHECK(h.any_saturated);
  CHECK(h.pairs_by_path_count.at(std::uint64_t{1} << 32) == 1);
}

TEST_CASE("ECMP histogram over the demanded pairs of the builtin instance") {
  Topology t = builtin_triangle();
  WeightVector w{{"1-3", 3.0}, {"3-4", 10.0}, {"1-2", 1.5}, {"2-3", 1.5}};
  EcmpDag dag = build_ecmp_dag(t, w, {"3", "4"});
  EcmpHistogram h = count_ecmp_paths(t, dag, builtin_triangle_demands());
  CHECK_FALSE(h.any_saturated);
  CHECK(h.pairs_by_path_count.at(2) == 1);  // 1 -> 3 has the tie
  CHECK(h.pairs_by_path_count.at(1) == 1);  // 3 -> 4 is a stub
}

TEST_CASE("metrics at the reference optimum of the builtin instance") {
  Topology t = builtin_triangle();
  DemandMatrix dm = builtin_triangle_demands();
  WeightVector w{{"1-3", 3.0}, {"3-4", 10.0}, {"1-2", 1.5}, {"2-3", 1.5}};
  EcmpDag dag = build_ecmp_dag(t, w, {"3", "4"});
  MetricsReport m = compute_metrics(t, dm, triangle_optimal_flows(), &dag);
  CHECK(m.mlu == doctest::Approx(0.9).epsilon(1e-12));
  double expect = std::log(1.0 / 3.0) + std::log(0.1) +
                  2.0 * std::log(2.0 / 3.0);
  REQUIRE(m.normalized_utility.has_value());
  CHECK(*m.normalized_utility == doctest::Approx(expect).epsilon(1e-12));
  CHECK(m.network_load == doctest::Approx(1.9 / 4.0).epsilon(1e-12));
  REQUIRE(m.sorted_utilizations.size() == 4);
  CHECK(m.sorted_utilizations[0] == doctest::Approx(0.9));
  CHECK(m.sorted_utilizations[1] == doctest::Approx(2.0 / 3.0));
  CHECK(m.sorted_utilizations[3] == doctest::Approx(1.0 / 3.0));
  CHECK(std::is_sorted(m.sorted_utilizations.rbegin(),
                       m.sorted_utilizations.rend()));
  CHECK(m.ecmp_histogram.pairs_by_path_count.size() == 2);
}

TEST_CASE("metrics drop the utility once a link saturates") {
  Topology t = builtin_triangle();
  DemandMatrix dm = builtin_triangle_demands();
  BaselineResult base = ospf_invcap(t, dm);
  MetricsReport m = compute_metrics(t, dm, base.flows, &base.dag);
  CHECK(m.mlu == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(m.normalized_utility.has_value());
  nlohmann::json j = nlohmann::json::parse(m.to_json_text());
  CHECK(j.at("normalized_utility").is_null());
}

TEST_CASE("metrics of an idle network are all zero") {
  Topology t = builtin_triangle();
  MetricsReport m = compute_metrics(t, DemandMatrix{}, FlowAssignment{});
  CHECK(m.mlu == 0.0);
  REQUIRE(m.normalized_utility.has_value());
  CHECK(*m.normalized_utility == 0.0);
  CHECK(m.network_load == 0.0);
  CHECK(m.ecmp_histogram.pairs_by_path_count.empty());
}

TEST_CASE("metrics JSON carries every key with string histogram buckets") {
  Topology t = builtin_triangle();
  DemandMatrix dm = builtin_triangle_demands();
  WeightVector w{{"1-3", 3.0}, {"3-4", 10.0}, {"1-2", 1.5}, {"2-3", 1.5}};
  EcmpDag dag = build_ecmp_dag(t, w, {"3", "4"});
  MetricsReport m = compute_metrics(t, dm, triangle_optimal_flows(), &dag);
  nlohmann::json j = nlohmann::json::parse(m.to_json_text());
  CHECK(j.at("mlu").get<double>() == doctest::Approx(0.9));
  CHECK(j.at("normalized_utility").is_number());
  CHECK(j.at("network_load").get<double>() == doctest::Approx(0.475));
  CHECK(j.at("sorted_utilizations").size() == 4);
  CHECK(j.at("ecmp_histogram").at("1").get<int>() == 1);
  CHECK(j.at("ecmp_histogram").at("2").get<int>() == 1);
  CHECK(j.at("histogram_saturated").get<bool>() == false);
}

TEST_CASE("utilization CSV ranks links from most to least loaded") {
  Topology t = builtin_triangle();
  DemandMatrix dm = builtin_triangle_demands();
  MetricsReport m = compute_metrics(t, dm, triangle_optimal_flows());
  std::string csv = sorted_utilization_csv(m);
  std::istringstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "rank,utilization");
  REQUIRE(std::getline(in, line));
  CHECK(line == "1,0.9");
  int rows = 1;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
}
