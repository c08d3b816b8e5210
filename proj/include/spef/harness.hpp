#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spef/baseline_metrics.hpp"
#include "spef/net_model.hpp"
#include "spef/objectives.hpp"
#include "spef/spef_split.hpp"
#include "spef/weight_solver.hpp"

namespace spef {

// The four-node two-demand instance used throughout the tests: a direct link
// 1->3 in parallel with the two-hop path 1->2->3, plus a stub 3->4.
Topology builtin_triangle();
DemandMatrix builtin_triangle_demands();

// A seven-node demo instance with a few route choices per pair. The geometry
// is a reconstruction, not ground truth; nothing is asserted against it.
Topology builtin_toy();
DemandMatrix builtin_toy_demands();

// Gravity model: d(s,t) proportional to out_mass[s] * in_mass[t] for s != t,
// rescaled so the entries sum to total.
DemandMatrix gravity_demands(const std::map<NodeId, double>& out_mass,
                             const std::map<NodeId, double>& in_mass,
                             double total);

DemandMatrix scale_demands(const DemandMatrix& dm, double k);

struct DemandSpec {
  enum class Kind { triangle, toy, file, gravity };
  Kind kind = Kind::triangle;
  std::string path;  // file
  std::map<NodeId, double> out_mass, in_mass;  // gravity
  double total = 0.0;                          // gravity
};

struct ExperimentConfig {
  // Empty with a builtin demand kind means the matching builtin topology.
  std::string topology_path;
  DemandSpec demands;
  UtilitySpec utility;
  SolverConfig first;
  NemConfig second;
  // ECMP tie tolerance for the pipeline DAG. When set it is an absolute
  // slack (build_ecmp_dag, e.g. 1.0 for integer weights). When unset the
  // pipeline uses the multiplicative rule with 10% slack
  // (build_ecmp_dag_relative): the averaged first weights carry relative
  // error, and an exact tie at the optimum must stay a tie. Links swept in
  // by the slack get a near-zero target load, and the entropy stage drives
  // their split mass to zero.
  std::optional<double> dag_tol;
  std::vector<double> multipliers{1.0};
  std::string output_dir = "out";
  std::uint64_t seed = 1;
};

// Fields present in the JSON replace those in base; absent fields keep it.
// This is what lets a config file override command-line flags.
ExperimentConfig experiment_config_from_json_text(const std::string& text,
                                                  ExperimentConfig base = {});
ExperimentConfig load_experiment_config(const std::string& path,
                                        ExperimentConfig base = {});

struct SpefRun {
  SolveResult first;
  WeightVector weights;  // the weights the DAG was built from
  double dag_tol = 0.0;
  bool dag_relative = false;
  EcmpDag dag;
  SecondWeights second;
  ForwardingTable tables;
  FlowAssignment flows;
  MetricsReport metrics;
};

// The full SPEF pipeline on in-memory inputs. When fixed_weights is given
// the first-weight solve is skipped and fixed_targets must supply the link
// loads the split should realize.
SpefRun run_spef(const Topology& topo, const DemandMatrix& dm,
                 const UtilitySpec& utility, const SolverConfig& first_cfg,
                 const NemConfig& second_cfg,
                 const std::optional<WeightVector>& fixed_weights = {},
                 const std::optional<std::map<LinkId, double>>& fixed_targets =
                     {},
                 std::optional<double> dag_tol = {});

struct PointResult {
  double multiplier = 1.0;
  std::string dir;  // where this point's artifacts were written
  SpefRun spef;
  BaselineResult ospf;
  MetricsReport ospf_metrics;
};

struct RunOutcome {
  std::vector<PointResult> points;
  bool all_converged = true;
  std::string summary_path;
};

// Resolves the config's topology and demands, runs SPEF and the OSPF/InvCap
// baseline at every multiplier (in parallel when there are several), and
// writes per-point artifacts plus a top-level summary.json.
RunOutcome run_pipeline(const ExperimentConfig& cfg);

// Artifact writer for one pipeline point; exposed for the CLI subcommands
// that run a single stage.
void write_point_artifacts(const std::string& dir, const SpefRun& spef,
                           const MetricsReport& ospf_metrics);

// weights.json for a first-weight solve alone (no split stage yet).
std::string first_weights_json_text(const SolveResult& r);

// Round-trip for weights.json: the fields the split stage needs back.
struct StoredWeights {
  WeightVector first;
  std::map<LinkId, double> target_load;
};
StoredWeights stored_weights_from_json_text(const std::string& text);

std::string first_trace_csv(const std::vector<TracePoint>& trace);
std::string second_trace_csv(const std::vector<NemTracePoint>& trace);

}  // namespace spef
