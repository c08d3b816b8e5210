#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "spef/baseline_metrics.hpp"
#include "spef/harness.hpp"

namespace fs = std::filesystem;
using namespace spef;

namespace {

struct InputOpts {
  std::string topology_path;
  std::string demands_path;
  std::string builtin;
};

void add_input_flags(CLI::App* cmd, InputOpts& in) {
  cmd->add_option("--topology", in.topology_path, "Topology JSON file");
  cmd->add_option("--demands", in.demands_path, "Demand CSV file");
  cmd->add_option("--builtin", in.builtin,
                  "Builtin instance (triangle or toy) instead of --topology")
      ->check(CLI::IsMember({"triangle", "toy"}));
}

std::pair<Topology, DemandMatrix> resolve_inputs(const InputOpts& in) {
  if (!in.builtin.empty()) {
    Topology topo = in.builtin == "triangle" ? builtin_triangle() : builtin_toy();
    DemandMatrix dm;
    if (!in.demands_path.empty())
      dm = load_demands(in.demands_path, topo);
    else
      dm = in.builtin == "triangle" ? builtin_triangle_demands()
                                : builtin_toy_demands();
    return {std::move(topo), std::move(dm)};
  }
  if (in.topology_path.empty())
    throw StructuralError("need --topology <file> or --builtin <name>");
  Topology topo = load_topology(in.topology_path);
  if (in.demands_path.empty())
    throw StructuralError("need --demands <file> with --topology");
  DemandMatrix dm = load_demands(in.demands_path, topo);
  return {std::move(topo), std::move(dm)};
}

struct UtilityOpts {
  double beta = 1.0;
  std::string q = "unit";
};

void add_utility_flags(CLI::App* cmd, UtilityOpts& u) {
  cmd->add_option("--beta", u.beta, "Load-balance exponent (0 = min hop)");
  cmd->add_option("--q", u.q, "Per-link utility scale source")
      ->check(CLI::IsMember({"unit", "capacity", "delay"}));
}

UtilitySpec make_utility(const UtilityOpts& u) {
  UtilitySpec spec;
  spec.beta = u.beta;
  if (u.q == "unit")
    spec.q_mode = UtilitySpec::QMode::unit;
  else if (u.q == "capacity")
    spec.q_mode = UtilitySpec::QMode::capacity;
  else
    spec.q_mode = UtilitySpec::QMode::delay;
  return spec;
}

struct FirstSolverOpts {
  std::string schedule = "constant";
  double gamma = 0.0;
  int max_iters = 5000;
  double gap_tol = 1e-6;
  int trace_stride = 1;
};

void add_first_solver_flags(CLI::App* cmd, FirstSolverOpts& o) {
  cmd->add_option("--schedule", o.schedule, "Step schedule")
      ->check(CLI::IsMember({"constant", "diminishing", "adaptive"}));
  cmd->add_option("--gamma", o.gamma,
                  "Step size (default 1 / max link capacity)");
  cmd->add_option("--max-iters", o.max_iters, "Iteration budget");
  cmd->add_option("--gap-tol", o.gap_tol, "Duality gap stopping tolerance");
  cmd->add_option("--trace-stride", o.trace_stride,
                  "Keep every nth trace row");
}

SolverConfig make_first_config(const FirstSolverOpts& o) {
  SolverConfig cfg;
  if (o.schedule == "diminishing")
    cfg.schedule = StepSchedule::diminishing;
  else if (o.schedule == "adaptive")
    cfg.schedule = StepSchedule::adaptive;
  if (o.gamma > 0.0) cfg.gamma = o.gamma;
  cfg.max_iters = o.max_iters;
  cfg.gap_tol = o.gap_tol;
  cfg.trace_stride = o.trace_stride;
  return cfg;
}

struct SecondSolverOpts {
  double gamma = 0.0;
  double epsilon = 0.0;
  int max_iters = 20000;
  int trace_stride = 1;
};

void add_second_solver_flags(CLI::App* cmd, SecondSolverOpts& o) {
  cmd->add_option("--nem-gamma", o.gamma,
                  "Entropy-split step (default 1 / max target load)");
  cmd->add_option("--nem-epsilon", o.epsilon,
                  "Per-link load slack (default 1e-3 * max target load)");
  cmd->add_option("--nem-max-iters", o.max_iters, "Entropy-split budget");
  cmd->add_option("--nem-trace-stride", o.trace_stride,
                  "Keep every nth trace row");
}

NemConfig make_second_config(const SecondSolverOpts& o) {
  NemConfig cfg;
  if (o.gamma > 0.0) cfg.gamma = o.gamma;
  if (o.epsilon > 0.0) cfg.epsilon = o.epsilon;
  cfg.max_iters = o.max_iters;
  cfg.trace_stride = o.trace_stride;
  return cfg;
}

void print_metrics_line(const char* who, const MetricsReport& m) {
  if (m.normalized_utility)
    std::printf("%-5s mlu %.4f  utility %.4f\n", who, m.mlu,
                *m.normalized_utility);
  else
    std::printf("%-5s mlu %.4f  utility -inf (a link is saturated)\n", who,
                m.mlu);
}

int cmd_solve(const InputOpts& in, const UtilityOpts& util,
              const FirstSolverOpts& first, const std::string& out_dir) {
  auto [topo, dm] = resolve_inputs(in);
  SolveResult r =
      solve_first_weights(topo, dm, make_utility(util), make_first_config(first));
  fs::create_directories(out_dir);
  write_file(out_dir + "/weights.json", first_weights_json_text(r));
  write_file(out_dir + "/trace_first.csv", first_trace_csv(r.trace));
  std::printf("wrote %s/weights.json (%d iterations, %s)\n", out_dir.c_str(),
              r.iterations, r.converged ? "converged" : "not converged");
  if (!r.warning.empty()) std::printf("warning: %s\n", r.warning.c_str());
  return r.converged ? 0 : 2;
}

int cmd_split(const InputOpts& in, const std::string& weights_path,
              const SecondSolverOpts& second, double dag_tol,
              const std::string& out_dir) {
  auto [topo, dm] = resolve_inputs(in);
  StoredWeights stored = stored_weights_from_json_text(read_file(weights_path));
  std::optional<double> tol;
  if (dag_tol > 0.0) tol = dag_tol;
  SpefRun run = run_spef(topo, dm, UtilitySpec{}, SolverConfig{},
                         make_second_config(second), stored.first,
                         stored.target_load, tol);
  fs::create_directories(out_dir);
  write_file(out_dir + "/spef_tables.json",
             run.tables.to_json_text(&run.second));
  write_file(out_dir + "/trace_second.csv", second_trace_csv(run.second.trace));
  write_file(out_dir + "/flows.json", flows_to_json_text(run.flows));
  write_file(out_dir + "/metrics_spef.json", run.metrics.to_json_text());
  write_file(out_dir + "/sorted_util_spef.csv",
             sorted_utilization_csv(run.metrics));
  std::printf("wrote %s/spef_tables.json (%d iterations, %s)\n",
              out_dir.c_str(), run.second.iterations,
              run.second.converged ? "converged" : "not converged");
  print_metrics_line("spef", run.metrics);
  return run.second.converged ? 0 : 2;
}

int cmd_eval(const InputOpts& in, const std::string& flows_path,
             const std::string& weights_path, double dag_tol,
             const std::string& out_path) {
  auto [topo, dm] = resolve_inputs(in);
  FlowAssignment fa = flows_from_json_text(read_file(flows_path), topo);
  MetricsReport m;
  if (!weights_path.empty()) {
    StoredWeights stored =
        stored_weights_from_json_text(read_file(weights_path));
    EcmpDag dag =
        dag_tol > 0.0
            ? build_ecmp_dag(topo, stored.first, dm.destinations(), dag_tol)
            : build_ecmp_dag_relative(topo, stored.first, dm.destinations(),
                                      0.1);
    m = compute_metrics(topo, dm, fa, &dag);
  } else {
    m = compute_metrics(topo, dm, fa);
  }
  std::string text = m.to_json_text();
  if (!out_path.empty()) {
    write_file(out_path, text);
    std::printf("wrote %s\n", out_path.c_str());
  } else {
    std::fputs(text.c_str(), stdout);
  }
  return 0;
}

int run_config_pipeline(const ExperimentConfig& cfg) {
  RunOutcome out = run_pipeline(cfg);
  for (const PointResult& p : out.points) {
    std::printf("k=%-8g ", p.multiplier);
    if (p.spef.metrics.normalized_utility)
      std::printf("spef mlu %.4f utility %.4f | ", p.spef.metrics.mlu,
                  *p.spef.metrics.normalized_utility);
    else
      std::printf("spef mlu %.4f utility -inf | ", p.spef.metrics.mlu);
    if (p.ospf_metrics.normalized_utility)
      std::printf("ospf mlu %.4f utility %.4f\n", p.ospf_metrics.mlu,
                  *p.ospf_metrics.normalized_utility);
    else
      std::printf("ospf mlu %.4f utility -inf\n", p.ospf_metrics.mlu);
  }
  std::printf("summary: %s\n", out.summary_path.c_str());
  if (!out.all_converged) {
    std::fputs("not all points converged\n", stderr);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Optimal OSPF link weights with exponential equal-cost splitting"};
  app.require_subcommand(1);

  InputOpts in;
  UtilityOpts util;
  FirstSolverOpts first;
  SecondSolverOpts second;
  std::string out_dir = "out";
  std::string weights_path;
  std::string flows_path;
  std::string out_path;
  std::string config_path;
  std::string instance = "triangle";
  double dag_tol = 0.0;
  std::vector<double> multipliers;

  CLI::App* solve = app.add_subcommand(
      "solve", "Compute the first (utility-optimal) link weights");
  add_input_flags(solve, in);
  add_utility_flags(solve, util);
  add_first_solver_flags(solve, first);
  solve->add_option("--out", out_dir, "Output directory");

  CLI::App* split = app.add_subcommand(
      "split",
      "Derive second weights and forwarding tables from solved weights");
  add_input_flags(split, in);
  add_second_solver_flags(split, second);
  split->add_option("--weights", weights_path, "weights.json from solve")
      ->required();
  split->add_option("--dag-tol", dag_tol,
                    "Equal-cost tie tolerance (default relative to weights)");
  split->add_option("--out", out_dir, "Output directory");

  CLI::App* eval =
      app.add_subcommand("eval", "Metrics for a stored flow assignment");
  add_input_flags(eval, in);
  eval->add_option("--flows", flows_path, "flows.json file")->required();
  eval->add_option("--weights", weights_path,
                   "weights.json, enables the equal-cost path histogram");
  eval->add_option("--dag-tol", dag_tol, "Equal-cost tie tolerance");
  eval->add_option("--out", out_path, "Write metrics here instead of stdout");

  CLI::App* sweep = app.add_subcommand(
      "sweep", "Full pipeline across scaled copies of the demand matrix");
  add_input_flags(sweep, in);
  add_utility_flags(sweep, util);
  add_first_solver_flags(sweep, first);
  add_second_solver_flags(sweep, second);
  sweep->add_option("--multipliers", multipliers, "Demand scale factors")
      ->delimiter(',');
  sweep->add_option("--dag-tol", dag_tol, "Equal-cost tie tolerance");
  sweep->add_option("--out", out_dir, "Output directory");
  sweep
      ->add_option("--config", config_path,
                   "Experiment config JSON; its fields override the flags")
      ->check(CLI::ExistingFile);

  CLI::App* demo =
      app.add_subcommand("demo", "Run a builtin instance end to end");
  demo->add_option("--instance", instance, "triangle or toy")
      ->check(CLI::IsMember({"triangle", "toy"}));
  add_utility_flags(demo, util);
  demo->add_option("--out", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 4;
  }

  try {
    if (solve->parsed()) return cmd_solve(in, util, first, out_dir);
    if (split->parsed())
      return cmd_split(in, weights_path, second, dag_tol, out_dir);
    if (eval->parsed())
      return cmd_eval(in, flows_path, weights_path, dag_tol, out_path);
    if (sweep->parsed()) {
      ExperimentConfig cfg;
      if (!in.builtin.empty()) {
        cfg.demands.kind = in.builtin == "toy" ? DemandSpec::Kind::toy
                                               : DemandSpec::Kind::triangle;
      } else {
        cfg.topology_path = in.topology_path;
        cfg.demands.kind = DemandSpec::Kind::file;
        cfg.demands.path = in.demands_path;
      }
      cfg.utility = make_utility(util);
      cfg.first = make_first_config(first);
      cfg.second = make_second_config(second);
      if (dag_tol > 0.0) cfg.dag_tol = dag_tol;
      if (!multipliers.empty()) cfg.multipliers = multipliers;
      cfg.output_dir = out_dir;
      if (!config_path.empty()) cfg = load_experiment_config(config_path, cfg);
      return run_config_pipeline(cfg);
    }
    if (demo->parsed()) {
      ExperimentConfig cfg;
      cfg.demands.kind = instance == "toy" ? DemandSpec::Kind::toy
                                           : DemandSpec::Kind::triangle;
      cfg.utility = make_utility(util);
      if (cfg.utility.beta >= 8.0) {
        // Constant steps cannot reach the (c/s)^beta weight scale in a
        // bounded budget; use the per-link adaptive schedule instead.
        cfg.first.schedule = StepSchedule::adaptive;
        std::puts("note: beta >= 8, using the adaptive step schedule");
      }
      cfg.output_dir = out_dir;
      if (instance == "toy")
        std::puts(
            "note: the toy instance is a reconstruction, not ground truth");
      RunOutcome out = run_pipeline(cfg);
      const PointResult& p = out.points.front();
      print_metrics_line("spef", p.spef.metrics);
      print_metrics_line("ospf", p.ospf_metrics);
      std::printf("artifacts: %s\n", p.dir.c_str());
      return out.all_converged ? 0 : 2;
    }
  } catch (const InfeasibleError& e) {
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return 3;
  } catch (const RoutingError& e) {
    std::fprintf(stderr, "routing: %s\n", e.what());
    return 3;
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "no convergence: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
