#include "spef/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <future>
#include <set>

#include "json.hpp"

namespace spef {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Re-throws a stage failure with the stage name prefixed, keeping the type
// so the CLI can still map it to an exit code.
template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const StructuralError& e) {
    throw StructuralError(name + ": " + e.what());
  } catch (const RoutingError& e) {
    throw RoutingError(name + ": " + e.what());
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(name + ": " + e.what());
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(name + ": " + e.what());
  } catch (const SamplingError& e) {
    throw SamplingError(name + ": " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok)
      throw StructuralError(ctx + ": unknown key \"" + it.key() + "\"");
  }
}

double get_number(const json& j, const char* key, double fallback,
                  const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number())
    throw StructuralError(ctx + ": \"" + std::string(key) +
                          "\" must be a number");
  double v = j[key].get<double>();
  if (!std::isfinite(v))
    throw StructuralError(ctx + ": \"" + std::string(key) +
                          "\" is not finite");
  return v;
}

std::map<NodeId, double> mass_map(const json& j, const char* key,
                                  const std::string& ctx) {
  std::map<NodeId, double> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_object())
    throw StructuralError(ctx + ": \"" + std::string(key) +
                          "\" must be an object");
  for (auto it = j[key].begin(); it != j[key].end(); ++it) {
    if (!it.value().is_number())
      throw StructuralError(ctx + ": mass for " + it.key() +
                            " must be a number");
    out[it.key()] = it.value().get<double>();
  }
  return out;
}

WeightVector weight_map(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw StructuralError(ctx + ": expected an object");
  WeightVector out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number())
      throw StructuralError(ctx + ": value for " + it.key() +
                            " must be a number");
    out[it.key()] = it.value().get<double>();
  }
  return out;
}

json weights_to_json(const std::map<LinkId, double>& w) {
  json j = json::object();
  for (const auto& [link, val] : w) j[link] = val;
  return j;
}

json metrics_summary(const MetricsReport& m) {
  json j;
  j["mlu"] = m.mlu;
  if (m.normalized_utility)
    j["normalized_utility"] = *m.normalized_utility;
  else
    j["normalized_utility"] = nullptr;
  return j;
}

}  // namespace

Topology builtin_triangle() {
  std::vector<NodeId> nodes{"1", "2", "3", "4"};
  std::vector<Link> links{
      {"1-3", "1", "3", 1.0, 1.0},
      {"3-4", "3", "4", 1.0, 1.0},
      {"1-2", "1", "2", 1.0, 1.0},
      {"2-3", "2", "3", 1.0, 1.0},
  };
  return Topology(std::move(nodes), std::move(links));
}

DemandMatrix builtin_triangle_demands() {
  DemandMatrix dm;
  dm.set("1", "3", 1.0);
  dm.set("3", "4", 0.9);
  return dm;
}

Topology builtin_toy() {
  std::vector<NodeId> nodes{"1", "2", "3", "4", "5", "6", "7"};
  auto link = [](const NodeId& a, const NodeId& b) {
    return Link{a + "-" + b, a, b, 5.0, 1.0};
  };
  std::vector<Link> links{
      link("1", "4"), link("1", "5"), link("1", "6"), link("4", "2"),
      link("5", "2"), link("6", "2"), link("4", "5"), link("4", "3"),
      link("3", "5"), link("3", "6"), link("5", "7"), link("6", "7"),
  };
  return Topology(std::move(nodes), std::move(links));
}

DemandMatrix builtin_toy_demands() {
  DemandMatrix dm;
  dm.set("1", "2", 4.0);
  dm.set("1", "3", 4.0);
  dm.set("3", "2", 4.0);
  dm.set("1", "7", 4.0);
  return dm;
}

DemandMatrix gravity_demands(const std::map<NodeId, double>& out_mass,
                             const std::map<NodeId, double>& in_mass,
                             double total) {
  if (!std::isfinite(total) || total <= 0.0)
    throw StructuralError("gravity model: total must be finite and > 0");
  double out_sum = 0.0, in_sum = 0.0;
  for (const auto& [n, m] : out_mass) {
    if (!std::isfinite(m) || m < 0.0)
      throw StructuralError("gravity model: out mass for " + n +
                            " must be finite and >= 0");
    out_sum += m;
  }
  for (const auto& [n, m] : in_mass) {
    if (!std::isfinite(m) || m < 0.0)
      throw StructuralError("gravity model: in mass for " + n +
                            " must be finite and >= 0");
    in_sum += m;
  }
  if (out_sum <= 0.0 || in_sum <= 0.0)
    throw StructuralError("gravity model: masses sum to zero");
  std::map<std::pair<NodeId, NodeId>, double> raw;
  double raw_sum = 0.0;
  for (const auto& [s, ms] : out_mass) {
    if (ms <= 0.0) continue;
    for (const auto& [t, mt] : in_mass) {
      if (mt <= 0.0 || s == t) continue;
      double d = total * (ms / out_sum) * (mt / in_sum);
      raw[{s, t}] = d;
      raw_sum += d;
    }
  }
  if (raw_sum <= 0.0)
    throw StructuralError(
        "gravity model: no off-diagonal pair has positive mass");
  DemandMatrix dm;
  double scale = total / raw_sum;
  for (const auto& [pair, d] : raw) dm.set(pair.first, pair.second, d * scale);
  return dm;
}

DemandMatrix scale_demands(const DemandMatrix& dm, double k) {
  if (!std::isfinite(k) || k <= 0.0)
    throw StructuralError("demand scale factor must be finite and > 0");
  DemandMatrix out;
  for (const auto& [pair, d] : dm.entries())
    out.set(pair.first, pair.second, d * k);
  return out;
}

ExperimentConfig experiment_config_from_json_text(const std::string& text,
                                                  ExperimentConfig base) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw StructuralError("experiment config: malformed JSON");
  check_keys(j,
             {"topology", "demands", "utility", "first", "second", "dag_tol",
              "multipliers", "output_dir", "seed"},
             "experiment config");
  ExperimentConfig cfg = std::move(base);
  if (j.contains("topology")) {
    if (!j["topology"].is_string())
      throw StructuralError("experiment config: \"topology\" must be a path");
    cfg.topology_path = j["topology"].get<std::string>();
  }
  if (j.contains("demands")) {
    const json& d = j["demands"];
    if (!d.is_object())
      throw StructuralError("experiment config: \"demands\" must be an object");
    check_keys(d, {"kind", "path", "out_mass", "in_mass", "total"},
               "experiment config demands");
    cfg.demands = DemandSpec{};  // a demands object replaces the whole spec
    std::string kind =
        d.contains("kind") ? d["kind"].get<std::string>() : "triangle";
    if (kind == "triangle") {
      cfg.demands.kind = DemandSpec::Kind::triangle;
    } else if (kind == "toy") {
      cfg.demands.kind = DemandSpec::Kind::toy;
    } else if (kind == "file") {
      cfg.demands.kind = DemandSpec::Kind::file;
      if (!d.contains("path") || !d["path"].is_string())
        throw StructuralError(
            "experiment config: demand kind \"file\" needs a \"path\"");
      cfg.demands.path = d["path"].get<std::string>();
    } else if (kind == "gravity") {
      cfg.demands.kind = DemandSpec::Kind::gravity;
      cfg.demands.out_mass = mass_map(d, "out_mass", "experiment config");
      cfg.demands.in_mass = mass_map(d, "in_mass", "experiment config");
      cfg.demands.total = get_number(d, "total", 0.0, "experiment config");
    } else {
      throw StructuralError("experiment config: unknown demand kind \"" +
                            kind + "\"");
    }
  }
  if (j.contains("utility"))
    cfg.utility = UtilitySpec::from_json_text(j["utility"].dump());
  if (j.contains("first")) {
    const json& f = j["first"];
    check_keys(f,
               {"schedule", "gamma", "max_iters", "gap_tol", "trace_stride",
                "initial_weights"},
               "experiment config first");
    if (f.contains("schedule")) {
      std::string s = f["schedule"].get<std::string>();
      if (s == "constant")
        cfg.first.schedule = StepSchedule::constant;
      else if (s == "diminishing")
        cfg.first.schedule = StepSchedule::diminishing;
      else if (s == "adaptive")
        cfg.first.schedule = StepSchedule::adaptive;
      else
        throw StructuralError("experiment config: unknown schedule \"" + s +
                              "\"");
    }
    if (f.contains("gamma"))
      cfg.first.gamma = get_number(f, "gamma", 0.0, "experiment config first");
    cfg.first.max_iters = static_cast<int>(get_number(
        f, "max_iters", cfg.first.max_iters, "experiment config first"));
    cfg.first.gap_tol = get_number(f, "gap_tol", cfg.first.gap_tol,
                                   "experiment config first");
    cfg.first.trace_stride = static_cast<int>(get_number(
        f, "trace_stride", cfg.first.trace_stride, "experiment config first"));
    if (f.contains("initial_weights"))
      cfg.first.initial_weights =
          weight_map(f["initial_weights"], "experiment config initial_weights");
  }
  if (j.contains("second")) {
    const json& s = j["second"];
    check_keys(s, {"gamma", "epsilon", "max_iters", "trace_stride"},
               "experiment config second");
    if (s.contains("gamma"))
      cfg.second.gamma =
          get_number(s, "gamma", 0.0, "experiment config second");
    if (s.contains("epsilon"))
      cfg.second.epsilon =
          get_number(s, "epsilon", 0.0, "experiment config second");
    cfg.second.max_iters = static_cast<int>(get_number(
        s, "max_iters", cfg.second.max_iters, "experiment config second"));
    cfg.second.trace_stride =
        static_cast<int>(get_number(s, "trace_stride",
                                    cfg.second.trace_stride,
                                    "experiment config second"));
  }
  if (j.contains("dag_tol"))
    cfg.dag_tol = get_number(j, "dag_tol", 0.0, "experiment config");
  if (j.contains("multipliers")) {
    if (!j["multipliers"].is_array())
      throw StructuralError(
          "experiment config: \"multipliers\" must be an array");
    cfg.multipliers.clear();
    for (const json& m : j["multipliers"]) {
      if (!m.is_number())
        throw StructuralError(
            "experiment config: multipliers must be numbers");
      cfg.multipliers.push_back(m.get<double>());
    }
  }
  if (j.contains("output_dir"))
    cfg.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("seed"))
    cfg.seed = static_cast<std::uint64_t>(
        get_number(j, "seed", 1.0, "experiment config"));
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        ExperimentConfig base) {
  return experiment_config_from_json_text(read_file(path), std::move(base));
}

SpefRun run_spef(const Topology& topo, const DemandMatrix& dm,
                 const UtilitySpec& utility, const SolverConfig& first_cfg,
                 const NemConfig& second_cfg,
                 const std::optional<WeightVector>& fixed_weights,
                 const std::optional<std::map<LinkId, double>>& fixed_targets,
                 std::optional<double> dag_tol) {
  SpefRun run;
  std::map<LinkId, double> targets;
  if (fixed_weights) {
    if (!fixed_targets)
      throw StructuralError(
          "first weights: fixed weights need fixed target loads");
    run.weights = *fixed_weights;
    targets = *fixed_targets;
    run.first.first_weights = run.weights;
    run.first.target_load = targets;
    run.first.converged = true;
  } else {
    run.first = stage("first weights", [&] {
      return solve_first_weights(topo, dm, utility, first_cfg);
    });
    run.weights = run.first.first_weights;
    targets = run.first.target_load;
  }
  if (dag_tol) {
    run.dag_tol = *dag_tol;
    run.dag_relative = false;
  } else {
    run.dag_tol = 0.1;
    run.dag_relative = true;
  }
  run.dag = stage("ecmp dag", [&] {
    return run.dag_relative
               ? build_ecmp_dag_relative(topo, run.weights, dm.destinations(),
                                         run.dag_tol)
               : build_ecmp_dag(topo, run.weights, dm.destinations(),
                                run.dag_tol);
  });
  run.second = stage("second weights", [&] {
    return solve_second_weights(topo, dm, run.dag, targets, second_cfg);
  });
  run.tables = stage("forwarding tables", [&] {
    return build_forwarding_tables(topo, run.dag, run.second.v);
  });
  run.flows = stage("traffic distribution", [&] {
    return traffic_distribution(topo, dm, run.dag, run.second.v);
  });
  run.metrics = stage("metrics", [&] {
    return compute_metrics(topo, dm, run.flows, &run.dag);
  });
  return run;
}

std::string first_trace_csv(const std::vector<TracePoint>& trace) {
  std::string out = "iteration,gap,dual_objective\n";
  for (const TracePoint& p : trace) {
    out += std::to_string(p.iteration);
    out += ',';
    out += format_double(p.gap);
    out += ',';
    out += format_double(p.dual_objective);
    out += '\n';
  }
  return out;
}

std::string second_trace_csv(const std::vector<NemTracePoint>& trace) {
  std::string out = "iteration,max_excess,dual_objective\n";
  for (const NemTracePoint& p : trace) {
    out += std::to_string(p.iteration);
    out += ',';
    out += format_double(p.max_excess);
    out += ',';
    out += format_double(p.dual_objective);
    out += '\n';
  }
  return out;
}

std::string first_weights_json_text(const SolveResult& r) {
  json w;
  w["first"] = weights_to_json(r.first_weights);
  w["target_load"] = weights_to_json(r.target_load);
  w["spare"] = weights_to_json(r.spare);
  w["first_converged"] = r.converged;
  w["first_iterations"] = r.iterations;
  if (!r.warning.empty()) w["warning"] = r.warning;
  return w.dump(2) + "\n";
}

StoredWeights stored_weights_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw StructuralError("weights file: malformed JSON");
  if (!j.contains("first"))
    throw StructuralError("weights file: missing \"first\" weight map");
  if (!j.contains("target_load"))
    throw StructuralError("weights file: missing \"target_load\" map");
  StoredWeights sw;
  sw.first = weight_map(j["first"], "weights file first");
  sw.target_load = weight_map(j["target_load"], "weights file target_load");
  return sw;
}

void write_point_artifacts(const std::string& dir, const SpefRun& spef,
                           const MetricsReport& ospf_metrics) {
  fs::create_directories(dir);
  json w;
  w["first"] = weights_to_json(spef.weights);
  w["second"] = weights_to_json(spef.second.v);
  w["target_load"] = weights_to_json(spef.first.target_load);
  w["spare"] = weights_to_json(spef.first.spare);
  w["dag_tol"] = spef.dag_tol;
  w["dag_tol_relative"] = spef.dag_relative;
  w["first_converged"] = spef.first.converged;
  w["second_converged"] = spef.second.converged;
  w["first_iterations"] = spef.first.iterations;
  w["second_iterations"] = spef.second.iterations;
  if (!spef.first.warning.empty()) w["warning"] = spef.first.warning;
  write_file(dir + "/weights.json", w.dump(2) + "\n");
  write_file(dir + "/spef_tables.json",
             spef.tables.to_json_text(&spef.second));
  write_file(dir + "/metrics_spef.json", spef.metrics.to_json_text());
  write_file(dir + "/metrics_ospf.json", ospf_metrics.to_json_text());
  write_file(dir + "/trace_first.csv", first_trace_csv(spef.first.trace));
  write_file(dir + "/trace_second.csv", second_trace_csv(spef.second.trace));
  write_file(dir + "/sorted_util_spef.csv",
             sorted_utilization_csv(spef.metrics));
  write_file(dir + "/sorted_util_ospf.csv",
             sorted_utilization_csv(ospf_metrics));
}

RunOutcome run_pipeline(const ExperimentConfig& cfg) {
  if (cfg.multipliers.empty())
    throw StructuralError("experiment config: no load multipliers");
  std::set<double> seen;
  for (double m : cfg.multipliers) {
    if (!std::isfinite(m) || m <= 0.0)
      throw StructuralError("experiment config: multipliers must be > 0");
    if (!seen.insert(m).second)
      throw StructuralError("experiment config: duplicate multiplier " +
                            format_double(m));
  }

  Topology topo = [&] {
    if (!cfg.topology_path.empty())
      return stage("load topology",
                   [&] { return load_topology(cfg.topology_path); });
    switch (cfg.demands.kind) {
      case DemandSpec::Kind::triangle:
        return builtin_triangle();
      case DemandSpec::Kind::toy:
        return builtin_toy();
      default:
        throw StructuralError(
            "experiment config: file/gravity demands need a topology path");
    }
  }();
  DemandMatrix base = [&] {
    switch (cfg.demands.kind) {
      case DemandSpec::Kind::triangle:
        return builtin_triangle_demands();
      case DemandSpec::Kind::toy:
        return builtin_toy_demands();
      case DemandSpec::Kind::file:
        return stage("load demands", [&] {
          return load_demands(cfg.demands.path, topo);
        });
      case DemandSpec::Kind::gravity:
        return stage("gravity demands", [&] {
          return gravity_demands(cfg.demands.out_mass, cfg.demands.in_mass,
                                 cfg.demands.total);
        });
    }
    throw StructuralError("experiment config: unhandled demand kind");
  }();

  const bool single = cfg.multipliers.size() == 1;
  auto run_point = [&](double mult) {
    PointResult p;
    p.multiplier = mult;
    p.dir = single ? cfg.output_dir
                   : cfg.output_dir + "/k_" + format_double(mult);
    DemandMatrix dm =
        mult == 1.0 ? base : scale_demands(base, mult);
    p.spef = run_spef(topo, dm, cfg.utility, cfg.first, cfg.second, {}, {},
                      cfg.dag_tol);
    stage("ospf baseline", [&] {
      p.ospf = ospf_invcap(topo, dm);
      return 0;
    });
    p.ospf_metrics = compute_metrics(topo, dm, p.ospf.flows, &p.ospf.dag);
    write_point_artifacts(p.dir, p.spef, p.ospf_metrics);
    return p;
  };

  RunOutcome out;
  if (single) {
    out.points.push_back(run_point(cfg.multipliers[0]));
  } else {
    std::vector<std::future<PointResult>> futures;
    futures.reserve(cfg.multipliers.size());
    for (double m : cfg.multipliers)
      futures.push_back(
          std::async(std::launch::async, [&run_point, m] { return run_point(m); }));
    for (auto& f : futures) out.points.push_back(f.get());
  }

  json summary;
  summary["points"] = json::array();
  for (const PointResult& p : out.points) {
    bool conv = p.spef.first.converged && p.spef.second.converged;
    out.all_converged = out.all_converged && conv;
    json jp;
    jp["multiplier"] = p.multiplier;
    jp["dir"] = p.dir;
    jp["spef"] = metrics_summary(p.spef.metrics);
    jp["spef"]["first_converged"] = p.spef.first.converged;
    jp["spef"]["second_converged"] = p.spef.second.converged;
    jp["spef"]["first_iterations"] = p.spef.first.iterations;
    jp["spef"]["second_iterations"] = p.spef.second.iterations;
    jp["ospf"] = metrics_summary(p.ospf_metrics);
    summary["points"].push_back(jp);
  }
  summary["all_converged"] = out.all_converged;
  fs::create_directories(cfg.output_dir);
  out.summary_path = cfg.output_dir + "/summary.json";
  write_file(out.summary_path, summary.dump(2) + "\n");
  return out;
}

}  // namespace spef
