#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "spef/net_model.hpp"
#include "spef/objectives.hpp"

namespace spef {

// Shortest distances from every node to dest under weights w (reverse
// Dijkstra). Unreachable nodes get +inf. Weights must be finite and >= 0;
// every link needs an entry.
std::map<NodeId, double> distances_to(const Topology& topo,
                                      const WeightVector& w,
                                      const NodeId& dest);

// Routes each source's demand toward dest along one shortest path: every node
// forwards on its single best outgoing link, ties broken by lexicographically
// smallest next-hop node, then smallest link id. Returns sparse link flows.
// Throws RoutingError if a node with positive demand cannot reach dest.
std::map<LinkId, double> route_to_destination(
    const Topology& topo, const WeightVector& w, const NodeId& dest,
    const std::map<NodeId, double>& demand_toward);

// Complementarity measure sum_ij w_ij * (f_ij + s_ij - c_ij) for aggregate
// loads f and spares s; zero at an optimal triple.
double dual_gap(const Topology& topo, const WeightVector& w,
                const std::map<LinkId, double>& spare,
                const std::map<LinkId, double>& load);

enum class StepSchedule {
  constant,     // gamma_k = gamma
  diminishing,  // gamma_k = gamma / k
  adaptive,     // exponentiated subgradient with per-link adaptive rates
                // (ignores gamma); the schedule for large beta, where the
                // optimal weights span many orders of magnitude. Recovery
                // precision degrades as beta shrinks (the log-step floor is
                // sized 1/beta); below beta ~ 4 prefer constant/diminishing.
};

struct SolverConfig {
  StepSchedule schedule = StepSchedule::constant;
  // Base step; defaults to 1 / max link capacity when unset.
  std::optional<double> gamma;
  int max_iters = 5000;
  double gap_tol = 1e-6;
  // Starting weights; defaults to inverse capacity.
  std::optional<WeightVector> initial_weights;
  // Record every nth trace point (the last iteration is always kept).
  int trace_stride = 1;
};

struct TracePoint {
  int iteration = 0;
  double gap = 0.0;
  double dual_objective = 0.0;
};

struct SolveResult {
  WeightVector first_weights;            // w* = V'(s*)
  std::map<LinkId, double> spare;        // s*
  std::map<LinkId, double> target_load;  // f* = c - s*
  std::vector<TracePoint> trace;
  bool converged = false;
  int iterations = 0;
  // Set when s* hit the floor somewhere and f* fell back to the last routing
  // iterate instead of c - s*.
  bool primal_from_routing = false;
  std::string warning;
};

// Dual subgradient solve of the TE problem: iterates
//   w <- (w - gamma_k * (c - f - s))_+
// with f from per-destination shortest-path routing and s from the link
// subproblem, stopping on |gap| < gap_tol or the iteration budget. The
// reported s* is the average of the link subproblem outputs over the second
// half of the run (the constant-step iterates orbit the optimum; their
// average does not), w* = V'(s*) and f* = c - s*. beta = 0 bypasses the
// loop entirely: the linear objective admits the closed form w* = q with
// one deterministic routing pass.
SolveResult solve_first_weights(const Topology& topo, const DemandMatrix& dm,
                                const UtilitySpec& spec,
                                const SolverConfig& config = {});

struct KktReport {
  // (a) capacity split: |c - f - s|
  double primal_residual = 0.0;
  // (b) stationarity: |V'(s) - w| where s > 0, max(0, V'(s) - w) at s = 0
  double gradient_residual = 0.0;
  // (c) potentials: |dist(i) - w_ij - dist(j)| on links with f^t > 0,
  //     max(0, dist(i) - w_ij - dist(j)) elsewhere
  double potential_residual = 0.0;

  double worst() const;
  bool within(double tol) const { return worst() <= tol; }
};

// Checks the optimality system for a candidate (w, s, per-destination flows).
KktReport verify_kkt(const Topology& topo, const DemandMatrix& dm,
                     const UtilitySpec& spec, const WeightVector& w,
                     const std::map<LinkId, double>& spare,
                     const FlowAssignment& fa);

// sum_ij q_ij * (s_ij - s*_ij) / (s*_ij)^beta for the spare vector induced
// by a candidate flow, against the optimal spares from fa_star.
double balance_sum(const Topology& topo, const UtilitySpec& spec,
                   const FlowAssignment& fa_star, const FlowAssignment& fa);

struct BalanceReport {
  bool passed = true;
  double worst_sum = 0.0;  // most positive balance sum seen
  int samples_checked = 0;
};

// Samples random feasible flow assignments (convex mixtures of shortest-path
// vertex flows under random weights, rejected if over capacity) and checks
// the proportional-balance inequality balance_sum <= tol for each. Throws
// SamplingError if feasible samples cannot be drawn.
BalanceReport verify_balance(const Topology& topo, const DemandMatrix& dm,
                             const UtilitySpec& spec,
                             const FlowAssignment& fa_star, int samples,
                             std::uint64_t seed, double tol = 1e-7);

// Integer weights: round(w * max spare), floored at 1.
WeightVector round_weights(const WeightVector& w,
                           const std::map<LinkId, double>& spare);

}  // namespace spef
