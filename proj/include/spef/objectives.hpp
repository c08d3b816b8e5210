#pragma once

#include <string>

#include "spef/net_model.hpp"

namespace spef {

// Scaled utility family over per-link spare capacity s:
//   V(s) = q * log(s)                 for beta = 1
//   V(s) = q * s^(1-beta) / (1-beta)  otherwise
// beta = 0 is linear (min-hop flavor), beta = 1 proportional, large beta
// approaches min-max. q is a per-link scale factor.
struct UtilitySpec {
  enum class QMode { unit, capacity, delay, explicit_map };

  double beta = 1.0;
  QMode q_mode = QMode::unit;
  WeightVector q_explicit;  // used when q_mode == explicit_map

  // Resolve the q factor for one link.
  double q_for(const Link& link) const;

  // Config JSON: {"beta": number, "q": "unit"|"capacity"|"delay"|{link: q}}
  static UtilitySpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// V(s). Returns -inf where the utility diverges (s <= 0 with beta >= 1).
double utility(const UtilitySpec& spec, double q, double s);

// V'(s) = q / s^beta. Returns +inf at s <= 0 for beta > 0.
double marginal_utility(const UtilitySpec& spec, double q, double s);

// argmax_{0 <= s <= cap} V(s) - w*s. Closed form: the unconstrained
// stationary point (q/w)^(1/beta) clipped to the capacity. For beta = 0 the
// problem is linear and the maximizer is bang-bang; the w == q tie resolves
// to cap.
double solve_link_subproblem(const UtilitySpec& spec, double q, double w,
                             double cap);

// Closed-form optimal weight formulas for the three named objectives.
enum class NamedFormula {
  proportional,  // (1, 1):  w = 1 / (c - f)
  cap_square,    // (c, 2):  w = c / (c - f)^2
  delay_hop,     // (d, 0):  w = d on unsaturated links
};

// Requires f < c for the load-dependent formulas.
double named_weight_formula(NamedFormula kind, double capacity, double load,
                            double delay = 1.0);

}  // namespace spef
