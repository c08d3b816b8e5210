#include "spef/objectives.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"

namespace spef {

using nlohmann::json;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double UtilitySpec::q_for(const Link& link) const {
  switch (q_mode) {
    case QMode::unit:
      return 1.0;
    case QMode::capacity:
      return link.capacity;
    case QMode::delay:
      return link.delay;
    case QMode::explicit_map: {
      auto it = q_explicit.find(link.id);
      if (it == q_explicit.end())
        throw StructuralError("utility spec: no q entry for link " + link.id);
      return it->second;
    }
  }
  throw StructuralError("utility spec: bad q mode");
}

UtilitySpec UtilitySpec::from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw StructuralError("malformed JSON in utility spec");
  UtilitySpec spec;
  if (!j.contains("beta") || !j["beta"].is_number())
    throw StructuralError("utility spec: missing numeric \"beta\"");
  spec.beta = j["beta"].get<double>();
  if (!std::isfinite(spec.beta) || spec.beta < 0.0)
    throw StructuralError("utility spec: beta must be finite and >= 0");
  if (j.contains("q")) {
    const json& q = j["q"];
    if (q.is_string()) {
      std::string mode = q.get<std::string>();
      if (mode == "unit")
        spec.q_mode = QMode::unit;
      else if (mode == "capacity")
        spec.q_mode = QMode::capacity;
      else if (mode == "delay")
        spec.q_mode = QMode::delay;
      else
        throw StructuralError("utility spec: unknown q mode \"" + mode + "\"");
    } else if (q.is_object()) {
      spec.q_mode = QMode::explicit_map;
      for (const auto& [link, v] : q.items()) {
        if (!v.is_number() || !std::isfinite(v.get<double>()) ||
            v.get<double>() <= 0.0)
          throw StructuralError("utility spec: q for link " + link +
                                " must be finite and > 0");
        spec.q_explicit[link] = v.get<double>();
      }
    } else {
      throw StructuralError("utility spec: \"q\" must be a string or object");
    }
  }
  return spec;
}

std::string UtilitySpec::to_json_text() const {
  json j;
  j["beta"] = beta;
  switch (q_mode) {
    case QMode::unit:
      j["q"] = "unit";
      break;
    case QMode::capacity:
      j["q"] = "capacity";
      break;
    case QMode::delay:
      j["q"] = "delay";
      break;
    case QMode::explicit_map: {
      json q = json::object();
      for (const auto& [link, v] : q_explicit) q[link] = v;
      j["q"] = q;
      break;
    }
  }
  return j.dump(2) + "\n";
}

double utility(const UtilitySpec& spec, double q, double s) {
  const double beta = spec.beta;
  if (beta == 1.0) {
    if (s <= 0.0) return -kInf;
    return q * std::log(s);
  }
  if (s < 0.0) s = 0.0;
  if (s == 0.0 && beta > 1.0) return -kInf;
  // beta < 1: s^(1-beta) is 0 at s = 0, no singularity.
  return q * std::pow(s, 1.0 - beta) / (1.0 - beta);
}

double marginal_utility(const UtilitySpec& spec, double q, double s) {
  const double beta = spec.beta;
  if (beta == 0.0) return q;
  if (s <= 0.0) return kInf;
  return q / std::pow(s, beta);
}

double solve_link_subproblem(const UtilitySpec& spec, double q, double w,
                             double cap) {
  const double beta = spec.beta;
  if (cap <= 0.0) throw StructuralError("link subproblem: cap must be > 0");
  if (q <= 0.0) throw StructuralError("link subproblem: q must be > 0");
  if (beta == 0.0) {
    // Linear objective (q - w) * s: bang-bang, ties resolve to cap.
    return w <= q ? cap : 0.0;
  }
  if (w <= 0.0) return cap;  // V' > 0 everywhere, maximum at the boundary
  double s = std::pow(q / w, 1.0 / beta);
  return std::min(s, cap);
}

double named_weight_formula(NamedFormula kind, double capacity, double load,
                            double delay) {
  switch (kind) {
    case NamedFormula::proportional: {
      if (load >= capacity)
        throw InfeasibleError("proportional weight undefined at load >= cap");
      return 1.0 / (capacity - load);
    }
    case NamedFormula::cap_square: {
      if (load >= capacity)
        throw InfeasibleError("cap-square weight undefined at load >= cap");
      double spare = capacity - load;
      return capacity / (spare * spare);
    }
    case NamedFormula::delay_hop:
      return delay;
  }
  throw StructuralError("named_weight_formula: bad kind");
}

}  // namespace spef
