#include "spef/net_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spef {

using nlohmann::json;

Topology::Topology(std::vector<NodeId> nodes, std::vector<Link> links)
    : nodes_(std::move(nodes)), links_(std::move(links)) {
  if (nodes_.empty()) throw StructuralError("topology has no nodes");
  std::sort(nodes_.begin(), nodes_.end());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].empty()) throw StructuralError("empty node id");
    if (i > 0 && nodes_[i] == nodes_[i - 1])
      throw StructuralError("duplicate node id: " + nodes_[i]);
    node_index_[nodes_[i]] = static_cast<int>(i);
  }
  out_.resize(nodes_.size());
  in_.resize(nodes_.size());
  for (size_t k = 0; k < links_.size(); ++k) {
    const Link& l = links_[k];
    if (l.id.empty()) throw StructuralError("empty link id");
    if (!link_index_.emplace(l.id, static_cast<int>(k)).second)
      throw StructuralError("duplicate link id: " + l.id);
    auto si = node_index_.find(l.src);
    auto di = node_index_.find(l.dst);
    if (si == node_index_.end())
      throw StructuralError("link " + l.id + ": unknown src node " + l.src);
    if (di == node_index_.end())
      throw StructuralError("link " + l.id + ": unknown dst node " + l.dst);
    if (l.src == l.dst)
      throw StructuralError("link " + l.id + ": self-loop not allowed");
    if (!std::isfinite(l.capacity) || l.capacity <= 0.0)
      throw StructuralError("link " + l.id + ": capacity must be finite and > 0");
    if (!std::isfinite(l.delay) || l.delay < 0.0)
      throw StructuralError("link " + l.id + ": delay must be finite and >= 0");
    out_[si->second].push_back(static_cast<int>(k));
    in_[di->second].push_back(static_cast<int>(k));
    max_capacity_ = std::max(max_capacity_, l.capacity);
  }
}

const Link& Topology::link(const LinkId& id) const {
  auto it = link_index_.find(id);
  if (it == link_index_.end()) throw StructuralError("unknown link id: " + id);
  return links_[it->second];
}

int Topology::node_index(const NodeId& n) const {
  auto it = node_index_.find(n);
  if (it == node_index_.end()) throw StructuralError("unknown node id: " + n);
  return it->second;
}

int Topology::link_index(const LinkId& id) const {
  auto it = link_index_.find(id);
  if (it == link_index_.end()) throw StructuralError("unknown link id: " + id);
  return it->second;
}

const std::vector<int>& Topology::out_links(const NodeId& n) const {
  return out_[node_index(n)];
}

const std::vector<int>& Topology::in_links(const NodeId& n) const {
  return in_[node_index(n)];
}

void DemandMatrix::set(const NodeId& src, const NodeId& dst, double demand) {
  if (!std::isfinite(demand) || demand < 0.0)
    throw StructuralError("demand " + src + "->" + dst +
                          " must be finite and >= 0");
  if (src == dst && demand > 0.0)
    throw StructuralError("self demand not allowed: " + src);
  if (demand == 0.0) {
    entries_.erase({src, dst});
    return;
  }
  entries_[{src, dst}] = demand;
}

double DemandMatrix::at(const NodeId& src, const NodeId& dst) const {
  auto it = entries_.find({src, dst});
  return it == entries_.end() ? 0.0 : it->second;
}

std::vector<NodeId> DemandMatrix::destinations() const {
  std::vector<NodeId> out;
  for (const auto& [pair, d] : entries_) {
    (void)d;
    if (out.empty() || out.back() != pair.second) out.push_back(pair.second);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::map<NodeId, double> DemandMatrix::toward(const NodeId& dst) const {
  std::map<NodeId, double> out;
  for (const auto& [pair, d] : entries_)
    if (pair.second == dst) out[pair.first] = d;
  return out;
}

double DemandMatrix::total() const {
  double t = 0.0;
  for (const auto& [pair, d] : entries_) {
    (void)pair;
    t += d;
  }
  return t;
}

void FlowAssignment::set(const NodeId& dest, const LinkId& link, double flow) {
  flows_[dest][link] = flow;
}

void FlowAssignment::add(const NodeId& dest, const LinkId& link, double flow) {
  flows_[dest][link] += flow;
}

double FlowAssignment::at(const NodeId& dest, const LinkId& link) const {
  auto it = flows_.find(dest);
  if (it == flows_.end()) return 0.0;
  auto jt = it->second.find(link);
  return jt == it->second.end() ? 0.0 : jt->second;
}

std::map<LinkId, double> FlowAssignment::aggregate() const {
  std::map<LinkId, double> agg;
  for (const auto& [dest, per_link] : flows_) {
    (void)dest;
    for (const auto& [link, f] : per_link) agg[link] += f;
  }
  return agg;
}

FlowReport validate_flow(const Topology& topo, const DemandMatrix& dm,
                         const FlowAssignment& fa, double tol) {
  FlowReport report;
  // Structural pass: every referenced link and destination must exist.
  for (const auto& [dest, per_link] : fa.per_dest()) {
    if (!topo.has_node(dest))
      throw StructuralError("flow references unknown destination: " + dest);
    for (const auto& [link, f] : per_link) {
      (void)f;
      if (!topo.has_link(link))
        throw StructuralError("flow references unknown link: " + link);
    }
  }
  for (const auto& [dest, per_link] : fa.per_dest()) {
    for (const auto& [link, f] : per_link) {
      (void)link;
      report.min_flow = std::min(report.min_flow, f);
    }
    // Conservation per node: out - in = demand toward dest (minus total at
    // dest itself).
    std::map<NodeId, double> toward = dm.toward(dest);
    double total = 0.0;
    for (const auto& [src, d] : toward) {
      (void)src;
      total += d;
    }
    for (const NodeId& n : topo.nodes()) {
      double net = 0.0;
      for (int li : topo.out_links(n)) net += fa.at(dest, topo.links()[li].id);
      for (int li : topo.in_links(n)) net -= fa.at(dest, topo.links()[li].id);
      double rhs;
      if (n == dest) {
        rhs = -total;
      } else {
        auto it = toward.find(n);
        rhs = it == toward.end() ? 0.0 : it->second;
      }
      report.max_conservation_residual =
          std::max(report.max_conservation_residual, std::fabs(net - rhs));
    }
  }
  std::map<LinkId, double> agg = fa.aggregate();
  for (const Link& l : topo.links()) {
    auto it = agg.find(l.id);
    double load = it == agg.end() ? 0.0 : it->second;
    report.max_capacity_violation =
        std::max(report.max_capacity_violation, load - l.capacity);
  }
  report.max_capacity_violation = std::max(report.max_capacity_violation, 0.0);
  report.feasible = report.max_capacity_violation <= tol &&
                    report.max_conservation_residual <= tol &&
                    report.min_flow >= -tol;
  return report;
}

std::map<LinkId, LinkLoad> aggregate_loads(const Topology& topo,
                                           const FlowAssignment& fa) {
  std::map<LinkId, double> agg = fa.aggregate();
  std::map<LinkId, LinkLoad> out;
  for (const Link& l : topo.links()) {
    auto it = agg.find(l.id);
    LinkLoad ll;
    ll.load = it == agg.end() ? 0.0 : it->second;
    ll.spare = l.capacity - ll.load;
    ll.utilization = ll.load / l.capacity;
    out[l.id] = ll;
  }
  return out;
}

// --- serialization ---

namespace {

json parse_json(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw StructuralError(std::string("malformed JSON in ") + what);
  return j;
}

double require_number(const json& j, const std::string& key,
                      const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_number())
    throw StructuralError(ctx + ": missing or non-numeric \"" + key + "\"");
  double v = j[key].get<double>();
  if (!std::isfinite(v))
    throw StructuralError(ctx + ": \"" + key + "\" is not finite");
  return v;
}

std::string require_string(const json& j, const std::string& key,
                           const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_string())
    throw StructuralError(ctx + ": missing or non-string \"" + key + "\"");
  return j[key].get<std::string>();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Topology topology_from_json_text(const std::string& text) {
  json j = parse_json(text, "topology");
  if (!j.contains("nodes") || !j["nodes"].is_array())
    throw StructuralError("topology: missing \"nodes\" array");
  if (!j.contains("links") || !j["links"].is_array())
    throw StructuralError("topology: missing \"links\" array");
  std::vector<NodeId> nodes;
  for (const auto& n : j["nodes"]) {
    if (!n.is_string()) throw StructuralError("topology: node ids must be strings");
    nodes.push_back(n.get<std::string>());
  }
  std::vector<Link> links;
  for (const auto& lj : j["links"]) {
    Link l;
    std::string ctx = "topology link";
    l.id = require_string(lj, "id", ctx);
    ctx = "link " + l.id;
    l.src = require_string(lj, "src", ctx);
    l.dst = require_string(lj, "dst", ctx);
    l.capacity = require_number(lj, "capacity", ctx);
    if (lj.contains("delay")) l.delay = require_number(lj, "delay", ctx);
    links.push_back(std::move(l));
  }
  return Topology(std::move(nodes), std::move(links));
}

Topology load_topology(const std::string& path) {
  return topology_from_json_text(read_file(path));
}

std::string topology_to_json_text(const Topology& topo) {
  json j;
  j["nodes"] = topo.nodes();
  j["links"] = json::array();
  for (const Link& l : topo.links()) {
    json lj = {{"id", l.id}, {"src", l.src}, {"dst", l.dst},
               {"capacity", l.capacity}};
    if (l.delay != 1.0) lj["delay"] = l.delay;
    j["links"].push_back(lj);
  }
  return j.dump(2) + "\n";
}

DemandMatrix demands_from_csv_text(const std::string& text,
                                   const Topology& topo) {
  DemandMatrix dm;
  std::istringstream in(text);
  std::string line;
  bool saw_header = false;
  int lineno = 0;
  std::map<std::pair<NodeId, NodeId>, bool> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // Trim surrounding whitespace.
    size_t a = line.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t");
    line = line.substr(a, b - a + 1);
    if (!saw_header) {
      if (line != "src,dst,demand")
        throw StructuralError("demand CSV: expected header src,dst,demand");
      saw_header = true;
      continue;
    }
    std::istringstream row(line);
    std::string src, dst, dstr;
    if (!std::getline(row, src, ',') || !std::getline(row, dst, ',') ||
        !std::getline(row, dstr))
      throw StructuralError("demand CSV line " + std::to_string(lineno) +
                            ": expected src,dst,demand");
    if (!topo.has_node(src))
      throw StructuralError("demand CSV line " + std::to_string(lineno) +
                            ": unknown node " + src);
    if (!topo.has_node(dst))
      throw StructuralError("demand CSV line " + std::to_string(lineno) +
                            ": unknown node " + dst);
    double d;
    try {
      size_t pos = 0;
      d = std::stod(dstr, &pos);
      while (pos < dstr.size() && (dstr[pos] == ' ' || dstr[pos] == '\t')) ++pos;
      if (pos != dstr.size()) throw std::invalid_argument(dstr);
    } catch (const std::exception&) {
      throw StructuralError("demand CSV line " + std::to_string(lineno) +
                            ": bad demand value \"" + dstr + "\"");
    }
    if (seen.count({src, dst}))
      throw StructuralError("demand CSV line " + std::to_string(lineno) +
                            ": duplicate pair " + src + "," + dst);
    seen[{src, dst}] = true;
    dm.set(src, dst, d);
  }
  if (!saw_header)
    throw StructuralError("demand CSV: empty file");
  return dm;
}

DemandMatrix load_demands(const std::string& path, const Topology& topo) {
  return demands_from_csv_text(read_file(path), topo);
}

std::string demands_to_csv_text(const DemandMatrix& dm) {
  std::string out = "src,dst,demand\n";
  for (const auto& [pair, d] : dm.entries())
    out += pair.first + "," + pair.second + "," + format_double(d) + "\n";
  return out;
}

FlowAssignment flows_from_json_text(const std::string& text,
                                    const Topology& topo) {
  json j = parse_json(text, "flows");
  if (!j.contains("flows") || !j["flows"].is_object())
    throw StructuralError("flows: missing \"flows\" object");
  FlowAssignment fa;
  for (const auto& [dest, per_link] : j["flows"].items()) {
    if (!topo.has_node(dest))
      throw StructuralError("flows: unknown destination " + dest);
    if (!per_link.is_object())
      throw StructuralError("flows: entry for " + dest + " must be an object");
    for (const auto& [link, v] : per_link.items()) {
      if (!topo.has_link(link))
        throw StructuralError("flows: unknown link " + link);
      if (!v.is_number() || !std::isfinite(v.get<double>()))
        throw StructuralError("flows: non-numeric flow on " + link);
      fa.set(dest, link, v.get<double>());
    }
  }
  return fa;
}

FlowAssignment load_flows(const std::string& path, const Topology& topo) {
  return flows_from_json_text(read_file(path), topo);
}

std::string flows_to_json_text(const FlowAssignment& fa) {
  json j;
  j["flows"] = json::object();
  for (const auto& [dest, per_link] : fa.per_dest()) {
    json d = json::object();
    for (const auto& [link, f] : per_link) d[link] = f;
    j["flows"][dest] = d;
  }
  return j.dump(2) + "\n";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StructuralError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StructuralError("cannot write file: " + path);
  out << content;
  if (!out) throw StructuralError("write failed: " + path);
}

}  // namespace spef
