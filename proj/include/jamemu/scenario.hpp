#pragma once

#include "jamemu/channel.hpp"
#include "jamemu/error.hpp"
#include "jamemu/jammer.hpp"
#include "jamemu/json_io.hpp"
#include "jamemu/network.hpp"
#include "jamemu/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace jamemu {

enum class NodeRole { BaseStation, User, Jammer };

NLOHMANN_JSON_SERIALIZE_ENUM(NodeRole, {
                                           {NodeRole::BaseStation, "BaseStation"},
                                           {NodeRole::User, "User"},
                                           {NodeRole::Jammer, "Jammer"},
                                       })

/// Carrier hopping: the node's band center cycles through `centers_hz`,
/// spending `dwell_s` on each.
struct HopPattern {
  double dwell_s = 0.1;
  std::vector<double> centers_hz;

  bool operator==(const HopPattern&) const = default;
};

struct Node {
  std::string id;
  NodeRole role = NodeRole::User;
  Position position_m;
  int cluster = 0;
  double tx_power_dbm = 23.0;
  Band band;
  std::optional<int> n_subbands;
  std::optional<HopPattern> hop;

  bool operator==(const Node&) const = default;
};

/// The node's transmit band at `time_s`, honouring any hop pattern.
inline Band band_at(const Node& node, double time_s) {
  if (!node.hop || node.hop->centers_hz.empty()) return node.band;
  const auto slot = static_cast<std::size_t>(std::floor(time_s / node.hop->dwell_s + 1e-9));
  return Band{node.hop->centers_hz[slot % node.hop->centers_hz.size()], node.band.width_hz};
}

struct LinkStatusParams {
  double detach_thresh_db = 0.0;
  double attach_thresh_db = 3.0;
  double dwell_s = 1.0;

  bool operator==(const LinkStatusParams&) const = default;
};

struct Scenario {
  std::vector<Node> nodes;
  PathLossParams path_loss;
  double noise_floor_dbm_per_hz = -165.0;
  Band uplink_band{980e6, 10e6};
  Band downlink_band{1020e6, 10e6};
  int n_subbands = kDefaultSubbands;
  double cap_bps_per_hz = kDefaultCapBpsPerHz;
  LinkStatusParams link_status;
  /// user id -> base-station id
  std::map<std::string, std::string> attachments;
  std::map<std::pair<std::string, std::string>, FirTaps> fir_profiles;
  std::optional<JammerState> jammer;

  const Node* find(std::string_view id) const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
    return it == nodes.end() ? nullptr : &*it;
  }
  Node* find(std::string_view id) {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
    return it == nodes.end() ? nullptr : &*it;
  }
  const Node* jammer_node() const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.role == NodeRole::Jammer; });
    return it == nodes.end() ? nullptr : &*it;
  }
  std::size_t count(NodeRole role) const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.role == role; }));
  }

  bool operator==(const Scenario&) const = default;
};

enum class ScenarioErrorKind {
  Parse,
  Schema,
  DuplicateId,
  DanglingAttachment,
  DegenerateBand,
  UnknownCluster,
  JammerCount,
  UnknownNode,
  InvalidRole,
};

class ScenarioError : public Error {
 public:
  ScenarioError(ScenarioErrorKind kind, const std::string& message) : Error(message), kind_(kind) {}
  ScenarioErrorKind kind() const noexcept { return kind_; }

 private:
  ScenarioErrorKind kind_;
};

inline void validate(const Scenario& sc) {
  auto check_band = [](const Band& b, const std::string& what) {
    if (!(b.width_hz > 0.0) || !std::isfinite(b.center_hz))
      throw ScenarioError(ScenarioErrorKind::DegenerateBand, "zero-width or invalid band: " + what);
  };
  check_band(sc.uplink_band, "uplink_band");
  check_band(sc.downlink_band, "downlink_band");
  if (sc.n_subbands < 1) throw ScenarioError(ScenarioErrorKind::Schema, "n_subbands must be >= 1");
  if (!(sc.cap_bps_per_hz > 0.0)) throw ScenarioError(ScenarioErrorKind::Schema, "cap_bps_per_hz must be positive");
  if (!(sc.path_loss.ref_dist_m > 0.0) || !(sc.path_loss.exponent > 0.0) || !(sc.path_loss.min_dist_m > 0.0))
    throw ScenarioError(ScenarioErrorKind::Schema, "path_loss distances and exponent must be positive");
  if (!(sc.link_status.attach_thresh_db > sc.link_status.detach_thresh_db))
    throw ScenarioError(ScenarioErrorKind::Schema, "link_status.attach_thresh_db must exceed detach_thresh_db");
  if (!(sc.link_status.dwell_s > 0.0)) throw ScenarioError(ScenarioErrorKind::Schema, "link_status.dwell_s must be positive");

  std::set<std::string> ids;
  std::set<int> clusters;
  for (const auto& n : sc.nodes) {
    if (n.id.empty()) throw ScenarioError(ScenarioErrorKind::Schema, "node with empty id");
    if (!ids.insert(n.id).second) throw ScenarioError(ScenarioErrorKind::DuplicateId, "duplicate node id '" + n.id + "'");
    check_band(n.band, "node '" + n.id + "'");
    if (n.cluster < 0) throw ScenarioError(ScenarioErrorKind::Schema, "node '" + n.id + "' has negative cluster");
    if (n.n_subbands && *n.n_subbands < 1)
      throw ScenarioError(ScenarioErrorKind::Schema, "node '" + n.id + "' n_subbands must be >= 1");
    if (n.hop && (n.hop->centers_hz.empty() || !(n.hop->dwell_s > 0.0)))
      throw ScenarioError(ScenarioErrorKind::Schema, "node '" + n.id + "' has an invalid hop pattern");
    if (n.role == NodeRole::BaseStation) clusters.insert(n.cluster);
  }
  for (const auto& n : sc.nodes) {
    if (n.role == NodeRole::User && !clusters.contains(n.cluster))
      throw ScenarioError(ScenarioErrorKind::UnknownCluster,
                          "user '" + n.id + "' references cluster " + std::to_string(n.cluster) + " with no base station");
  }
  for (const auto& [user, bs] : sc.attachments) {
    const Node* u = sc.find(user);
    const Node* b = sc.find(bs);
    if (!u || u->role != NodeRole::User)
      throw ScenarioError(ScenarioErrorKind::DanglingAttachment, "attachment references unknown user '" + user + "'");
    if (!b || b->role != NodeRole::BaseStation)
      throw ScenarioError(ScenarioErrorKind::DanglingAttachment,
                          "attachment of '" + user + "' references unknown base station '" + bs + "'");
  }
  for (const auto& [key, taps] : sc.fir_profiles) {
    if (!sc.find(key.first) || !sc.find(key.second))
      throw ScenarioError(ScenarioErrorKind::UnknownNode,
                          "FIR profile references unknown node pair " + key.first + "->" + key.second);
    if (taps.taps.empty()) throw ScenarioError(ScenarioErrorKind::Schema, "FIR profile with no taps");
  }
  const auto jammers = sc.count(NodeRole::Jammer);
  if (jammers > 1) throw ScenarioError(ScenarioErrorKind::JammerCount, "more than one jammer node");
  if (jammers == 1 && !sc.jammer)
    throw ScenarioError(ScenarioErrorKind::JammerCount, "jammer node present without jammer configuration");
  if (sc.jammer) {
    check_band(sc.jammer->tuned_band, "jammer.tuned_band");
    try {
      validate(*sc.jammer);
    } catch (const ValidationError& e) {
      throw ScenarioError(ScenarioErrorKind::Schema, std::string("jammer: ") + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Construction

struct ClusterLayout {
  int n_bs = 10;
  int users_per_cluster = 4;
  double cluster_radius_m = 100.0;
  double inter_bs_spacing_m = 500.0;
  double bs_tx_power_dbm = 20.0;
  double user_tx_power_dbm = 23.0;
};

inline std::string bs_id(int cluster) { return "bs" + std::to_string(cluster); }
inline std::string user_id(int cluster, int index) {
  return "ue" + std::to_string(cluster) + "_" + std::to_string(index);
}

/// Base stations on a jittered square grid, each surrounded by users placed
/// uniformly in a disc and attached to it.
inline Scenario build_clustered_scenario(const ClusterLayout& layout, std::uint64_t seed) {
  if (layout.n_bs < 1) throw ValidationError("n_bs", "must be >= 1");
  if (layout.users_per_cluster < 0) throw ValidationError("users_per_cluster", "must be >= 0");
  if (!(layout.cluster_radius_m > 0.0)) throw ValidationError("cluster_radius_m", "must be positive");
  if (!(layout.inter_bs_spacing_m > 0.0)) throw ValidationError("inter_bs_spacing_m", "must be positive");

  Scenario sc;
  CounterRng rng(stream_key(seed, "layout", 0));
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(layout.n_bs))));
  const double jitter = 0.1 * layout.inter_bs_spacing_m;
  for (int c = 0; c < layout.n_bs; ++c) {
    Node bs;
    bs.id = bs_id(c);
    bs.role = NodeRole::BaseStation;
    bs.cluster = c;
    bs.tx_power_dbm = layout.bs_tx_power_dbm;
    bs.band = sc.downlink_band;
    bs.position_m = {(c % cols) * layout.inter_bs_spacing_m + jitter * (2.0 * rng.uniform() - 1.0),
                     (c / cols) * layout.inter_bs_spacing_m + jitter * (2.0 * rng.uniform() - 1.0)};
    sc.nodes.push_back(bs);
  }
  for (int c = 0; c < layout.n_bs; ++c) {
    const Position center = sc.nodes[static_cast<std::size_t>(c)].position_m;
    for (int u = 0; u < layout.users_per_cluster; ++u) {
      Node ue;
      ue.id = user_id(c, u);
      ue.role = NodeRole::User;
      ue.cluster = c;
      ue.tx_power_dbm = layout.user_tx_power_dbm;
      ue.band = sc.uplink_band;
      const double r = layout.cluster_radius_m * std::sqrt(rng.uniform());
      const double theta = 2.0 * std::numbers::pi * rng.uniform();
      ue.position_m = {center.x + r * std::cos(theta), center.y + r * std::sin(theta)};
      sc.nodes.push_back(ue);
      sc.attachments[ue.id] = bs_id(c);
    }
  }
  validate(sc);
  return sc;
}

inline Scenario build_clustered_scenario(int n_bs, int users_per_cluster, double cluster_radius_m,
                                         double inter_bs_spacing_m, std::uint64_t seed) {
  ClusterLayout layout;
  layout.n_bs = n_bs;
  layout.users_per_cluster = users_per_cluster;
  layout.cluster_radius_m = cluster_radius_m;
  layout.inter_bs_spacing_m = inter_bs_spacing_m;
  return build_clustered_scenario(layout, seed);
}

/// Turn user `replaced_node_id` into the jammer. Position and cluster are kept;
/// the user's attachment is dropped.
inline Scenario place_jammer(Scenario scenario, const std::string& replaced_node_id, JammerState jammer_cfg,
                             std::optional<double> tx_power_dbm = std::nullopt) {
  Node* node = scenario.find(replaced_node_id);
  if (!node) throw ScenarioError(ScenarioErrorKind::UnknownNode, "no node with id '" + replaced_node_id + "'");
  if (node->role != NodeRole::User)
    throw ScenarioError(ScenarioErrorKind::InvalidRole, "only users can be replaced by a jammer ('" +
                                                            replaced_node_id + "' is not a user)");
  if (scenario.jammer_node()) throw ScenarioError(ScenarioErrorKind::JammerCount, "scenario already has a jammer");
  node->role = NodeRole::Jammer;
  node->band = jammer_cfg.tuned_band;
  node->hop.reset();
  if (tx_power_dbm) node->tx_power_dbm = *tx_power_dbm;
  scenario.attachments.erase(replaced_node_id);
  std::erase_if(scenario.fir_profiles,
                [&](const auto& kv) { return kv.first.first == replaced_node_id || kv.first.second == replaced_node_id; });
  scenario.jammer = std::move(jammer_cfg);
  validate(scenario);
  return scenario;
}

/// Remove a node and everything that references it.
inline Scenario remove_node(Scenario scenario, const std::string& id) {
  const Node* node = scenario.find(id);
  if (!node) throw ScenarioError(ScenarioErrorKind::UnknownNode, "no node with id '" + id + "'");
  if (node->role == NodeRole::Jammer) scenario.jammer.reset();
  std::erase_if(scenario.nodes, [&](const Node& n) { return n.id == id; });
  std::erase_if(scenario.attachments, [&](const auto& kv) { return kv.first == id || kv.second == id; });
  std::erase_if(scenario.fir_profiles,
                [&](const auto& kv) { return kv.first.first == id || kv.first.second == id; });
  return scenario;
}

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const Node& n) {
  Json j{{"id", n.id},
         {"role", n.role},
         {"position_m", {n.position_m.x, n.position_m.y}},
         {"cluster", n.cluster},
         {"tx_power_dbm", n.tx_power_dbm},
         {"band", to_json(n.band)}};
  if (n.n_subbands) j["n_subbands"] = *n.n_subbands;
  if (n.hop) j["hop"] = Json{{"dwell_s", n.hop->dwell_s}, {"centers_hz", n.hop->centers_hz}};
  return j;
}

inline Json to_json(const Scenario& sc) {
  Json nodes = Json::array();
  for (const auto& n : sc.nodes) nodes.push_back(to_json(n));
  Json fir = Json::array();
  for (const auto& [key, taps] : sc.fir_profiles) {
    Json t = Json::array();
    for (const auto& c : taps.taps) t.push_back({c.real(), c.imag()});
    fir.push_back(Json{{"tx", key.first}, {"rx", key.second}, {"taps", t}});
  }
  Json j{{"schema_version", kSchemaVersion},
         {"path_loss", to_json(sc.path_loss)},
         {"noise_floor_dbm_per_hz", sc.noise_floor_dbm_per_hz},
         {"uplink_band", to_json(sc.uplink_band)},
         {"downlink_band", to_json(sc.downlink_band)},
         {"n_subbands", sc.n_subbands},
         {"cap_bps_per_hz", sc.cap_bps_per_hz},
         {"link_status",
          {{"detach_thresh_db", sc.link_status.detach_thresh_db},
           {"attach_thresh_db", sc.link_status.attach_thresh_db},
           {"dwell_s", sc.link_status.dwell_s}}},
         {"nodes", nodes},
         {"attachments", sc.attachments},
         {"fir_profiles", fir}};
  if (sc.jammer) j["jammer"] = to_json(*sc.jammer);
  return j;
}

/// Parse and validate a scenario document. Omitted optional fields take the
/// defaults of `Scenario` / `Node`; node bands default by role (base stations
/// on the downlink, users on the uplink, the jammer on its tuned band).
inline Scenario scenario_from_json(const Json& j) {
  Scenario sc;
  try {
    if (!j.is_object()) throw ScenarioError(ScenarioErrorKind::Schema, "scenario document must be an object");
    const int version = j.value("schema_version", kSchemaVersion);
    if (version != kSchemaVersion)
      throw ScenarioError(ScenarioErrorKind::Schema, "unsupported schema_version " + std::to_string(version));
    if (j.contains("path_loss")) sc.path_loss = path_loss_from_json(j["path_loss"]);
    sc.noise_floor_dbm_per_hz = j.value("noise_floor_dbm_per_hz", sc.noise_floor_dbm_per_hz);
    if (j.contains("uplink_band")) sc.uplink_band = band_from_json(j["uplink_band"]);
    if (j.contains("downlink_band")) sc.downlink_band = band_from_json(j["downlink_band"]);
    sc.n_subbands = j.value("n_subbands", sc.n_subbands);
    sc.cap_bps_per_hz = j.value("cap_bps_per_hz", sc.cap_bps_per_hz);
    if (j.contains("link_status")) {
      const auto& ls = j["link_status"];
      sc.link_status.detach_thresh_db = ls.value("detach_thresh_db", sc.link_status.detach_thresh_db);
      sc.link_status.attach_thresh_db = ls.value("attach_thresh_db", sc.link_status.attach_thresh_db);
      sc.link_status.dwell_s = ls.value("dwell_s", sc.link_status.dwell_s);
    }
    if (j.contains("jammer")) sc.jammer = jammer_from_json(j["jammer"]);
    if (!j.contains("nodes") || !j["nodes"].is_array())
      throw ScenarioError(ScenarioErrorKind::Schema, "missing nodes array");
    for (const auto& jn : j["nodes"]) {
      Node n;
      n.id = jn.at("id").get<std::string>();
      const auto role = jn.value("role", std::string("User"));
      if (role == "BaseStation") n.role = NodeRole::BaseStation;
      else if (role == "User") n.role = NodeRole::User;
      else if (role == "Jammer") n.role = NodeRole::Jammer;
      else throw ScenarioError(ScenarioErrorKind::Schema, "node '" + n.id + "' has unknown role " + role);
      const auto& pos = jn.at("position_m");
      n.position_m = {pos.at(0).get<double>(), pos.at(1).get<double>()};
      n.cluster = jn.value("cluster", 0);
      n.tx_power_dbm = jn.value("tx_power_dbm", n.role == NodeRole::BaseStation ? 20.0 : 23.0);
      if (jn.contains("band")) {
        n.band = band_from_json(jn["band"]);
      } else if (n.role == NodeRole::BaseStation) {
        n.band = sc.downlink_band;
      } else if (n.role == NodeRole::Jammer && sc.jammer) {
        n.band = sc.jammer->tuned_band;
      } else {
        n.band = sc.uplink_band;
      }
      if (jn.contains("n_subbands")) n.n_subbands = jn["n_subbands"].get<int>();
      if (jn.contains("hop")) {
        HopPattern hop;
        hop.dwell_s = jn["hop"].value("dwell_s", hop.dwell_s);
        hop.centers_hz = jn["hop"].at("centers_hz").get<std::vector<double>>();
        n.hop = hop;
      }
      sc.nodes.push_back(std::move(n));
    }
    if (j.contains("attachments"))
      sc.attachments = j["attachments"].get<std::map<std::string, std::string>>();
    if (j.contains("fir_profiles")) {
      for (const auto& f : j["fir_profiles"]) {
        FirTaps taps;
        for (const auto& t : f.at("taps")) taps.taps.emplace_back(t.at(0).get<double>(), t.at(1).get<double>());
        sc.fir_profiles[{f.at("tx").get<std::string>(), f.at("rx").get<std::string>()}] = taps;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(ScenarioErrorKind::Parse, std::string("malformed scenario: ") + e.what());
  } catch (const ValidationError& e) {
    throw ScenarioError(ScenarioErrorKind::Schema, e.what());
  }
  validate(sc);
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(ScenarioErrorKind::Parse, "cannot open scenario file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(ScenarioErrorKind::Parse, "cannot parse " + path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

inline void save_scenario(const std::filesystem::path& path, const Scenario& sc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(sc).dump(2) << '\n';
}

}  // namespace jamemu
