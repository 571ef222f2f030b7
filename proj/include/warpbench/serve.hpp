#pragma once

#include <chrono>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "warpbench/models.hpp"

namespace httplib {
class Server;
}

namespace warpbench {

struct ServeConfig {
  // (name, checkpoint path) in declaration order; names unique, >= 1 entry
  std::vector<std::pair<std::string, std::string>> checkpoints;
  std::string bind_host = "127.0.0.1";
  int bind_port = 8080;
  std::size_t default_k = 10;
  bool default_filter_seen = true;
  std::string alias_path;  // optional TSV: raw item id <tab> display name
  std::string protocol_version = "2024-11-05";

  void validate() const;
};

ServeConfig parse_serve_config(const std::string& path);

// Immutable set of loaded checkpoints plus the optional alias table.
// Shared read-only by every transport.
class ModelRegistry {
 public:
  static ModelRegistry load(const ServeConfig& cfg);

  const TrainedModel* find(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  // display name for a raw item id; empty when unaliased
  std::string alias(const std::string& raw_item) const;
  // raw item id for a display name; empty when unknown
  std::string reverse_alias(const std::string& display) const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, TrainedModel> models_;
  std::map<std::string, std::string> alias_;
  std::map<std::string, std::string> reverse_alias_;
};

struct RecommendQuery {
  std::string model;
  std::optional<std::string> user_id;
  std::vector<std::string> item_sequence;
  std::size_t k = 10;
  bool filter_seen = true;
};

struct QueryOutcome {
  // 0 = ok; 404 unknown model; 422 unknown user / unusable sequence;
  // mirrors the REST status mapping so both transports share one core
  int code = 0;
  std::string error_code;  // machine-readable, e.g. "unknown-user"
  std::string message;
  std::vector<std::pair<std::string, double>> ranked;  // raw item id, score
  std::vector<std::string> warnings;
};

// The single inference core both REST and MCP delegate to. Sequence
// entries resolve as raw item ids first, then through the alias table.
QueryOutcome run_query(const ModelRegistry& registry,
                       const RecommendQuery& query);

nlohmann::json outcome_to_json(const QueryOutcome& outcome,
                               const ModelRegistry& registry,
                               const std::string& model_name);

// Registers POST /recommend, GET /models, GET /health on an httplib
// server. `started` anchors the health uptime field.
void register_rest_routes(httplib::Server& server,
                          const ModelRegistry& registry,
                          const ServeConfig& cfg,
                          std::chrono::steady_clock::time_point started);

// Blocking REST entry point used by the CLI.
int serve_rest(const ModelRegistry& registry, const ServeConfig& cfg);

// Handles one newline-delimited JSON-RPC 2.0 message. Returns the
// serialized response, or an empty string for notifications.
std::string mcp_handle_line(const ModelRegistry& registry,
                            const ServeConfig& cfg, const std::string& line);

// Sequential stdio loop: one request line, one response line, in order.
int run_mcp_stdio(const ModelRegistry& registry, const ServeConfig& cfg,
                  std::istream& in, std::ostream& out);

}  // namespace warpbench
