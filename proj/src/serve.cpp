#include "warpbench/serve.hpp"

#include <fstream>
#include <set>

#include <httplib.h>

#include "warpbench/version.hpp"

namespace warpbench {

void ServeConfig::validate() const {
  if (checkpoints.empty()) {
    throw ConfigError("serve: at least one checkpoint is required");
  }
  std::set<std::string> seen;
  for (const auto& [name, path] : checkpoints) {
    if (name.empty()) throw ConfigError("serve: empty checkpoint name");
    if (path.empty()) {
      throw ConfigError("serve: checkpoint '" + name + "' has no path");
    }
    if (!seen.insert(name).second) {
      throw ConfigError("serve: duplicate checkpoint name '" + name + "'");
    }
  }
  if (bind_port < 0 || bind_port > 65535) {
    throw ConfigError("serve: port out of range");
  }
  if (default_k < 1) throw ConfigError("serve: default k must be >= 1");
}

ServeConfig parse_serve_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("serve: cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("serve: invalid JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("serve: config must be an object");

  ServeConfig cfg;
  bool have_checkpoints = false;
  for (auto& [key, value] : j.items()) {
    if (key == "checkpoints") {
      if (!value.is_object() || value.empty()) {
        throw ConfigError("serve: 'checkpoints' must be a non-empty object");
      }
      for (auto& [name, p] : value.items()) {
        cfg.checkpoints.emplace_back(name, p.get<std::string>());
      }
      have_checkpoints = true;
    } else if (key == "bind") {
      std::string bind = value.get<std::string>();
      auto colon = bind.rfind(':');
      if (colon == std::string::npos) {
        throw ConfigError("serve: 'bind' must be host:port");
      }
      cfg.bind_host = bind.substr(0, colon);
      try {
        cfg.bind_port = std::stoi(bind.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("serve: invalid port in 'bind'");
      }
    } else if (key == "default_k") {
      cfg.default_k = value.get<std::size_t>();
    } else if (key == "filter_seen") {
      cfg.default_filter_seen = value.get<bool>();
    } else if (key == "item_aliases") {
      cfg.alias_path = value.get<std::string>();
    } else if (key == "protocol_version") {
      cfg.protocol_version = value.get<std::string>();
    } else {
      throw ConfigError("serve: unknown config key '" + key + "'");
    }
  }
  if (!have_checkpoints) {
    throw ConfigError("serve: config needs a 'checkpoints' object");
  }
  cfg.validate();
  return cfg;
}

ModelRegistry ModelRegistry::load(const ServeConfig& cfg) {
  cfg.validate();
  ModelRegistry reg;
  for (const auto& [name, path] : cfg.checkpoints) {
    reg.models_.emplace(name, load_checkpoint(path));
    reg.names_.push_back(name);
  }
  if (!cfg.alias_path.empty()) {
    std::ifstream in(cfg.alias_path);
    if (!in) throw ConfigError("serve: cannot open alias file " + cfg.alias_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw ConfigError("serve: " + cfg.alias_path + ":" +
                          std::to_string(line_no) +
                          ": alias rows are raw_id<TAB>name");
      }
      std::string raw = line.substr(0, tab);
      std::string display = line.substr(tab + 1);
      reg.alias_[raw] = display;
      reg.reverse_alias_[display] = raw;
    }
  }
  return reg;
}

const TrainedModel* ModelRegistry::find(const std::string& name) const {
  auto it = models_.find(name);
  return it == models_.end() ? nullptr : &it->second;
}

std::string ModelRegistry::alias(const std::string& raw_item) const {
  auto it = alias_.find(raw_item);
  return it == alias_.end() ? std::string() : it->second;
}

std::string ModelRegistry::reverse_alias(const std::string& display) const {
  auto it = reverse_alias_.find(display);
  return it == reverse_alias_.end() ? std::string() : it->second;
}

QueryOutcome run_query(const ModelRegistry& registry,
                       const RecommendQuery& query) {
  QueryOutcome out;
  const TrainedModel* model = registry.find(query.model);
  if (!model) {
    out.code = 404;
    out.error_code = "unknown-model";
    out.message = "no checkpoint named '" + query.model + "'";
    return out;
  }

  try {
    if (query.user_id) {
      auto idx = model->train->user_map->lookup(*query.user_id);
      if (!idx) {
        out.code = 422;
        out.error_code = "unknown-user";
        out.message = "user '" + *query.user_id +
                      "' is not in the training ID map and no item_sequence "
                      "was given";
        return out;
      }
      RecommendationList recs =
          recommend(*model, {*idx}, query.k, query.filter_seen);
      for (const auto& [item, score] : recs.items[0]) {
        out.ranked.emplace_back(model->train->item_map->raw(item), score);
      }
      return out;
    }

    // sequence path: resolve raw ids, then display names via the alias map
    std::vector<std::string> resolved;
    resolved.reserve(query.item_sequence.size());
    for (const std::string& entry : query.item_sequence) {
      if (model->train->item_map->lookup(entry)) {
        resolved.push_back(entry);
        continue;
      }
      std::string raw = registry.reverse_alias(entry);
      resolved.push_back(raw.empty() ? entry : raw);
    }
    ItemQueryResult res = recommend_from_items(*model, resolved, query.k);
    out.warnings = std::move(res.warnings);
    for (const auto& [item, score] : res.items) {
      out.ranked.emplace_back(model->train->item_map->raw(item), score);
    }
    return out;
  } catch (const ModelError& e) {
    out.code = 422;
    out.error_code = "unprocessable";
    out.message = e.what();
    return out;
  }
}

nlohmann::json outcome_to_json(const QueryOutcome& outcome,
                               const ModelRegistry& registry,
                               const std::string& model_name) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& [raw, score] : outcome.ranked) {
    nlohmann::json row = {{"item_id", raw}, {"score", score}};
    std::string display = registry.alias(raw);
    if (!display.empty()) row["name"] = display;
    items.push_back(std::move(row));
  }
  return {{"model", model_name},
          {"items", items},
          {"warnings", outcome.warnings}};
}

namespace {

nlohmann::json error_body(const std::string& code, const std::string& msg) {
  return {{"error", {{"code", code}, {"message", msg}}}};
}

struct ParsedRequest {
  bool ok = false;
  std::string error;
  RecommendQuery query;
};

ParsedRequest parse_query_json(const nlohmann::json& body,
                               const ServeConfig& cfg) {
  ParsedRequest p;
  if (!body.is_object()) {
    p.error = "body must be a JSON object";
    return p;
  }
  if (!body.contains("model") || !body["model"].is_string()) {
    p.error = "missing string field 'model'";
    return p;
  }
  p.query.model = body["model"].get<std::string>();
  bool has_user = body.contains("user_id");
  bool has_seq = body.contains("item_sequence");
  if (has_user == has_seq) {
    p.error = "exactly one of 'user_id' or 'item_sequence' is required";
    return p;
  }
  if (has_user) {
    if (!body["user_id"].is_string()) {
      p.error = "'user_id' must be a string";
      return p;
    }
    p.query.user_id = body["user_id"].get<std::string>();
  } else {
    if (!body["item_sequence"].is_array() || body["item_sequence"].empty()) {
      p.error = "'item_sequence' must be a non-empty array of strings";
      return p;
    }
    for (const auto& v : body["item_sequence"]) {
      if (!v.is_string()) {
        p.error = "'item_sequence' must contain strings only";
        return p;
      }
      p.query.item_sequence.push_back(v.get<std::string>());
    }
  }
  p.query.k = cfg.default_k;
  if (body.contains("k")) {
    if (!body["k"].is_number_unsigned() || body["k"].get<std::size_t>() < 1) {
      p.error = "'k' must be a positive integer";
      return p;
    }
    p.query.k = body["k"].get<std::size_t>();
  }
  p.query.filter_seen = cfg.default_filter_seen;
  if (body.contains("filter_seen")) {
    if (!body["filter_seen"].is_boolean()) {
      p.error = "'filter_seen' must be a boolean";
      return p;
    }
    p.query.filter_seen = body["filter_seen"].get<bool>();
  }
  for (auto& [key, value] : body.items()) {
    (void)value;
    if (key != "model" && key != "user_id" && key != "item_sequence" &&
        key != "k" && key != "filter_seen") {
      p.error = "unknown field '" + key + "'";
      return p;
    }
  }
  p.ok = true;
  return p;
}

}  // namespace

void register_rest_routes(httplib::Server& server,
                          const ModelRegistry& registry,
                          const ServeConfig& cfg,
                          std::chrono::steady_clock::time_point started) {
  server.Post("/recommend", [&registry, cfg](const httplib::Request& req,
                                             httplib::Response& res) {
    auto t0 = std::chrono::steady_clock::now();
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content(error_body("bad-request", "invalid JSON body").dump(),
                      "application/json");
      return;
    }
    ParsedRequest parsed = parse_query_json(body, cfg);
    if (!parsed.ok) {
      res.status = 400;
      res.set_content(error_body("bad-request", parsed.error).dump(),
                      "application/json");
      return;
    }
    QueryOutcome outcome = run_query(registry, parsed.query);
    if (outcome.code != 0) {
      res.status = outcome.code;
      res.set_content(error_body(outcome.error_code, outcome.message).dump(),
                      "application/json");
      return;
    }
    nlohmann::json resp = outcome_to_json(outcome, registry,
                                          parsed.query.model);
    resp["latency_ms"] =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    res.set_content(resp.dump(), "application/json");
  });

  server.Get("/models", [&registry](const httplib::Request&,
                                    httplib::Response& res) {
    nlohmann::json models = nlohmann::json::array();
    for (const std::string& name : registry.names()) {
      const TrainedModel* m = registry.find(name);
      models.push_back({{"name", name},
                        {"family", m->model->family()},
                        {"hyperparameters", m->model->hyperparameters()},
                        {"n_users", m->n_users()},
                        {"n_items", m->n_items()}});
    }
    res.set_content(nlohmann::json{{"models", models}}.dump(),
                    "application/json");
  });

  server.Get("/health", [started](const httplib::Request&,
                                  httplib::Response& res) {
    double uptime = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - started)
                        .count();
    nlohmann::json health = {{"status", "ok"},
                             {"engine_version", kEngineVersion},
                             {"uptime_seconds", uptime}};
    res.set_content(health.dump(), "application/json");
  });
}

int serve_rest(const ModelRegistry& registry, const ServeConfig& cfg) {
  httplib::Server server;
  register_rest_routes(server, registry, cfg,
                       std::chrono::steady_clock::now());
  std::fprintf(stderr, "listening on %s:%d\n", cfg.bind_host.c_str(),
               cfg.bind_port);
  return server.listen(cfg.bind_host, cfg.bind_port) ? 0 : 2;
}

namespace {

nlohmann::json rpc_error(const nlohmann::json& id, int code,
                         const std::string& message) {
  return {{"jsonrpc", "2.0"}, {"id", id},
          {"error", {{"code", code}, {"message", message}}}};
}

nlohmann::json rpc_result(const nlohmann::json& id, nlohmann::json result) {
  return {{"jsonrpc", "2.0"}, {"id", id}, {"result", std::move(result)}};
}

nlohmann::json tool_schema() {
  return {
      {"type", "object"},
      {"properties",
       {{"model", {{"type", "string"},
                   {"description", "checkpoint name to query"}}},
        {"user_id", {{"type", "string"},
                     {"description", "raw user id from the training data"}}},
        {"item_sequence",
         {{"type", "array"},
          {"items", {{"type", "string"}}},
          {"description", "raw item ids (or aliased names) to seed scoring"}}},
        {"top_k", {{"type", "integer"}, {"minimum", 1}}},
        {"filter_seen", {{"type", "boolean"}}}}},
      {"required", nlohmann::json::array({"model"})},
  };
}

}  // namespace

std::string mcp_handle_line(const ModelRegistry& registry,
                            const ServeConfig& cfg, const std::string& line) {
  nlohmann::json msg;
  try {
    msg = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    return rpc_error(nullptr, -32700, "parse error").dump();
  }
  auto request_id = [&msg]() -> nlohmann::json {
    return msg.is_object() && msg.contains("id") ? msg["id"]
                                                 : nlohmann::json();
  };
  if (!msg.is_object() || msg.value("jsonrpc", "") != "2.0" ||
      !msg.contains("method") || !msg["method"].is_string()) {
    return rpc_error(request_id(), -32600, "invalid request").dump();
  }

  const bool is_notification = !msg.contains("id");
  nlohmann::json id = request_id();
  std::string method = msg["method"].get<std::string>();
  nlohmann::json params = msg.value("params", nlohmann::json::object());

  if (method == "initialize") {
    nlohmann::json result = {
        {"protocolVersion", cfg.protocol_version},
        {"capabilities", {{"tools", nlohmann::json::object()}}},
        {"serverInfo", {{"name", "warpbench"}, {"version", kEngineVersion}}}};
    return is_notification ? std::string()
                           : rpc_result(id, std::move(result)).dump();
  }
  if (method == "notifications/initialized") {
    return std::string();
  }
  if (method == "tools/list") {
    nlohmann::json tools = nlohmann::json::array();
    tools.push_back(
        {{"name", "recommend"},
         {"description",
          "Rank catalog items for a known user id or an item sequence, "
          "using one of the served recommender checkpoints."},
         {"inputSchema", tool_schema()}});
    return is_notification
               ? std::string()
               : rpc_result(id, {{"tools", tools}}).dump();
  }
  if (method == "tools/call") {
    if (!params.is_object() || params.value("name", "") != "recommend") {
      return is_notification
                 ? std::string()
                 : rpc_error(id, -32602, "unknown tool").dump();
    }
    nlohmann::json args = params.value("arguments", nlohmann::json::object());
    // reuse the REST body validation, mapping top_k to its REST name
    if (args.contains("top_k")) {
      args["k"] = args["top_k"];
      args.erase("top_k");
    }
    ParsedRequest parsed = parse_query_json(args, cfg);
    if (!parsed.ok) {
      return is_notification
                 ? std::string()
                 : rpc_error(id, -32602, parsed.error).dump();
    }
    QueryOutcome outcome = run_query(registry, parsed.query);
    if (outcome.code != 0) {
      nlohmann::json content = nlohmann::json::array();
      content.push_back({{"type", "text"},
                         {"text", outcome.error_code + ": " + outcome.message}});
      return is_notification
                 ? std::string()
                 : rpc_result(id, {{"content", content}, {"isError", true}})
                       .dump();
    }
    nlohmann::json payload =
        outcome_to_json(outcome, registry, parsed.query.model);
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", payload.dump()}});
    return is_notification
               ? std::string()
               : rpc_result(id, {{"content", content}, {"isError", false}})
                     .dump();
  }

  return is_notification ? std::string()
                         : rpc_error(id, -32601, "method not found").dump();
}

int run_mcp_stdio(const ModelRegistry& registry, const ServeConfig& cfg,
                  std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string response = mcp_handle_line(registry, cfg, line);
    if (!response.empty()) {
      out << response << '\n';
      out.flush();
    }
  }
  return 0;
}

}  // namespace warpbench
