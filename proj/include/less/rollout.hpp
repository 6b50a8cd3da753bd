#pragma once

// Rollout data model and the line-delimited record formats.
//
// Both the input rollout format and the shaped-advantage format are
// newline-delimited JSON objects, one response per line, after a leading
// version header. Responses sharing a query_id and appearing contiguously
// form one group.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace less {

using TokenId = std::uint32_t;

inline constexpr std::string_view kRolloutHeader = "#less-rollouts v1";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Malformed record text. Carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed record that violates a data-model invariant.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string query_id, std::size_t line, const std::string& what)
      : std::runtime_error("query '" + query_id + "' (line " + std::to_string(line) +
                           "): " + what),
        query_id_(std::move(query_id)),
        line_(line) {}
  const std::string& query_id() const noexcept { return query_id_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string query_id_;
  std::size_t line_;
};

/// Caller broke an operation's precondition (e.g. writing an unshaped response).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct TokenRecord {
  TokenId token_id = 0;
  double entropy = 0.0;  // nats
};

struct Response {
  std::vector<TokenRecord> tokens;
  double reward = 0.0;
  bool correct = false;
  std::optional<double> base_advantage;
  std::optional<std::vector<double>> shaped;

  std::size_t size() const noexcept { return tokens.size(); }

  std::vector<double> entropies() const {
    std::vector<double> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.entropy);
    return out;
  }

  std::vector<TokenId> token_ids() const {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.token_id);
    return out;
  }
};

struct RolloutGroup {
  std::string query_id;
  std::vector<Response> responses;
  // Set by the loader when G < 2; downstream shaping skips such groups.
  bool undersized = false;

  std::size_t size() const noexcept { return responses.size(); }

  std::size_t num_correct() const noexcept {
    std::size_t n = 0;
    for (const auto& r : responses) n += r.correct ? 1 : 0;
    return n;
  }
  std::size_t num_incorrect() const noexcept { return responses.size() - num_correct(); }
};

/// Checks the Response invariants. Returns an empty string when valid.
inline std::string validate_response(const Response& r) {
  if (r.tokens.empty()) return "response has no tokens";
  for (std::size_t j = 0; j < r.tokens.size(); ++j) {
    const double e = r.tokens[j].entropy;
    if (!std::isfinite(e)) return "non-finite entropy at token " + std::to_string(j);
    if (e < 0.0) return "negative entropy at token " + std::to_string(j);
  }
  if (!std::isfinite(r.reward)) return "non-finite reward";
  if (r.shaped && r.shaped->size() != r.tokens.size()) {
    return "shaped length " + std::to_string(r.shaped->size()) + " != token count " +
           std::to_string(r.tokens.size());
  }
  return {};
}

// ---------------------------------------------------------------------------
// Record parsing
// ---------------------------------------------------------------------------

namespace detail {

// Reals may arrive as JSON numbers or as strings ("NaN", "inf", "1e-3").
// Strings are parsed so that non-finite values surface as validation errors
// rather than JSON syntax errors.
inline std::optional<double> as_real(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    const double d = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) return std::nullopt;
    return d;
  }
  return std::nullopt;
}

inline std::vector<double> real_array(const nlohmann::json& obj, const char* key,
                                      std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_array())
    throw ParseError(line, std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    const auto d = as_real(v);
    if (!d) throw ParseError(line, std::string("field '") + key + "' holds a non-real value");
    out.push_back(*d);
  }
  return out;
}

struct ParsedLine {
  std::string query_id;
  Response response;
};

inline ParsedLine parse_record(const std::string& text, std::size_t line) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line, std::string("malformed record: ") + e.what());
  }
  if (!obj.is_object()) throw ParseError(line, "record is not an object");

  ParsedLine out;
  const auto qid = obj.find("query_id");
  if (qid == obj.end() || !qid->is_string()) throw ParseError(line, "missing string 'query_id'");
  out.query_id = qid->get<std::string>();

  const auto toks = obj.find("tokens");
  if (toks == obj.end() || !toks->is_array()) throw ParseError(line, "missing array 'tokens'");
  std::vector<TokenId> ids;
  ids.reserve(toks->size());
  for (const auto& v : *toks) {
    if (!v.is_number_integer()) throw ParseError(line, "token ids must be integers");
    const auto id = v.get<std::int64_t>();
    if (id < 0 || id > std::numeric_limits<TokenId>::max())
      throw ParseError(line, "token id out of range: " + std::to_string(id));
    ids.push_back(static_cast<TokenId>(id));
  }
  const auto ents = real_array(obj, "entropies", line);
  if (ents.size() != ids.size()) {
    throw ValidationError(out.query_id, line,
                          "entropies length " + std::to_string(ents.size()) +
                              " != tokens length " + std::to_string(ids.size()));
  }

  const auto rew = obj.find("reward");
  if (rew == obj.end()) throw ParseError(line, "missing 'reward'");
  const auto reward = as_real(*rew);
  if (!reward) throw ParseError(line, "'reward' is not a real");

  const auto cor = obj.find("correct");
  if (cor == obj.end()) throw ParseError(line, "missing 'correct'");
  bool correct = false;
  if (cor->is_boolean()) {
    correct = cor->get<bool>();
  } else if (cor->is_number_integer() && (cor->get<std::int64_t>() == 0 || cor->get<std::int64_t>() == 1)) {
    correct = cor->get<std::int64_t>() == 1;
  } else {
    throw ParseError(line, "'correct' must be 0 or 1");
  }

  Response& r = out.response;
  r.tokens.resize(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) r.tokens[j] = {ids[j], ents[j]};
  r.reward = *reward;
  r.correct = correct;

  if (const auto ba = obj.find("base_advantage"); ba != obj.end()) {
    const auto d = as_real(*ba);
    if (!d) throw ParseError(line, "'base_advantage' is not a real");
    if (!std::isfinite(*d)) throw ValidationError(out.query_id, line, "non-finite base_advantage");
    r.base_advantage = *d;
  }
  if (obj.contains("shaped")) {
    auto shaped = real_array(obj, "shaped", line);
    for (double v : shaped)
      if (!std::isfinite(v)) throw ValidationError(out.query_id, line, "non-finite shaped value");
    r.shaped = std::move(shaped);
  }

  if (const auto msg = validate_response(r); !msg.empty())
    throw ValidationError(out.query_id, line, msg);
  return out;
}

}  // namespace detail

/// Reads every group from a rollout (or shaped-advantage) stream, in input order.
///
/// The header line is required unless the stream is empty. Blank lines are
/// ignored. Groups with fewer than two responses are kept and flagged
/// `undersized`.
inline std::vector<RolloutGroup> load_rollout_groups(std::istream& in) {
  std::vector<RolloutGroup> groups;
  std::string text;
  std::size_t line = 0;
  bool header_seen = false;

  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (!header_seen) {
      if (text.empty()) continue;
      if (text != kRolloutHeader)
        throw ParseError(line, "expected header '" + std::string(kRolloutHeader) + "'");
      header_seen = true;
      continue;
    }
    if (text.find_first_not_of(" \t") == std::string::npos) continue;

    auto parsed = detail::parse_record(text, line);
    if (groups.empty() || groups.back().query_id != parsed.query_id) {
      groups.push_back(RolloutGroup{parsed.query_id, {}, false});
    }
    groups.back().responses.push_back(std::move(parsed.response));
  }
  for (auto& g : groups) g.undersized = g.responses.size() < 2;
  return groups;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json base_record(const std::string& query_id, const Response& r) {
  nlohmann::ordered_json obj;
  obj["query_id"] = query_id;
  auto toks = nlohmann::ordered_json::array();
  auto ents = nlohmann::ordered_json::array();
  for (const auto& t : r.tokens) {
    toks.push_back(t.token_id);
    ents.push_back(t.entropy);
  }
  obj["tokens"] = std::move(toks);
  obj["entropies"] = std::move(ents);
  obj["reward"] = r.reward;
  obj["correct"] = r.correct ? 1 : 0;
  return obj;
}

}  // namespace detail

/// Writes groups in the plain rollout format (no advantage fields).
inline void write_rollout_groups(const std::vector<RolloutGroup>& groups, std::ostream& out) {
  out << kRolloutHeader << '\n';
  for (const auto& g : groups)
    for (const auto& r : g.responses) out << detail::base_record(g.query_id, r).dump() << '\n';
}

/// Writes groups in the shaped-advantage format. Every response must carry
/// both `base_advantage` and `shaped`; nothing is written if one does not.
inline void write_shaped_groups(const std::vector<RolloutGroup>& groups, std::ostream& out) {
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      const auto& r = g.responses[i];
      if (!r.shaped || !r.base_advantage) {
        throw ContractError("query '" + g.query_id + "' response " + std::to_string(i) +
                            " has no shaped advantages");
      }
      if (r.shaped->size() != r.tokens.size()) {
        throw ContractError("query '" + g.query_id + "' response " + std::to_string(i) +
                            " has shaped length != token count");
      }
    }
  }
  out << kRolloutHeader << '\n';
  for (const auto& g : groups) {
    for (const auto& r : g.responses) {
      auto obj = detail::base_record(g.query_id, r);
      obj["base_advantage"] = *r.base_advantage;
      obj["shaped"] = *r.shaped;
      out << obj.dump() << '\n';
    }
  }
}

}  // namespace less
