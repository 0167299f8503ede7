#include "bap/external.hpp"

#include <set>
#include <unordered_map>

#include "json.hpp"

namespace bap {

using json = nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// The first ``` fenced block when there is one, surrounding prose dropped.
std::string_view strip_fences(std::string_view text) {
  text = trim(text);
  const auto open = text.find("```");
  if (open != std::string_view::npos) {
    text = text.substr(open);
    const auto nl = text.find('\n');
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    const auto close = text.find("```");
    if (close != std::string_view::npos) text = text.substr(0, close);
  }
  return trim(text);
}

std::vector<ExternalEntry> entries_from(const json& arr) {
  if (!arr.is_array()) throw ExternalParseError("\"faultLocalization\" is not an array");
  std::vector<ExternalEntry> out;
  for (const auto& item : arr) {
    if (!item.is_object()) throw ExternalParseError("faultLocalization entry is not an object");
    ExternalEntry e;
    if (item.contains("lineNumber")) {
      const auto& ln = item["lineNumber"];
      if (ln.is_number_integer()) {
        e.line_number = ln.get<std::int64_t>();
      } else if (ln.is_number_float()) {
        const double v = ln.get<double>();
        if (v == static_cast<double>(static_cast<std::int64_t>(v))) e.line_number = static_cast<std::int64_t>(v);
      } else if (ln.is_string()) {
        try {
          std::size_t used = 0;
          const auto s = ln.get<std::string>();
          const long long v = std::stoll(s, &used);
          if (used == s.size()) e.line_number = v;
        } catch (const std::exception&) {
        }
      }
    }
    if (item.contains("codeContent") && item["codeContent"].is_string()) {
      e.code_content = item["codeContent"].get<std::string>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ExternalEntry> entries_from_value(const json& j) {
  if (j.is_array()) {
    // Either a list of entries or a list of {"faultLocalization": ...} objects.
    if (!j.empty() && j[0].is_object() && j[0].contains("faultLocalization")) {
      std::vector<ExternalEntry> out;
      for (const auto& obj : j) {
        auto part = entries_from_value(obj);
        out.insert(out.end(), part.begin(), part.end());
      }
      return out;
    }
    return entries_from(j);
  }
  if (j.is_object() && j.contains("faultLocalization")) {
    const auto& fl = j["faultLocalization"];
    if (fl.is_object()) return entries_from(json::array({fl}));
    return entries_from(fl);
  }
  throw ExternalParseError("no \"faultLocalization\" field");
}

}  // namespace

std::vector<ExternalEntry> parse_fault_localization(std::string_view text) {
  const auto body = strip_fences(text);
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ExternalParseError(std::string("malformed JSON: ") + e.what());
  }
  return entries_from_value(j);
}

IngestResult resolve_entries(const std::vector<ExternalEntry>& entries, const CodeRecord& code) {
  const auto lines = split_lines(code.code);
  const auto n = static_cast<std::int64_t>(lines.size());
  IngestResult out;
  std::set<std::int32_t> seen;
  for (const auto& e : entries) {
    std::optional<std::int32_t> line;
    if (e.line_number && *e.line_number >= 1 && *e.line_number <= n) {
      line = static_cast<std::int32_t>(*e.line_number - 1);
    } else {
      const auto wanted = trim(e.code_content);
      if (!wanted.empty()) {
        for (std::size_t i = 0; i < lines.size(); ++i) {
          if (trim(lines[i]) == wanted) {
            line = static_cast<std::int32_t>(i);
            break;
          }
        }
      }
    }
    if (!line) {
      ++out.dropped;
      continue;
    }
    if (seen.insert(*line).second) out.order.push_back(*line);
  }
  return out;
}

IngestResult ingest_external(std::string_view text, const CodeRecord& code) {
  return resolve_entries(parse_fault_localization(text), code);
}

ExternalBatch ingest_external_file(std::string_view jsonl, const std::vector<CodeRecord>& corpus) {
  std::unordered_map<std::string, const CodeRecord*> by_id;
  for (const auto& c : corpus) by_id.emplace(c.sample_id, &c);

  ExternalBatch batch;
  std::size_t start = 0;
  std::size_t lineno = 0;
  while (start <= jsonl.size()) {
    auto nl = jsonl.find('\n', start);
    if (nl == std::string_view::npos) nl = jsonl.size();
    const auto line = trim(jsonl.substr(start, nl - start));
    start = nl + 1;
    ++lineno;
    if (line.empty()) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ExternalParseError("predictions line " + std::to_string(lineno) + " is not JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("sample_id") || !obj["sample_id"].is_string()) {
      throw ExternalParseError("predictions line " + std::to_string(lineno) + " has no sample_id");
    }
    SamplePrediction pred;
    pred.sample_id = obj["sample_id"].get<std::string>();
    const auto it = by_id.find(pred.sample_id);
    if (it == by_id.end()) throw EvalError("prediction for unknown sample id '" + pred.sample_id + "'");
    try {
      std::vector<ExternalEntry> entries;
      if (obj.contains("response")) {
        if (!obj["response"].is_string()) throw ExternalParseError("\"response\" is not a string");
        entries = parse_fault_localization(obj["response"].get<std::string>());
      } else {
        entries = entries_from_value(obj);
      }
      auto resolved = resolve_entries(entries, *it->second);
      batch.dropped_entries += resolved.dropped;
      pred.order = std::move(resolved.order);
    } catch (const ExternalParseError&) {
      ++batch.parse_failures;
      pred.order = std::nullopt;
    }
    batch.predictions.push_back(std::move(pred));
  }
  return batch;
}

}  // namespace bap
