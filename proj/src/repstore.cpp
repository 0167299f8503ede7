#include "bap/repstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>

#include "bap/io_util.hpp"
#include "json.hpp"

namespace bap {

using json = nlohmann::json;

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

[[noreturn]] void fail(RecordErrorKind kind, const std::string& what) { throw RecordError(kind, what); }

template <typename Int>
Int header_int(const json& h, const char* key, Int lo, Int hi) {
  if (!h.contains(key) || !h[key].is_number_integer()) fail(RecordErrorKind::BadHeader, std::string("missing integer field '") + key + "'");
  const auto v = h[key].get<long long>();
  if (v < static_cast<long long>(lo) || v > static_cast<long long>(hi)) {
    fail(RecordErrorKind::BadHeader, std::string("field '") + key + "' out of range: " + std::to_string(v));
  }
  return static_cast<Int>(v);
}

}  // namespace

std::string_view to_string(RecordErrorKind kind) {
  switch (kind) {
    case RecordErrorKind::BadMagic: return "BadMagic";
    case RecordErrorKind::VersionMismatch: return "VersionMismatch";
    case RecordErrorKind::Truncated: return "Truncated";
    case RecordErrorKind::TrailingBytes: return "TrailingBytes";
    case RecordErrorKind::BadHeader: return "BadHeader";
    case RecordErrorKind::NonFinite: return "NonFinite";
    case RecordErrorKind::TokenLineOutOfRange: return "TokenLineOutOfRange";
    case RecordErrorKind::InvariantViolation: return "InvariantViolation";
    case RecordErrorKind::Io: return "Io";
  }
  return "Unknown";
}

std::size_t RepRecord::line_count() const {
  std::int32_t mx = -1;
  for (auto v : token_line) mx = std::max(mx, v);
  return static_cast<std::size_t>(mx + 1);
}

bool operator==(const RepRecord& a, const RepRecord& b) {
  if (a.sample_id != b.sample_id || a.layer_k != b.layer_k || a.label != b.label ||
      a.token_line != b.token_line || a.buggy_lines != b.buggy_lines || a.provenance != b.provenance ||
      a.data.rows != b.data.rows || a.data.cols != b.data.cols) {
    return false;
  }
  // Bit-level comparison: 0.0 and -0.0 must not compare equal here.
  return a.data.values.empty() ||
         std::memcmp(a.data.values.data(), b.data.values.data(), a.data.values.size() * sizeof(float)) == 0;
}

void validate(const RepRecord& r) {
  if (r.data.rows == 0 || r.data.cols == 0) fail(RecordErrorKind::InvariantViolation, "T and d must be positive");
  if (r.data.values.size() != r.data.rows * r.data.cols) {
    fail(RecordErrorKind::InvariantViolation, "data has " + std::to_string(r.data.values.size()) + " entries, expected T*d");
  }
  if (r.token_line.size() != r.data.rows) {
    fail(RecordErrorKind::InvariantViolation, "token_line length differs from T");
  }
  for (std::size_t i = 0; i < r.data.values.size(); ++i) {
    if (!std::isfinite(r.data.values[i])) {
      fail(RecordErrorKind::NonFinite, "non-finite value at token " + std::to_string(i / r.data.cols));
    }
  }
  std::int32_t prev = -1;
  for (std::size_t t = 0; t < r.token_line.size(); ++t) {
    const auto v = r.token_line[t];
    if (v < -1) fail(RecordErrorKind::TokenLineOutOfRange, "token " + std::to_string(t) + " has line " + std::to_string(v));
    if (v < 0) continue;
    if (v < prev) fail(RecordErrorKind::TokenLineOutOfRange, "token_line decreases at token " + std::to_string(t));
    prev = v;
  }
  if (r.label != 0 && r.label != 1) fail(RecordErrorKind::InvariantViolation, "label must be 0 or 1");
  if (r.label == 0 && !r.buggy_lines.empty()) fail(RecordErrorKind::InvariantViolation, "clean record lists buggy lines");
  for (auto b : r.buggy_lines) {
    if (b < 0 || static_cast<std::size_t>(b) >= r.line_count()) {
      fail(RecordErrorKind::InvariantViolation, "buggy line " + std::to_string(b) + " outside the record's lines");
    }
  }
}

std::vector<char> encode_record(const RepRecord& r) {
  validate(r);
  json header = {
      {"sample_id", r.sample_id},   {"layer_k", r.layer_k}, {"T", r.data.rows},
      {"d", r.data.cols},           {"label", r.label},     {"buggy_lines", r.buggy_lines},
      {"provenance", r.provenance},
  };
  const std::string hbytes = header.dump();
  std::vector<char> out;
  out.reserve(12 + hbytes.size() + r.token_line.size() * 4 + r.data.values.size() * 4);
  for (char c : kRecordMagic) out.push_back(c);
  put_u32(out, kRecordVersion);
  put_u32(out, static_cast<std::uint32_t>(hbytes.size()));
  out.insert(out.end(), hbytes.begin(), hbytes.end());
  for (auto v : r.token_line) put_u32(out, static_cast<std::uint32_t>(v));
  for (float f : r.data.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

std::size_t write_record(const RepRecord& record, std::ostream& out) {
  const auto bytes = encode_record(record);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(RecordErrorKind::Io, "stream write failed");
  return bytes.size();
}

RepRecord decode_record(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 4) fail(RecordErrorKind::Truncated, "file shorter than magic");
  if (std::memcmp(p, kRecordMagic, 4) != 0) fail(RecordErrorKind::BadMagic, "expected \"BAPR\"");
  if (n < 12) fail(RecordErrorKind::Truncated, "file shorter than fixed preamble");
  const std::uint32_t version = get_u32(p + 4);
  if (version != kRecordVersion) fail(RecordErrorKind::VersionMismatch, "version " + std::to_string(version));
  const std::uint32_t hlen = get_u32(p + 8);
  if (n - 12 < hlen) fail(RecordErrorKind::Truncated, "header extends past end of file");

  json h;
  try {
    h = json::parse(bytes.substr(12, hlen));
  } catch (const json::exception& e) {
    fail(RecordErrorKind::BadHeader, e.what());
  }
  if (!h.is_object()) fail(RecordErrorKind::BadHeader, "header is not a JSON object");

  RepRecord r;
  try {
    r.sample_id = h.at("sample_id").get<std::string>();
    r.provenance = h.value("provenance", std::string{});
    if (h.contains("buggy_lines")) r.buggy_lines = h.at("buggy_lines").get<std::vector<std::int32_t>>();
  } catch (const json::exception& e) {
    fail(RecordErrorKind::BadHeader, e.what());
  }
  r.layer_k = header_int<std::uint32_t>(h, "layer_k", 0, std::numeric_limits<std::uint32_t>::max());
  r.label = header_int<int>(h, "label", 0, 1);
  const auto tokens = header_int<std::uint64_t>(h, "T", 1, std::numeric_limits<std::uint32_t>::max());
  const auto dim = header_int<std::uint64_t>(h, "d", 1, std::numeric_limits<std::uint32_t>::max());

  const std::size_t body = n - 12 - hlen;
  const unsigned __int128 need = static_cast<unsigned __int128>(tokens) * 4 +
                                 static_cast<unsigned __int128>(tokens) * dim * 4;
  if (need > body) fail(RecordErrorKind::Truncated, "payload has " + std::to_string(body) + " bytes, header needs more");
  if (need < body) fail(RecordErrorKind::TrailingBytes, std::to_string(body - static_cast<std::size_t>(need)) + " unexpected bytes after payload");

  const unsigned char* q = p + 12 + hlen;
  r.token_line.resize(tokens);
  for (std::size_t t = 0; t < tokens; ++t, q += 4) r.token_line[t] = static_cast<std::int32_t>(get_u32(q));
  r.data = Matrix(tokens, dim);
  for (auto& f : r.data.values) {
    f = std::bit_cast<float>(get_u32(q));
    q += 4;
  }
  validate(r);
  return r;
}

RepRecord read_record(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(RecordErrorKind::Io, "stream read failed");
  return decode_record(ss.str());
}

RepRecord load_record(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    fail(RecordErrorKind::Io, e.what());
  }
  return decode_record(bytes);
}

void save_record(const RepRecord& record, const std::filesystem::path& path) {
  const auto bytes = encode_record(record);
  write_file_atomic(path, std::string_view(bytes.data(), bytes.size()));
}

// ---------------------------------------------------------------------------

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw ManifestError("unknown split '" + std::string(text) + "'");
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
      if (j.contains("bap_manifest")) {
        if (header_seen || !m.entries.empty()) throw ManifestError("header must be the first line");
        header_seen = true;
        m.format_version = j.at("bap_manifest").get<int>();
        if (m.format_version != kManifestVersion) {
          throw ManifestError("unsupported manifest version " + std::to_string(m.format_version));
        }
        m.split = parse_split(j.value("split", std::string("train")));
        m.provenance = j.value("provenance", std::string{});
        continue;
      }
      ManifestEntry e;
      e.sample_id = j.at("sample_id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.tokens = j.at("T").get<std::size_t>();
      e.label = j.at("label").get<int>();
      if (!seen.insert(e.sample_id).second) throw ManifestError("duplicate sample_id '" + e.sample_id + "'");
      m.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return m;
}

std::string format_manifest(const Manifest& m) {
  std::string out = json{{"bap_manifest", m.format_version},
                         {"split", std::string(to_string(m.split))},
                         {"provenance", m.provenance}}
                        .dump() +
                    "\n";
  for (const auto& e : m.entries) {
    out += json{{"sample_id", e.sample_id}, {"path", e.path}, {"T", e.tokens}, {"label", e.label}}.dump();
    out += '\n';
  }
  return out;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, format_manifest(m));
}

std::optional<RepRecord> RecordCursor::next() {
  if (position_ >= manifest_->entries.size()) return std::nullopt;
  const auto& e = manifest_->entries[position_++];
  const auto full = manifest_->base_dir / e.path;
  if (!std::filesystem::exists(full)) {
    throw ManifestError("record for sample_id '" + e.sample_id + "' is missing: " + full.string());
  }
  RepRecord r;
  try {
    r = load_record(full);
  } catch (const RecordError& err) {
    throw ManifestError("record for sample_id '" + e.sample_id + "' is invalid: " + err.what());
  }
  if (r.sample_id != e.sample_id || r.tokens() != e.tokens || r.label != e.label) {
    throw ManifestError("header of " + full.string() + " does not match manifest entry '" + e.sample_id + "'");
  }
  return r;
}

std::vector<RepRecord> load_all(const Manifest& manifest) {
  std::vector<RepRecord> out;
  out.reserve(manifest.entries.size());
  RecordCursor cursor(manifest);
  while (auto r = cursor.next()) out.push_back(std::move(*r));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_lines(std::string_view code) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < code.size()) {
    const auto nl = code.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(code.substr(start));
      break;
    }
    std::string_view piece = code.substr(start, nl - start);
    if (!piece.empty() && piece.back() == '\r') piece.remove_suffix(1);
    lines.emplace_back(piece);
    start = nl + 1;
  }
  return lines;
}

void validate(const CodeRecord& r) {
  if (r.label != 0 && r.label != 1) throw std::invalid_argument(r.sample_id + ": label must be 0 or 1");
  const auto n = static_cast<std::int32_t>(split_lines(r.code).size());
  for (auto b : r.buggy_lines) {
    if (b < 0 || b >= n) {
      throw std::invalid_argument(r.sample_id + ": buggy line " + std::to_string(b) + " outside [0, " +
                                  std::to_string(n) + ")");
    }
  }
  if (r.label == 0 && !r.buggy_lines.empty()) throw std::invalid_argument(r.sample_id + ": clean sample lists buggy lines");
}

std::vector<CodeRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  std::vector<CodeRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      CodeRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.code = j.at("code").get<std::string>();
      r.label = j.at("label").get<int>();
      r.buggy_lines = j.value("buggy_lines", std::vector<std::int32_t>{});
      validate(r);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string format_corpus(const std::vector<CodeRecord>& corpus) {
  std::string out;
  for (const auto& r : corpus) {
    out += json{{"sample_id", r.sample_id}, {"code", r.code}, {"label", r.label}, {"buggy_lines", r.buggy_lines}}.dump();
    out += '\n';
  }
  return out;
}

}  // namespace bap
