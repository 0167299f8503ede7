#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bap/matrix.hpp"

namespace bap {

/// Hidden states of one program at one LLM layer, with its token-to-line map.
struct RepRecord {
  std::string sample_id;
  std::uint32_t layer_k = 0;
  Matrix data;                       // T x d, row = token
  std::vector<std::int32_t> token_line;  // -1 = token outside any source line
  int label = 0;
  std::vector<std::int32_t> buggy_lines;  // evaluation only
  std::string provenance;

  std::size_t tokens() const { return data.rows; }
  std::size_t dim() const { return data.cols; }
  /// 1 + max non-negative token_line, or 0 when every token is special.
  std::size_t line_count() const;

  friend bool operator==(const RepRecord& a, const RepRecord& b);
};

enum class RecordErrorKind {
  BadMagic,
  VersionMismatch,
  Truncated,
  TrailingBytes,
  BadHeader,
  NonFinite,
  TokenLineOutOfRange,
  InvariantViolation,
  Io,
};

std::string_view to_string(RecordErrorKind kind);

class RecordError : public std::runtime_error {
 public:
  RecordError(RecordErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  RecordErrorKind kind() const { return kind_; }

 private:
  RecordErrorKind kind_;
};

inline constexpr char kRecordMagic[4] = {'B', 'A', 'P', 'R'};
inline constexpr std::uint32_t kRecordVersion = 1;

/// Throws RecordError(InvariantViolation / NonFinite / TokenLineOutOfRange).
void validate(const RepRecord& record);

/// Serializes a validated record. Nothing is written if validation fails.
std::size_t write_record(const RepRecord& record, std::ostream& out);
std::vector<char> encode_record(const RepRecord& record);

/// Parses a record; every malformed input maps to a RecordError.
RepRecord read_record(std::istream& in);
RepRecord decode_record(std::string_view bytes);

RepRecord load_record(const std::filesystem::path& path);
void save_record(const RepRecord& record, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Split { Train, Test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestEntry {
  std::string sample_id;
  std::string path;  // relative to the manifest's directory
  std::size_t tokens = 0;
  int label = 0;
};

inline constexpr int kManifestVersion = 1;

struct Manifest {
  int format_version = kManifestVersion;
  Split split = Split::Train;
  std::string provenance;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // directory containing the manifest file
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// JSON-lines: a header object {"bap_manifest": version, "split", "provenance"}
/// followed by one entry object per line.
Manifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Streams the manifest's records in file order, one in memory at a time.
class RecordCursor {
 public:
  explicit RecordCursor(const Manifest& manifest) : manifest_(&manifest) {}
  explicit RecordCursor(Manifest&&) = delete;  // the cursor does not own the manifest

  /// Next record, or nullopt at the end. Throws ManifestError naming the
  /// sample_id when a file is missing or its header disagrees with the entry.
  std::optional<RepRecord> next();

 private:
  const Manifest* manifest_;
  std::size_t position_ = 0;
};

/// Reads every record of a manifest in order.
std::vector<RepRecord> load_all(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Code corpus
// ---------------------------------------------------------------------------

struct CodeRecord {
  std::string sample_id;
  std::string code;
  int label = 0;
  std::vector<std::int32_t> buggy_lines;

  friend bool operator==(const CodeRecord&, const CodeRecord&) = default;
};

/// Newline-delimited lines; a trailing newline does not open a new line.
std::vector<std::string> split_lines(std::string_view code);

void validate(const CodeRecord& record);
std::vector<CodeRecord> load_corpus(const std::filesystem::path& path);
std::string format_corpus(const std::vector<CodeRecord>& corpus);

}  // namespace bap
