#pragma once

// Ingestion of prompting-style predictions: a "faultLocalization" array of
// {"codeContent", "lineNumber"} objects, 1-based line numbers, most
// suspicious first.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bap/evalkit.hpp"
#include "bap/repstore.hpp"

namespace bap {

struct ExternalEntry {
  std::optional<std::int64_t> line_number;  // 1-based, as emitted
  std::string code_content;
};

struct ExternalPrediction {
  std::string sample_id;
  std::vector<ExternalEntry> entries;
};

class ExternalParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a model response. Accepts an object holding "faultLocalization",
/// a bare array of entries, and text wrapped in ``` fences.
std::vector<ExternalEntry> parse_fault_localization(std::string_view text);

struct IngestResult {
  std::vector<std::int32_t> order;  // 0-based, duplicates removed
  std::size_t dropped = 0;          // entries matched to no line
};

/// Maps entries to 0-based lines: a valid lineNumber is shifted by one;
/// otherwise codeContent is matched against the trimmed source lines (first
/// exact match). Unmatched entries are dropped and counted.
IngestResult resolve_entries(const std::vector<ExternalEntry>& entries, const CodeRecord& code);

/// Parse + resolve. Throws ExternalParseError on unparseable text.
IngestResult ingest_external(std::string_view text, const CodeRecord& code);

struct ExternalBatch {
  std::vector<SamplePrediction> predictions;
  std::size_t parse_failures = 0;
  std::size_t dropped_entries = 0;
};

/// JSON-lines keyed by sample_id. Each object either holds the model's raw
/// text under "response" or carries "faultLocalization" directly. A line whose
/// response cannot be parsed becomes an explicit miss.
ExternalBatch ingest_external_file(std::string_view jsonl, const std::vector<CodeRecord>& corpus);

}  // namespace bap
