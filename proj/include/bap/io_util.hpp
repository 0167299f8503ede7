#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace bap {

/// Writes to a sibling temp file and renames over the destination, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Worker count from BAP_THREADS (default 1, clamped to [1, 256]).
unsigned thread_count_from_env();

}  // namespace bap
