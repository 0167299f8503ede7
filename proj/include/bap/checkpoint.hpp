#pragma once

// Probe checkpoints: "BAPM" · version u32 LE · header length u32 LE · JSON
// header · parameters as f32 LE. Attention probes store their tensors in
// ProbeParams order (w_q, b_q, ... skipping the layer norms in the bare
// variant); linear probes store the weight vector followed by the bias.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bap/linear_probe.hpp"
#include "bap/probe.hpp"

namespace bap {

inline constexpr char kCheckpointMagic[4] = {'B', 'A', 'P', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using AnyProbe = std::variant<ProbeModel, LinearProbe>;

std::vector<char> encode_checkpoint(const ProbeModel& model);
std::vector<char> encode_checkpoint(const LinearProbe& model);
AnyProbe decode_checkpoint(std::string_view bytes);

void save_checkpoint(const AnyProbe& model, const std::filesystem::path& path);
AnyProbe load_checkpoint(const std::filesystem::path& path);

/// Loads a checkpoint that must hold an attention probe.
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace bap
