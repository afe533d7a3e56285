#pragma once

// Settings shared by the subcommands, validated before any computation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "slicefinder/error.hpp"
#include "slicefinder/imgvol.hpp"
#include "slicefinder/matcher.hpp"

namespace slicefinder::cli {

struct PipelineConfig {
  std::filesystem::path exp_volume;
  std::filesystem::path template_volume;
  std::filesystem::path expert_pairs;
  std::filesystem::path exp_labels;
  std::filesystem::path template_labels;
  std::filesystem::path out = ".";

  MatchParams match;
  Strategy strategy = Strategy::Mean;
  std::optional<ZRange> z_range;
  int workers = 1;
  std::uint64_t seed = 1;
  std::optional<TiltSpec> tilt;

  // Throws the module error of the first violated invariant, and MissingFile
  // for any non-empty input path that does not exist.
  void validate() const;
};

// "a:b" with a <= b, both >= 0.
ZRange parse_z_range(const std::string &text);

// 0 success, 2 usage or precondition, 3 runtime computation failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;
int exit_code_for(ErrorCode code);

}  // namespace slicefinder::cli
