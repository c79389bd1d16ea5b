// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "physkit/pipeline.hpp"

namespace physkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitAcceptance = 2;

inline constexpr std::uint64_t kDefaultSeed = 0;

/// Every tunable of a run. Defaults follow the reference training setup.
struct RunConfig {
  std::uint64_t seed = kDefaultSeed;
  pipeline::ModelConfig model;
  pipeline::TrainConfig train;
  std::size_t clips = 64;
  double snr_db = 10.0;
  double hr_min = 45.0;
  double hr_max = 150.0;
};

/// Applies the keys of a JSON object to `cfg`. Unknown keys and wrongly
/// typed values raise ParseError.
void apply_config_text(RunConfig& cfg, const std::string& json_text);
/// Full effective configuration as a JSON object.
std::string config_to_text(const RunConfig& cfg);

pipeline::HeadKind head_from_name(const std::string& name);
std::string head_name(pipeline::HeadKind kind);

/// Runs one command line (without the program name). Output goes to `out`,
/// diagnostics to `err`; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace physkit::cli
