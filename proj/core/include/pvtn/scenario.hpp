// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "pvtn/world.hpp"

namespace pvtn {

// Flags a caller may use to override what the scenario file says.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> provider;
  std::optional<Tick> max_ticks;
  std::string trace_path;     // when set, the rendered trace is written here
  std::string snapshot_path;  // when set, a loadable world snapshot is written
};

struct RunResult {
  int exit_code = 0;     // 0 pass, 1 assertion failure, 2 parse error
  std::string message;   // failure summary, or parse location
  std::string trace_text;
  std::string snapshot;  // line-oriented digest-only snapshot
  std::uint64_t assertions = 0;
  std::uint64_t failures = 0;
};

// Parses and executes one scenario document to quiescence. Never throws;
// malformed input comes back as exit_code 2 with the offending location.
RunResult run_scenario_file(const std::string& path, const RunOptions& opt);
RunResult run_scenario_text(const std::string& text, const std::string& origin,
                            const RunOptions& opt);

// Full world state as a JSON document, loadable by world_from_json. This is
// the simulator's own state dump for offline tooling; network traffic never
// contains it.
std::string world_to_json(const World& w, const std::string& provider_name);

// A world reconstructed from a snapshot, with the provider that owns its
// digests kept alive alongside.
struct LoadedWorld {
  std::unique_ptr<CryptoProvider> provider;
  World world;
  std::string provider_name;
};
Result<LoadedWorld> world_from_json(const std::string& text,
                                    const std::string& origin);

// Delegation-chain export and offline verification, for the chain tooling.
Result<std::string> chain_to_json(const World& w, EndpointId node);
std::string anchor_to_json(const World& w, const TenantId& tenant, Tick now);
// Returns the verification outcome; `detail` gets a one-line explanation.
// Parse problems come back as ParseError with the location in `detail`.
Status verify_chain_files(const std::string& certs_json,
                          const std::string& anchor_json, std::string* detail);

}  // namespace pvtn
