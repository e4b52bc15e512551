#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cflow/config.hpp"
#include "cflow/datasets.hpp"
#include "cflow/measurement.hpp"

namespace cflow {

inline constexpr const char* kVersion = "1.0.0";

/// Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or config.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Train and held-out splits of the configured dataset.
std::pair<Dataset, Dataset> load_run_data(const RunConfig& config);
MeasurementOp build_measurement(const RunConfig& config, const Dataset& data);
/// Uses [measurement] y when given, otherwise observes held-out row observation_index.
Observation build_observation(const RunConfig& config, const MeasurementOp& op, const Dataset& held_out);

/// Holds <dir>/.lock for its lifetime; throws Error when another run holds it.
class OutputLock {
 public:
  explicit OutputLock(std::string dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::string path_;
};

/// Text manifest: command, config hash, seed, build info, the effective
/// config and a CRC-32 per artifact.
std::string render_manifest(const std::string& command, const RunConfig& config,
                            const std::vector<std::string>& artifacts);

}  // namespace cflow
