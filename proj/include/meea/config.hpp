#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "meea/orchestrator.hpp"

namespace meea {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a JSON campaign config, applies dotted-path overrides
/// (e.g. "schedule.eta=0.8"), resolves defaults, and validates every
/// invariant. Unknown keys are rejected by name. Relative input paths are
/// resolved against the config file's directory.
CampaignConfig load_config(const std::string& path,
                           const std::vector<std::string>& overrides = {});

}  // namespace meea
