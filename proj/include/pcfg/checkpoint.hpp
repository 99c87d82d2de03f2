#pragma once

#include <string>

#include "json.hpp"
#include "pcfg/parameterization.hpp"

namespace pcfg {

// Parameters, optimiser state and free-form metadata (config, epoch, rng
// state, training log). Saved as a versioned little-endian binary file.
struct Checkpoint {
  ParameterSet params;
  OptimizerState optimizer;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string &path, const Checkpoint &ckpt);

// Throws DataError on a bad magic, unsupported version, truncation or a tensor
// that does not match the recorded model dimensions.
Checkpoint load_checkpoint(const std::string &path);

nlohmann::json dims_to_json(const ModelDims &dims);
ModelDims dims_from_json(const nlohmann::json &j);

}  // namespace pcfg
