#pragma once

#include <string>
#include <vector>

#include "smoa/params.hpp"

namespace smoa {

// Flat text checkpoint, one parameter per line:
//
//   smoa-ckpt 1
//   <count>
//   <name> <trainable:0|1> <ndim> <dims...> <values...>
//
// Values are written with %.17g, which round-trips IEEE doubles exactly,
// so save/load preserves every bit.
void save_checkpoint(const std::string& path, const std::vector<ParamInfo>& params);

// Loads values into an existing registry; names, shapes and trainable
// flags must match the built model exactly.
void load_checkpoint(const std::string& path, std::vector<ParamInfo>& params);

}  // namespace smoa
