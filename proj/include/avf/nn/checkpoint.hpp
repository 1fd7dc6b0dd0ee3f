#pragma once

#include <filesystem>

#include <json.hpp>

#include "avf/nn/optimizer.hpp"
#include "avf/nn/tensor.hpp"

// Checkpoint directory layout:
//   index.json          {"format": "avf-checkpoint-1", "architecture": {...},
//                        "parameters": {name: file}, "buffers": {name: file},
//                        "optimizer": {...hyperparameters, "t", "slots": {...}}}
//   <name>.aff1         one AFF1 tensor per named parameter, rank 2
// Tensors are stored in single precision.

namespace avf::nn {

inline constexpr const char* kCheckpointFormat = "avf-checkpoint-1";

/// Writes each tensor as `<prefix><name>.aff1` under dir and returns the
/// {name: file} map.
template <typename T>
nlohmann::json save_tensors(const std::filesystem::path& dir, const ParamList<T>& tensors,
                            const std::string& prefix = "");

/// Loads tensors listed in `files` into the (already shaped) targets.
/// Throws DataError on a missing name or shape mismatch.
template <typename T>
void load_tensors(const std::filesystem::path& dir, const nlohmann::json& files,
                  const ParamList<T>& targets);

template <typename T>
nlohmann::json save_optimizer(const std::filesystem::path& dir, const OptimizerState<T>& state,
                              const ParamList<T>& params);

template <typename T>
void load_optimizer(const std::filesystem::path& dir, const nlohmann::json& j,
                    OptimizerState<T>& state, const ParamList<T>& params);

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, OptimizerConfig defaults = {});

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace avf::nn
