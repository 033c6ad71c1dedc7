#pragma once

#include "osr/train.hpp"

#include <filesystem>
#include <string>

namespace osr::model_io {

// Versioned JSON container for a frozen model: configs, every parameter
// tensor, BN running statistics, class statistics and the threshold. Doubles
// round-trip exactly (shortest-representation serialization); the Cholesky
// factors are recomputed deterministically on load.

inline constexpr const char* kFormatTag = "osr-model/1";

std::string model_to_json(const train::TrainedModel& model);
train::TrainedModel model_from_json(const std::string& text);

void save_model(const train::TrainedModel& model, const std::filesystem::path& path);
train::TrainedModel load_model(const std::filesystem::path& path);

} // namespace osr::model_io
