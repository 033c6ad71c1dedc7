#pragma once

#include "osr/backbone.hpp"
#include "osr/dataio.hpp"
#include "osr/eval.hpp"
#include "osr/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace osr::config {

// ============================================================================
// Declarative experiment configuration: one JSON file describing the dataset
// source, backbone, training hyperparameters, scoring, protocol and variant
// matrix. Validation is total (unknown keys are rejected, every field range-
// checked) and happens before any computation or file write.
// ============================================================================

struct ExperimentConfig {
    std::uint64_t seed = 41;
    std::string out_dir;       // optional; the CLI --out flag takes precedence
    bool emit_roc_svg = true;
    bool save_models = true;

    std::string dataset_source; // "synthetic" | "path"
    std::string dataset_path;   // manifest.json or its directory
    dataio::SynthConfig synth;

    backbone::BackboneConfig backbone; // t_steps/channels are overwritten by the data
    train::TrainConfig train;          // also carries the base ablation flags
    eval::ProtocolConfig protocol;
    std::vector<eval::Variant> variants; // empty: single variant from the base flags

    void validate() const;
    std::vector<eval::Variant> resolved_variants() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

} // namespace osr::config
