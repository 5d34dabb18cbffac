#pragma once

#include <cstdint>
#include <string>

#include "vmsvae/augment.hpp"
#include "vmsvae/model.hpp"

namespace vmsvae {

// Everything affecting results, loaded from one JSON file. Flags carry only
// paths; unknown config keys are rejected.
struct RunConfig {
    ModelConfig model;
    AugmentConfig augment;
    std::string data_root;
    std::string output_dir = "out";
    std::string variant_name = "n128_m32";
};

RunConfig load_run_config(const std::string& path);

// Resolves a backbone-weights name against the VMSVAE_BACKBONE_CACHE
// directory when the value is not a path to an existing file.
std::string resolve_backbone_weights(const std::string& value);

// Subcommand bodies. All throw ValidationError (exit 1) or RuntimeFault
// (exit 2); the CLI maps exceptions to exit codes.
void cmd_train(const std::string& config_path);
void cmd_predict(const std::string& model_path, const std::string& images_dir,
                 const std::string& out_dir);
void cmd_evaluate(const std::string& pred_dir, const std::string& gt_root,
                  const std::string& out_path);
void cmd_embed(const std::string& model_path, const std::string& data_root,
               const std::string& out_csv);
void cmd_correlate(const std::string& a_csv, const std::string& b_csv);
void cmd_synth(size_t n, uint64_t seed, const std::string& out_dir);

}  // namespace vmsvae
