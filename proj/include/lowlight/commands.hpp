#pragma once

#include <string>
#include <vector>

#include "lowlight/config.hpp"

namespace lowlight::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct CommandResult {
    int exit_code = 0;
    int warnings = 0;
};

// Every command writes a manifest.json into its output directory before any
// heavy work (command, config path, seed, version, start time); completion
// appends a result block (status, warnings, end time) without touching the
// identifying fields.

// Learns the prompt pair; writes prompts.bin, prompts.json, trace.csv,
// manifest.json into out_dir.
CommandResult cmd_learn_prior(const Config& cfg, const std::string& config_path,
                              const std::string& out_dir);

// Trains the enhancer; writes checkpoints/epoch_*/..., trace.csv,
// manifest.json. resume_from may point at a previous checkpoint directory.
CommandResult cmd_train(const Config& cfg, const std::string& config_path,
                        const std::string& out_dir, const std::string& resume_from = "");

struct EnhanceArgs {
    std::string weights_path;
    std::string input_dir;
    std::string output_dir;
    int scale_factor = 1;
    bool report_macs = false;
};

// One output per readable input image, same file names; unreadable inputs are
// skipped with a warning. --report-macs prints per-image MAC accounting and
// the estimator ratio against scale 1.
CommandResult cmd_enhance(const EnhanceArgs& args);

CommandResult cmd_eval_fullref(const std::string& pred_dir, const std::string& ref_dir,
                               const std::string& out_csv);

struct EvalBlendArgs {
    std::string low_dir;
    std::string normal_dir;
    std::vector<double> alphas;
    std::string out_dir;
    std::string weights_path;  // optional
    int scale_factor = 1;
    bool export_images = true;
};

CommandResult cmd_eval_blend(const EvalBlendArgs& args);

CommandResult cmd_eval_map(const std::string& pred_json, const std::string& truth_json,
                           const std::string& out_csv);

// JSONL of {patch_id, content_text, context_text} for every quadrant patch of
// the configured dataset.
CommandResult cmd_export_descriptions(const Config& cfg, const std::string& out_path);

}  // namespace lowlight::cli
