// lle — train, run and evaluate the low-light image enhancer.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lowlight/commands.hpp"
#include "lowlight/config.hpp"
#include "lowlight/errors.hpp"

namespace {

std::vector<double> parse_alphas(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stod(tok));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lle — zero-reference low-light enhancement toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", lowlight::cli::kToolVersion);

    std::string config_path, out_dir, resume_from;
    long long seed_flag = -1;
    bool mock_backend = false;

    auto add_config_opts = [&](CLI::App* cmd, bool require_out) {
        cmd->add_option("--config", config_path, "config file (TOML subset)")->required();
        auto* o = cmd->add_option("--out", out_dir, "output directory");
        if (require_out) o->required();
        cmd->add_option("--seed", seed_flag, "override root seed");
        cmd->add_flag("--mock-backend", mock_backend, "force the deterministic mock encoder");
    };

    auto* learn = app.add_subcommand("learn-prior", "learn the image-prior prompt pair");
    add_config_opts(learn, true);

    auto* train = app.add_subcommand("train", "train the enhancer");
    add_config_opts(train, true);
    train->add_option("--resume", resume_from, "checkpoint directory to resume from");
    long long epochs_flag = -1;
    train->add_option("--epochs", epochs_flag, "override train.epochs");

    lowlight::cli::EnhanceArgs enhance_args;
    auto* enh = app.add_subcommand("enhance", "enhance a directory of images");
    enh->add_option("--weights", enhance_args.weights_path, "enhancer checkpoint")->required();
    enh->add_option("--input", enhance_args.input_dir, "input image directory")->required();
    enh->add_option("--output", enhance_args.output_dir, "output directory")->required();
    enh->add_option("--scale", enhance_args.scale_factor, "reduced-resolution estimation factor");
    enh->add_flag("--report-macs", enhance_args.report_macs, "print MAC accounting per image");

    auto* eval = app.add_subcommand("eval", "evaluation reports");
    eval->require_subcommand(1);

    std::string pred, ref, out_csv = "report.csv";
    auto* fullref = eval->add_subcommand("fullref", "PSNR/SSIM against references");
    fullref->add_option("--pred", pred, "predicted/enhanced image dir")->required();
    fullref->add_option("--ref", ref, "reference image dir")->required();
    fullref->add_option("--out", out_csv, "output CSV");

    lowlight::cli::EvalBlendArgs blend_args;
    std::string alphas_csv = "0,0.5,1";
    auto* blend = eval->add_subcommand("blend", "alpha-blend severity sweep");
    blend->add_option("--low", blend_args.low_dir, "low-light image dir")->required();
    blend->add_option("--normal", blend_args.normal_dir, "normal-light image dir")->required();
    blend->add_option("--alphas", alphas_csv, "comma-separated alpha list");
    blend->add_option("--out", blend_args.out_dir, "output directory")->required();
    blend->add_option("--weights", blend_args.weights_path, "optional enhancer checkpoint");
    blend->add_option("--scale", blend_args.scale_factor, "enhancer scale factor");
    blend->add_flag("!--no-images", blend_args.export_images, "skip writing blended images");

    std::string map_pred, map_truth, map_out;
    auto* mapcmd = eval->add_subcommand("map", "mAP@0.5 from detection JSONs");
    mapcmd->add_option("--pred", map_pred, "prediction JSON")->required();
    mapcmd->add_option("--truth", map_truth, "ground-truth JSON")->required();
    mapcmd->add_option("--out", map_out, "output CSV");

    std::string desc_out;
    auto* descs = app.add_subcommand("export-descriptions",
                                     "write JSONL content/context descriptions per patch");
    add_config_opts(descs, false);
    descs->add_option("--jsonl", desc_out, "output JSONL path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        auto load_cfg = [&]() {
            lowlight::Config cfg = lowlight::Config::from_file(config_path);
            if (seed_flag >= 0) cfg.set_override("seed", std::to_string(seed_flag));
            if (mock_backend) cfg.set_override("backend.kind", "mock");
            if (epochs_flag >= 0) cfg.set_override("train.epochs", std::to_string(epochs_flag));
            return cfg;
        };

        lowlight::cli::CommandResult res;
        if (learn->parsed()) {
            res = lowlight::cli::cmd_learn_prior(load_cfg(), config_path, out_dir);
        } else if (train->parsed()) {
            res = lowlight::cli::cmd_train(load_cfg(), config_path, out_dir, resume_from);
        } else if (enh->parsed()) {
            res = lowlight::cli::cmd_enhance(enhance_args);
        } else if (fullref->parsed()) {
            res = lowlight::cli::cmd_eval_fullref(pred, ref, out_csv);
        } else if (blend->parsed()) {
            blend_args.alphas = parse_alphas(alphas_csv);
            res = lowlight::cli::cmd_eval_blend(blend_args);
        } else if (mapcmd->parsed()) {
            res = lowlight::cli::cmd_eval_map(map_pred, map_truth, map_out);
        } else if (descs->parsed()) {
            res = lowlight::cli::cmd_export_descriptions(load_cfg(), desc_out);
        }
        if (res.warnings > 0) std::cerr << res.warnings << " warning(s)\n";
        return res.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
