#include "lowlight/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "lowlight/clip_adapter.hpp"
#include "lowlight/data_pipeline.hpp"
#include "lowlight/errors.hpp"
#include "lowlight/eval_harness.hpp"
#include "lowlight/image_io.hpp"
#include "lowlight/prior_learning.hpp"
#include "lowlight/trainer.hpp"

namespace fs = std::filesystem;

namespace lowlight::cli {

namespace {

std::int64_t unix_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

class RunManifest {
public:
    RunManifest(const std::string& out_dir, const std::string& command,
                const std::string& config_path, std::uint64_t seed)
        : path_((fs::path(out_dir) / "manifest.json").string()) {
        fs::create_directories(out_dir);
        base_ = {{"command", command},
                 {"config_path", config_path},
                 {"seed", seed},
                 {"version", kToolVersion},
                 {"started_at", unix_now()},
                 {"output_dir", out_dir}};
        write(base_);
    }

    void finalize(const std::string& status, int warnings) {
        nlohmann::json j = base_;
        j["result"] = {{"status", status}, {"warnings", warnings}, {"finished_at", unix_now()}};
        write(j);
    }

private:
    void write(const nlohmann::json& j) {
        std::ofstream os(path_);
        if (!os) throw IngestionError("cannot write manifest: " + path_);
        os << j.dump(2) << "\n";
    }

    std::string path_;
    nlohmann::json base_;
};

EncoderBackend backend_from_config(const Config& cfg) {
    const std::string kind = cfg.get_string("backend.kind", "mock");
    if (kind == "mock") {
        return EncoderBackend::mock(
            static_cast<std::uint64_t>(cfg.get_int("backend.seed", 0)),
            static_cast<int>(cfg.get_int("backend.internal_size", 16)));
    }
    if (kind == "file") return EncoderBackend::from_file(cfg.get_string("backend.weights", ""));
    throw ConfigError("backend.kind must be 'mock' or 'file', got: " + kind);
}

DatasetLoadResult dataset_from_config(const Config& cfg) {
    if (cfg.has("dataset.manifest")) return load_from_manifest(cfg.require_string("dataset.manifest"));
    const std::string images_dir = cfg.require_string("dataset.images_dir");
    const std::string ann = cfg.require_string("dataset.annotations");
    return load_dataset(images_dir, ann);
}

PriorConfig prior_config_from(const Config& cfg) {
    PriorConfig pc;
    pc.sampling_scale = static_cast<int>(cfg.get_int("prior.s", 4));
    pc.n_tokens = static_cast<int>(cfg.get_int("prior.n_tokens", 16));
    pc.epochs = static_cast<int>(cfg.get_int("prior.epochs", 30));
    pc.learning_rate = cfg.get_double("prior.learning_rate", 0.05);
    pc.init_stddev = cfg.get_double("prior.init_stddev", 0.02);
    pc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    return pc;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 8));
    tc.epochs = static_cast<int>(cfg.get_int("train.epochs", 200));
    tc.learning_rate = cfg.get_double("train.learning_rate", 1e-4);
    tc.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
    tc.grad_clip_norm = cfg.get_double("train.grad_clip_norm", 0.1);
    tc.lambda_prior = cfg.get_double("train.lambda_prior", 1.0);
    tc.lambda_content = cfg.get_double("train.lambda_content", 1.0);
    tc.lambda_context = cfg.get_double("train.lambda_context", 1.0);
    tc.n_iterations = static_cast<int>(cfg.get_int("train.n_iterations", 8));
    tc.feature_channels = static_cast<int>(cfg.get_int("train.channels", 32));
    tc.logit_scale = cfg.get_double("train.logit_scale", kDefaultLogitScale);
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    tc.eval_scale_factor = static_cast<int>(cfg.get_int("train.eval_scale_factor", 1));
    tc.zr.target_exposure = cfg.get_double("zr.target_exposure", 0.6);
    tc.zr.exposure_patch = static_cast<int>(cfg.get_int("zr.exposure_patch", 16));
    tc.zr.spatial_region = static_cast<int>(cfg.get_int("zr.spatial_region", 4));
    tc.zr.w_exp = cfg.get_double("zr.w_exp", 10.0);
    tc.zr.w_spa = cfg.get_double("zr.w_spa", 1.0);
    tc.zr.w_rgb = cfg.get_double("zr.w_rgb", 5.0);
    tc.zr.w_tv = cfg.get_double("zr.w_tv", 200.0);
    tc.zr.exposure_per_pixel = cfg.get_bool("zr.exposure_per_pixel", false);
    return tc;
}

std::vector<TrainingPatch> patches_from_dataset(const DatasetLoadResult& ds, const Config& cfg) {
    const int patch_size = static_cast<int>(cfg.get_int("data.patch_size", 224));
    const bool filter_auto = cfg.get_bool("data.filter_auto", false);
    const double thr = cfg.get_double("data.autoann_threshold", 0.30);
    std::vector<TrainingPatch> patches;
    for (const auto& ai : ds.items) {
        AnnotatedImage use = ai;
        if (filter_auto) use.instances = filter_autoannotations(use.instances, thr);
        auto quads = extract_quadrants(use, patch_size);
        for (auto& q : quads) patches.push_back(std::move(q));
    }
    return patches;
}

std::vector<std::string> list_images(const std::string& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) throw IngestionError("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

CommandResult cmd_learn_prior(const Config& cfg, const std::string& config_path,
                              const std::string& out_dir) {
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    RunManifest manifest(out_dir, "learn-prior", config_path, seed);
    CommandResult res;
    try {
        const DatasetLoadResult ds = dataset_from_config(cfg);
        res.warnings += ds.warning_count;
        if (ds.items.empty()) throw ConfigError("dataset is empty");
        std::vector<Image> images;
        images.reserve(ds.items.size());
        for (const auto& ai : ds.items) images.push_back(ai.image);

        const EncoderBackend backend = backend_from_config(cfg);
        const PriorConfig pc = prior_config_from(cfg);
        const PromptLearnResult lr = learn_prompt_pair(images, pc, backend);

        save_prompt_pair((fs::path(out_dir) / "prompts.bin").string(),
                         (fs::path(out_dir) / "prompts.json").string(), lr.prompts, pc,
                         backend.id());
        std::ofstream trace(fs::path(out_dir) / "trace.csv");
        trace << "epoch,loss\n";
        trace.precision(17);
        for (std::size_t i = 0; i < lr.loss_trace.size(); ++i)
            trace << (i + 1) << ',' << lr.loss_trace[i] << '\n';
        manifest.finalize("ok", res.warnings);
    } catch (const std::exception& e) {
        manifest.finalize(std::string("error: ") + e.what(), res.warnings);
        throw;
    }
    return res;
}

CommandResult cmd_train(const Config& cfg, const std::string& config_path,
                        const std::string& out_dir, const std::string& resume_from) {
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    RunManifest manifest(out_dir, "train", config_path, seed);
    CommandResult res;
    try {
        const DatasetLoadResult ds = dataset_from_config(cfg);
        res.warnings += ds.warning_count;
        const TrainConfig tc = train_config_from(cfg);
        std::vector<TrainingPatch> patches = patches_from_dataset(ds, cfg);

        EncoderBackend backend = EncoderBackend::mock(0);
        const bool needs_backend =
            tc.lambda_prior != 0.0 || tc.lambda_content != 0.0 || tc.lambda_context != 0.0;
        if (needs_backend) backend = backend_from_config(cfg);

        PromptPair prompts;
        const bool has_prompts = cfg.has("train.prompts");
        if (tc.lambda_prior != 0.0 && !has_prompts)
            throw ConfigError("missing required config key: train.prompts (lambda_prior > 0)");
        if (has_prompts) prompts = load_prompt_pair(cfg.require_string("train.prompts"));

        ContentContextHeads heads;
        if (cfg.has("train.content_head"))
            heads.content = load_projection_head(cfg.require_string("train.content_head"));
        if (cfg.has("train.context_head"))
            heads.context = load_projection_head(cfg.require_string("train.context_head"));

        CheckpointOptions ckpt;
        ckpt.dir = (fs::path(out_dir) / "checkpoints").string();
        ckpt.interval_epochs = static_cast<int>(cfg.get_int("train.checkpoint_interval", 0));
        ckpt.config_snapshot = cfg.render();
        if (has_prompts) ckpt.prompts_bin = cfg.require_string("train.prompts");
        if (cfg.has("train.content_head")) ckpt.content_head = cfg.require_string("train.content_head");
        if (cfg.has("train.context_head")) ckpt.context_head = cfg.require_string("train.context_head");

        const TrainResult tr =
            train_enhancer(patches, tc, needs_backend ? &backend : nullptr,
                           has_prompts ? &prompts : nullptr, &heads, ckpt, resume_from);
        write_trace_csv((fs::path(out_dir) / "trace.csv").string(), tr.trace);
        save_enhancer((fs::path(out_dir) / "weights.lltc").string(), tr.weights);
        manifest.finalize("ok", res.warnings);
    } catch (const DivergenceError& e) {
        manifest.finalize(std::string("diverged: ") + e.what(), res.warnings);
        throw;
    } catch (const std::exception& e) {
        manifest.finalize(std::string("error: ") + e.what(), res.warnings);
        throw;
    }
    return res;
}

CommandResult cmd_enhance(const EnhanceArgs& args) {
    RunManifest manifest(args.output_dir, "enhance", "", 0);
    CommandResult res;
    try {
        const EnhancerWeights weights = load_enhancer(args.weights_path);
        const auto inputs = list_images(args.input_dir);
        std::int64_t base_estimator = 0;
        for (const auto& path : inputs) {
            Image img;
            try {
                img = load_image(path);
            } catch (const std::exception& e) {
                std::cerr << "warning: skipping " << path << ": " << e.what() << "\n";
                ++res.warnings;
                continue;
            }
            const Image out = enhance(img, weights, args.scale_factor);
            const std::string name = fs::path(path).filename().string();
            save_image((fs::path(args.output_dir) / name).string(), out);
            if (args.report_macs) {
                const MacCount mc = count_macs(img.height, img.width, args.scale_factor,
                                               weights.feature_channels, weights.n_iterations);
                const MacCount mc1 = count_macs(img.height, img.width, 1,
                                                weights.feature_channels, weights.n_iterations);
                base_estimator = mc1.estimator;
                std::cout << name << ": estimator_macs=" << mc.estimator
                          << " curve_macs=" << mc.curve << " total=" << mc.total()
                          << " estimator_ratio_vs_s1="
                          << static_cast<double>(mc1.estimator) /
                                 static_cast<double>(std::max<std::int64_t>(1, mc.estimator))
                          << "\n";
            }
        }
        (void)base_estimator;
        manifest.finalize("ok", res.warnings);
    } catch (const std::exception& e) {
        manifest.finalize(std::string("error: ") + e.what(), res.warnings);
        throw;
    }
    return res;
}

CommandResult cmd_eval_fullref(const std::string& pred_dir, const std::string& ref_dir,
                               const std::string& out_csv) {
    CommandResult res;
    const auto preds = list_images(pred_dir);
    std::vector<MetricRow> rows;
    for (const auto& p : preds) {
        const std::string name = fs::path(p).filename().string();
        const fs::path ref = fs::path(ref_dir) / name;
        if (!fs::exists(ref)) {
            std::cerr << "warning: no reference for " << name << "\n";
            ++res.warnings;
            continue;
        }
        const Image a = load_image(p);
        const Image b = load_image(ref.string());
        MetricRow row;
        row.id = fs::path(name).stem().string();
        row.psnr_db = psnr(a, b);
        row.ssim = ssim(a, b);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw MetricError("eval fullref: no matched image pairs");
    const MetricReport rep = make_metric_report(std::move(rows));
    write_metric_csv(out_csv, rep);
    std::cout << "fullref: " << rep.rows.size() << " pairs, mean psnr="
              << (std::isinf(rep.psnr_mean) ? std::string("inf") : std::to_string(rep.psnr_mean))
              << " mean ssim=" << rep.ssim_mean << "\n";
    return res;
}

CommandResult cmd_eval_blend(const EvalBlendArgs& args) {
    CommandResult res;
    const auto lows = list_images(args.low_dir);
    std::vector<BlendPair> pairs;
    for (const auto& p : lows) {
        const std::string name = fs::path(p).filename().string();
        const fs::path normal = fs::path(args.normal_dir) / name;
        if (!fs::exists(normal)) {
            std::cerr << "warning: no normal-light counterpart for " << name << "\n";
            ++res.warnings;
            continue;
        }
        pairs.push_back({fs::path(name).stem().string(), load_image(p), load_image(normal.string())});
    }
    if (pairs.empty()) throw MetricError("eval blend: no matched pairs");

    EnhancerWeights weights;
    BlendEnhancer enh;
    const BlendEnhancer* enh_ptr = nullptr;
    if (!args.weights_path.empty()) {
        weights = load_enhancer(args.weights_path);
        enh.weights = &weights;
        enh.scale_factor = args.scale_factor;
        enh_ptr = &enh;
    }

    fs::create_directories(args.out_dir);
    BlendSink sink = nullptr;
    if (args.export_images) {
        sink = [&](const std::string& id, double alpha, const Image& blended, const Image* enhanced) {
            char tag[32];
            std::snprintf(tag, sizeof(tag), "%.3f", alpha);
            const fs::path dir = fs::path(args.out_dir) / id;
            fs::create_directories(dir);
            save_image((dir / ("blend_" + std::string(tag) + ".png")).string(), blended);
            if (enhanced)
                save_image((dir / ("enhanced_" + std::string(tag) + ".png")).string(), *enhanced);
        };
    }
    const auto rows = blend_sweep(pairs, args.alphas, enh_ptr, sink);
    write_blend_csv((fs::path(args.out_dir) / "blend.csv").string(), rows);
    std::cout << "blend: " << rows.size() << " rows\n";
    return res;
}

CommandResult cmd_eval_map(const std::string& pred_json, const std::string& truth_json,
                           const std::string& out_csv) {
    const auto preds = load_detections(pred_json);
    const auto truths = load_detections(truth_json);
    const double v = map_at_50(preds, truths);
    if (!out_csv.empty()) {
        std::ofstream os(out_csv);
        if (!os) throw IngestionError("cannot write: " + out_csv);
        os << "metric,value\nmap@0.5," << v << "\n";
    }
    std::cout << "map@0.5: " << v << "\n";
    return {};
}

CommandResult cmd_export_descriptions(const Config& cfg, const std::string& out_path) {
    CommandResult res;
    const DatasetLoadResult ds = dataset_from_config(cfg);
    res.warnings += ds.warning_count;
    const int patch_size = static_cast<int>(cfg.get_int("data.patch_size", 224));
    std::ofstream os(out_path);
    if (!os) throw IngestionError("cannot write: " + out_path);
    for (const auto& ai : ds.items) {
        const auto quads = extract_quadrants(ai, patch_size);
        for (const auto& q : quads) {
            const Description content = build_description(q.content, DescriptionKind::content);
            const Description context = build_description(q.context, DescriptionKind::context);
            nlohmann::json j{{"patch_id", q.source_id + "#" + quadrant_name(q.quadrant)},
                             {"content_text", content.text},
                             {"context_text", context.text}};
            os << j.dump() << "\n";
        }
    }
    return res;
}

}  // namespace lowlight::cli
