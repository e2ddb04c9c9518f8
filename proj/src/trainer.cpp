#include "lowlight/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lowlight/errors.hpp"
#include "lowlight/optim.hpp"
#include "lowlight/tensor_io.hpp"

namespace fs = std::filesystem;

namespace lowlight {

namespace {

struct PerImageEval {
    double exposure = 0.0, spatial = 0.0, color = 0.0, tv = 0.0, prior = 0.0;
    Image enhanced;
    // Populated when gradients are requested.
    DceTrace dce_trace;
    CurveTrace curve_trace;
    CurveParams params;
    Image d_enhanced;   // accumulated dL/d(enhanced), weighted
    CurveParams d_params;  // accumulated dL/d(params), weighted
};

// Forward (and optionally backward) pass of the per-image loss terms. Batch
// normalisation by 1/B and the guidance terms are handled by the caller.
PerImageEval eval_image(const Image& input, const EnhancerWeights& weights,
                        const EncoderBackend* backend, const PromptPair* prompts,
                        const TrainConfig& cfg, bool with_grads, double inv_batch) {
    PerImageEval ev;
    if (with_grads) {
        ev.params = estimate_curves_traced(input, weights, ev.dce_trace);
        ev.enhanced = apply_curves_traced(input, ev.params, ev.curve_trace);
    } else {
        ev.params = estimate_curves(input, weights);
        ev.enhanced = apply_curves(input, ev.params);
    }
    ev.exposure = exposure_loss(ev.enhanced, cfg.zr);
    ev.spatial = spatial_consistency_loss(ev.enhanced, input, cfg.zr);
    ev.color = color_loss(ev.enhanced);
    ev.tv = tv_loss(ev.params);
    if (cfg.lambda_prior != 0.0) ev.prior = prior_loss(ev.enhanced, *prompts, *backend);

    if (with_grads) {
        Image d_enh;
        CurveParams d_par;
        total_zero_reference_backward(ev.enhanced, input, ev.params, cfg.zr, d_enh, d_par);
        if (cfg.lambda_prior != 0.0) {
            const Image gp = prior_loss_backward(ev.enhanced, *prompts, *backend);
            for (std::size_t i = 0; i < d_enh.data.size(); ++i)
                d_enh.data[i] += cfg.lambda_prior * gp.data[i];
        }
        for (double& x : d_enh.data) x *= inv_batch;
        for (double& x : d_par.maps) x *= inv_batch;
        ev.d_enhanced = std::move(d_enh);
        ev.d_params = std::move(d_par);
    }
    return ev;
}

void require_prior_inputs(const TrainConfig& cfg, const EncoderBackend* backend,
                          const PromptPair* prompts, const ContentContextHeads* heads) {
    const bool needs_backend =
        cfg.lambda_prior != 0.0 || cfg.lambda_content != 0.0 || cfg.lambda_context != 0.0;
    if (cfg.lambda_prior != 0.0 && prompts == nullptr)
        throw ConfigError("lambda_prior > 0 but no prompt pair was provided");
    if (needs_backend && backend == nullptr)
        throw ConfigError("guidance or prior loss enabled but no encoder backend was provided");
    if ((cfg.lambda_content != 0.0 || cfg.lambda_context != 0.0) && heads == nullptr)
        throw ConfigError("guidance loss enabled but no projection heads were provided");
}

struct BatchEval {
    LossBreakdown loss;
    EnhancerGrads grads;
};

BatchEval eval_batch(const std::vector<const TrainingPatch*>& batch,
                     const EnhancerWeights& weights, const EncoderBackend* backend,
                     const PromptPair* prompts, const ContentContextHeads* heads,
                     const TrainConfig& cfg, bool with_grads) {
    if (batch.empty()) throw std::invalid_argument("total_training_loss: empty batch");
    require_prior_inputs(cfg, backend, prompts, heads);

    const int b = static_cast<int>(batch.size());
    const double inv_b = 1.0 / static_cast<double>(b);
    std::vector<PerImageEval> evals(b);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < b; ++i)
        evals[i] = eval_image(batch[i]->image, weights, backend, prompts, cfg, with_grads, inv_b);

    BatchEval out;
    for (const auto& ev : evals) {
        out.loss.exposure += ev.exposure * inv_b;
        out.loss.spatial += ev.spatial * inv_b;
        out.loss.color += ev.color * inv_b;
        out.loss.tv += ev.tv * inv_b;
        out.loss.prior += ev.prior * inv_b;
    }

    const bool guidance = cfg.lambda_content != 0.0 || cfg.lambda_context != 0.0;
    std::vector<Image> d_guidance;
    if (guidance) {
        std::vector<Image> enhanced;
        std::vector<Description> content, context;
        for (int i = 0; i < b; ++i) {
            enhanced.push_back(evals[i].enhanced);
            content.push_back(build_description(batch[i]->content, DescriptionKind::content));
            context.push_back(build_description(batch[i]->context, DescriptionKind::context));
        }
        GuidanceResult gr;
        if (with_grads) {
            gr = guidance_loss_with_grad(enhanced, content, context, *backend, *heads,
                                         cfg.lambda_content, cfg.lambda_context, d_guidance,
                                         cfg.logit_scale);
        } else {
            gr = guidance_loss(enhanced, content, context, *backend, *heads, cfg.logit_scale);
        }
        out.loss.content = cfg.lambda_content != 0.0 ? gr.content_loss : 0.0;
        out.loss.context = cfg.lambda_context != 0.0 ? gr.context_loss : 0.0;
    }

    out.loss.zeroref = cfg.zr.w_exp * out.loss.exposure + cfg.zr.w_spa * out.loss.spatial +
                       cfg.zr.w_rgb * out.loss.color + cfg.zr.w_tv * out.loss.tv;
    out.loss.total = out.loss.zeroref + cfg.lambda_prior * out.loss.prior +
                     cfg.lambda_content * out.loss.content + cfg.lambda_context * out.loss.context;

    if (!with_grads) return out;

    std::vector<EnhancerGrads> per_image(b);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < b; ++i) {
        PerImageEval& ev = evals[i];
        if (!d_guidance.empty())
            for (std::size_t k = 0; k < ev.d_enhanced.data.size(); ++k)
                ev.d_enhanced.data[k] += d_guidance[i].data[k];
        apply_curves_backward(ev.curve_trace, ev.params, ev.d_enhanced, &ev.d_params, nullptr);
        per_image[i] = EnhancerGrads::zeros_like(weights);
        estimate_curves_backward(ev.dce_trace, weights, ev.d_params, per_image[i]);
    }
    // Fixed-order reduction keeps parallel runs bit-reproducible.
    out.grads = EnhancerGrads::zeros_like(weights);
    for (int i = 0; i < b; ++i) out.grads.add(per_image[i]);
    return out;
}

void write_checkpoint(const std::string& dir, const EnhancerWeights& weights, const Adam& opt,
                      int epoch_done, std::int64_t steps_done, const std::string& iter_rng_state,
                      const std::vector<TraceRow>& trace, const CheckpointOptions& ckpt) {
    fs::create_directories(dir);
    save_enhancer((fs::path(dir) / "weights.lltc").string(), weights);
    TensorFile opt_state;
    opt_state.meta_json = "{}";
    opt.export_state(opt_state.tensors, "adam");
    save_tensor_file((fs::path(dir) / "optimizer.lltc").string(), opt_state);
    nlohmann::json state{{"epoch_done", epoch_done},
                         {"steps_done", steps_done},
                         {"iterator_rng", iter_rng_state}};
    std::ofstream os(fs::path(dir) / "state.json");
    os << state.dump(2) << "\n";
    write_trace_csv((fs::path(dir) / "trace.csv").string(), trace);
    if (!ckpt.config_snapshot.empty()) {
        std::ofstream cs(fs::path(dir) / "config.snapshot.toml");
        cs << ckpt.config_snapshot;
    }
    auto copy_if_set = [&](const std::string& src, const char* name) {
        if (!src.empty() && fs::exists(src))
            fs::copy_file(src, fs::path(dir) / name, fs::copy_options::overwrite_existing);
    };
    copy_if_set(ckpt.prompts_bin, "prompts.bin");
    copy_if_set(ckpt.prompts_json, "prompts.json");
    copy_if_set(ckpt.content_head, "content_head.lltc");
    copy_if_set(ckpt.context_head, "context_head.lltc");
}

}  // namespace

LossBreakdown total_training_loss(const std::vector<const TrainingPatch*>& batch,
                                  const EnhancerWeights& weights, const EncoderBackend* backend,
                                  const PromptPair* prompts, const ContentContextHeads* heads,
                                  const TrainConfig& cfg) {
    return eval_batch(batch, weights, backend, prompts, heads, cfg, false).loss;
}

TrainResult train_enhancer(const std::vector<TrainingPatch>& patches, const TrainConfig& cfg,
                           const EncoderBackend* backend, const PromptPair* prompts,
                           const ContentContextHeads* heads, const CheckpointOptions& ckpt,
                           const std::string& resume_from) {
    if (patches.empty()) throw std::invalid_argument("train_enhancer: empty dataset");
    require_prior_inputs(cfg, backend, prompts, heads);
    if (static_cast<int>(patches.size()) < cfg.batch_size)
        throw std::invalid_argument("train_enhancer: fewer patches than one batch");

    Rng seeder(cfg.seed);
    Rng init_rng(seeder.next_u64());
    const std::uint64_t iter_seed = seeder.next_u64();

    TrainResult res;
    res.weights = EnhancerWeights::init(cfg.feature_channels, cfg.n_iterations, init_rng);
    BatchIterator iterator(patches.size(), cfg.batch_size, iter_seed);

    AdamConfig acfg;
    acfg.lr = cfg.learning_rate;
    acfg.weight_decay = cfg.weight_decay;
    Adam opt(res.weights.param_tensors(), acfg);

    int start_epoch = 0;
    std::int64_t step = 0;

    if (!resume_from.empty()) {
        res.weights = load_enhancer((fs::path(resume_from) / "weights.lltc").string());
        opt = Adam(res.weights.param_tensors(), acfg);
        const TensorFile opt_state =
            load_tensor_file((fs::path(resume_from) / "optimizer.lltc").string());
        opt.import_state(opt_state.tensors, "adam");
        std::ifstream is(fs::path(resume_from) / "state.json");
        if (!is) throw IngestionError("resume: missing state.json in " + resume_from);
        nlohmann::json state = nlohmann::json::parse(is);
        start_epoch = state.at("epoch_done").get<int>();
        step = state.at("steps_done").get<std::int64_t>();
        iterator.restore_rng_state(state.at("iterator_rng").get<std::string>());
        res.trace = read_trace_csv((fs::path(resume_from) / "trace.csv").string());
    }

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto batches = iterator.next_epoch();
        for (const auto& batch_idx : batches) {
            std::vector<const TrainingPatch*> batch;
            batch.reserve(batch_idx.size());
            for (std::size_t i : batch_idx) batch.push_back(&patches[i]);

            BatchEval ev = eval_batch(batch, res.weights, backend, prompts, heads, cfg, true);
            ++step;
            res.trace.push_back({step, ev.loss});

            if (!std::isfinite(ev.loss.total)) {
                if (!ckpt.dir.empty())
                    write_checkpoint((fs::path(ckpt.dir) / "diverged").string(), res.weights, opt,
                                     epoch, step, iterator.rng_state(), res.trace, ckpt);
                throw DivergenceError("training diverged at step " + std::to_string(step));
            }

            std::vector<Tensor*> grad_ptrs;
            for (auto& t : ev.grads.dw) grad_ptrs.push_back(&t);
            for (auto& t : ev.grads.db) grad_ptrs.push_back(&t);
            clip_global_norm(grad_ptrs, cfg.grad_clip_norm);
            // Interleave back into the parameter order (w,b per layer).
            std::vector<const Tensor*> ordered;
            for (std::size_t l = 0; l < ev.grads.dw.size(); ++l) {
                ordered.push_back(&ev.grads.dw[l]);
                ordered.push_back(&ev.grads.db[l]);
            }
            opt.step(ordered);
        }
        const bool last = epoch + 1 == cfg.epochs;
        const bool interval_hit =
            ckpt.interval_epochs > 0 && ((epoch + 1) % ckpt.interval_epochs == 0);
        if (!ckpt.dir.empty() && (last || interval_hit)) {
            const std::string dir =
                (fs::path(ckpt.dir) / ("epoch_" + std::to_string(epoch + 1))).string();
            write_checkpoint(dir, res.weights, opt, epoch + 1, step, iterator.rng_state(),
                             res.trace, ckpt);
        }
    }
    return res;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream os(path);
    if (!os) throw IngestionError("cannot write trace: " + path);
    os << "step,total,exposure,spatial,color,tv,zeroref,prior,content,context\n";
    os.precision(17);
    for (const auto& r : trace) {
        os << r.step << ',' << r.loss.total << ',' << r.loss.exposure << ',' << r.loss.spatial
           << ',' << r.loss.color << ',' << r.loss.tv << ',' << r.loss.zeroref << ','
           << r.loss.prior << ',' << r.loss.content << ',' << r.loss.context << '\n';
    }
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IngestionError("cannot read trace: " + path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<TraceRow> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        TraceRow r;
        std::istringstream ls(line);
        char comma;
        ls >> r.step >> comma >> r.loss.total >> comma >> r.loss.exposure >> comma >>
            r.loss.spatial >> comma >> r.loss.color >> comma >> r.loss.tv >> comma >>
            r.loss.zeroref >> comma >> r.loss.prior >> comma >> r.loss.content >> comma >>
            r.loss.context;
        if (ls.fail()) throw ParseError("trace csv: bad row: " + line);
        out.push_back(r);
    }
    return out;
}

GradCheckResult gradient_check(const std::function<double(const std::vector<double>&)>& f,
                               const std::vector<double>& analytic_grad,
                               const std::vector<double>& point, double step, int max_coords,
                               std::uint64_t seed) {
    if (analytic_grad.size() != point.size())
        throw std::invalid_argument("gradient_check: grad/point size mismatch");
    const std::size_t n = point.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(max_coords));

    GradCheckResult res;
    std::vector<double> x = point;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t i = idx[c];
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(x);
        x[i] = orig - step;
        const double fm = f(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw CheckFailure("gradient_check: non-finite loss value");
        const double fd = (fp - fm) / (2.0 * step);
        const double a = analytic_grad[i];
        if (!std::isfinite(a)) throw CheckFailure("gradient_check: non-finite analytic gradient");
        const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-6});
        res.max_rel_err = std::max(res.max_rel_err, std::fabs(a - fd) / denom);
        ++res.coords_checked;
    }
    return res;
}

}  // namespace lowlight
