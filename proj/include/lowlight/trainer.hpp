#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lowlight/curve_model.hpp"
#include "lowlight/data_pipeline.hpp"
#include "lowlight/prior_learning.hpp"
#include "lowlight/semantic_guidance.hpp"
#include "lowlight/zr_losses.hpp"

namespace lowlight {

struct TrainConfig {
    int batch_size = 8;
    int epochs = 200;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    double grad_clip_norm = 0.1;
    ZeroRefConfig zr;
    double lambda_prior = 1.0;
    double lambda_content = 1.0;
    double lambda_context = 1.0;
    std::uint64_t seed = 0;
    int eval_scale_factor = 1;
    int n_iterations = 8;
    int feature_channels = 32;
    double logit_scale = 100.0;
};

// Unweighted per-term values; total is the weighted sum. Disabled terms
// (lambda = 0) are reported as exact zeros.
struct LossBreakdown {
    double total = 0.0;
    double exposure = 0.0;
    double spatial = 0.0;
    double color = 0.0;
    double tv = 0.0;
    double zeroref = 0.0;  // weighted zero-reference subtotal
    double prior = 0.0;
    double content = 0.0;
    double context = 0.0;
};

struct TraceRow {
    std::int64_t step = 0;
    LossBreakdown loss;
};

// Loss of one batch under the combined objective. Prompts/heads may be null
// when the corresponding lambda is zero; a missing prompt pair with
// lambda_prior > 0 is a config-error.
LossBreakdown total_training_loss(const std::vector<const TrainingPatch*>& batch,
                                  const EnhancerWeights& weights, const EncoderBackend* backend,
                                  const PromptPair* prompts, const ContentContextHeads* heads,
                                  const TrainConfig& cfg);

struct CheckpointOptions {
    std::string dir;           // empty = no checkpoints
    int interval_epochs = 0;   // 0 = final checkpoint only
    std::string config_snapshot;  // written verbatim as config.snapshot.toml
    std::string prompts_bin;      // copied into the checkpoint when set
    std::string prompts_json;
    std::string content_head;
    std::string context_head;
};

struct TrainResult {
    EnhancerWeights weights;
    std::vector<TraceRow> trace;
};

// Adam with decoupled weight decay and global-norm gradient clipping on
// total_training_loss. Deterministic given (seed, dataset order, backend).
// Divergence (non-finite loss) writes a diagnostic checkpoint when a
// checkpoint dir is set, then throws DivergenceError.
TrainResult train_enhancer(const std::vector<TrainingPatch>& patches, const TrainConfig& cfg,
                           const EncoderBackend* backend, const PromptPair* prompts,
                           const ContentContextHeads* heads, const CheckpointOptions& ckpt = {},
                           const std::string& resume_from = "");

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_trace_csv(const std::string& path);

struct GradCheckResult {
    double max_rel_err = 0.0;
    int coords_checked = 0;
};

// Central finite differences on a sampled coordinate subset (at least
// min(max_coords, dim)); rel. error uses denominator max(|a|, |fd|, 1e-6).
GradCheckResult gradient_check(const std::function<double(const std::vector<double>&)>& f,
                               const std::vector<double>& analytic_grad,
                               const std::vector<double>& point, double step = 1e-3,
                               int max_coords = 64, std::uint64_t seed = 0);

}  // namespace lowlight
