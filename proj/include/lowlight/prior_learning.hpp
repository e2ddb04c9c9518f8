#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lowlight/clip_adapter.hpp"
#include "lowlight/image.hpp"
#include "lowlight/rng.hpp"
#include "lowlight/tensor.hpp"

namespace lowlight {

// Learnable positive/negative continuous prompt token matrices.
struct PromptPair {
    Tensor positive;  // [n_tokens, 512]
    Tensor negative;
    int n_tokens = 16;
};

// label 0 = positive (averaged, denoised proxy), 1 = negative (subsampled,
// noise preserving).
struct PriorSample {
    Image image;
    int label = 0;
};

struct PriorConfig {
    int sampling_scale = 4;  // s
    int n_tokens = 16;
    int epochs = 30;
    double learning_rate = 0.05;
    double init_stddev = 0.02;
    std::uint64_t seed = 0;
    PhotometricRanges augment;
};

// Crops to a multiple of the sampling scale, applies one random photometric
// augmentation, then derives the averaged positive and the subsampled
// negative at identical dimensions. Draw order: brightness, contrast, hue,
// row offset, column offset.
std::pair<PriorSample, PriorSample> synthesize_pair(const Image& img, const PriorConfig& cfg,
                                                    Rng& rng);

// Softmax over cosine similarities against the two prompts; the returned
// value is the probability assigned to the positive prompt.
double prompt_probability(const Image& img, const PromptPair& prompts,
                          const EncoderBackend& backend);

// Mean binary cross-entropy pushing each sample's true-class probability
// toward 1.
double prompt_init_loss(const std::vector<PriorSample>& batch, const PromptPair& prompts,
                        const EncoderBackend& backend);
void prompt_init_loss_backward(const std::vector<PriorSample>& batch, const PromptPair& prompts,
                               const EncoderBackend& backend, Tensor& d_positive,
                               Tensor& d_negative);

struct PromptLearnResult {
    PromptPair prompts;
    std::vector<double> loss_trace;  // mean loss per epoch
};

// Seeded Gaussian init, then gradient descent on prompt_init_loss over pairs
// synthesized from the dataset in order. Deterministic given (seed, dataset
// order, backend).
PromptLearnResult learn_prompt_pair(const std::vector<Image>& images, const PriorConfig& cfg,
                                    const EncoderBackend& backend);

// Eq-style prior term on an enhanced image: -log p(positive prompt).
double prior_loss(const Image& enhanced, const PromptPair& prompts, const EncoderBackend& backend);
Image prior_loss_backward(const Image& enhanced, const PromptPair& prompts,
                          const EncoderBackend& backend);

// Binary tensor file plus JSON sidecar {n_tokens, seed, backend-id, config}.
void save_prompt_pair(const std::string& bin_path, const std::string& json_sidecar_path,
                      const PromptPair& prompts, const PriorConfig& cfg,
                      const std::string& backend_id);
PromptPair load_prompt_pair(const std::string& bin_path);

}  // namespace lowlight
