#include "lowlight/prior_learning.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lowlight/errors.hpp"
#include "lowlight/optim.hpp"
#include "lowlight/tensor_io.hpp"

namespace lowlight {

namespace {

struct PairCosines {
    double cp = 0.0;   // cos(image, positive prompt)
    double cn = 0.0;   // cos(image, negative prompt)
    double yhat = 0.0; // softmax probability of the positive prompt
};

PairCosines pair_cosines(const Image& img, const PromptPair& prompts,
                         const EncoderBackend& backend) {
    static const ProjectionHead kIdentity = ProjectionHead::identity();
    const Embedding ei = encode_image(img, backend, kIdentity);
    const Embedding ep = encode_prompt_tokens(prompts.positive, backend);
    const Embedding en = encode_prompt_tokens(prompts.negative, backend);
    PairCosines pc;
    pc.cp = ei.dot(ep);
    pc.cn = ei.dot(en);
    // Two-way softmax is a sigmoid of the cosine gap; cosines are in [-1,1]
    // so no shifting is needed.
    pc.yhat = 1.0 / (1.0 + std::exp(pc.cn - pc.cp));
    return pc;
}

}  // namespace

std::pair<PriorSample, PriorSample> synthesize_pair(const Image& img, const PriorConfig& cfg,
                                                    Rng& rng) {
    const int s = cfg.sampling_scale;
    if (s < 2) throw std::invalid_argument("synthesize_pair: sampling scale must be >= 2");
    if (img.height < s || img.width < s)
        throw std::invalid_argument("synthesize_pair: image smaller than sampling scale");
    // Crop to a multiple of s so both resamples share dimensions.
    const int ch = (img.height / s) * s;
    const int cw = (img.width / s) * s;
    Image cropped(ch, cw);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) cropped.at(c, y, x) = img.at(c, y, x);

    PhotometricParams p;
    p.brightness_factor = rng.uniform(cfg.augment.brightness_lo, cfg.augment.brightness_hi);
    p.contrast_factor = rng.uniform(cfg.augment.contrast_lo, cfg.augment.contrast_hi);
    p.hue_shift_deg = rng.uniform(cfg.augment.hue_lo_deg, cfg.augment.hue_hi_deg);
    const Image aug = photometric_augment(cropped, p);

    const int off_r = rng.uniform_int(0, s - 1);
    const int off_c = rng.uniform_int(0, s - 1);
    PriorSample pos{avg_pool(aug, s), 0};
    PriorSample neg{subsample(aug, s, off_r, off_c), 1};
    return {std::move(pos), std::move(neg)};
}

double prompt_probability(const Image& img, const PromptPair& prompts,
                          const EncoderBackend& backend) {
    return pair_cosines(img, prompts, backend).yhat;
}

double prompt_init_loss(const std::vector<PriorSample>& batch, const PromptPair& prompts,
                        const EncoderBackend& backend) {
    if (batch.empty()) throw std::invalid_argument("prompt_init_loss: empty batch");
    double acc = 0.0;
    for (const auto& s : batch) {
        const double yhat = prompt_probability(s.image, prompts, backend);
        const double p_true = s.label == 0 ? yhat : 1.0 - yhat;
        acc += -std::log(std::max(p_true, 1e-300));
    }
    return acc / static_cast<double>(batch.size());
}

void prompt_init_loss_backward(const std::vector<PriorSample>& batch, const PromptPair& prompts,
                               const EncoderBackend& backend, Tensor& d_positive,
                               Tensor& d_negative) {
    if (batch.empty()) throw std::invalid_argument("prompt_init_loss: empty batch");
    static const ProjectionHead kIdentity = ProjectionHead::identity();
    const Embedding ep = encode_prompt_tokens(prompts.positive, backend);
    const Embedding en = encode_prompt_tokens(prompts.negative, backend);
    std::vector<double> de_p(kEmbedDim, 0.0), de_n(kEmbedDim, 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& s : batch) {
        const Embedding ei = encode_image(s.image, backend, kIdentity);
        const double yhat = 1.0 / (1.0 + std::exp(dot(ei.v, en.v) - dot(ei.v, ep.v)));
        // d(-log p_true)/d(cp - cn): label 0 -> yhat - 1, label 1 -> yhat.
        const double du = (s.label == 0 ? yhat - 1.0 : yhat) * inv_b;
        for (int d = 0; d < kEmbedDim; ++d) {
            de_p[d] += du * ei.v[d];
            de_n[d] -= du * ei.v[d];
        }
    }
    d_positive = encode_prompt_tokens_backward(prompts.positive, backend, de_p);
    d_negative = encode_prompt_tokens_backward(prompts.negative, backend, de_n);
}

PromptLearnResult learn_prompt_pair(const std::vector<Image>& images, const PriorConfig& cfg,
                                    const EncoderBackend& backend) {
    if (images.empty()) throw std::invalid_argument("learn_prompt_pair: empty dataset");
    if (cfg.n_tokens < 1) throw std::invalid_argument("learn_prompt_pair: n_tokens must be >= 1");
    Rng rng(cfg.seed);
    PromptLearnResult res;
    res.prompts.n_tokens = cfg.n_tokens;
    res.prompts.positive = Tensor({cfg.n_tokens, kEmbedDim});
    res.prompts.negative = Tensor({cfg.n_tokens, kEmbedDim});
    for (double& x : res.prompts.positive.v) x = rng.normal(0.0, cfg.init_stddev);
    for (double& x : res.prompts.negative.v) x = rng.normal(0.0, cfg.init_stddev);
    if (cfg.epochs <= 0) return res;

    Adam opt({&res.prompts.positive, &res.prompts.negative},
             AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0});
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (const Image& img : images) {
            auto [pos, neg] = synthesize_pair(img, cfg, rng);
            const std::vector<PriorSample> batch{std::move(pos), std::move(neg)};
            epoch_loss += prompt_init_loss(batch, res.prompts, backend);
            Tensor dp, dn;
            prompt_init_loss_backward(batch, res.prompts, backend, dp, dn);
            opt.step({&dp, &dn});
        }
        res.loss_trace.push_back(epoch_loss / static_cast<double>(images.size()));
    }
    return res;
}

double prior_loss(const Image& enhanced, const PromptPair& prompts,
                  const EncoderBackend& backend) {
    const double yhat = prompt_probability(enhanced, prompts, backend);
    return -std::log(std::max(yhat, 1e-300));
}

Image prior_loss_backward(const Image& enhanced, const PromptPair& prompts,
                          const EncoderBackend& backend) {
    static const ProjectionHead kIdentity = ProjectionHead::identity();
    const Embedding ep = encode_prompt_tokens(prompts.positive, backend);
    const Embedding en = encode_prompt_tokens(prompts.negative, backend);
    const Embedding ei = encode_image(enhanced, backend, kIdentity);
    const double yhat = 1.0 / (1.0 + std::exp(dot(ei.v, en.v) - dot(ei.v, ep.v)));
    // L = -log yhat; dL/d(cp) = yhat - 1, dL/d(cn) = 1 - yhat.
    std::vector<double> de(kEmbedDim);
    for (int d = 0; d < kEmbedDim; ++d)
        de[d] = (yhat - 1.0) * ep.v[d] + (1.0 - yhat) * en.v[d];
    return encode_image_backward(enhanced, backend, kIdentity, de);
}

void save_prompt_pair(const std::string& bin_path, const std::string& json_sidecar_path,
                      const PromptPair& prompts, const PriorConfig& cfg,
                      const std::string& backend_id) {
    TensorFile tf;
    nlohmann::json meta{{"n_tokens", prompts.n_tokens}, {"version", 1}};
    tf.meta_json = meta.dump();
    tf.tensors.emplace_back("positive", prompts.positive);
    tf.tensors.emplace_back("negative", prompts.negative);
    save_tensor_file(bin_path, tf);
    if (json_sidecar_path.empty()) return;
    nlohmann::json side{{"n_tokens", prompts.n_tokens},
                        {"seed", cfg.seed},
                        {"backend_id", backend_id},
                        {"training", {{"sampling_scale", cfg.sampling_scale},
                                      {"epochs", cfg.epochs},
                                      {"learning_rate", cfg.learning_rate},
                                      {"init_stddev", cfg.init_stddev}}}};
    std::ofstream os(json_sidecar_path);
    if (!os) throw IngestionError("cannot write sidecar: " + json_sidecar_path);
    os << side.dump(2) << "\n";
}

PromptPair load_prompt_pair(const std::string& bin_path) {
    const TensorFile tf = load_tensor_file(bin_path);
    const Tensor* p = tf.find("positive");
    const Tensor* n = tf.find("negative");
    if (!p || !n || p->shape != n->shape || p->shape.size() != 2 || p->shape[1] != kEmbedDim)
        throw ModelError("prompt pair file: bad tensors");
    PromptPair pp;
    pp.positive = *p;
    pp.negative = *n;
    pp.n_tokens = p->shape[0];
    return pp;
}

}  // namespace lowlight
