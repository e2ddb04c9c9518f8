#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lowlight/image.hpp"
#include "lowlight/tensor.hpp"

namespace lowlight {

inline constexpr int kEmbedDim = 512;

// L2-normalized 512-dim joint-space vector.
struct Embedding {
    std::vector<double> v;
    double dot(const Embedding& o) const;
};

// Linear map on encoder features into the joint space; the only image/text
// encoder component that ever receives gradient updates.
struct ProjectionHead {
    Tensor w;  // [512, 512]
    bool trainable = true;

    static ProjectionHead identity();
};

enum class BackendKind { mock, file };

// Frozen encoder pair. Both kinds share one structure: a fixed orthogonal
// projection of a feature lift of the (resized) image on the vision side and
// a hashed-token pooling + fixed orthogonal projection on the text side. The
// mock derives every matrix from a seed; the file kind loads them from the
// LLTC container (see save()). Embedding width is pinned to 512 and checked
// at load.
class EncoderBackend {
public:
    static EncoderBackend mock(std::uint64_t seed, int internal_size = 16);
    static EncoderBackend from_file(const std::string& path);
    void save(const std::string& path) const;

    BackendKind kind() const { return kind_; }
    int internal_size() const { return internal_size_; }
    std::uint64_t seed() const { return seed_; }
    std::string id() const;

    // Raw 512-dim features before the projection head and normalization.
    std::vector<double> image_feature(const Image& img) const;
    std::vector<double> text_feature(const std::string& description) const;
    std::vector<double> prompt_feature(const Tensor& tokens) const;

    // Adjoints of the feature maps, for the differentiable training paths.
    Image image_feature_backward(const Image& img, const std::vector<double>& d_feature) const;
    Tensor prompt_feature_backward(const Tensor& tokens, const std::vector<double>& d_feature) const;

    // Exposed for freeze-contract tests.
    const Tensor& image_projection() const { return img_proj_; }
    const Tensor& text_projection() const { return txt_proj_; }

private:
    EncoderBackend() = default;

    BackendKind kind_ = BackendKind::mock;
    std::uint64_t seed_ = 0;
    std::uint64_t token_seed_ = 0;
    int internal_size_ = 16;
    Tensor img_proj_;  // [512, 4*3*sz*sz+1]
    Tensor txt_proj_;  // [512, 512]
};

Embedding encode_image(const Image& img, const EncoderBackend& backend, const ProjectionHead& head);
Embedding encode_text(const std::string& description, const EncoderBackend& backend,
                      const ProjectionHead& head);
// Continuous prompt tokens [n_tokens, 512] fed past the token-embedding
// lookup; no projection head on this path.
Embedding encode_prompt_tokens(const Tensor& tokens, const EncoderBackend& backend);

// d(loss)/d(img) given d(loss)/d(embedding).
Image encode_image_backward(const Image& img, const EncoderBackend& backend,
                            const ProjectionHead& head, const std::vector<double>& d_embedding);
// d(loss)/d(tokens) given d(loss)/d(embedding).
Tensor encode_prompt_tokens_backward(const Tensor& tokens, const EncoderBackend& backend,
                                     const std::vector<double>& d_embedding);
// Accumulates d(loss)/d(head.w) for one encoded feature.
void head_backward(const std::vector<double>& feature, const ProjectionHead& head,
                   const std::vector<double>& d_embedding, Tensor& d_head);

enum class GuidanceTask { content, context };

struct LabeledFeature {
    std::vector<double> feature;  // raw 512-dim encoder feature
    int class_id = 0;
};

struct FineTuneConfig {
    int steps = 200;
    int batch_size = 8;
    double learning_rate = 1e-2;
    double logit_scale = 100.0;
    std::uint64_t seed = 0;
};

// Trains only the head, by batch bidirectional cross-entropy between
// head-projected sample features and head-projected class features. The
// backend stays untouched (freeze contract).
ProjectionHead fine_tune_projection(const ProjectionHead& head,
                                    const std::vector<LabeledFeature>& dataset,
                                    const std::vector<std::vector<double>>& class_features,
                                    GuidanceTask task, const FineTuneConfig& cfg);

// Fraction of samples whose nearest head-projected class feature (by cosine)
// is their own class.
double matching_accuracy(const ProjectionHead& head, const std::vector<LabeledFeature>& dataset,
                         const std::vector<std::vector<double>>& class_features);

void save_projection_head(const std::string& path, const ProjectionHead& head,
                          const std::string& task_name);
ProjectionHead load_projection_head(const std::string& path);

}  // namespace lowlight
