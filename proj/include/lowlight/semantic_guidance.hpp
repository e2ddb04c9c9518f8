#pragma once

#include <string>
#include <vector>

#include "lowlight/clip_adapter.hpp"
#include "lowlight/image.hpp"

namespace lowlight {

struct InstanceAnnotation {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // image pixels
    std::string category;
    double confidence = 1.0;  // 1.0 for human annotation
};

enum class DescriptionKind { content, context };

// Comma-itemized category list. Items are sorted lexicographically and
// repeated once per instance; an empty instance list yields an empty-flagged
// description which callers exclude from losses.
struct Description {
    std::string text;
    DescriptionKind kind = DescriptionKind::content;
    bool empty = true;
};

Description build_description(const std::vector<InstanceAnnotation>& instances,
                              DescriptionKind kind);

// Raw cosine similarities; logit_scale multiplies them before any softmax.
struct SimilarityMatrix {
    int n = 0;
    std::vector<double> values;  // row-major, s[i*n + j]
    double logit_scale = 100.0;
};

inline constexpr double kDefaultLogitScale = 100.0;

SimilarityMatrix similarity_matrix(const std::vector<Image>& images,
                                   const std::vector<Description>& descriptions,
                                   const EncoderBackend& backend, const ProjectionHead& head,
                                   double logit_scale = kDefaultLogitScale);

// 0.5 * (row-wise CE + column-wise CE) with diagonal targets, softmax over
// logit_scale * values.
double bidirectional_ce(const SimilarityMatrix& sim);
// d(loss)/d(values), same layout as sim.values.
std::vector<double> bidirectional_ce_backward(const SimilarityMatrix& sim);

struct ContentContextHeads {
    ProjectionHead content = ProjectionHead::identity();
    ProjectionHead context = ProjectionHead::identity();
};

struct GuidanceResult {
    double content_loss = 0.0;
    double context_loss = 0.0;
    // Set when fewer than 2 members had a non-empty description and the
    // corresponding loss was forced to 0.
    bool content_degenerate = false;
    bool context_degenerate = false;
};

// Batch-level guidance: members with empty descriptions are dropped from both
// axes of the corresponding matrix.
GuidanceResult guidance_loss(const std::vector<Image>& images,
                             const std::vector<Description>& content_descs,
                             const std::vector<Description>& context_descs,
                             const EncoderBackend& backend, const ContentContextHeads& heads,
                             double logit_scale = kDefaultLogitScale);

// Same computation, also producing d(content_loss)/d(image_i) and
// d(context_loss)/d(image_i) summed into per-image gradients (zero for
// dropped members).
GuidanceResult guidance_loss_with_grad(const std::vector<Image>& images,
                                       const std::vector<Description>& content_descs,
                                       const std::vector<Description>& context_descs,
                                       const EncoderBackend& backend,
                                       const ContentContextHeads& heads, double w_content,
                                       double w_context, std::vector<Image>& d_images,
                                       double logit_scale = kDefaultLogitScale);

}  // namespace lowlight
