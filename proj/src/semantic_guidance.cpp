#include "lowlight/semantic_guidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lowlight {

namespace {

// Row-stochastic softmax of scale*values, numerically shifted.
std::vector<double> softmax_rows(const std::vector<double>& values, int n, double scale,
                                 bool transpose) {
    std::vector<double> out(values.size());
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
            const double v = scale * (transpose ? values[static_cast<std::size_t>(j) * n + i]
                                                : values[static_cast<std::size_t>(i) * n + j]);
            mx = std::max(mx, v);
        }
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            const double v = scale * (transpose ? values[static_cast<std::size_t>(j) * n + i]
                                                : values[static_cast<std::size_t>(i) * n + j]);
            z += std::exp(v - mx);
        }
        for (int j = 0; j < n; ++j) {
            const double v = scale * (transpose ? values[static_cast<std::size_t>(j) * n + i]
                                                : values[static_cast<std::size_t>(i) * n + j]);
            out[transpose ? static_cast<std::size_t>(j) * n + i
                          : static_cast<std::size_t>(i) * n + j] = std::exp(v - mx) / z;
        }
    }
    return out;
}

}  // namespace

Description build_description(const std::vector<InstanceAnnotation>& instances,
                              DescriptionKind kind) {
    Description d;
    d.kind = kind;
    d.empty = instances.empty();
    if (d.empty) return d;
    std::vector<std::string> items;
    items.reserve(instances.size());
    for (const auto& inst : instances) items.push_back(inst.category);
    std::sort(items.begin(), items.end());
    std::string text;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) text += ", ";
        text += items[i];
    }
    d.text = std::move(text);
    return d;
}

SimilarityMatrix similarity_matrix(const std::vector<Image>& images,
                                   const std::vector<Description>& descriptions,
                                   const EncoderBackend& backend, const ProjectionHead& head,
                                   double logit_scale) {
    if (images.size() != descriptions.size())
        throw std::invalid_argument("similarity_matrix: batch length mismatch");
    for (const auto& d : descriptions)
        if (d.empty)
            throw std::invalid_argument("similarity_matrix: empty description (caller must filter)");
    const int n = static_cast<int>(images.size());
    SimilarityMatrix sim;
    sim.n = n;
    sim.logit_scale = logit_scale;
    sim.values.resize(static_cast<std::size_t>(n) * n);
    std::vector<Embedding> ie(n), te(n);
    for (int i = 0; i < n; ++i) {
        ie[i] = encode_image(images[i], backend, head);
        te[i] = encode_text(descriptions[i].text, backend, head);
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            sim.values[static_cast<std::size_t>(i) * n + j] = ie[i].dot(te[j]);
    return sim;
}

double bidirectional_ce(const SimilarityMatrix& sim) {
    const int n = sim.n;
    if (n < 1 || sim.values.size() != static_cast<std::size_t>(n) * n)
        throw std::invalid_argument("bidirectional_ce: matrix must be square");
    const auto pr = softmax_rows(sim.values, n, sim.logit_scale, false);
    const auto pc = softmax_rows(sim.values, n, sim.logit_scale, true);
    double row_ce = 0.0, col_ce = 0.0;
    for (int i = 0; i < n; ++i) {
        row_ce += -std::log(std::max(pr[static_cast<std::size_t>(i) * n + i], 1e-300));
        col_ce += -std::log(std::max(pc[static_cast<std::size_t>(i) * n + i], 1e-300));
    }
    return 0.5 * (row_ce + col_ce) / static_cast<double>(n);
}

std::vector<double> bidirectional_ce_backward(const SimilarityMatrix& sim) {
    const int n = sim.n;
    if (n < 1 || sim.values.size() != static_cast<std::size_t>(n) * n)
        throw std::invalid_argument("bidirectional_ce: matrix must be square");
    const auto pr = softmax_rows(sim.values, n, sim.logit_scale, false);
    const auto pc = softmax_rows(sim.values, n, sim.logit_scale, true);
    std::vector<double> grad(sim.values.size());
    const double w = 0.5 * sim.logit_scale / static_cast<double>(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            grad[k] = w * ((pr[k] - (i == j ? 1.0 : 0.0)) + (pc[k] - (i == j ? 1.0 : 0.0)));
        }
    return grad;
}

namespace {

struct TaskEval {
    double loss = 0.0;
    bool degenerate = false;
    std::vector<int> kept;  // indices into the batch
    SimilarityMatrix sim;
    std::vector<Embedding> img_e, txt_e;
};

TaskEval eval_task(const std::vector<Image>& images, const std::vector<Description>& descs,
                   const EncoderBackend& backend, const ProjectionHead& head, double logit_scale,
                   bool keep_embeddings) {
    TaskEval ev;
    for (std::size_t i = 0; i < descs.size(); ++i)
        if (!descs[i].empty) ev.kept.push_back(static_cast<int>(i));
    if (ev.kept.size() < 2) {
        ev.degenerate = true;
        return ev;
    }
    const int n = static_cast<int>(ev.kept.size());
    ev.sim.n = n;
    ev.sim.logit_scale = logit_scale;
    ev.sim.values.resize(static_cast<std::size_t>(n) * n);
    ev.img_e.resize(n);
    ev.txt_e.resize(n);
    for (int i = 0; i < n; ++i) {
        ev.img_e[i] = encode_image(images[ev.kept[i]], backend, head);
        ev.txt_e[i] = encode_text(descs[ev.kept[i]].text, backend, head);
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            ev.sim.values[static_cast<std::size_t>(i) * n + j] = ev.img_e[i].dot(ev.txt_e[j]);
    ev.loss = bidirectional_ce(ev.sim);
    if (!keep_embeddings) {
        ev.img_e.clear();
        ev.txt_e.clear();
    }
    return ev;
}

}  // namespace

GuidanceResult guidance_loss(const std::vector<Image>& images,
                             const std::vector<Description>& content_descs,
                             const std::vector<Description>& context_descs,
                             const EncoderBackend& backend, const ContentContextHeads& heads,
                             double logit_scale) {
    if (images.size() != content_descs.size() || images.size() != context_descs.size())
        throw std::invalid_argument("guidance_loss: batch length mismatch");
    GuidanceResult r;
    const TaskEval c = eval_task(images, content_descs, backend, heads.content, logit_scale, false);
    const TaskEval x = eval_task(images, context_descs, backend, heads.context, logit_scale, false);
    r.content_loss = c.degenerate ? 0.0 : c.loss;
    r.context_loss = x.degenerate ? 0.0 : x.loss;
    r.content_degenerate = c.degenerate;
    r.context_degenerate = x.degenerate;
    return r;
}

GuidanceResult guidance_loss_with_grad(const std::vector<Image>& images,
                                       const std::vector<Description>& content_descs,
                                       const std::vector<Description>& context_descs,
                                       const EncoderBackend& backend,
                                       const ContentContextHeads& heads, double w_content,
                                       double w_context, std::vector<Image>& d_images,
                                       double logit_scale) {
    if (images.size() != content_descs.size() || images.size() != context_descs.size())
        throw std::invalid_argument("guidance_loss: batch length mismatch");
    d_images.clear();
    for (const auto& img : images) d_images.emplace_back(img.height, img.width, 0.0);

    GuidanceResult r;
    for (int task = 0; task < 2; ++task) {
        const auto& descs = task == 0 ? content_descs : context_descs;
        const auto& head = task == 0 ? heads.content : heads.context;
        const double w = task == 0 ? w_content : w_context;
        TaskEval ev = eval_task(images, descs, backend, head, logit_scale, true);
        if (task == 0) {
            r.content_loss = ev.degenerate ? 0.0 : ev.loss;
            r.content_degenerate = ev.degenerate;
        } else {
            r.context_loss = ev.degenerate ? 0.0 : ev.loss;
            r.context_degenerate = ev.degenerate;
        }
        if (ev.degenerate || w == 0.0) continue;
        const int n = ev.sim.n;
        const auto d_sim = bidirectional_ce_backward(ev.sim);
        for (int i = 0; i < n; ++i) {
            std::vector<double> de(kEmbedDim, 0.0);
            for (int j = 0; j < n; ++j) {
                const double g = d_sim[static_cast<std::size_t>(i) * n + j];
                for (int d = 0; d < kEmbedDim; ++d) de[d] += g * ev.txt_e[j].v[d];
            }
            const Image gi =
                encode_image_backward(images[ev.kept[i]], backend, head, de);
            Image& acc = d_images[ev.kept[i]];
            for (std::size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += w * gi.data[k];
        }
    }
    return r;
}

}  // namespace lowlight
