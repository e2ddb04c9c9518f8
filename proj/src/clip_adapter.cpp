#include "lowlight/clip_adapter.hpp"

#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lowlight/errors.hpp"
#include "lowlight/optim.hpp"
#include "lowlight/rng.hpp"
#include "lowlight/semantic_guidance.hpp"
#include "lowlight/tensor_io.hpp"

namespace lowlight {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Orthonormal rows via Gram-Schmidt on seeded Gaussian draws. rows <= cols.
Tensor orthonormal_rows(int rows, int cols, Rng& rng) {
    Tensor t({rows, cols});
    for (double& x : t.v) x = rng.normal();
    for (int r = 0; r < rows; ++r) {
        double* vr = t.v.data() + static_cast<std::size_t>(r) * cols;
        for (int p = 0; p < r; ++p) {
            const double* vp = t.v.data() + static_cast<std::size_t>(p) * cols;
            double d = 0.0;
            for (int c = 0; c < cols; ++c) d += vr[c] * vp[c];
            for (int c = 0; c < cols; ++c) vr[c] -= d * vp[c];
        }
        double n = 0.0;
        for (int c = 0; c < cols; ++c) n += vr[c] * vr[c];
        n = std::sqrt(n);
        if (n < 1e-12) throw BackendError("mock backend: degenerate projection row");
        for (int c = 0; c < cols; ++c) vr[c] /= n;
    }
    return t;
}

void matvec(const Tensor& m, const double* x, double* y) {
    const int rows = m.shape[0], cols = m.shape[1];
    for (int r = 0; r < rows; ++r) {
        const double* mr = m.v.data() + static_cast<std::size_t>(r) * cols;
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += mr[c] * x[c];
        y[r] = s;
    }
}

void matvec_t(const Tensor& m, const double* y, double* x) {
    const int rows = m.shape[0], cols = m.shape[1];
    std::fill(x, x + cols, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* mr = m.v.data() + static_cast<std::size_t>(r) * cols;
        const double yr = y[r];
        for (int c = 0; c < cols; ++c) x[c] += mr[c] * yr;
    }
}

std::vector<double> normalize(const std::vector<double>& v, double* norm_out = nullptr) {
    double n = l2_norm(v);
    if (n < 1e-12) throw BackendError("encoder produced a zero feature");
    std::vector<double> e(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) e[i] = v[i] / n;
    if (norm_out) *norm_out = n;
    return e;
}

// d(normalize)/dv adjoint: dv = (de - (e . de) e) / ||v||.
std::vector<double> normalize_backward(const std::vector<double>& e, double norm,
                                       const std::vector<double>& de) {
    double d = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) d += e[i] * de[i];
    std::vector<double> dv(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) dv[i] = (de[i] - d * e[i]) / norm;
    return dv;
}

std::vector<std::string> split_items(const std::string& text) {
    std::vector<std::string> items;
    std::string cur;
    auto flush = [&] {
        std::size_t a = cur.find_first_not_of(" \t\n\r");
        if (a == std::string::npos) {
            cur.clear();
            return;
        }
        std::size_t b = cur.find_last_not_of(" \t\n\r");
        items.push_back(cur.substr(a, b - a + 1));
        cur.clear();
    };
    for (char c : text) {
        if (c == ',')
            flush();
        else
            cur.push_back(c);
    }
    flush();
    return items;
}

double apply_head(const ProjectionHead& head, const std::vector<double>& f,
                  std::vector<double>& out) {
    out.resize(kEmbedDim);
    matvec(head.w, f.data(), out.data());
    return 0.0;
}

// Mock matrices are deterministic in the seed but costly to orthogonalize, so
// they are cached per (seed, size). The cache never affects results.
struct MockCacheKey {
    std::uint64_t seed;
    int size;
    bool operator<(const MockCacheKey& o) const {
        return seed < o.seed || (seed == o.seed && size < o.size);
    }
};
std::mutex g_mock_mutex;
std::map<MockCacheKey, std::pair<Tensor, Tensor>> g_mock_cache;

}  // namespace

double Embedding::dot(const Embedding& o) const { return lowlight::dot(v, o.v); }

ProjectionHead ProjectionHead::identity() {
    ProjectionHead h;
    h.w = Tensor({kEmbedDim, kEmbedDim});
    for (int i = 0; i < kEmbedDim; ++i) h.w.v[static_cast<std::size_t>(i) * kEmbedDim + i] = 1.0;
    return h;
}

EncoderBackend EncoderBackend::mock(std::uint64_t seed, int internal_size) {
    if (internal_size < 2) throw std::invalid_argument("mock backend: internal size must be >= 2");
    EncoderBackend b;
    b.kind_ = BackendKind::mock;
    b.seed_ = seed;
    b.internal_size_ = internal_size;
    b.token_seed_ = seed ^ 0xA5A5A5A5DEADBEEFull;
    const int feat_dim = 4 * 3 * internal_size * internal_size + 1;
    {
        std::lock_guard<std::mutex> lock(g_mock_mutex);
        auto it = g_mock_cache.find({seed, internal_size});
        if (it != g_mock_cache.end()) {
            b.img_proj_ = it->second.first;
            b.txt_proj_ = it->second.second;
            return b;
        }
    }
    Rng rng(seed);
    Tensor img = orthonormal_rows(kEmbedDim, feat_dim, rng);
    Tensor txt = orthonormal_rows(kEmbedDim, kEmbedDim, rng);
    {
        std::lock_guard<std::mutex> lock(g_mock_mutex);
        g_mock_cache[{seed, internal_size}] = {img, txt};
    }
    b.img_proj_ = std::move(img);
    b.txt_proj_ = std::move(txt);
    return b;
}

EncoderBackend EncoderBackend::from_file(const std::string& path) {
    std::string resolved = path;
    if (resolved.empty()) {
        if (const char* env = std::getenv("LLE_CLIP_WEIGHTS")) resolved = env;
    }
    if (resolved.empty()) throw BackendError("no encoder weight path given (set LLE_CLIP_WEIGHTS)");
    TensorFile tf;
    try {
        tf = load_tensor_file(resolved);
    } catch (const std::exception& e) {
        throw BackendError(std::string("cannot load encoder weights: ") + e.what());
    }
    nlohmann::json meta = nlohmann::json::parse(tf.meta_json, nullptr, false);
    if (meta.is_discarded()) throw BackendError("encoder weights: invalid metadata");
    if (meta.value("embed_dim", 0) != kEmbedDim)
        throw BackendError("encoder weights: embedding width must be 512");
    EncoderBackend b;
    b.kind_ = BackendKind::file;
    b.seed_ = meta.value("seed", 0ull);
    b.token_seed_ = meta.value("token_seed", 0ull);
    b.internal_size_ = meta.value("internal_size", 16);
    const Tensor* img = tf.find("image_projection");
    const Tensor* txt = tf.find("text_projection");
    if (!img || !txt) throw BackendError("encoder weights: missing projection tensors");
    if (img->shape.size() != 2 || img->shape[0] != kEmbedDim ||
        img->shape[1] != 4 * 3 * b.internal_size_ * b.internal_size_ + 1 ||
        txt->shape != std::vector<int>{kEmbedDim, kEmbedDim})
        throw BackendError("encoder weights: projection shape mismatch");
    b.img_proj_ = *img;
    b.txt_proj_ = *txt;
    return b;
}

void EncoderBackend::save(const std::string& path) const {
    TensorFile tf;
    nlohmann::json meta{{"embed_dim", kEmbedDim},
                        {"internal_size", internal_size_},
                        {"seed", seed_},
                        {"token_seed", token_seed_},
                        {"kind", kind_ == BackendKind::mock ? "mock" : "file"}};
    tf.meta_json = meta.dump();
    tf.tensors.emplace_back("image_projection", img_proj_);
    tf.tensors.emplace_back("text_projection", txt_proj_);
    save_tensor_file(path, tf);
}

std::string EncoderBackend::id() const {
    return (kind_ == BackendKind::mock ? "mock:" : "file:") + std::to_string(seed_) + ":" +
           std::to_string(internal_size_);
}

namespace {
// Per-block gains keep the pixel, intensity-energy and gradient-energy blocks
// on comparable scales so none of them vanishes after normalization.
constexpr double kGainX2 = 2.0;
constexpr double kGainGrad = 24.0;
}  // namespace

// Feature lift of the resized image: raw pixels, their squares, squared
// forward differences, and a constant entry. The squared blocks make
// intensity and high-frequency energy linearly readable; the constant entry
// acts as a bias term for cosine classifiers (normalization preserves the
// sign of any linear functional of the lift).
std::vector<double> EncoderBackend::image_feature(const Image& img) const {
    if (img.height < 1 || img.width < 1) throw std::invalid_argument("encode_image: empty image");
    const int sz = internal_size_;
    const Image small = resize_bilinear(img, sz, sz);
    const std::size_t n = small.data.size();
    std::vector<double> phi(4 * n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        phi[i] = small.data[i];
        phi[n + i] = kGainX2 * small.data[i] * small.data[i];
    }
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < sz; ++y)
            for (int x = 0; x < sz; ++x) {
                const std::size_t i = (static_cast<std::size_t>(c) * sz + y) * sz + x;
                if (x + 1 < sz) {
                    const double dh = small.at(c, y, x + 1) - small.at(c, y, x);
                    phi[2 * n + i] = kGainGrad * dh * dh;
                }
                if (y + 1 < sz) {
                    const double dv = small.at(c, y + 1, x) - small.at(c, y, x);
                    phi[3 * n + i] = kGainGrad * dv * dv;
                }
            }
    phi[4 * n] = 1.0;
    std::vector<double> f(kEmbedDim);
    matvec(img_proj_, phi.data(), f.data());
    return f;
}

Image EncoderBackend::image_feature_backward(const Image& img,
                                             const std::vector<double>& d_feature) const {
    const int sz = internal_size_;
    const Image small = resize_bilinear(img, sz, sz);
    const std::size_t n = small.data.size();
    std::vector<double> d_phi(4 * n + 1);
    matvec_t(img_proj_, d_feature.data(), d_phi.data());
    Image d_small(sz, sz);
    for (std::size_t i = 0; i < n; ++i)
        d_small.data[i] = d_phi[i] + 2.0 * kGainX2 * small.data[i] * d_phi[n + i];
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < sz; ++y)
            for (int x = 0; x < sz; ++x) {
                const std::size_t i = (static_cast<std::size_t>(c) * sz + y) * sz + x;
                if (x + 1 < sz) {
                    const double g = 2.0 * kGainGrad *
                                     (small.at(c, y, x + 1) - small.at(c, y, x)) * d_phi[2 * n + i];
                    d_small.at(c, y, x + 1) += g;
                    d_small.at(c, y, x) -= g;
                }
                if (y + 1 < sz) {
                    const double g = 2.0 * kGainGrad *
                                     (small.at(c, y + 1, x) - small.at(c, y, x)) * d_phi[3 * n + i];
                    d_small.at(c, y + 1, x) += g;
                    d_small.at(c, y, x) -= g;
                }
            }
    return resize_bilinear_adjoint(d_small, img.height, img.width);
}

std::vector<double> EncoderBackend::text_feature(const std::string& description) const {
    if (description.empty()) throw std::invalid_argument("encode_text: empty string");
    const auto items = split_items(description);
    if (items.empty()) throw std::invalid_argument("encode_text: no tokens in string");
    std::vector<double> pooled(kEmbedDim, 0.0);
    for (std::size_t i = 0; i < items.size(); ++i) {
        // Position folded into the seed: the hash-tokenizer is order aware.
        Rng trng(token_seed_ ^ (fnv1a(items[i]) * 0x9E3779B97F4A7C15ull) ^
                 ((i + 1) * 0xBF58476D1CE4E5B9ull));
        for (int d = 0; d < kEmbedDim; ++d) pooled[d] += trng.normal();
    }
    for (double& x : pooled) x /= static_cast<double>(items.size());
    std::vector<double> f(kEmbedDim);
    matvec(txt_proj_, pooled.data(), f.data());
    return f;
}

std::vector<double> EncoderBackend::prompt_feature(const Tensor& tokens) const {
    if (tokens.shape.size() != 2 || tokens.shape[1] != kEmbedDim)
        throw std::invalid_argument("encode_prompt_tokens: tokens must be [n, 512]");
    if (tokens.shape[0] < 1)
        throw std::invalid_argument("encode_prompt_tokens: need at least one token");
    const int t = tokens.shape[0];
    std::vector<double> pooled(kEmbedDim, 0.0);
    for (int i = 0; i < t; ++i) {
        const double* row = tokens.v.data() + static_cast<std::size_t>(i) * kEmbedDim;
        for (int d = 0; d < kEmbedDim; ++d) pooled[d] += row[d];
    }
    for (double& x : pooled) x /= static_cast<double>(t);
    std::vector<double> f(kEmbedDim);
    matvec(txt_proj_, pooled.data(), f.data());
    return f;
}

Tensor EncoderBackend::prompt_feature_backward(const Tensor& tokens,
                                               const std::vector<double>& d_feature) const {
    const int t = tokens.shape[0];
    std::vector<double> d_pooled(kEmbedDim);
    matvec_t(txt_proj_, d_feature.data(), d_pooled.data());
    Tensor d_tokens(tokens.shape);
    for (int i = 0; i < t; ++i) {
        double* row = d_tokens.v.data() + static_cast<std::size_t>(i) * kEmbedDim;
        for (int d = 0; d < kEmbedDim; ++d) row[d] = d_pooled[d] / static_cast<double>(t);
    }
    return d_tokens;
}

Embedding encode_image(const Image& img, const EncoderBackend& backend, const ProjectionHead& head) {
    const auto f = backend.image_feature(img);
    std::vector<double> g;
    apply_head(head, f, g);
    return Embedding{normalize(g)};
}

Embedding encode_text(const std::string& description, const EncoderBackend& backend,
                      const ProjectionHead& head) {
    const auto f = backend.text_feature(description);
    std::vector<double> g;
    apply_head(head, f, g);
    return Embedding{normalize(g)};
}

Embedding encode_prompt_tokens(const Tensor& tokens, const EncoderBackend& backend) {
    return Embedding{normalize(backend.prompt_feature(tokens))};
}

Image encode_image_backward(const Image& img, const EncoderBackend& backend,
                            const ProjectionHead& head, const std::vector<double>& d_embedding) {
    const auto f = backend.image_feature(img);
    std::vector<double> g;
    apply_head(head, f, g);
    double norm = 0.0;
    const auto e = normalize(g, &norm);
    const auto dg = normalize_backward(e, norm, d_embedding);
    std::vector<double> df(kEmbedDim);
    matvec_t(head.w, dg.data(), df.data());
    return backend.image_feature_backward(img, df);
}

Tensor encode_prompt_tokens_backward(const Tensor& tokens, const EncoderBackend& backend,
                                     const std::vector<double>& d_embedding) {
    const auto f = backend.prompt_feature(tokens);
    double norm = 0.0;
    const auto e = normalize(f, &norm);
    const auto df = normalize_backward(e, norm, d_embedding);
    return backend.prompt_feature_backward(tokens, df);
}

void head_backward(const std::vector<double>& feature, const ProjectionHead& head,
                   const std::vector<double>& d_embedding, Tensor& d_head) {
    std::vector<double> g;
    apply_head(head, feature, g);
    double norm = 0.0;
    const auto e = normalize(g, &norm);
    const auto dg = normalize_backward(e, norm, d_embedding);
    for (int r = 0; r < kEmbedDim; ++r) {
        double* row = d_head.v.data() + static_cast<std::size_t>(r) * kEmbedDim;
        const double gr = dg[r];
        for (int c = 0; c < kEmbedDim; ++c) row[c] += gr * feature[c];
    }
}

ProjectionHead fine_tune_projection(const ProjectionHead& head,
                                    const std::vector<LabeledFeature>& dataset,
                                    const std::vector<std::vector<double>>& class_features,
                                    GuidanceTask task, const FineTuneConfig& cfg) {
    (void)task;
    if (dataset.empty()) throw std::invalid_argument("fine_tune_projection: empty dataset");
    for (const auto& s : dataset)
        if (s.class_id < 0 || s.class_id >= static_cast<int>(class_features.size()))
            throw std::invalid_argument("fine_tune_projection: class id out of range");
    ProjectionHead out = head;
    if (cfg.steps <= 0) return out;

    Adam opt({&out.w}, AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0});
    Rng rng(cfg.seed);
    const int batch = std::max(2, std::min<int>(cfg.batch_size, static_cast<int>(dataset.size())));

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx(batch);
        for (int i = 0; i < batch; ++i) idx[i] = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);

        std::vector<std::vector<double>> img_e(batch), txt_e(batch);
        std::vector<double> img_norm(batch), txt_norm(batch);
        std::vector<std::vector<double>> img_g(batch), txt_g(batch);
        for (int i = 0; i < batch; ++i) {
            apply_head(out, dataset[idx[i]].feature, img_g[i]);
            img_e[i] = normalize(img_g[i], &img_norm[i]);
            apply_head(out, class_features[dataset[idx[i]].class_id], txt_g[i]);
            txt_e[i] = normalize(txt_g[i], &txt_norm[i]);
        }
        SimilarityMatrix sim;
        sim.n = batch;
        sim.logit_scale = cfg.logit_scale;
        sim.values.resize(static_cast<std::size_t>(batch) * batch);
        for (int i = 0; i < batch; ++i)
            for (int j = 0; j < batch; ++j)
                sim.values[static_cast<std::size_t>(i) * batch + j] = dot(img_e[i], txt_e[j]);
        const std::vector<double> d_sim = bidirectional_ce_backward(sim);

        Tensor d_head({kEmbedDim, kEmbedDim});
        for (int i = 0; i < batch; ++i) {
            std::vector<double> de_img(kEmbedDim, 0.0), de_txt(kEmbedDim, 0.0);
            for (int j = 0; j < batch; ++j) {
                const double gij = d_sim[static_cast<std::size_t>(i) * batch + j];
                const double gji = d_sim[static_cast<std::size_t>(j) * batch + i];
                for (int d = 0; d < kEmbedDim; ++d) {
                    de_img[d] += gij * txt_e[j][d];
                    de_txt[d] += gji * img_e[j][d];
                }
            }
            head_backward(dataset[idx[i]].feature, out, de_img, d_head);
            head_backward(class_features[dataset[idx[i]].class_id], out, de_txt, d_head);
        }
        opt.step({&d_head});
    }
    return out;
}

double matching_accuracy(const ProjectionHead& head, const std::vector<LabeledFeature>& dataset,
                         const std::vector<std::vector<double>>& class_features) {
    if (dataset.empty()) throw std::invalid_argument("matching_accuracy: empty dataset");
    std::vector<std::vector<double>> class_e;
    std::vector<double> g;
    for (const auto& c : class_features) {
        apply_head(head, c, g);
        class_e.push_back(normalize(g));
    }
    int correct = 0;
    for (const auto& s : dataset) {
        apply_head(head, s.feature, g);
        const auto e = normalize(g);
        int best = 0;
        double best_d = -2.0;
        for (std::size_t j = 0; j < class_e.size(); ++j) {
            const double d = dot(e, class_e[j]);
            if (d > best_d) {
                best_d = d;
                best = static_cast<int>(j);
            }
        }
        if (best == s.class_id) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

void save_projection_head(const std::string& path, const ProjectionHead& head,
                          const std::string& task_name) {
    TensorFile tf;
    nlohmann::json meta{{"task", task_name}, {"embed_dim", kEmbedDim}, {"version", 1}};
    tf.meta_json = meta.dump();
    tf.tensors.emplace_back("head.w", head.w);
    save_tensor_file(path, tf);
}

ProjectionHead load_projection_head(const std::string& path) {
    const TensorFile tf = load_tensor_file(path);
    const Tensor* w = tf.find("head.w");
    if (!w || w->shape != std::vector<int>{kEmbedDim, kEmbedDim})
        throw ModelError("projection head file: bad shape");
    ProjectionHead h;
    h.w = *w;
    return h;
}

}  // namespace lowlight
