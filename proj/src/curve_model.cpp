#include "lowlight/curve_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "conv_kernels.hpp"
#include "lowlight/errors.hpp"
#include "lowlight/tensor_io.hpp"

namespace lowlight {

using detail::conv3x3;
using detail::conv3x3_backward;
using detail::pad_input;
using detail::unpad_accumulate;

namespace {

void relu_inplace(double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
}

ConvLayer make_layer(int in_c, int out_c, double stddev, Rng& rng) {
    ConvLayer l;
    l.in_c = in_c;
    l.out_c = out_c;
    l.w = Tensor({out_c, in_c, 3, 3});
    l.b = Tensor({out_c});
    if (stddev > 0.0)
        for (double& x : l.w.v) x = rng.normal(0.0, stddev);
    return l;
}

std::vector<int> layer_in_channels(int fc) {
    return {3, fc, fc, fc, 2 * fc, 2 * fc, 2 * fc};
}

}  // namespace

EnhancerWeights EnhancerWeights::init(int channels, int n_iterations, Rng& rng) {
    if (channels < 1 || n_iterations < 1)
        throw std::invalid_argument("EnhancerWeights::init: channels and iterations must be >= 1");
    EnhancerWeights w;
    w.feature_channels = channels;
    w.n_iterations = n_iterations;
    const auto in_cs = layer_in_channels(channels);
    for (int i = 0; i < 6; ++i) {
        const double stddev = std::sqrt(2.0 / (in_cs[i] * 9.0));
        w.layers.push_back(make_layer(in_cs[i], channels, stddev, rng));
    }
    w.layers.push_back(make_layer(in_cs[6], 3 * n_iterations, 0.0, rng));
    return w;
}

std::int64_t EnhancerWeights::param_count() const {
    std::int64_t n = 0;
    for (const auto& l : layers) n += l.w.numel() + l.b.numel();
    return n;
}

std::vector<Tensor*> EnhancerWeights::param_tensors() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
        out.push_back(&l.w);
        out.push_back(&l.b);
    }
    return out;
}

std::vector<const Tensor*> EnhancerWeights::param_tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
        out.push_back(&l.w);
        out.push_back(&l.b);
    }
    return out;
}

EnhancerGrads EnhancerGrads::zeros_like(const EnhancerWeights& w) {
    EnhancerGrads g;
    for (const auto& l : w.layers) {
        g.dw.emplace_back(l.w.shape);
        g.db.emplace_back(l.b.shape);
    }
    return g;
}

void EnhancerGrads::add(const EnhancerGrads& o) {
    for (std::size_t i = 0; i < dw.size(); ++i) {
        for (std::size_t j = 0; j < dw[i].v.size(); ++j) dw[i].v[j] += o.dw[i].v[j];
        for (std::size_t j = 0; j < db[i].v.size(); ++j) db[i].v[j] += o.db[i].v[j];
    }
}

double EnhancerGrads::squared_norm() const {
    double s = 0.0;
    for (const auto& t : dw)
        for (double x : t.v) s += x * x;
    for (const auto& t : db)
        for (double x : t.v) s += x * x;
    return s;
}

CurveParams estimate_curves_traced(const Image& img, const EnhancerWeights& w, DceTrace& trace) {
    if (img.height < kMinEnhancerInput || img.width < kMinEnhancerInput)
        throw std::invalid_argument("estimate_curves: image below receptive minimum");
    if (w.layers.size() != 7) throw ModelError("estimate_curves: expected 7 layers");
    const int fc = w.feature_channels;
    const auto in_cs = layer_in_channels(fc);
    for (int i = 0; i < 7; ++i)
        if (w.layers[i].in_c != in_cs[i])
            throw ModelError("estimate_curves: layer channel mismatch");
    if (w.layers[6].out_c != 3 * w.n_iterations)
        throw ModelError("estimate_curves: head must emit 3*n_iterations channels");
    for (const auto& l : w.layers)
        for (double x : l.w.v)
            if (!std::isfinite(x)) throw ModelError("estimate_curves: non-finite weight");

    const int h = img.height, wd = img.width;
    const std::size_t plane = static_cast<std::size_t>(h) * wd;

    trace.input = img;
    trace.act.assign(6, Tensor());
    std::vector<double> pad, concat(2 * static_cast<std::size_t>(fc) * plane);

    // a1..a4: straight chain.
    const double* prev = img.data.data();
    int prev_c = 3;
    for (int i = 0; i < 4; ++i) {
        trace.act[i] = Tensor({fc, h, wd});
        pad_input(prev, prev_c, h, wd, pad);
        conv3x3(pad, prev_c, h, wd, w.layers[i], trace.act[i].v.data());
        relu_inplace(trace.act[i].v.data(), trace.act[i].v.size());
        prev = trace.act[i].v.data();
        prev_c = fc;
    }
    // a5 = relu(conv5([a3, a4])), a6 = relu(conv6([a2, a5])).
    for (int i = 4; i < 6; ++i) {
        const Tensor& first = trace.act[i == 4 ? 2 : 1];
        const Tensor& second = trace.act[i - 1];
        std::copy(first.v.begin(), first.v.end(), concat.begin());
        std::copy(second.v.begin(), second.v.end(),
                  concat.begin() + static_cast<std::ptrdiff_t>(first.v.size()));
        trace.act[i] = Tensor({fc, h, wd});
        pad_input(concat.data(), 2 * fc, h, wd, pad);
        conv3x3(pad, 2 * fc, h, wd, w.layers[i], trace.act[i].v.data());
        relu_inplace(trace.act[i].v.data(), trace.act[i].v.size());
    }
    // head = tanh(conv7([a1, a6])).
    std::copy(trace.act[0].v.begin(), trace.act[0].v.end(), concat.begin());
    std::copy(trace.act[5].v.begin(), trace.act[5].v.end(),
              concat.begin() + static_cast<std::ptrdiff_t>(trace.act[0].v.size()));
    CurveParams params(w.n_iterations, h, wd);
    pad_input(concat.data(), 2 * fc, h, wd, pad);
    conv3x3(pad, 2 * fc, h, wd, w.layers[6], params.maps.data());
    for (double& x : params.maps) x = std::tanh(x);
    trace.head = params;
    return params;
}

CurveParams estimate_curves(const Image& img, const EnhancerWeights& w) {
    DceTrace trace;
    return estimate_curves_traced(img, w, trace);
}

namespace {

void relu_backward_inplace(const Tensor& post, double* grad) {
    for (std::size_t i = 0; i < post.v.size(); ++i)
        if (post.v[i] <= 0.0) grad[i] = 0.0;
}

}  // namespace

void estimate_curves_backward(const DceTrace& trace, const EnhancerWeights& w,
                              const CurveParams& d_params, EnhancerGrads& grads) {
    const int fc = w.feature_channels;
    const int h = trace.input.height, wd = trace.input.width;
    const std::size_t fplane = static_cast<std::size_t>(fc) * h * wd;

    std::vector<double> pad, d_pad;
    std::vector<double> concat(2 * fplane), d_split;

    // Head: d_pre = d_tanh * (1 - tanh^2); tanh output is the stored map.
    std::vector<double> d_pre(d_params.maps.size());
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
        const double t = trace.head.maps[i];
        d_pre[i] = d_params.maps[i] * (1.0 - t * t);
    }

    std::vector<Tensor> d_act(6);
    for (int i = 0; i < 6; ++i) d_act[i] = Tensor({fc, h, wd});

    // conv7 over [a1, a6].
    std::copy(trace.act[0].v.begin(), trace.act[0].v.end(), concat.begin());
    std::copy(trace.act[5].v.begin(), trace.act[5].v.end(),
              concat.begin() + static_cast<std::ptrdiff_t>(fplane));
    pad_input(concat.data(), 2 * fc, h, wd, pad);
    conv3x3_backward(pad, 2 * fc, h, wd, w.layers[6], d_pre.data(), &d_pad, grads.dw[6],
                     grads.db[6]);
    d_split.assign(2 * fplane, 0.0);
    unpad_accumulate(d_pad, 2 * fc, h, wd, d_split.data());
    for (std::size_t i = 0; i < fplane; ++i) {
        d_act[0].v[i] += d_split[i];
        d_act[5].v[i] += d_split[fplane + i];
    }

    // conv6 over [a2, a5] and conv5 over [a3, a4].
    for (int layer = 5; layer >= 4; --layer) {
        const int first = (layer == 5) ? 1 : 2;
        const int second = layer - 1;
        relu_backward_inplace(trace.act[layer], d_act[layer].v.data());
        std::copy(trace.act[first].v.begin(), trace.act[first].v.end(), concat.begin());
        std::copy(trace.act[second].v.begin(), trace.act[second].v.end(),
                  concat.begin() + static_cast<std::ptrdiff_t>(fplane));
        pad_input(concat.data(), 2 * fc, h, wd, pad);
        conv3x3_backward(pad, 2 * fc, h, wd, w.layers[layer], d_act[layer].v.data(), &d_pad,
                         grads.dw[layer], grads.db[layer]);
        d_split.assign(2 * fplane, 0.0);
        unpad_accumulate(d_pad, 2 * fc, h, wd, d_split.data());
        for (std::size_t i = 0; i < fplane; ++i) {
            d_act[first].v[i] += d_split[i];
            d_act[second].v[i] += d_split[fplane + i];
        }
    }

    // conv4..conv2 (straight chain), then conv1 (input gradient discarded).
    for (int layer = 3; layer >= 1; --layer) {
        relu_backward_inplace(trace.act[layer], d_act[layer].v.data());
        pad_input(trace.act[layer - 1].v.data(), fc, h, wd, pad);
        conv3x3_backward(pad, fc, h, wd, w.layers[layer], d_act[layer].v.data(), &d_pad,
                         grads.dw[layer], grads.db[layer]);
        std::vector<double> d_prev(fplane, 0.0);
        unpad_accumulate(d_pad, fc, h, wd, d_prev.data());
        for (std::size_t i = 0; i < fplane; ++i) d_act[layer - 1].v[i] += d_prev[i];
    }
    relu_backward_inplace(trace.act[0], d_act[0].v.data());
    pad_input(trace.input.data.data(), 3, h, wd, pad);
    conv3x3_backward(pad, 3, h, wd, w.layers[0], d_act[0].v.data(), nullptr, grads.dw[0],
                     grads.db[0]);
}

Image apply_curves_traced(const Image& img, const CurveParams& params, CurveTrace& trace) {
    if (params.height != img.height || params.width != img.width)
        throw std::invalid_argument("apply_curves: dimension mismatch");
    trace.iterates.clear();
    trace.iterates.reserve(params.n_iterations);
    Image cur = img;
    for (int n = 0; n < params.n_iterations; ++n) {
        trace.iterates.push_back(cur);
        const double* a = params.maps.data() + static_cast<std::size_t>(n) * 3 * params.plane_size();
        for (std::size_t i = 0; i < cur.data.size(); ++i) {
            const double x = cur.data[i];
            cur.data[i] = x + a[i] * (x * (1.0 - x));
        }
    }
    return cur;
}

Image apply_curves(const Image& img, const CurveParams& params) {
    CurveTrace trace;
    return apply_curves_traced(img, params, trace);
}

void apply_curves_backward(const CurveTrace& trace, const CurveParams& params,
                           const Image& d_out, CurveParams* d_params, Image* d_input) {
    Image g = d_out;
    for (int n = params.n_iterations - 1; n >= 0; --n) {
        const Image& x = trace.iterates[n];
        const double* a = params.maps.data() + static_cast<std::size_t>(n) * 3 * params.plane_size();
        double* da = d_params
                         ? d_params->maps.data() + static_cast<std::size_t>(n) * 3 * params.plane_size()
                         : nullptr;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double xv = x.data[i];
            const double gv = g.data[i];
            if (da) da[i] += gv * xv * (1.0 - xv);
            g.data[i] = gv * (1.0 + a[i] * (1.0 - 2.0 * xv));
        }
    }
    if (d_input) *d_input = std::move(g);
}

Image enhance(const Image& img, const EnhancerWeights& w, int scale_factor) {
    if (scale_factor < 1) throw std::invalid_argument("enhance: scale factor must be >= 1");
    if (scale_factor == 1) return apply_curves(img, estimate_curves(img, w));
    const int eh = img.height / scale_factor;
    const int ew = img.width / scale_factor;
    if (eh < kMinEnhancerInput || ew < kMinEnhancerInput)
        throw std::invalid_argument("enhance: image too small for requested scale factor");
    const Image small = resize_bilinear(img, eh, ew);
    const CurveParams small_params = estimate_curves(small, w);
    CurveParams full(small_params.n_iterations, img.height, img.width);
    for (int n = 0; n < small_params.n_iterations; ++n) {
        // Reuse the image resizer per iteration (maps are 3-channel planes).
        Image plane_in(eh, ew);
        std::copy(small_params.maps.begin() + static_cast<std::ptrdiff_t>(n) * 3 * eh * ew,
                  small_params.maps.begin() + static_cast<std::ptrdiff_t>(n + 1) * 3 * eh * ew,
                  plane_in.data.begin());
        Image plane_out = resize_bilinear(plane_in, img.height, img.width);
        for (double& v : plane_out.data) v = std::min(1.0, std::max(-1.0, v));
        std::copy(plane_out.data.begin(), plane_out.data.end(),
                  full.maps.begin() + static_cast<std::ptrdiff_t>(n) * 3 * img.height * img.width);
    }
    return apply_curves(img, full);
}

MacCount count_macs(int h, int w, int s, int feature_channels, int n_iterations) {
    if (h < 1 || w < 1 || s < 1 || feature_channels < 1 || n_iterations < 1)
        throw std::invalid_argument("count_macs: all arguments must be positive");
    const std::int64_t eh = h / s;
    const std::int64_t ew = w / s;
    const auto in_cs = layer_in_channels(feature_channels);
    MacCount mc;
    const std::int64_t area = eh * ew;
    for (int i = 0; i < 7; ++i) {
        const std::int64_t out_c = (i == 6) ? 3ll * n_iterations : feature_channels;
        mc.estimator += static_cast<std::int64_t>(in_cs[i]) * out_c * 9 * area;
    }
    mc.curve = 2ll * n_iterations * 3 * h * w;
    return mc;
}

void save_enhancer(const std::string& path, const EnhancerWeights& w) {
    TensorFile tf;
    nlohmann::json meta{{"n_iterations", w.n_iterations},
                        {"channels", w.feature_channels},
                        {"version", 1}};
    tf.meta_json = meta.dump();
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        tf.tensors.emplace_back("conv" + std::to_string(i + 1) + ".w", w.layers[i].w);
        tf.tensors.emplace_back("conv" + std::to_string(i + 1) + ".b", w.layers[i].b);
    }
    save_tensor_file(path, tf);
}

EnhancerWeights load_enhancer(const std::string& path) {
    const TensorFile tf = load_tensor_file(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(tf.meta_json);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("enhancer metadata: ") + e.what());
    }
    EnhancerWeights w;
    w.n_iterations = meta.at("n_iterations").get<int>();
    w.feature_channels = meta.at("channels").get<int>();
    const auto in_cs = layer_in_channels(w.feature_channels);
    for (int i = 0; i < 7; ++i) {
        const Tensor* wt = tf.find("conv" + std::to_string(i + 1) + ".w");
        const Tensor* bt = tf.find("conv" + std::to_string(i + 1) + ".b");
        if (!wt || !bt) throw ModelError("enhancer checkpoint missing layer " + std::to_string(i + 1));
        ConvLayer l;
        l.w = *wt;
        l.b = *bt;
        l.in_c = wt->shape.at(1);
        l.out_c = wt->shape.at(0);
        if (l.in_c != in_cs[i]) throw ModelError("enhancer checkpoint: layer channel mismatch");
        w.layers.push_back(std::move(l));
    }
    if (w.layers[6].out_c != 3 * w.n_iterations)
        throw ModelError("enhancer checkpoint: head/iteration mismatch");
    return w;
}

}  // namespace lowlight
