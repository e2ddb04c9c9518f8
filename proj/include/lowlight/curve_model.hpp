#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lowlight/image.hpp"
#include "lowlight/rng.hpp"
#include "lowlight/tensor.hpp"

namespace lowlight {

// Per-pixel, per-channel, per-iteration curve coefficients in [-1,1].
// maps[((n*3 + c)*height + y)*width + x].
struct CurveParams {
    int n_iterations = 0;
    int height = 0;
    int width = 0;
    std::vector<double> maps;

    CurveParams() = default;
    CurveParams(int n, int h, int w)
        : n_iterations(n), height(h), width(w),
          maps(static_cast<std::size_t>(n) * 3 * h * w, 0.0) {}

    double& at(int n, int c, int y, int x) {
        return maps[((static_cast<std::size_t>(n) * 3 + c) * height + y) * width + x];
    }
    double at(int n, int c, int y, int x) const {
        return maps[((static_cast<std::size_t>(n) * 3 + c) * height + y) * width + x];
    }
    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
};

struct ConvLayer {
    int in_c = 0;
    int out_c = 0;
    Tensor w;  // [out_c, in_c, 3, 3]
    Tensor b;  // [out_c]
};

// Curve estimator: 7 conv layers (3x3, stride 1, same padding), 32 feature
// channels, ReLU activations, symmetric skip concatenations pairing layers
// k and 7-k (conv5 sees [a3,a4], conv6 [a2,a5], conv7 [a1,a6]), and a tanh
// head emitting 3*n_iterations channels.
struct EnhancerWeights {
    int feature_channels = 32;
    int n_iterations = 8;
    std::vector<ConvLayer> layers;  // 7

    // Fan-in-scaled Gaussian init; the head layer is zeroed so the initial
    // network is the identity enhancement.
    static EnhancerWeights init(int channels, int n_iterations, Rng& rng);

    std::int64_t param_count() const;
    std::vector<Tensor*> param_tensors();
    std::vector<const Tensor*> param_tensors() const;
};

// Receptive minimum accepted by estimate_curves.
inline constexpr int kMinEnhancerInput = 8;

struct DceTrace {
    Image input;
    std::vector<Tensor> act;  // post-activation outputs a1..a6, each [C,H,W]
    CurveParams head;         // tanh output (needed for the backward pass)
};

struct EnhancerGrads {
    std::vector<Tensor> dw;
    std::vector<Tensor> db;

    static EnhancerGrads zeros_like(const EnhancerWeights& w);
    void add(const EnhancerGrads& o);
    double squared_norm() const;
};

CurveParams estimate_curves(const Image& img, const EnhancerWeights& w);
CurveParams estimate_curves_traced(const Image& img, const EnhancerWeights& w, DceTrace& trace);

// Accumulates dLoss/dweights into `grads` given dLoss/dparams.
void estimate_curves_backward(const DceTrace& trace, const EnhancerWeights& w,
                              const CurveParams& d_params, EnhancerGrads& grads);

// Eq-style quadratic curve recursion applied n_iterations times:
// LE_n = LE_{n-1} + A_n * LE_{n-1} * (1 - LE_{n-1}). Inputs in [0,1] and
// coefficients in [-1,1] keep every iterate inside [0,1].
Image apply_curves(const Image& img, const CurveParams& params);

struct CurveTrace {
    std::vector<Image> iterates;  // LE_0 .. LE_{N-1} (inputs of each step)
};

Image apply_curves_traced(const Image& img, const CurveParams& params, CurveTrace& trace);

// Backward through the recursion. Either output may be null.
void apply_curves_backward(const CurveTrace& trace, const CurveParams& params,
                           const Image& d_out, CurveParams* d_params, Image* d_input);

// Full enhancement. For s > 1 curves are estimated at (h/s, w/s), the maps
// upsampled bilinearly to full resolution and re-clamped to [-1,1].
Image enhance(const Image& img, const EnhancerWeights& w, int scale_factor);

struct MacCount {
    std::int64_t estimator = 0;
    std::int64_t curve = 0;
    std::int64_t total() const { return estimator + curve; }
};

// Analytic multiply-accumulate count: estimator convolutions at (h/s, w/s)
// plus curve application at (h, w) (2 MACs per pixel per channel per
// iteration).
MacCount count_macs(int h, int w, int s, int feature_channels, int n_iterations);

// Checkpoint container (LLTC) with {n_iterations, channels, version} metadata.
void save_enhancer(const std::string& path, const EnhancerWeights& w);
EnhancerWeights load_enhancer(const std::string& path);

}  // namespace lowlight
