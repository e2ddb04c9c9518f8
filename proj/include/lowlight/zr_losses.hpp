#pragma once

#include "lowlight/curve_model.hpp"
#include "lowlight/image.hpp"

namespace lowlight {

struct ZeroRefConfig {
    double target_exposure = 0.6;  // E
    int exposure_patch = 16;
    int spatial_region = 4;
    double w_exp = 10.0;
    double w_spa = 1.0;
    double w_rgb = 5.0;
    double w_tv = 200.0;
    // Mean-over-patches of |patch mean - E| by default; per-pixel deviation
    // of each covered pixel when set.
    bool exposure_per_pixel = false;
};

// Mean over non-overlapping exposure_patch^2 patches of |patch mean intensity
// - E|; intensity is the per-pixel channel mean, trailing partial patches are
// dropped.
double exposure_loss(const Image& enhanced, const ZeroRefConfig& cfg);
Image exposure_loss_backward(const Image& enhanced, const ZeroRefConfig& cfg);

// Images are reduced to spatial_region^2 region means of intensity; the loss
// is (1/K) sum_i sum_{j in Omega(i)} (|e_i - e_j| - |o_i - o_j|)^2 over
// 4-connected region neighbours, each ordered pair counted from its centre's
// perspective. Trailing partial regions are dropped.
double spatial_consistency_loss(const Image& enhanced, const Image& original,
                                const ZeroRefConfig& cfg);
Image spatial_consistency_loss_backward(const Image& enhanced, const Image& original,
                                        const ZeroRefConfig& cfg);

// Gray-World term over whole-image channel means.
double color_loss(const Image& enhanced);
Image color_loss_backward(const Image& enhanced);

// Mean over iterations of sum_c (mean|dx A_c| + mean|dy A_c|)^2, forward
// differences over valid positions, no wraparound.
double tv_loss(const CurveParams& params);
CurveParams tv_loss_backward(const CurveParams& params);

struct ZeroRefBreakdown {
    double exposure = 0.0;
    double spatial = 0.0;
    double color = 0.0;
    double tv = 0.0;
    double total = 0.0;  // weighted sum
};

ZeroRefBreakdown total_zero_reference_loss(const Image& enhanced, const Image& original,
                                           const CurveParams& params, const ZeroRefConfig& cfg);

// d(total)/d(enhanced) and d(total)/d(params), with the config weights applied.
void total_zero_reference_backward(const Image& enhanced, const Image& original,
                                   const CurveParams& params, const ZeroRefConfig& cfg,
                                   Image& d_enhanced, CurveParams& d_params);

}  // namespace lowlight
