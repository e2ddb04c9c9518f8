#pragma once

// Internal 3x3 convolution kernels for the curve estimator. Compiled in a
// separate TU with relaxed FP ordering so the reductions vectorize; callers
// that need strict IEEE semantics (the curve recursion, the losses) live
// elsewhere.

#include <vector>

#include "lowlight/curve_model.hpp"

namespace lowlight::detail {

// Copies [C,H,W] planes into zero-padded [(H+2),(W+2)] buffers per channel.
void pad_input(const double* src, int c, int h, int w, std::vector<double>& pad);

// out[co] = bias[co] + sum_ci conv(in[ci], w[co][ci]); out sized out_c*h*w.
void conv3x3(const std::vector<double>& pad, int in_c, int h, int w, const ConvLayer& layer,
             double* out);

// Accumulates dw/db; writes d_pad (padded layout) unless null.
void conv3x3_backward(const std::vector<double>& pad, int in_c, int h, int w,
                      const ConvLayer& layer, const double* d_out, std::vector<double>* d_pad,
                      Tensor& dw, Tensor& db);

// Strips padding back to [C,H,W], accumulating into dst.
void unpad_accumulate(const std::vector<double>& d_pad, int c, int h, int w, double* dst);

}  // namespace lowlight::detail
