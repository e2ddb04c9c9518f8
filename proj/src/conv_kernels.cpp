#include "conv_kernels.hpp"

#include <algorithm>

namespace lowlight::detail {

void pad_input(const double* src, int c, int h, int w, std::vector<double>& pad) {
    const int ph = h + 2, pw = w + 2;
    pad.assign(static_cast<std::size_t>(c) * ph * pw, 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const double* sp = src + static_cast<std::size_t>(ci) * h * w;
        double* dp = pad.data() + static_cast<std::size_t>(ci) * ph * pw;
        for (int y = 0; y < h; ++y)
            std::copy(sp + static_cast<std::size_t>(y) * w, sp + static_cast<std::size_t>(y + 1) * w,
                      dp + static_cast<std::size_t>(y + 1) * pw + 1);
    }
}

void conv3x3(const std::vector<double>& pad, int in_c, int h, int w, const ConvLayer& layer,
             double* out) {
    const int pw = w + 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t pplane = static_cast<std::size_t>(h + 2) * pw;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < layer.out_c; ++co) {
        double* op = out + co * plane;
        const double* wbase = layer.w.v.data() + static_cast<std::size_t>(co) * in_c * 9;
        const double bias = layer.b.v[co];
        for (int y = 0; y < h; ++y) {
            double* __restrict orow = op + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) orow[x] = bias;
            for (int ci = 0; ci < in_c; ++ci) {
                const double* ip = pad.data() + static_cast<std::size_t>(ci) * pplane;
                const double* wp = wbase + static_cast<std::size_t>(ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const double* __restrict irow = ip + static_cast<std::size_t>(y + ky) * pw;
                    const double w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                    for (int x = 0; x < w; ++x)
                        orow[x] += w0 * irow[x] + w1 * irow[x + 1] + w2 * irow[x + 2];
                }
            }
        }
    }
}

void conv3x3_backward(const std::vector<double>& pad, int in_c, int h, int w,
                      const ConvLayer& layer, const double* d_out, std::vector<double>* d_pad,
                      Tensor& dw, Tensor& db) {
    const int pw = w + 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t pplane = static_cast<std::size_t>(h + 2) * pw;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < layer.out_c; ++co) {
        const double* gp = d_out + co * plane;
        double bs = 0.0;
        for (std::size_t i = 0; i < plane; ++i) bs += gp[i];
        db.v[co] += bs;
        for (int ci = 0; ci < in_c; ++ci) {
            const double* ip = pad.data() + static_cast<std::size_t>(ci) * pplane;
            double* dwp = dw.v.data() + (static_cast<std::size_t>(co) * in_c + ci) * 9;
            double s[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
            for (int y = 0; y < h; ++y) {
                const double* __restrict grow = gp + static_cast<std::size_t>(y) * w;
                for (int ky = 0; ky < 3; ++ky) {
                    const double* __restrict irow = ip + static_cast<std::size_t>(y + ky) * pw;
                    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                    for (int x = 0; x < w; ++x) {
                        const double gv = grow[x];
                        s0 += gv * irow[x];
                        s1 += gv * irow[x + 1];
                        s2 += gv * irow[x + 2];
                    }
                    s[ky * 3] += s0;
                    s[ky * 3 + 1] += s1;
                    s[ky * 3 + 2] += s2;
                }
            }
            for (int k = 0; k < 9; ++k) dwp[k] += s[k];
        }
    }
    if (!d_pad) return;
    d_pad->assign(static_cast<std::size_t>(in_c) * pplane, 0.0);
    // Gather form: pad cell (yy, xx) collects w[ky][kx] * g[yy-ky][xx-kx].
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < in_c; ++ci) {
        double* dip = d_pad->data() + static_cast<std::size_t>(ci) * pplane;
        for (int yy = 0; yy < h + 2; ++yy) {
            double* __restrict drow = dip + static_cast<std::size_t>(yy) * pw;
            for (int co = 0; co < layer.out_c; ++co) {
                const double* gp = d_out + co * plane;
                const double* wp =
                    layer.w.v.data() + (static_cast<std::size_t>(co) * in_c + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int y = yy - ky;
                    if (y < 0 || y >= h) continue;
                    const double* __restrict grow = gp + static_cast<std::size_t>(y) * w;
                    const double w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                    // Interior: all three taps valid (xx-kx in [0, w)).
                    for (int xx = 2; xx < w; ++xx)
                        drow[xx] += w0 * grow[xx] + w1 * grow[xx - 1] + w2 * grow[xx - 2];
                    drow[0] += w0 * grow[0];
                    drow[1] += w0 * grow[1] + w1 * grow[0];
                    drow[w] += w1 * grow[w - 1] + w2 * grow[w - 2];
                    drow[w + 1] += w2 * grow[w - 1];
                }
            }
        }
    }
}

void unpad_accumulate(const std::vector<double>& d_pad, int c, int h, int w, double* dst) {
    const int pw = w + 2;
    for (int ci = 0; ci < c; ++ci) {
        const double* sp = d_pad.data() + static_cast<std::size_t>(ci) * (h + 2) * pw;
        double* dp = dst + static_cast<std::size_t>(ci) * h * w;
        for (int y = 0; y < h; ++y) {
            const double* srow = sp + static_cast<std::size_t>(y + 1) * pw + 1;
            double* drow = dp + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) drow[x] += srow[x];
        }
    }
}

}  // namespace lowlight::detail
