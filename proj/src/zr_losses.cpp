#include "lowlight/zr_losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace lowlight {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Region means of the per-pixel channel-mean intensity (trailing dropped).
std::vector<double> region_means(const Image& img, int m, int& rows, int& cols) {
    rows = img.height / m;
    cols = img.width / m;
    std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
    const double inv = 1.0 / (3.0 * m * m);
    for (int ry = 0; ry < rows; ++ry) {
        for (int rx = 0; rx < cols; ++rx) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c)
                for (int dy = 0; dy < m; ++dy)
                    for (int dx = 0; dx < m; ++dx)
                        s += img.at(c, ry * m + dy, rx * m + dx);
            out[static_cast<std::size_t>(ry) * cols + rx] = s * inv;
        }
    }
    return out;
}

// Spreads a gradient on a region mean uniformly over its pixels/channels.
void scatter_region_grad(Image& grad, int m, int ry, int rx, double g) {
    const double per = g / (3.0 * m * m);
    for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < m; ++dy)
            for (int dx = 0; dx < m; ++dx)
                grad.at(c, ry * m + dy, rx * m + dx) += per;
}

}  // namespace

double exposure_loss(const Image& enhanced, const ZeroRefConfig& cfg) {
    const int m = cfg.exposure_patch;
    if (m < 1) throw std::invalid_argument("exposure_loss: patch size must be >= 1");
    if (enhanced.height < m || enhanced.width < m)
        throw std::invalid_argument("exposure_loss: image smaller than one patch");
    int rows, cols;
    const auto means = region_means(enhanced, m, rows, cols);
    double acc = 0.0;
    if (cfg.exposure_per_pixel) {
        // Mean |pixel intensity - E| over covered pixels.
        std::size_t count = 0;
        for (int ry = 0; ry < rows; ++ry)
            for (int rx = 0; rx < cols; ++rx)
                for (int dy = 0; dy < m; ++dy)
                    for (int dx = 0; dx < m; ++dx) {
                        const int y = ry * m + dy, x = rx * m + dx;
                        const double inten =
                            (enhanced.at(0, y, x) + enhanced.at(1, y, x) + enhanced.at(2, y, x)) / 3.0;
                        acc += std::fabs(inten - cfg.target_exposure);
                        ++count;
                    }
        return acc / static_cast<double>(count);
    }
    for (double mu : means) acc += std::fabs(mu - cfg.target_exposure);
    return acc / static_cast<double>(means.size());
}

Image exposure_loss_backward(const Image& enhanced, const ZeroRefConfig& cfg) {
    const int m = cfg.exposure_patch;
    if (enhanced.height < m || enhanced.width < m)
        throw std::invalid_argument("exposure_loss: image smaller than one patch");
    Image grad(enhanced.height, enhanced.width, 0.0);
    int rows, cols;
    const auto means = region_means(enhanced, m, rows, cols);
    if (cfg.exposure_per_pixel) {
        const double inv = 1.0 / (static_cast<double>(rows) * cols * m * m);
        for (int ry = 0; ry < rows; ++ry)
            for (int rx = 0; rx < cols; ++rx)
                for (int dy = 0; dy < m; ++dy)
                    for (int dx = 0; dx < m; ++dx) {
                        const int y = ry * m + dy, x = rx * m + dx;
                        const double inten =
                            (enhanced.at(0, y, x) + enhanced.at(1, y, x) + enhanced.at(2, y, x)) / 3.0;
                        const double g = inv * sgn(inten - cfg.target_exposure) / 3.0;
                        for (int c = 0; c < 3; ++c) grad.at(c, y, x) += g;
                    }
        return grad;
    }
    const double inv_patches = 1.0 / static_cast<double>(means.size());
    for (int ry = 0; ry < rows; ++ry)
        for (int rx = 0; rx < cols; ++rx) {
            const double g =
                inv_patches * sgn(means[static_cast<std::size_t>(ry) * cols + rx] - cfg.target_exposure);
            scatter_region_grad(grad, m, ry, rx, g);
        }
    return grad;
}

double spatial_consistency_loss(const Image& enhanced, const Image& original,
                                const ZeroRefConfig& cfg) {
    if (!enhanced.same_dims(original))
        throw std::invalid_argument("spatial_consistency_loss: dimension mismatch");
    const int m = cfg.spatial_region;
    if (enhanced.height < m || enhanced.width < m)
        throw std::invalid_argument("spatial_consistency_loss: image smaller than one region");
    int rows, cols;
    const auto e = region_means(enhanced, m, rows, cols);
    const auto o = region_means(original, m, rows, cols);
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    double acc = 0.0;
    for (int ry = 0; ry < rows; ++ry)
        for (int rx = 0; rx < cols; ++rx)
            for (int k = 0; k < 4; ++k) {
                const int ny = ry + dy[k], nx = rx + dx[k];
                if (ny < 0 || ny >= rows || nx < 0 || nx >= cols) continue;
                const std::size_t i = static_cast<std::size_t>(ry) * cols + rx;
                const std::size_t j = static_cast<std::size_t>(ny) * cols + nx;
                const double d = std::fabs(e[i] - e[j]) - std::fabs(o[i] - o[j]);
                acc += d * d;
            }
    return acc / (static_cast<double>(rows) * cols);
}

Image spatial_consistency_loss_backward(const Image& enhanced, const Image& original,
                                        const ZeroRefConfig& cfg) {
    if (!enhanced.same_dims(original))
        throw std::invalid_argument("spatial_consistency_loss: dimension mismatch");
    const int m = cfg.spatial_region;
    int rows, cols;
    const auto e = region_means(enhanced, m, rows, cols);
    const auto o = region_means(original, m, rows, cols);
    std::vector<double> dmean(e.size(), 0.0);
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    const double inv_k = 1.0 / (static_cast<double>(rows) * cols);
    for (int ry = 0; ry < rows; ++ry)
        for (int rx = 0; rx < cols; ++rx)
            for (int k = 0; k < 4; ++k) {
                const int ny = ry + dy[k], nx = rx + dx[k];
                if (ny < 0 || ny >= rows || nx < 0 || nx >= cols) continue;
                const std::size_t i = static_cast<std::size_t>(ry) * cols + rx;
                const std::size_t j = static_cast<std::size_t>(ny) * cols + nx;
                const double d = std::fabs(e[i] - e[j]) - std::fabs(o[i] - o[j]);
                const double g = 2.0 * inv_k * d * sgn(e[i] - e[j]);
                dmean[i] += g;
                dmean[j] -= g;
            }
    Image grad(enhanced.height, enhanced.width, 0.0);
    for (int ry = 0; ry < rows; ++ry)
        for (int rx = 0; rx < cols; ++rx)
            scatter_region_grad(grad, m, ry, rx, dmean[static_cast<std::size_t>(ry) * cols + rx]);
    return grad;
}

double color_loss(const Image& enhanced) {
    if (enhanced.pixels() == 0) throw std::invalid_argument("color_loss: empty image");
    double mu[3] = {0, 0, 0};
    const std::size_t n = enhanced.pixels();
    for (int c = 0; c < 3; ++c) {
        const double* p = enhanced.plane(c);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += p[i];
        mu[c] = s / static_cast<double>(n);
    }
    const double rg = mu[0] - mu[1], rb = mu[0] - mu[2], gb = mu[1] - mu[2];
    return rg * rg + rb * rb + gb * gb;
}

Image color_loss_backward(const Image& enhanced) {
    double mu[3] = {0, 0, 0};
    const std::size_t n = enhanced.pixels();
    for (int c = 0; c < 3; ++c) {
        const double* p = enhanced.plane(c);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += p[i];
        mu[c] = s / static_cast<double>(n);
    }
    const double dmu[3] = {2.0 * ((mu[0] - mu[1]) + (mu[0] - mu[2])),
                           2.0 * (-(mu[0] - mu[1]) + (mu[1] - mu[2])),
                           2.0 * (-(mu[0] - mu[2]) - (mu[1] - mu[2]))};
    Image grad(enhanced.height, enhanced.width, 0.0);
    for (int c = 0; c < 3; ++c) {
        double* p = grad.plane(c);
        const double g = dmu[c] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = g;
    }
    return grad;
}

double tv_loss(const CurveParams& params) {
    if (params.n_iterations < 1) throw std::invalid_argument("tv_loss: empty params");
    const int h = params.height, w = params.width;
    double acc = 0.0;
    for (int n = 0; n < params.n_iterations; ++n) {
        for (int c = 0; c < 3; ++c) {
            double sx = 0.0, sy = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x + 1 < w; ++x)
                    sx += std::fabs(params.at(n, c, y, x + 1) - params.at(n, c, y, x));
            for (int y = 0; y + 1 < h; ++y)
                for (int x = 0; x < w; ++x)
                    sy += std::fabs(params.at(n, c, y + 1, x) - params.at(n, c, y, x));
            const double mx = (w > 1) ? sx / (static_cast<double>(h) * (w - 1)) : 0.0;
            const double my = (h > 1) ? sy / (static_cast<double>(h - 1) * w) : 0.0;
            acc += (mx + my) * (mx + my);
        }
    }
    return acc / static_cast<double>(params.n_iterations);
}

CurveParams tv_loss_backward(const CurveParams& params) {
    const int h = params.height, w = params.width;
    CurveParams grad(params.n_iterations, h, w);
    const double inv_iters = 1.0 / static_cast<double>(params.n_iterations);
    for (int n = 0; n < params.n_iterations; ++n) {
        for (int c = 0; c < 3; ++c) {
            double sx = 0.0, sy = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x + 1 < w; ++x)
                    sx += std::fabs(params.at(n, c, y, x + 1) - params.at(n, c, y, x));
            for (int y = 0; y + 1 < h; ++y)
                for (int x = 0; x < w; ++x)
                    sy += std::fabs(params.at(n, c, y + 1, x) - params.at(n, c, y, x));
            const double nx = static_cast<double>(h) * (w - 1);
            const double ny = static_cast<double>(h - 1) * w;
            const double mx = (w > 1) ? sx / nx : 0.0;
            const double my = (h > 1) ? sy / ny : 0.0;
            const double outer = inv_iters * 2.0 * (mx + my);
            if (w > 1) {
                const double gx = outer / nx;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x + 1 < w; ++x) {
                        const double s = sgn(params.at(n, c, y, x + 1) - params.at(n, c, y, x));
                        grad.at(n, c, y, x + 1) += gx * s;
                        grad.at(n, c, y, x) -= gx * s;
                    }
            }
            if (h > 1) {
                const double gy = outer / ny;
                for (int y = 0; y + 1 < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const double s = sgn(params.at(n, c, y + 1, x) - params.at(n, c, y, x));
                        grad.at(n, c, y + 1, x) += gy * s;
                        grad.at(n, c, y, x) -= gy * s;
                    }
            }
        }
    }
    return grad;
}

ZeroRefBreakdown total_zero_reference_loss(const Image& enhanced, const Image& original,
                                           const CurveParams& params, const ZeroRefConfig& cfg) {
    ZeroRefBreakdown b;
    b.exposure = exposure_loss(enhanced, cfg);
    b.spatial = spatial_consistency_loss(enhanced, original, cfg);
    b.color = color_loss(enhanced);
    b.tv = tv_loss(params);
    b.total = cfg.w_exp * b.exposure + cfg.w_spa * b.spatial + cfg.w_rgb * b.color + cfg.w_tv * b.tv;
    return b;
}

void total_zero_reference_backward(const Image& enhanced, const Image& original,
                                   const CurveParams& params, const ZeroRefConfig& cfg,
                                   Image& d_enhanced, CurveParams& d_params) {
    d_enhanced = Image(enhanced.height, enhanced.width, 0.0);
    if (cfg.w_exp != 0.0) {
        const Image g = exposure_loss_backward(enhanced, cfg);
        for (std::size_t i = 0; i < g.data.size(); ++i) d_enhanced.data[i] += cfg.w_exp * g.data[i];
    }
    if (cfg.w_spa != 0.0) {
        const Image g = spatial_consistency_loss_backward(enhanced, original, cfg);
        for (std::size_t i = 0; i < g.data.size(); ++i) d_enhanced.data[i] += cfg.w_spa * g.data[i];
    }
    if (cfg.w_rgb != 0.0) {
        const Image g = color_loss_backward(enhanced);
        for (std::size_t i = 0; i < g.data.size(); ++i) d_enhanced.data[i] += cfg.w_rgb * g.data[i];
    }
    d_params = CurveParams(params.n_iterations, params.height, params.width);
    if (cfg.w_tv != 0.0) {
        const CurveParams g = tv_loss_backward(params);
        for (std::size_t i = 0; i < g.maps.size(); ++i) d_params.maps[i] += cfg.w_tv * g.maps[i];
    }
}

}  // namespace lowlight
