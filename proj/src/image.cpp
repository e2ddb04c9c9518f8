#include "lowlight/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lowlight/errors.hpp"

namespace lowlight {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// h in [0,360), s,v in [0,1].
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max(r, std::max(g, b));
    const double mn = std::min(r, std::min(g, b));
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) {
        h = 60.0 * std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
        h = 60.0 * ((b - r) / d + 2.0);
    } else {
        h = 60.0 * ((r - g) / d + 4.0);
    }
    if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    if (hp < 1.0) {
        r1 = c; g1 = x;
    } else if (hp < 2.0) {
        r1 = x; g1 = c;
    } else if (hp < 3.0) {
        g1 = c; b1 = x;
    } else if (hp < 4.0) {
        g1 = x; b1 = c;
    } else if (hp < 5.0) {
        r1 = x; b1 = c;
    } else {
        r1 = c; b1 = x;
    }
    const double m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

}  // namespace

Image avg_pool(const Image& img, int m) {
    if (m < 1) throw std::invalid_argument("avg_pool: block size must be >= 1");
    if (img.height < m || img.width < m)
        throw std::invalid_argument("avg_pool: image smaller than block size");
    const int oh = img.height / m;
    const int ow = img.width / m;
    Image out(oh, ow);
    const double inv = 1.0 / (static_cast<double>(m) * m);
    for (int c = 0; c < 3; ++c) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (int dy = 0; dy < m; ++dy)
                    for (int dx = 0; dx < m; ++dx)
                        s += img.at(c, oy * m + dy, ox * m + dx);
                out.at(c, oy, ox) = s * inv;
            }
        }
    }
    return out;
}

Image subsample(const Image& img, int m, int offset_r, int offset_c) {
    if (m < 1) throw std::invalid_argument("subsample: stride must be >= 1");
    if (offset_r < 0 || offset_r >= m || offset_c < 0 || offset_c >= m)
        throw std::invalid_argument("subsample: offset must lie in [0, m)");
    if (img.height <= offset_r || img.width <= offset_c)
        throw std::invalid_argument("subsample: offset outside image");
    const int oh = (img.height - offset_r + m - 1) / m;
    const int ow = (img.width - offset_c + m - 1) / m;
    Image out(oh, ow);
    for (int c = 0; c < 3; ++c)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                out.at(c, oy, ox) = img.at(c, offset_r + oy * m, offset_c + ox * m);
    return out;
}

Image photometric_augment(const Image& img, const PhotometricParams& p) {
    if (p.brightness_factor <= 0.0 || p.contrast_factor <= 0.0)
        throw std::invalid_argument("photometric_augment: factors must be positive");
    if (p.hue_shift_deg < -180.0 || p.hue_shift_deg > 180.0)
        throw std::invalid_argument("photometric_augment: hue shift outside [-180, 180]");
    Image out = img;
    if (p.brightness_factor != 1.0) {
        for (double& v : out.data) v = clamp01(v * p.brightness_factor);
    }
    if (p.contrast_factor != 1.0) {
        for (double& v : out.data) v = clamp01((v - 0.5) * p.contrast_factor + 0.5);
    }
    if (p.hue_shift_deg != 0.0) {
        const std::size_t n = out.pixels();
        for (std::size_t i = 0; i < n; ++i) {
            double h, s, v;
            rgb_to_hsv(out.data[i], out.data[n + i], out.data[2 * n + i], h, s, v);
            h = std::fmod(h + p.hue_shift_deg + 360.0, 360.0);
            double r, g, b;
            hsv_to_rgb(h, s, v, r, g, b);
            out.data[i] = clamp01(r);
            out.data[n + i] = clamp01(g);
            out.data[2 * n + i] = clamp01(b);
        }
    }
    return out;
}

Image alpha_blend(const Image& low, const Image& normal, double alpha) {
    if (!low.same_dims(normal))
        throw std::invalid_argument("alpha_blend: dimension mismatch");
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("alpha_blend: alpha outside [0,1]");
    Image out(low.height, low.width);
    for (std::size_t i = 0; i < low.data.size(); ++i)
        out.data[i] = alpha * low.data[i] + (1.0 - alpha) * normal.data[i];
    return out;
}

Image resize_bilinear(const Image& img, int new_h, int new_w) {
    if (new_h < 1 || new_w < 1)
        throw std::invalid_argument("resize_bilinear: target dims must be >= 1");
    if (new_h == img.height && new_w == img.width) return img;
    Image out(new_h, new_w);
    const double sy = static_cast<double>(img.height) / new_h;
    const double sx = static_cast<double>(img.width) / new_w;
    for (int oy = 0; oy < new_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < new_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
                const double bot = (1.0 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
                out.at(c, oy, ox) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

Image resize_bilinear_adjoint(const Image& grad_out, int src_h, int src_w) {
    if (src_h < 1 || src_w < 1)
        throw std::invalid_argument("resize_bilinear_adjoint: source dims must be >= 1");
    if (grad_out.height == src_h && grad_out.width == src_w) return grad_out;
    Image grad_in(src_h, src_w, 0.0);
    const double sy = static_cast<double>(src_h) / grad_out.height;
    const double sx = static_cast<double>(src_w) / grad_out.width;
    for (int oy = 0; oy < grad_out.height; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(src_h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src_h - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < grad_out.width; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(src_w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src_w - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double g = grad_out.at(c, oy, ox);
                grad_in.at(c, y0, x0) += (1.0 - wy) * (1.0 - wx) * g;
                grad_in.at(c, y0, x1) += (1.0 - wy) * wx * g;
                grad_in.at(c, y1, x0) += wy * (1.0 - wx) * g;
                grad_in.at(c, y1, x1) += wy * wx * g;
            }
        }
    }
    return grad_in;
}

}  // namespace lowlight
