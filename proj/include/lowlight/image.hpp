#pragma once

#include <vector>

namespace lowlight {

// RGB image with intensities in [0,1], stored planar: data[c*h*w + y*w + x].
// Producers are responsible for clamping; every routine here preserves the
// range invariant.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // size 3*height*width

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    double* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }
    const double* plane(int c) const {
        return data.data() + static_cast<std::size_t>(c) * height * width;
    }

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    bool same_dims(const Image& o) const { return height == o.height && width == o.width; }
};

struct PhotometricParams {
    double brightness_factor = 1.0;
    double contrast_factor = 1.0;
    double hue_shift_deg = 0.0;  // [-180, 180]
};

// Sampling ranges for random augmentation draws. The paper gives no
// magnitudes; these defaults are ±30% brightness/contrast and ±18° hue.
struct PhotometricRanges {
    double brightness_lo = 0.7, brightness_hi = 1.3;
    double contrast_lo = 0.7, contrast_hi = 1.3;
    double hue_lo_deg = -18.0, hue_hi_deg = 18.0;
};

// Mean over non-overlapping m×m blocks, per channel. Trailing partial blocks
// are dropped, so the output is floor(h/m) × floor(w/m).
Image avg_pool(const Image& img, int m);

// Output pixel (i,j) = input pixel (offset_r + i*m, offset_c + j*m).
Image subsample(const Image& img, int m, int offset_r, int offset_c);

// Brightness, then contrast (pivot 0.5), then hue rotation in HSV; result
// clamped to [0,1]. Identity parameters short-circuit each stage so the
// identity transform is bit-exact.
Image photometric_augment(const Image& img, const PhotometricParams& p);

// alpha*low + (1-alpha)*normal, per pixel per channel.
Image alpha_blend(const Image& low, const Image& normal, double alpha);

// Half-pixel-centre bilinear resampling (corner-aligned-false).
Image resize_bilinear(const Image& img, int new_h, int new_w);

// Adjoint of resize_bilinear: scatters a gradient over the resized image back
// to source resolution. Used by the training paths.
Image resize_bilinear_adjoint(const Image& grad_out, int src_h, int src_w);

}  // namespace lowlight
