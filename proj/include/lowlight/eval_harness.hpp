#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lowlight/curve_model.hpp"
#include "lowlight/image.hpp"

namespace lowlight {

// 10*log10(1/MSE) over [0,1] data; identical images give +inf.
double psnr(const Image& a, const Image& b);

enum class SsimMode { intensity, per_channel_mean };

// Mean local SSIM, 11x11 Gaussian window sigma 1.5, C1=(0.01)^2, C2=(0.03)^2,
// valid positions only (no padding). Default operates on the per-pixel
// channel-mean intensity.
double ssim(const Image& a, const Image& b, SsimMode mode = SsimMode::intensity);

struct MetricRow {
    std::string id;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    double psnr_mean = 0.0, psnr_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
    std::string config_snapshot;
};

MetricReport make_metric_report(std::vector<MetricRow> rows, std::string config_snapshot = "");
// PSNR of +inf serializes as "inf".
void write_metric_csv(const std::string& path, const MetricReport& report);

struct BlendPair {
    std::string id;
    Image low;
    Image normal;
};

struct BlendRow {
    std::string pair_id;
    double alpha = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

// Called with each blended (and optionally enhanced) image so the CLI can
// export them; may be null.
using BlendSink = std::function<void(const std::string& pair_id, double alpha,
                                     const Image& blended, const Image* enhanced)>;

struct BlendEnhancer {
    const EnhancerWeights* weights = nullptr;
    int scale_factor = 1;
};

// For each (pair, alpha): blends, optionally enhances, and scores against the
// normal-light reference.
std::vector<BlendRow> blend_sweep(const std::vector<BlendPair>& pairs,
                                  const std::vector<double>& alphas,
                                  const BlendEnhancer* enhancer = nullptr,
                                  const BlendSink& sink = nullptr);

void write_blend_csv(const std::string& path, const std::vector<BlendRow>& rows);

struct DetectionRecord {
    std::string image_id;
    std::string category;
    double x = 0, y = 0, w = 0, h = 0;  // xywh, matching the JSON schema
    double score = 1.0;
};

// Detection JSON: array of {image_id, category, bbox [x,y,w,h], score}.
std::vector<DetectionRecord> load_detections(const std::string& path);
void save_detections(const std::string& path, const std::vector<DetectionRecord>& records);

double iou_xywh(const DetectionRecord& a, const DetectionRecord& b);

// Greedy IoU >= 0.5 matching per (image, category), all-point interpolated
// AP, mean over categories present in the truths.
double map_at_50(const std::vector<DetectionRecord>& predictions,
                 const std::vector<DetectionRecord>& truths);

}  // namespace lowlight
