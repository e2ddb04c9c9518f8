#include "lowlight/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lowlight/errors.hpp"

namespace lowlight {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kSsimWindow);
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Valid-region separable Gaussian filter: output (h-10) x (w-10).
std::vector<double> gauss_valid(const std::vector<double>& img, int h, int w, int& oh, int& ow) {
    static const std::vector<double> k = gaussian_kernel();
    const int half = kSsimWindow / 2;
    ow = w - 2 * half;
    oh = h - 2 * half;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
    std::vector<double> a2(a.size()), b2(b.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a2[i] = a[i] * a[i];
        b2[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    int oh, ow;
    const auto mu_a = gauss_valid(a, h, w, oh, ow);
    const auto mu_b = gauss_valid(b, h, w, oh, ow);
    const auto e_a2 = gauss_valid(a2, h, w, oh, ow);
    const auto e_b2 = gauss_valid(b2, h, w, oh, ow);
    const auto e_ab = gauss_valid(ab, h, w, oh, ow);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_a2[i] - mu_a[i] * mu_a[i];
        const double vb = e_b2[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
        acc += num / den;
    }
    return acc / static_cast<double>(mu_a.size());
}

std::vector<double> intensity_plane(const Image& img) {
    const std::size_t n = img.pixels();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = (img.data[i] + img.data[n + i] + img.data[2 * n + i]) / 3.0;
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    if (!a.same_dims(b)) throw std::invalid_argument("psnr: dimension mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b, SsimMode mode) {
    if (!a.same_dims(b)) throw std::invalid_argument("ssim: dimension mismatch");
    if (a.height < kSsimWindow || a.width < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    if (mode == SsimMode::intensity)
        return ssim_plane(intensity_plane(a), intensity_plane(b), a.height, a.width);
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> pa(a.plane(c), a.plane(c) + a.pixels());
        std::vector<double> pb(b.plane(c), b.plane(c) + b.pixels());
        acc += ssim_plane(pa, pb, a.height, a.width);
    }
    return acc / 3.0;
}

MetricReport make_metric_report(std::vector<MetricRow> rows, std::string config_snapshot) {
    MetricReport rep;
    rep.rows = std::move(rows);
    rep.config_snapshot = std::move(config_snapshot);
    if (rep.rows.empty()) return rep;
    const double n = static_cast<double>(rep.rows.size());
    for (const auto& r : rep.rows) {
        rep.psnr_mean += r.psnr_db;
        rep.ssim_mean += r.ssim;
    }
    rep.psnr_mean /= n;
    rep.ssim_mean /= n;
    for (const auto& r : rep.rows) {
        rep.psnr_std += (r.psnr_db - rep.psnr_mean) * (r.psnr_db - rep.psnr_mean);
        rep.ssim_std += (r.ssim - rep.ssim_mean) * (r.ssim - rep.ssim_mean);
    }
    rep.psnr_std = std::sqrt(rep.psnr_std / n);
    rep.ssim_std = std::sqrt(rep.ssim_std / n);
    return rep;
}

namespace {

std::string fmt_psnr(double v) {
    if (std::isinf(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void write_metric_csv(const std::string& path, const MetricReport& report) {
    std::ofstream os(path);
    if (!os) throw IngestionError("cannot write report: " + path);
    os << "id,psnr_db,ssim\n";
    os.precision(9);
    for (const auto& r : report.rows)
        os << r.id << ',' << fmt_psnr(r.psnr_db) << ',' << r.ssim << '\n';
    os << "mean," << fmt_psnr(report.psnr_mean) << ',' << report.ssim_mean << '\n';
    os << "std," << fmt_psnr(report.psnr_std) << ',' << report.ssim_std << '\n';
}

std::vector<BlendRow> blend_sweep(const std::vector<BlendPair>& pairs,
                                  const std::vector<double>& alphas,
                                  const BlendEnhancer* enhancer, const BlendSink& sink) {
    for (double a : alphas)
        if (a < 0.0 || a > 1.0) throw std::invalid_argument("blend_sweep: alpha outside [0,1]");
    std::vector<BlendRow> rows;
    for (const auto& p : pairs) {
        for (double alpha : alphas) {
            const Image blended = alpha_blend(p.low, p.normal, alpha);
            BlendRow row;
            row.pair_id = p.id;
            row.alpha = alpha;
            if (enhancer && enhancer->weights) {
                const Image enhanced = enhance(blended, *enhancer->weights, enhancer->scale_factor);
                row.psnr_db = psnr(enhanced, p.normal);
                row.ssim = ssim(enhanced, p.normal);
                if (sink) sink(p.id, alpha, blended, &enhanced);
            } else {
                row.psnr_db = psnr(blended, p.normal);
                row.ssim = ssim(blended, p.normal);
                if (sink) sink(p.id, alpha, blended, nullptr);
            }
            rows.push_back(row);
        }
    }
    return rows;
}

void write_blend_csv(const std::string& path, const std::vector<BlendRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IngestionError("cannot write report: " + path);
    os << "pair_id,alpha,psnr_db,ssim\n";
    os.precision(9);
    for (const auto& r : rows)
        os << r.pair_id << ',' << r.alpha << ',' << fmt_psnr(r.psnr_db) << ',' << r.ssim << '\n';
}

std::vector<DetectionRecord> load_detections(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IngestionError("cannot open: " + path);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!root.is_array()) throw ParseError(path + ": expected a JSON array of detections");
    std::vector<DetectionRecord> out;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const auto& j = root[i];
        try {
            DetectionRecord r;
            r.image_id = j.at("image_id").get<std::string>();
            r.category = j.at("category").get<std::string>();
            const auto& bb = j.at("bbox");
            r.x = bb.at(0).get<double>();
            r.y = bb.at(1).get<double>();
            r.w = bb.at(2).get<double>();
            r.h = bb.at(3).get<double>();
            r.score = j.value("score", 1.0);
            if (r.score < 0.0 || r.score > 1.0)
                throw ParseError("score outside [0,1]");
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw ParseError(path + ": row " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

void save_detections(const std::string& path, const std::vector<DetectionRecord>& records) {
    nlohmann::json root = nlohmann::json::array();
    for (const auto& r : records)
        root.push_back({{"image_id", r.image_id},
                        {"category", r.category},
                        {"bbox", {r.x, r.y, r.w, r.h}},
                        {"score", r.score}});
    std::ofstream os(path);
    if (!os) throw IngestionError("cannot write: " + path);
    os << root.dump(2) << "\n";
}

double iou_xywh(const DetectionRecord& a, const DetectionRecord& b) {
    const double ax1 = a.x + a.w, ay1 = a.y + a.h;
    const double bx1 = b.x + b.w, by1 = b.y + b.h;
    const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(ay1, by1) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double map_at_50(const std::vector<DetectionRecord>& predictions,
                 const std::vector<DetectionRecord>& truths) {
    if (truths.empty()) throw MetricError("map_at_50: no ground-truth boxes (undefined metric)");

    std::set<std::string> categories;
    for (const auto& t : truths) categories.insert(t.category);

    double ap_sum = 0.0;
    for (const auto& cat : categories) {
        // Ground truths per image for this category.
        std::map<std::string, std::vector<const DetectionRecord*>> gt;
        std::size_t n_gt = 0;
        for (const auto& t : truths)
            if (t.category == cat) {
                gt[t.image_id].push_back(&t);
                ++n_gt;
            }
        std::vector<const DetectionRecord*> preds;
        for (const auto& p : predictions)
            if (p.category == cat) preds.push_back(&p);
        // Stable sort keeps insertion order among equal scores.
        std::stable_sort(preds.begin(), preds.end(),
                         [](const DetectionRecord* a, const DetectionRecord* b) {
                             return a->score > b->score;
                         });

        std::map<std::string, std::vector<bool>> used;
        for (const auto& [img, boxes] : gt) used[img].assign(boxes.size(), false);

        std::vector<int> tp(preds.size(), 0);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            auto it = gt.find(preds[i]->image_id);
            if (it == gt.end()) continue;
            double best_iou = 0.0;
            int best_j = -1;
            for (std::size_t j = 0; j < it->second.size(); ++j) {
                if (used[preds[i]->image_id][j]) continue;
                const double v = iou_xywh(*preds[i], *it->second[j]);
                if (v > best_iou) {
                    best_iou = v;
                    best_j = static_cast<int>(j);
                }
            }
            if (best_j >= 0 && best_iou >= 0.5) {
                tp[i] = 1;
                used[preds[i]->image_id][static_cast<std::size_t>(best_j)] = true;
            }
        }

        // Precision/recall points; all-point interpolation (area under the
        // right-max precision envelope).
        std::vector<double> precision(preds.size()), recall(preds.size());
        int cum_tp = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            cum_tp += tp[i];
            precision[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
            recall[i] = static_cast<double>(cum_tp) / static_cast<double>(n_gt);
        }
        double ap = 0.0;
        double max_p = 0.0;
        for (std::size_t i = preds.size(); i-- > 0;) {
            max_p = std::max(max_p, precision[i]);
            const double r_lo = i == 0 ? 0.0 : recall[i - 1];
            ap += (recall[i] - r_lo) * max_p;
        }
        ap_sum += ap;
    }
    return ap_sum / static_cast<double>(categories.size());
}

}  // namespace lowlight
