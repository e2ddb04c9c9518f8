#include <doctest.h>

#include <cmath>
#include <fstream>

#include "lowlight/errors.hpp"
#include "lowlight/eval_harness.hpp"
#include "test_support.hpp"

using namespace lowlight;
using namespace lowlight::testsup;

namespace {

// Direct 2D-window SSIM oracle, independent of the separable-filter
// implementation route.
double ssim_oracle(const Image& a, const Image& b) {
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> k(win);
    double ksum = 0.0;
    for (int i = 0; i < win; ++i) {
        const double d = i - 5;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        ksum += k[i];
    }
    for (double& v : k) v /= ksum;
    auto inten = [](const Image& im, int y, int x) {
        return (im.at(0, y, x) + im.at(1, y, x) + im.at(2, y, x)) / 3.0;
    };
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + win <= a.height; ++y)
        for (int x = 0; x + win <= a.width; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double wgt = k[dy] * k[dx];
                    const double va = inten(a, y + dy, x + dx);
                    const double vb = inten(b, y + dy, x + dx);
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++count;
        }
    return acc / count;
}

double psnr_oracle(const Image& a, const Image& b) {
    long double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const long double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= a.data.size();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(10.0L * std::log10(1.0L / mse));
}

DetectionRecord det(const std::string& img, const std::string& cat, double x, double y, double w,
                    double h, double score) {
    DetectionRecord r;
    r.image_id = img;
    r.category = cat;
    r.x = x;
    r.y = y;
    r.w = w;
    r.h = h;
    r.score = score;
    return r;
}

}  // namespace

TEST_CASE("psnr values, symmetry and noise monotonicity") {
    Rng rng(601);
    const Image a = random_image(rng, 24, 24);
    CHECK(std::isinf(psnr(a, a)));

    Image b = a;
    for (double& v : b.data) v += 0.1;  // MSE = 0.01
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-12));

    for (int i = 0; i < 20; ++i) {
        const Image x = random_image(rng, 16, 16);
        const Image y = random_image(rng, 16, 16);
        CHECK(std::fabs(psnr(x, y) - psnr_oracle(x, y)) < 1e-6);
    }
    CHECK_THROWS_AS(psnr(a, random_image(rng, 8, 8)), std::invalid_argument);

    // Statistical: psnr decreases as independent noise grows.
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.01, 0.03, 0.1, 0.3}) {
        double mean_psnr = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            Image noisy = a;
            for (double& v : noisy.data) v += amp * rng.normal();
            mean_psnr += psnr(a, noisy);
        }
        mean_psnr /= 100.0;
        CHECK(mean_psnr < prev);
        prev = mean_psnr;
    }
}

TEST_CASE("ssim values and oracle agreement") {
    Rng rng(603);
    const Image a = random_image(rng, 20, 24);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    Image neg = a;
    for (double& v : neg.data) v = 1.0 - v;
    CHECK(ssim(a, neg) < 1.0);
    CHECK(ssim(a, neg) == doctest::Approx(ssim(neg, a)).epsilon(1e-12));

    for (int i = 0; i < 20; ++i) {
        const Image x = random_image(rng, 16, 18);
        const Image y = random_image(rng, 16, 18);
        CHECK(std::fabs(ssim(x, y) - ssim_oracle(x, y)) < 1e-6);
    }

    // Per-channel mode stays within [-1, 1] and differs in general.
    const Image x = random_image(rng, 16, 16);
    const Image y = random_image(rng, 16, 16);
    const double pc = ssim(x, y, SsimMode::per_channel_mean);
    CHECK(pc >= -1.0);
    CHECK(pc <= 1.0);

    CHECK_THROWS_AS(ssim(random_image(rng, 8, 8), random_image(rng, 8, 8)),
                    std::invalid_argument);
}

TEST_CASE("blend_sweep rows and monotonicity") {
    Rng rng(607);
    std::vector<BlendPair> pairs;
    for (int i = 0; i < 2; ++i) {
        BlendPair p;
        p.id = "p" + std::to_string(i);
        p.normal = random_image(rng, 24, 24, 0.4, 1.0);
        p.low = p.normal;
        for (double& v : p.low.data) v *= 0.3;  // monotone darkening
        pairs.push_back(std::move(p));
    }

    const auto rows01 = blend_sweep(pairs, {0.0, 1.0});
    REQUIRE(rows01.size() == 4);
    CHECK(std::isinf(rows01[0].psnr_db));  // alpha = 0 reproduces the reference

    const auto rows = blend_sweep(pairs, {0.0, 0.25, 0.5, 0.75, 1.0});
    for (std::size_t p = 0; p < 2; ++p) {
        for (std::size_t i = 1; i < 5; ++i) {
            const auto& prev = rows[p * 5 + i - 1];
            const auto& cur = rows[p * 5 + i];
            CHECK(cur.psnr_db <= prev.psnr_db + 1e-9);
        }
    }

    // Identity enhancer (zero head) changes nothing.
    Rng wrng(608);
    EnhancerWeights w = EnhancerWeights::init(32, 8, wrng);
    BlendEnhancer enh{&w, 1};
    const auto rows_enh = blend_sweep(pairs, {0.5}, &enh);
    const auto rows_plain = blend_sweep(pairs, {0.5});
    CHECK(rows_enh[0].psnr_db == doctest::Approx(rows_plain[0].psnr_db).epsilon(1e-12));

    CHECK_THROWS_AS(blend_sweep(pairs, {1.5}), std::invalid_argument);
}

TEST_CASE("map_at_50 exact cases") {
    // Perfect predictions.
    std::vector<DetectionRecord> truths{det("a", "person", 0, 0, 10, 10, 1.0),
                                        det("a", "car", 20, 20, 8, 8, 1.0),
                                        det("b", "person", 5, 5, 6, 6, 1.0)};
    CHECK(map_at_50(truths, truths) == doctest::Approx(1.0));
    CHECK(map_at_50({}, truths) == doctest::Approx(0.0));
    CHECK_THROWS_AS(map_at_50(truths, {}), MetricError);

    // Hand-enumerated 3-box PR curve with one false positive:
    // p1 hits gt1 (P=1, R=0.5), p2 misses (P=0.5), p3 hits gt2 (P=2/3, R=1).
    // All-point AP = 0.5 * 1 + 0.5 * (2/3) = 5/6.
    std::vector<DetectionRecord> gt{det("a", "person", 0, 0, 10, 10, 1.0),
                                    det("a", "person", 50, 50, 10, 10, 1.0)};
    std::vector<DetectionRecord> preds{det("a", "person", 1, 1, 10, 10, 0.9),
                                       det("a", "person", 100, 100, 10, 10, 0.8),
                                       det("a", "person", 51, 49, 10, 10, 0.7)};
    CHECK(map_at_50(preds, gt) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

    // Uniform score rescaling that preserves ranking leaves the value alone.
    std::vector<DetectionRecord> rescaled = preds;
    for (auto& r : rescaled) r.score *= 0.5;
    CHECK(map_at_50(rescaled, gt) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

    // Duplicate prediction on one truth box: only the first match counts.
    std::vector<DetectionRecord> dup{det("a", "person", 0, 0, 10, 10, 0.9),
                                     det("a", "person", 0, 0, 10, 10, 0.8)};
    const double v = map_at_50(dup, {gt[0]});
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));  // recall 1 reached at P=1
}

TEST_CASE("iou is the usual intersection over union") {
    const auto a = det("x", "c", 0, 0, 10, 10, 1.0);
    const auto b = det("x", "c", 5, 0, 10, 10, 1.0);
    CHECK(iou_xywh(a, a) == doctest::Approx(1.0));
    CHECK(iou_xywh(a, b) == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
    const auto far = det("x", "c", 100, 100, 5, 5, 1.0);
    CHECK(iou_xywh(a, far) == doctest::Approx(0.0));
}

TEST_CASE("detection json io and validation") {
    TempDir tmp("det");
    std::vector<DetectionRecord> recs{det("img1", "person", 1, 2, 3, 4, 0.5),
                                      det("img2", "car", 0, 0, 10, 20, 1.0)};
    save_detections(tmp.sub("d.json"), recs);
    const auto back = load_detections(tmp.sub("d.json"));
    REQUIRE(back.size() == 2);
    CHECK(back[0].image_id == "img1");
    CHECK(back[0].w == doctest::Approx(3.0));
    CHECK(back[1].score == doctest::Approx(1.0));

    std::ofstream(tmp.sub("bad.json")) << R"([{"image_id":"a","category":"c","bbox":[0,0,1,1],"score":2.5}])";
    CHECK_THROWS_WITH_AS(load_detections(tmp.sub("bad.json")), doctest::Contains("row 0"),
                         ParseError);
}

TEST_CASE("metric csv serializes infinity as inf") {
    TempDir tmp("csv");
    MetricReport rep = make_metric_report(
        {{"a", std::numeric_limits<double>::infinity(), 1.0}, {"b", 20.0, 0.5}});
    write_metric_csv(tmp.sub("m.csv"), rep);
    std::ifstream is(tmp.sub("m.csv"));
    std::stringstream ss;
    ss << is.rdbuf();
    CHECK(ss.str().find("a,inf,1") != std::string::npos);
    CHECK(std::isinf(rep.psnr_mean));
}
