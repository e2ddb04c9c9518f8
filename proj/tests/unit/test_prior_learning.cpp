#include <doctest.h>

#include <cmath>

#include "lowlight/prior_learning.hpp"
#include "lowlight/trainer.hpp"
#include "test_support.hpp"

using namespace lowlight;
using namespace lowlight::testsup;

namespace {

// Prompt tokens whose encoded embedding equals a chosen unit vector: the text
// projection has orthonormal rows, so tokens = rows of W^T e pool back to e.
Tensor tokens_for_embedding(const EncoderBackend& backend, const std::vector<double>& e) {
    const Tensor& w = backend.text_projection();
    Tensor tokens({4, kEmbedDim});
    std::vector<double> wte(kEmbedDim, 0.0);
    for (int r = 0; r < kEmbedDim; ++r)
        for (int c = 0; c < kEmbedDim; ++c)
            wte[c] += w.v[static_cast<std::size_t>(r) * kEmbedDim + c] * e[r];
    for (int t = 0; t < 4; ++t)
        for (int c = 0; c < kEmbedDim; ++c) tokens.v[static_cast<std::size_t>(t) * kEmbedDim + c] = wte[c];
    return tokens;
}

}  // namespace

TEST_CASE("synthesize_pair shapes, labels and constant-image collapse") {
    PriorConfig cfg;
    Rng rng(201);
    const Image flat = constant_image(224, 224, 0.4, 0.4, 0.4);
    auto [pos, neg] = synthesize_pair(flat, cfg, rng);
    CHECK(pos.label == 0);
    CHECK(neg.label == 1);
    CHECK(pos.image.height == 56);
    CHECK(pos.image.width == 56);
    CHECK(neg.image.height == 56);
    CHECK(neg.image.width == 56);
    for (std::size_t i = 0; i < pos.image.data.size(); ++i)
        CHECK(pos.image.data[i] == doctest::Approx(neg.image.data[i]).epsilon(1e-12));

    // Non-multiple dims still give matching shapes (cropped first).
    Rng rng2(202);
    const Image odd = constant_image(30, 35, 0.2, 0.2, 0.2);
    auto [p2, n2] = synthesize_pair(odd, cfg, rng2);
    CHECK(p2.image.height == n2.image.height);
    CHECK(p2.image.width == n2.image.width);
    CHECK(p2.image.height == 7);

    CHECK_THROWS_AS(synthesize_pair(constant_image(3, 3, 0, 0, 0), cfg, rng),
                    std::invalid_argument);
}

TEST_CASE("negative samples carry more pixel variance than positives") {
    PriorConfig cfg;
    Rng data_rng(203);
    Rng pair_rng(204);
    double var_pos = 0.0, var_neg = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const Image img = synthetic_lowlight(data_rng, 64, 64, 0.1);
        auto [pos, neg] = synthesize_pair(img, cfg, pair_rng);
        auto variance = [](const Image& im) {
            double mean = 0.0;
            for (double v : im.data) mean += v;
            mean /= static_cast<double>(im.data.size());
            double var = 0.0;
            for (double v : im.data) var += (v - mean) * (v - mean);
            return var / static_cast<double>(im.data.size());
        };
        var_pos += variance(pos.image);
        var_neg += variance(neg.image);
    }
    CHECK(var_neg > var_pos);
}

TEST_CASE("prompt_probability softmax values") {
    const EncoderBackend backend = EncoderBackend::mock(31);
    Rng rng(205);
    const Image img = random_image(rng, 16, 16);

    // Identical prompts: exactly one half.
    PromptPair same;
    same.n_tokens = 8;
    same.positive = Tensor({8, 512});
    for (double& v : same.positive.v) v = rng.normal(0.0, 0.02);
    same.negative = same.positive;
    CHECK(prompt_probability(img, same, backend) == 0.5);

    // cos = (+1, -1) by construction: yhat = e / (e + 1/e).
    const Embedding ei = encode_image(img, backend, ProjectionHead::identity());
    PromptPair aligned;
    aligned.n_tokens = 4;
    aligned.positive = tokens_for_embedding(backend, ei.v);
    std::vector<double> neg_e(ei.v);
    for (double& v : neg_e) v = -v;
    aligned.negative = tokens_for_embedding(backend, neg_e);
    const double expect = std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0));
    CHECK(prompt_probability(img, aligned, backend) == doctest::Approx(expect).epsilon(1e-9));

    // Random prompts against a scalar softmax oracle.
    PromptPair rnd;
    rnd.n_tokens = 16;
    rnd.positive = Tensor({16, 512});
    rnd.negative = Tensor({16, 512});
    for (double& v : rnd.positive.v) v = rng.normal(0.0, 0.02);
    for (double& v : rnd.negative.v) v = rng.normal(0.0, 0.02);
    const double cp = ei.dot(encode_prompt_tokens(rnd.positive, backend));
    const double cn = ei.dot(encode_prompt_tokens(rnd.negative, backend));
    const double oracle = std::exp(cp) / (std::exp(cp) + std::exp(cn));
    CHECK(prompt_probability(img, rnd, backend) == doctest::Approx(oracle).epsilon(1e-9));

    // Swapping the prompts complements the probability.
    PromptPair swapped;
    swapped.n_tokens = 16;
    swapped.positive = rnd.negative;
    swapped.negative = rnd.positive;
    CHECK(prompt_probability(img, rnd, backend) + prompt_probability(img, swapped, backend) ==
          doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("prompt_init_loss values and gradient") {
    const EncoderBackend backend = EncoderBackend::mock(37);
    Rng rng(207);

    PromptPair same;
    same.n_tokens = 8;
    same.positive = Tensor({8, 512});
    for (double& v : same.positive.v) v = rng.normal(0.0, 0.02);
    same.negative = same.positive;
    std::vector<PriorSample> batch;
    batch.push_back({random_image(rng, 12, 12), 0});
    batch.push_back({random_image(rng, 12, 12), 1});
    batch.push_back({random_image(rng, 12, 12), 1});
    CHECK(prompt_init_loss(batch, same, backend) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    PromptPair rnd;
    rnd.n_tokens = 16;
    rnd.positive = Tensor({16, 512});
    rnd.negative = Tensor({16, 512});
    for (double& v : rnd.positive.v) v = rng.normal(0.0, 0.02);
    for (double& v : rnd.negative.v) v = rng.normal(0.0, 0.02);

    // Two-sample oracle from prompt_probability.
    std::vector<PriorSample> two{batch[0], batch[1]};
    const double y0 = prompt_probability(two[0].image, rnd, backend);
    const double y1 = prompt_probability(two[1].image, rnd, backend);
    const double oracle = -(std::log(y0) + std::log(1.0 - y1)) / 2.0;
    CHECK(prompt_init_loss(two, rnd, backend) == doctest::Approx(oracle).epsilon(1e-12));

    CHECK_THROWS_AS(prompt_init_loss({}, rnd, backend), std::invalid_argument);

    // Gradient of the loss w.r.t. both token matrices.
    Tensor dp, dn;
    prompt_init_loss_backward(two, rnd, backend, dp, dn);
    auto f_pos = [&](const std::vector<double>& tv) {
        PromptPair p2 = rnd;
        p2.positive.v = tv;
        return prompt_init_loss(two, p2, backend);
    };
    CHECK(gradient_check(f_pos, dp.v, rnd.positive.v, 1e-3, 64, 8).max_rel_err < 1e-3);
    auto f_neg = [&](const std::vector<double>& tv) {
        PromptPair p2 = rnd;
        p2.negative.v = tv;
        return prompt_init_loss(two, p2, backend);
    };
    CHECK(gradient_check(f_neg, dn.v, rnd.negative.v, 1e-3, 64, 9).max_rel_err < 1e-3);
}

TEST_CASE("learn_prompt_pair determinism, zero-epoch identity and smoothed trace") {
    const EncoderBackend backend = EncoderBackend::mock(41);
    Rng data_rng(209);
    std::vector<Image> images;
    for (int i = 0; i < 24; ++i) images.push_back(synthetic_lowlight(data_rng, 32, 32, 0.1));

    PriorConfig cfg;
    cfg.seed = 5;
    cfg.epochs = 0;
    const PromptLearnResult init = learn_prompt_pair(images, cfg, backend);
    CHECK(init.loss_trace.empty());
    // The zero-epoch result is exactly the seeded initialisation.
    Rng expect_rng(cfg.seed);
    Tensor expect_pos({cfg.n_tokens, 512});
    for (double& v : expect_pos.v) v = expect_rng.normal(0.0, cfg.init_stddev);
    CHECK(init.prompts.positive.v == expect_pos.v);

    cfg.epochs = 10;
    const PromptLearnResult a = learn_prompt_pair(images, cfg, backend);
    const PromptLearnResult b = learn_prompt_pair(images, cfg, backend);
    CHECK(a.prompts.positive.v == b.prompts.positive.v);
    CHECK(a.prompts.negative.v == b.prompts.negative.v);
    CHECK(a.loss_trace == b.loss_trace);
    REQUIRE(a.loss_trace.size() == 10);

    // Window-5 smoothed trace is non-increasing.
    auto smoothed = [&](std::size_t i) {
        const std::size_t lo = i >= 4 ? i - 4 : 0;
        double s = 0.0;
        for (std::size_t k = lo; k <= i; ++k) s += a.loss_trace[k];
        return s / static_cast<double>(i - lo + 1);
    };
    for (std::size_t i = 1; i < a.loss_trace.size(); ++i)
        CHECK(smoothed(i) <= smoothed(i - 1) + 1e-9);

    CHECK_THROWS_AS(learn_prompt_pair({}, cfg, backend), std::invalid_argument);
}

TEST_CASE("prior_loss values and image gradient") {
    const EncoderBackend backend = EncoderBackend::mock(43);
    Rng rng(211);
    const Image img = random_image(rng, 16, 16, 0.1, 0.9);

    PromptPair same;
    same.n_tokens = 8;
    same.positive = Tensor({8, 512});
    for (double& v : same.positive.v) v = rng.normal(0.0, 0.02);
    same.negative = same.positive;
    CHECK(prior_loss(img, same, backend) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    PromptPair rnd;
    rnd.n_tokens = 16;
    rnd.positive = Tensor({16, 512});
    rnd.negative = Tensor({16, 512});
    for (double& v : rnd.positive.v) v = rng.normal(0.0, 0.02);
    for (double& v : rnd.negative.v) v = rng.normal(0.0, 0.02);
    CHECK(prior_loss(img, rnd, backend) ==
          doctest::Approx(-std::log(prompt_probability(img, rnd, backend))).epsilon(1e-12));

    const Image g = prior_loss_backward(img, rnd, backend);
    auto f = [&](const std::vector<double>& iv) {
        Image i2 = img;
        i2.data = iv;
        return prior_loss(i2, rnd, backend);
    };
    CHECK(gradient_check(f, g.data, img.data, 1e-3, 64, 10).max_rel_err < 1e-3);
}

TEST_CASE("prompt pair files round trip") {
    TempDir tmp("prompts");
    Rng rng(213);
    PromptPair pp;
    pp.n_tokens = 16;
    pp.positive = Tensor({16, 512});
    pp.negative = Tensor({16, 512});
    for (double& v : pp.positive.v) v = rng.normal();
    for (double& v : pp.negative.v) v = rng.normal();
    PriorConfig cfg;
    save_prompt_pair(tmp.sub("p.bin"), tmp.sub("p.json"), pp, cfg, "mock:7:16");
    const PromptPair back = load_prompt_pair(tmp.sub("p.bin"));
    CHECK(back.n_tokens == 16);
    CHECK(back.positive.v == pp.positive.v);
    CHECK(back.negative.v == pp.negative.v);
    std::ifstream side(tmp.sub("p.json"));
    REQUIRE(side.good());
    std::stringstream ss;
    ss << side.rdbuf();
    CHECK(ss.str().find("mock:7:16") != std::string::npos);
}
