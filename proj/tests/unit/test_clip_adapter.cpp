#include <doctest.h>

#include <cmath>

#include "lowlight/clip_adapter.hpp"
#include "lowlight/errors.hpp"
#include "lowlight/tensor_io.hpp"
#include "lowlight/trainer.hpp"
#include "test_support.hpp"

using namespace lowlight;
using namespace lowlight::testsup;

TEST_CASE("image embeddings are unit norm, deterministic and distinct") {
    Rng rng(101);
    const EncoderBackend backend = EncoderBackend::mock(7);
    const ProjectionHead head = ProjectionHead::identity();
    const Image a = random_image(rng, 20, 20);
    const Image b = random_image(rng, 20, 20);
    const Embedding ea = encode_image(a, backend, head);
    const Embedding eb = encode_image(b, backend, head);
    CHECK(ea.v.size() == 512);
    CHECK(std::fabs(l2_norm(ea.v) - 1.0) < 1e-5);
    CHECK(encode_image(a, backend, head).v == ea.v);
    CHECK(ea.dot(eb) < 1.0);
    CHECK(ea.dot(eb) >= -1.0 - 1e-12);

    // Same seed, fresh construction: cross-process style reproducibility.
    const EncoderBackend backend2 = EncoderBackend::mock(7);
    CHECK(encode_image(a, backend2, head).v == ea.v);
}

TEST_CASE("text embeddings hash deterministically and respect order") {
    const EncoderBackend backend = EncoderBackend::mock(7);
    const ProjectionHead head = ProjectionHead::identity();
    const Embedding e1 = encode_text("person, car", backend, head);
    const Embedding e2 = encode_text("person, car", backend, head);
    const Embedding e3 = encode_text("car, person", backend, head);
    CHECK(e1.v == e2.v);
    CHECK(std::fabs(l2_norm(e1.v) - 1.0) < 1e-5);
    CHECK(e1.dot(e3) < 1.0 - 1e-9);
    CHECK_THROWS_AS(encode_text("", backend, head), std::invalid_argument);
    CHECK_THROWS_AS(encode_text(" , ", backend, head), std::invalid_argument);
}

TEST_CASE("prompt token encoding and its gradient") {
    const EncoderBackend backend = EncoderBackend::mock(9);
    Rng rng(103);
    Tensor tokens({16, 512});
    for (double& v : tokens.v) v = rng.normal(0.0, 0.02);
    const Embedding e = encode_prompt_tokens(tokens, backend);
    CHECK(std::fabs(l2_norm(e.v) - 1.0) < 1e-10);
    CHECK(encode_prompt_tokens(tokens, backend).v == e.v);

    Tensor bad({16, 100});
    CHECK_THROWS_AS(encode_prompt_tokens(bad, backend), std::invalid_argument);

    // d cos(encode(tokens), target) / d tokens vs finite differences.
    std::vector<double> target(512);
    for (double& v : target) v = rng.normal();
    const double tn = l2_norm(target);
    for (double& v : target) v /= tn;

    const Tensor d_tokens = encode_prompt_tokens_backward(tokens, backend, target);
    auto f = [&](const std::vector<double>& tv) {
        Tensor t2 = tokens;
        t2.v = tv;
        return dot(encode_prompt_tokens(t2, backend).v, target);
    };
    CHECK(gradient_check(f, d_tokens.v, tokens.v, 1e-3, 64, 5).max_rel_err < 1e-3);
}

TEST_CASE("image encoder backward matches finite differences") {
    Rng rng(107);
    const EncoderBackend backend = EncoderBackend::mock(11);
    const ProjectionHead head = ProjectionHead::identity();
    const Image img = random_image(rng, 12, 10, 0.1, 0.9);
    std::vector<double> target(512);
    for (double& v : target) v = rng.normal();
    const double tn = l2_norm(target);
    for (double& v : target) v /= tn;

    const Image d_img = encode_image_backward(img, backend, head, target);
    auto f = [&](const std::vector<double>& iv) {
        Image i2 = img;
        i2.data = iv;
        return dot(encode_image(i2, backend, head).v, target);
    };
    CHECK(gradient_check(f, d_img.data, img.data, 1e-3, 64, 6).max_rel_err < 1e-3);
}

TEST_CASE("projection head backward matches finite differences") {
    Rng rng(109);
    const EncoderBackend backend = EncoderBackend::mock(13);
    ProjectionHead head = ProjectionHead::identity();
    for (double& v : head.w.v) v += rng.normal(0.0, 0.01);
    const Image img = random_image(rng, 10, 10);
    const auto feature = backend.image_feature(img);
    std::vector<double> target(512);
    for (double& v : target) v = rng.normal();
    const double tn = l2_norm(target);
    for (double& v : target) v /= tn;

    Tensor d_head({512, 512});
    head_backward(feature, head, target, d_head);
    auto f = [&](const std::vector<double>& hv) {
        ProjectionHead h2 = head;
        h2.w.v = hv;
        std::vector<double> g(512);
        for (int r = 0; r < 512; ++r) {
            double s = 0.0;
            for (int c = 0; c < 512; ++c) s += h2.w.v[static_cast<std::size_t>(r) * 512 + c] * feature[c];
            g[r] = s;
        }
        const double n = l2_norm(g);
        double d = 0.0;
        for (int i = 0; i < 512; ++i) d += g[i] / n * target[i];
        return d;
    };
    CHECK(gradient_check(f, d_head.v, head.w.v, 1e-3, 64, 7).max_rel_err < 1e-3);
}

TEST_CASE("fine_tune_projection freezes the backend and learns") {
    Rng rng(113);
    const EncoderBackend backend = EncoderBackend::mock(17);
    const Tensor img_proj_before = backend.image_projection();
    const Tensor txt_proj_before = backend.text_projection();

    // Linearly separable features on one-hot anchors. Class 0's samples are
    // corrupted toward class 1's coordinate, so the identity head misassigns
    // them; a head that damps that coordinate fixes class 0 while class 1
    // stays parallel to its own anchor.
    const int n_classes = 4;
    std::vector<std::vector<double>> class_features;
    for (int k = 0; k < n_classes; ++k) {
        std::vector<double> c(512, 0.0);
        c[static_cast<std::size_t>(k)] = 1.0;
        class_features.push_back(std::move(c));
    }
    std::vector<LabeledFeature> data;
    for (int i = 0; i < 80; ++i) {
        const int k = i % n_classes;
        LabeledFeature lf;
        lf.class_id = k;
        lf.feature.assign(512, 0.0);
        lf.feature[static_cast<std::size_t>(k)] = k == 0 ? 0.25 : 1.0;
        if (k == 0) lf.feature[1] = 1.0;
        for (int d = 0; d < 512; ++d) lf.feature[d] += 0.03 * rng.normal();
        data.push_back(std::move(lf));
    }

    const ProjectionHead head0 = ProjectionHead::identity();
    const double acc_before = matching_accuracy(head0, data, class_features);

    FineTuneConfig cfg;
    cfg.steps = 0;
    const ProjectionHead unchanged = fine_tune_projection(head0, data, class_features,
                                                          GuidanceTask::content, cfg);
    CHECK(unchanged.w.v == head0.w.v);

    cfg.steps = 150;
    cfg.learning_rate = 3e-3;
    cfg.seed = 5;
    const ProjectionHead tuned =
        fine_tune_projection(head0, data, class_features, GuidanceTask::content, cfg);
    const double acc_after = matching_accuracy(tuned, data, class_features);
    CHECK(acc_after > acc_before);

    CHECK(backend.image_projection().v == img_proj_before.v);
    CHECK(backend.text_projection().v == txt_proj_before.v);

    CHECK_THROWS_AS(fine_tune_projection(head0, {}, class_features, GuidanceTask::content, cfg),
                    std::invalid_argument);
}

TEST_CASE("backend weight files round trip and reject other widths") {
    TempDir tmp("backend");
    const EncoderBackend backend = EncoderBackend::mock(23);
    const std::string path = tmp.sub("enc.lltc");
    backend.save(path);
    const EncoderBackend loaded = EncoderBackend::from_file(path);
    CHECK(loaded.kind() == BackendKind::file);
    Rng rng(127);
    const Image img = random_image(rng, 16, 16);
    const ProjectionHead head = ProjectionHead::identity();
    CHECK(encode_image(img, loaded, head).v == encode_image(img, backend, head).v);
    CHECK(encode_text("tree", loaded, head).v == encode_text("tree", backend, head).v);

    // Wrong embedding width must be rejected at load.
    TensorFile bad;
    bad.meta_json = R"({"embed_dim":256,"internal_size":16,"token_seed":0})";
    bad.tensors.emplace_back("image_projection", Tensor({256, 3073}));
    bad.tensors.emplace_back("text_projection", Tensor({256, 256}));
    const std::string bad_path = tmp.sub("bad.lltc");
    save_tensor_file(bad_path, bad);
    CHECK_THROWS_AS(EncoderBackend::from_file(bad_path), BackendError);
    CHECK_THROWS_AS(EncoderBackend::from_file(tmp.sub("missing.lltc")), BackendError);
}
