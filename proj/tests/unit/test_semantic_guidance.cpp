#include <doctest.h>

#include <cmath>

#include "lowlight/semantic_guidance.hpp"
#include "lowlight/trainer.hpp"
#include "test_support.hpp"

using namespace lowlight;
using namespace lowlight::testsup;

namespace {

InstanceAnnotation inst(const std::string& cat) {
    InstanceAnnotation a;
    a.x_min = 0;
    a.y_min = 0;
    a.x_max = 1;
    a.y_max = 1;
    a.category = cat;
    return a;
}

SimilarityMatrix matrix_of(std::vector<double> values, double scale) {
    SimilarityMatrix sim;
    sim.n = static_cast<int>(std::sqrt(static_cast<double>(values.size())));
    sim.values = std::move(values);
    sim.logit_scale = scale;
    return sim;
}

}  // namespace

TEST_CASE("build_description sorts, keeps repeats and flags empties") {
    const Description d1 =
        build_description({inst("person"), inst("car"), inst("person")}, DescriptionKind::content);
    CHECK(d1.text == "car, person, person");
    CHECK_FALSE(d1.empty);
    CHECK(d1.kind == DescriptionKind::content);

    const Description d2 = build_description({}, DescriptionKind::context);
    CHECK(d2.empty);
    CHECK(d2.text.empty());

    const Description d3 =
        build_description({inst("bicycle"), inst("person")}, DescriptionKind::content);
    CHECK(d3.text == "bicycle, person");

    // Input order never matters.
    const Description d4 =
        build_description({inst("person"), inst("person"), inst("car")}, DescriptionKind::content);
    CHECK(d4.text == d1.text);
}

TEST_CASE("similarity_matrix shapes, columns and oracle") {
    const EncoderBackend backend = EncoderBackend::mock(51);
    const ProjectionHead head = ProjectionHead::identity();
    Rng rng(301);

    std::vector<Image> one{random_image(rng, 16, 16)};
    std::vector<Description> one_d{build_description({inst("cat")}, DescriptionKind::content)};
    const SimilarityMatrix s1 = similarity_matrix(one, one_d, backend, head);
    REQUIRE(s1.n == 1);
    CHECK(s1.values[0] >= -1.0 - 1e-12);
    CHECK(s1.values[0] <= 1.0 + 1e-12);

    std::vector<Image> imgs{random_image(rng, 16, 16), random_image(rng, 16, 16),
                            random_image(rng, 16, 16)};
    std::vector<Description> same_d(3, build_description({inst("dog")}, DescriptionKind::content));
    const SimilarityMatrix s2 = similarity_matrix(imgs, same_d, backend, head);
    for (int i = 0; i < 3; ++i)
        for (int j = 1; j < 3; ++j)
            CHECK(s2.values[static_cast<std::size_t>(i) * 3 + j] ==
                  doctest::Approx(s2.values[static_cast<std::size_t>(i) * 3]).epsilon(1e-12));

    std::vector<Description> descs{build_description({inst("dog")}, DescriptionKind::content),
                                   build_description({inst("cat")}, DescriptionKind::content),
                                   build_description({inst("car")}, DescriptionKind::content)};
    const SimilarityMatrix s3 = similarity_matrix(imgs, descs, backend, head);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double oracle =
                encode_image(imgs[i], backend, head).dot(encode_text(descs[j].text, backend, head));
            CHECK(s3.values[static_cast<std::size_t>(i) * 3 + j] ==
                  doctest::Approx(oracle).epsilon(1e-6));
        }

    CHECK_THROWS_AS(similarity_matrix(imgs, one_d, backend, head), std::invalid_argument);
    std::vector<Description> with_empty = descs;
    with_empty[1] = build_description({}, DescriptionKind::content);
    CHECK_THROWS_AS(similarity_matrix(imgs, with_empty, backend, head), std::invalid_argument);
}

TEST_CASE("bidirectional_ce closed-form cases") {
    for (int n : {2, 4, 8}) {
        std::vector<double> v(static_cast<std::size_t>(n) * n, 0.37);
        CHECK(bidirectional_ce(matrix_of(v, 100.0)) ==
              doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-9));
    }

    // Saturated diagonal: margin 100/scale.
    const double scale = 100.0;
    std::vector<double> sat(16, 0.0);
    for (int i = 0; i < 4; ++i) sat[static_cast<std::size_t>(i) * 4 + i] = 100.0 / scale;
    CHECK(bidirectional_ce(matrix_of(sat, scale)) < 1e-6);

    // 2x2 hand oracle at scale 100.
    const SimilarityMatrix s = matrix_of({0.9, 0.1, 0.2, 0.8}, 100.0);
    auto ce2 = [](double a, double b) {  // -log softmax(a over {a, b})
        const double m = std::max(a, b);
        return -(a - m) + std::log(std::exp(a - m) + std::exp(b - m));
    };
    const double rows = (ce2(90, 10) + ce2(80, 20)) / 2.0;
    const double cols = (ce2(90, 20) + ce2(80, 10)) / 2.0;
    CHECK(bidirectional_ce(s) == doctest::Approx(0.5 * (rows + cols)).epsilon(1e-12));

    CHECK_THROWS_AS(bidirectional_ce(matrix_of({1, 2, 3, 4, 5, 6}, 1.0)), std::invalid_argument);
}

TEST_CASE("bidirectional_ce invariances") {
    Rng rng(303);
    std::vector<double> v(16);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    const double base = bidirectional_ce(matrix_of(v, 50.0));
    CHECK(base >= 0.0);

    // Additive shift invariance.
    std::vector<double> shifted = v;
    for (double& x : shifted) x += 0.123;
    CHECK(bidirectional_ce(matrix_of(shifted, 50.0)) == doctest::Approx(base).epsilon(1e-9));

    // Simultaneous row/column permutation invariance.
    const int n = 4;
    const int perm[4] = {2, 0, 3, 1};
    std::vector<double> permuted(16);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            permuted[static_cast<std::size_t>(i) * n + j] =
                v[static_cast<std::size_t>(perm[i]) * n + perm[j]];
    CHECK(bidirectional_ce(matrix_of(permuted, 50.0)) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("bidirectional_ce gradient matches finite differences") {
    Rng rng(305);
    for (int inst_i = 0; inst_i < 5; ++inst_i) {
        const int n = 3;
        std::vector<double> v(static_cast<std::size_t>(n) * n);
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        const SimilarityMatrix s = matrix_of(v, 10.0);
        const std::vector<double> grad = bidirectional_ce_backward(s);
        auto f = [&](const std::vector<double>& vv) {
            SimilarityMatrix s2 = s;
            s2.values = vv;
            return bidirectional_ce(s2);
        };
        CHECK(gradient_check(f, grad, v, 1e-3, 64, inst_i).max_rel_err < 1e-3);
    }
}

TEST_CASE("guidance_loss exclusion rules and separable batch") {
    const EncoderBackend backend = EncoderBackend::mock(53);
    Rng rng(307);
    const int n = 4;
    std::vector<Image> imgs;
    std::vector<Description> contents, contexts;
    const char* cats[4] = {"person", "car", "dog", "tree"};
    for (int i = 0; i < n; ++i) {
        imgs.push_back(synthetic_lowlight(rng, 32, 32, 0.05));
        contents.push_back(build_description({inst(cats[i])}, DescriptionKind::content));
        contexts.push_back(build_description({inst(cats[(i + 1) % n])}, DescriptionKind::context));
    }
    ContentContextHeads heads;

    // All content descriptions empty: content term drops to zero.
    std::vector<Description> empty_contents(n, build_description({}, DescriptionKind::content));
    const GuidanceResult r1 =
        guidance_loss(imgs, empty_contents, contexts, backend, heads);
    CHECK(r1.content_loss == 0.0);
    CHECK(r1.content_degenerate);
    CHECK_FALSE(r1.context_degenerate);
    CHECK(r1.context_loss > 0.0);

    // Identical images and identical descriptions: ln N in both directions.
    std::vector<Image> same_imgs(n, imgs[0]);
    std::vector<Description> same_descs(n, contents[0]);
    const GuidanceResult r2 = guidance_loss(same_imgs, same_descs, same_descs, backend, heads);
    CHECK(r2.content_loss == doctest::Approx(std::log(n)).epsilon(1e-9));
    CHECK(r2.context_loss == doctest::Approx(std::log(n)).epsilon(1e-9));

    // Fewer than two non-empty members: degenerate, contributes zero.
    std::vector<Description> single = empty_contents;
    single[0] = contents[0];
    const GuidanceResult r3 = guidance_loss(imgs, single, contexts, backend, heads);
    CHECK(r3.content_loss == 0.0);
    CHECK(r3.content_degenerate);

    // A head fine-tuned to align image i with description i scores below ln N.
    std::vector<LabeledFeature> data;
    std::vector<std::vector<double>> class_features;
    for (int i = 0; i < n; ++i) {
        class_features.push_back(backend.text_feature(contents[i].text));
        LabeledFeature lf;
        lf.feature = backend.image_feature(imgs[i]);
        lf.class_id = i;
        data.push_back(std::move(lf));
    }
    FineTuneConfig ftc;
    ftc.steps = 250;
    ftc.learning_rate = 3e-3;
    ftc.batch_size = 4;
    ftc.seed = 11;
    heads.content = fine_tune_projection(ProjectionHead::identity(), data, class_features,
                                         GuidanceTask::content, ftc);
    const GuidanceResult r4 = guidance_loss(imgs, contents, contents, backend, heads);
    CHECK(r4.content_loss < std::log(n));
}

TEST_CASE("guidance_loss_with_grad matches values and finite differences") {
    const EncoderBackend backend = EncoderBackend::mock(59);
    Rng rng(311);
    const int n = 3;
    std::vector<Image> imgs;
    std::vector<Description> contents, contexts;
    const char* cats[3] = {"person", "car", "dog"};
    for (int i = 0; i < n; ++i) {
        imgs.push_back(random_image(rng, 12, 12, 0.1, 0.9));
        contents.push_back(build_description({inst(cats[i])}, DescriptionKind::content));
        contexts.push_back(build_description({}, DescriptionKind::context));
    }
    ContentContextHeads heads;
    std::vector<Image> grads;
    const GuidanceResult r = guidance_loss_with_grad(imgs, contents, contexts, backend, heads,
                                                     1.0, 1.0, grads);
    const GuidanceResult r_plain = guidance_loss(imgs, contents, contexts, backend, heads);
    CHECK(r.content_loss == doctest::Approx(r_plain.content_loss).epsilon(1e-12));
    CHECK(r.context_degenerate);
    REQUIRE(grads.size() == 3);

    // FD against the content loss w.r.t. image 0 pixels.
    auto f = [&](const std::vector<double>& iv) {
        std::vector<Image> im2 = imgs;
        im2[0].data = iv;
        return guidance_loss(im2, contents, contexts, backend, heads).content_loss;
    };
    CHECK(gradient_check(f, grads[0].data, imgs[0].data, 1e-3, 64, 12).max_rel_err < 1e-3);
}
