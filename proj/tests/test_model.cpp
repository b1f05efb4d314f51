#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ranklsd/io.hpp"
#include "ranklsd/model.hpp"
#include "ranklsd/rng.hpp"
#include "ranklsd/synthdata.hpp"

using namespace ranklsd;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.input_size = 16;
    cfg.levels = {16, 8};
    cfg.hidden_dim = 16;
    cfg.encoder_layers = 1;
    cfg.heads = 2;
    cfg.referring_points = 2;
    return cfg;
}

Tensor constant_image(int size, double v) {
    return Tensor({1, size, size},
                  std::vector<double>(static_cast<std::size_t>(size * size), v));
}

Tensor noise_image(int size, std::uint64_t seed) {
    Tensor img({1, size, size});
    Rng rng(seed);
    for (std::int64_t i = 0; i < img.numel(); ++i) img.data()[i] = rng.uniform(0.0, 1.0);
    return img;
}

bool same_bits(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
    return worst;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
    CHECK_NOTHROW(tiny_config().validate());
    CHECK_NOTHROW(ModelConfig{}.validate());

    auto broken = [](auto mutate) {
        ModelConfig cfg = tiny_config();
        mutate(cfg);
        return cfg;
    };
    CHECK_THROWS(broken([](ModelConfig& c) { c.levels = {}; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.levels = {16, 6}; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.levels = {16, 8, 4, 2}; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.input_size = 48; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.input_size = 8; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.input_size = 256; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.hidden_dim = 10; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.encoder_layers = 0; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.heads = 0; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.referring_points = 0; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.rotation_merge = "blend"; }).validate());
    CHECK_THROWS(broken([](ModelConfig& c) { c.endpoint_sigma_px = 0.0; }).validate());
    // the constructor validates too
    CHECK_THROWS(Model(broken([](ModelConfig& c) { c.hidden_dim = 10; }), 1));
}

TEST_CASE("forward produces the documented shapes and ranges") {
    Model model(tiny_config(), 2026);
    ModelOutput out = model.forward(noise_image(16, 5));

    REQUIRE(out.score.shape() == std::vector<int>{16, 16});
    REQUIRE(out.loc.shape() == std::vector<int>{16, 16, 4});
    REQUIRE(out.junction.size() == 2);
    REQUIRE(out.edge.size() == 2);
    CHECK(out.junction[0].shape() == std::vector<int>{16, 16});
    CHECK(out.junction[1].shape() == std::vector<int>{8, 8});
    CHECK(out.edge[0].shape() == std::vector<int>{16, 16});
    CHECK(out.edge[1].shape() == std::vector<int>{8, 8});

    auto in_unit = [](const Tensor& t) {
        for (std::int64_t i = 0; i < t.numel(); ++i)
            if (!(t.data()[i] > 0.0 && t.data()[i] < 1.0)) return false;
        return true;
    };
    CHECK(in_unit(out.score));
    CHECK(in_unit(out.junction[0]));
    CHECK(in_unit(out.edge[1]));
    for (std::int64_t i = 0; i < out.loc.numel(); ++i) CHECK(std::isfinite(out.loc.data()[i]));
}

TEST_CASE("forward handles flat and extreme images") {
    Model model(tiny_config(), 3);
    for (double v : {0.0, 1.0, 0.5}) {
        ModelOutput out = model.forward(constant_image(16, v));
        for (std::int64_t i = 0; i < out.score.numel(); ++i)
            CHECK(std::isfinite(out.score.data()[i]));
    }
}

TEST_CASE("forward rejects images that do not match the config") {
    Model model(tiny_config(), 3);
    CHECK_THROWS(model.forward(Tensor({1, 8, 8})));
    CHECK_THROWS(model.forward(Tensor({1, 16, 8})));
    CHECK_THROWS(model.forward(Tensor({3, 16, 16})));
    CHECK_THROWS(model.forward(Tensor({16, 16})));
    CHECK_THROWS(model.param("no.such.parameter"));
}

TEST_CASE("construction and forward are deterministic in the seed") {
    Model a(tiny_config(), 77);
    Model b(tiny_config(), 77);
    REQUIRE(a.params().size() == b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].name == b.params()[i].name);
        CHECK(same_bits(a.params()[i].t, b.params()[i].t));
    }
    Tensor img = noise_image(16, 9);
    CHECK(same_bits(a.forward(img).score, b.forward(img).score));
    CHECK(same_bits(a.forward(img).score, a.forward(img).score));

    Model c(tiny_config(), 78);
    bool any_differ = false;
    for (std::size_t i = 0; i < a.params().size() && !any_differ; ++i)
        any_differ = !same_bits(a.params()[i].t, c.params()[i].t);
    CHECK(any_differ);
}

TEST_CASE("rotation averaging is exact on rotation-invariant input") {
    ModelConfig plain = tiny_config();
    ModelConfig aug = tiny_config();
    aug.rotation_augment = true;

    Model ma(aug, 11);
    Model mp(plain, 11);  // same seed => identical parameters
    Tensor img = constant_image(16, 0.37);

    auto fa = ma.merged_backbone(img);
    auto fp = mp.backbone_forward(img);
    REQUIRE(fa.size() == fp.size());
    for (std::size_t l = 0; l < fa.size(); ++l) CHECK(max_abs_diff(fa[l], fp[l]) <= 1e-12);

    // with the flag off, merged_backbone is the plain backbone
    auto fm = mp.merged_backbone(img);
    for (std::size_t l = 0; l < fm.size(); ++l) CHECK(same_bits(fm[l], fp[l]));
}

TEST_CASE("optimizer step with no gradients is a pure weight-decay shrink") {
    Model model(tiny_config(), 4);
    std::vector<double> before;
    for (const auto& p : model.params())
        for (std::int64_t i = 0; i < p.t.numel(); ++i) before.push_back(p.t.data()[i]);

    AdamW opt(0.1, 0.01);
    opt.step(model.params(), 1.0);

    std::size_t k = 0;
    const double shrink = 1.0 - 0.1 * 0.01;
    for (const auto& p : model.params())
        for (std::int64_t i = 0; i < p.t.numel(); ++i, ++k) {
            CHECK(p.t.data()[i] ==
                  doctest::Approx(before[k] * shrink).epsilon(1e-12).scale(1.0));
        }
}

TEST_CASE("checkpoints round-trip the model bit-for-bit") {
    RunConfig rc;
    rc.model = tiny_config();
    rc.scene.image_size = 16;
    rc.scene.max_segments = 2;
    Model model(rc.model, 123);
    AdamW opt(rc.train.lr, rc.train.weight_decay);

    // take a couple of real steps so the moments are non-trivial
    TrainSettings ts;
    Sample s = generate(rc.scene, 0);
    train_step(model, s, ts, opt, 1.0, 10);
    train_step(model, s, ts, opt, 1.0, 11);

    const std::string path = "ckpt_roundtrip_test.bin";
    save_checkpoint(path, rc, model, &opt, 5);

    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.step == 5);
    CHECK(ck.has_opt);
    CHECK(ck.opt_t == 2);
    CHECK(to_text(ck.config) == to_text(rc));

    Model restored = model_from_checkpoint(ck);
    Tensor img = noise_image(16, 21);
    ModelOutput a = model.forward(img);
    ModelOutput b = restored.forward(img);
    CHECK(same_bits(a.score, b.score));
    CHECK(same_bits(a.loc, b.loc));
    CHECK(same_bits(a.edge[1], b.edge[1]));

    // optimizer moments restore and continue identically
    AdamW opt2(rc.train.lr, rc.train.weight_decay);
    apply_checkpoint(ck, restored, &opt2);
    CHECK(opt2.t == opt.t);
    train_step(model, s, ts, opt, 1.0, 12);
    train_step(restored, s, ts, opt2, 1.0, 12);
    CHECK(same_bits(model.forward(img).score, restored.forward(img).score));

    // a model built from a different config cannot accept the tensors
    ModelConfig other = tiny_config();
    other.hidden_dim = 8;
    Model wrong(other, 123);
    CHECK_THROWS(apply_checkpoint(ck, wrong, nullptr));

    std::remove(path.c_str());
    CHECK_THROWS(load_checkpoint(path));
}

TEST_CASE("a few steps on one scene reduce the objective") {
    SceneSpec spec;
    spec.image_size = 16;
    spec.min_segments = 1;
    spec.max_segments = 1;
    spec.noise_sigma = 0.0;
    Sample s = generate(spec, 0);
    REQUIRE(s.gts.size() == 1);

    Model model(tiny_config(), 8);
    AdamW opt(5e-3, 1e-4);
    TrainSettings ts;

    std::vector<double> total;
    for (int step = 0; step < 60; ++step) {
        TrainStepStats st = train_step(model, s, ts, opt, 1.0, derive_seed(99, step));
        CHECK(std::isfinite(st.total));
        CHECK(st.positives >= 1);
        total.push_back(st.total);
    }
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += total[static_cast<std::size_t>(i)];
        tail += total[total.size() - 10 + static_cast<std::size_t>(i)];
    }
    CHECK(tail < 0.9 * head);
}

TEST_CASE("training trajectories are bitwise reproducible") {
    SceneSpec spec;
    spec.image_size = 16;
    spec.max_segments = 3;

    auto run = [&] {
        Model model(tiny_config(), 55);
        AdamW opt(1e-3, 1e-4);
        TrainSettings ts;
        std::vector<double> trace;
        for (int step = 0; step < 20; ++step) {
            Sample s = generate(spec, step % 4);
            trace.push_back(train_step(model, s, ts, opt, 1.0, derive_seed(1, step)).total);
        }
        return trace;
    };
    auto t1 = run();
    auto t2 = run();
    REQUIRE(t1.size() == t2.size());
    for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i] == t2[i]);
}
