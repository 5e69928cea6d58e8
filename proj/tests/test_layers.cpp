#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "sto/common.hpp"
#include "sto/layers.hpp"
#include "sto/tensor.hpp"

using namespace sto;
using namespace sto::ad;
using namespace sto::nn;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& d : t.data) d = scale * rng.next_gaussian();
    return t;
}

std::vector<Param> params_of(Module& m) {
    std::vector<Param> ps;
    m.collect_params("m", ps);
    return ps;
}

}  // namespace

TEST_CASE("he_uniform_fill is deterministic and respects the fan-in bound") {
    std::vector<double> a(1000), b(1000);
    Rng r1(71), r2(71);
    he_uniform_fill(a, 50, r1);
    he_uniform_fill(b, 50, r2);
    CHECK(a == b);
    const double limit = std::sqrt(6.0 / 50.0);
    double lo = 0.0, hi = 0.0;
    for (double v : a) {
        CHECK(std::abs(v) <= limit);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < -0.8 * limit);  // actually spans the range
    CHECK(hi > 0.8 * limit);
}

TEST_CASE("dense layer: shapes, flops, and finite-difference gradients") {
    Rng rng(72);
    Dense layer(5, 3, rng);
    CHECK(layer.out_shape({7, 5}) == std::vector<int64_t>{7, 3});
    CHECK(layer.flops({7, 5}) == 7 * (2 * 5 * 3 + 3));
    CHECK_THROWS_AS(layer.out_shape({7, 4}), ShapeMismatch);

    Tensor x = random_tensor(rng, {4, 5});
    std::vector<Param> ps = params_of(layer);
    REQUIRE(ps.size() == 2);
    CHECK(ps[0].name == "m.weight");
    CHECK(ps[1].name == "m.bias");

    Ctx ctx;
    auto loss_fn = [&]() {
        Var out = sigmoid(layer.forward(constant(x), ctx));
        return bce_loss(out, Tensor({4, 3}, 1.0));
    };
    CHECK(grad_check(loss_fn, ps, rng) < 1e-4);
}

TEST_CASE("conv3d layer: geometry and gradients") {
    Rng rng(73);
    Conv3dSpec spec;
    spec.sz = spec.sy = spec.sx = 2;
    spec.pz = spec.py = spec.px = 1;
    Conv3dLayer layer(2, 3, spec, rng);
    CHECK(layer.out_shape({1, 2, 8, 8, 8}) == std::vector<int64_t>{1, 3, 4, 4, 4});
    CHECK(layer.flops({1, 2, 8, 8, 8}) == 64 * 3 * (2 * 2 * 27 + 1));

    Tensor x = random_tensor(rng, {2, 2, 5, 5, 5});
    std::vector<Param> ps = params_of(layer);
    Ctx ctx;
    auto loss_fn = [&]() {
        Var out = layer.forward(constant(x), ctx);
        return mse_loss(out, Tensor(out->value.shape, 0.0));
    };
    CHECK(grad_check(loss_fn, ps, rng) < 1e-4);
}

TEST_CASE("batchnorm3d layer: training gradients and buffer round-trip") {
    Rng rng(74);
    BatchNorm3d layer(3);
    Tensor x = random_tensor(rng, {2, 3, 3, 3, 3});
    std::vector<Param> ps = params_of(layer);
    REQUIRE(ps.size() == 2);

    Ctx train_ctx;
    train_ctx.training = true;
    auto loss_fn = [&]() {
        Var out = layer.forward(constant(x), train_ctx);
        return mse_loss(out, Tensor(out->value.shape, 0.5));
    };
    CHECK(grad_check(loss_fn, ps, rng) < 1e-4);

    std::vector<BufferRef> bufs;
    layer.collect_buffers("m", bufs);
    REQUIRE(bufs.size() == 2);
    CHECK(bufs[0].name == "m.running_mean");
    CHECK(bufs[1].name == "m.running_var");
    CHECK(layer.running_mean[0] != 0.0);  // training forward updated the buffers
}

TEST_CASE("relu, sigmoid, and pooling layers have gradient-consistent forwards") {
    Rng rng(75);
    Sequential seq;
    Conv3dSpec spec;
    auto conv = std::make_unique<Conv3dLayer>(1, 2, spec, rng);
    // Finite differences cannot cross a relu kink; a positive bias with a
    // small input scale keeps every pre-activation far from zero.
    for (double& b : conv->bias->value.data) b = 1.0;
    seq.push(std::move(conv));
    seq.push(std::make_unique<ReLU>());
    seq.push(std::make_unique<GlobalAvgPool3d>());

    Tensor x = random_tensor(rng, {2, 1, 5, 5, 5}, 0.1);
    std::vector<Param> ps = params_of(seq);
    Ctx ctx;
    auto loss_fn = [&]() {
        Var out = sigmoid(seq.forward(constant(x), ctx));
        return bce_loss(out, Tensor({2, 2}, 0.0));
    };
    CHECK(grad_check(loss_fn, ps, rng) < 1e-4);

    CHECK(seq.out_shape({2, 1, 5, 5, 5}) == std::vector<int64_t>{2, 2});
    int64_t expect_flops = seq.items[0]->flops({2, 1, 5, 5, 5}) + 2 * 2 * 27 + 2 * 2 * 27;
    CHECK(seq.flops({2, 1, 5, 5, 5}) == expect_flops);
}

TEST_CASE("residual block: projection shortcut, shapes, gradients") {
    Rng rng(76);
    BasicResBlock3d block(2, 4, 2, rng);
    CHECK(block.out_shape({1, 2, 8, 8, 8}) == std::vector<int64_t>{1, 4, 4, 4, 4});
    std::vector<Param> ps = params_of(block);
    // conv1, conv2, proj each carry weight+bias; bn1, bn2, proj_bn gamma+beta
    CHECK(ps.size() == 12);

    Tensor x = random_tensor(rng, {2, 2, 4, 4, 4});
    // shift the normalized activations away from the relu kinks so central
    // differences see a smooth function
    for (Param& p : ps)
        if (p.name.find(".beta") != std::string::npos)
            for (double& v : p.node->value.data) v = 3.0;
    Ctx ctx;
    ctx.training = true;
    auto loss_fn = [&]() {
        Var out = block.forward(constant(x), ctx);
        return mse_loss(out, Tensor(out->value.shape, 0.1));
    };
    CHECK(grad_check(loss_fn, ps, rng, 120) < 1e-4);

    // identity shortcut when nothing changes: no projection parameters
    BasicResBlock3d same(3, 3, 1, rng);
    CHECK(params_of(same).size() == 8);
    CHECK(same.out_shape({1, 3, 6, 6, 6}) == std::vector<int64_t>{1, 3, 6, 6, 6});
}

TEST_CASE("dropout: eval identity, train scaling, rng requirements") {
    Rng rng(77);
    Dropout layer(0.5);
    Tensor x = random_tensor(rng, {4, 8});

    Ctx eval_ctx;  // not training
    Var out_eval = layer.forward(constant(x), eval_ctx);
    CHECK(out_eval->value.data == x.data);

    Ctx train_ctx;
    train_ctx.training = true;
    CHECK_THROWS_AS(layer.forward(constant(x), train_ctx), InvalidConfig);

    train_ctx.rng = &rng;
    Var out_train = layer.forward(constant(x), train_ctx);
    int zeros = 0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        double v = out_train->value.data[i];
        if (v == 0.0) {
            ++zeros;
        } else {
            CHECK(v == doctest::Approx(2.0 * x.data[i]).epsilon(1e-15));  // 1/(1-p) = 2
        }
    }
    CHECK(zeros > 0);
    CHECK(zeros < static_cast<int>(x.data.size()));

    CHECK_THROWS_AS(Dropout(1.0), InvalidConfig);
    CHECK_THROWS_AS(Dropout(-0.1), InvalidConfig);
}

TEST_CASE("grad_check rejects nondeterministic loss closures") {
    Rng rng(78);
    Dense layer(3, 2, rng);
    Dropout drop(0.5);
    Tensor x = random_tensor(rng, {5, 3});
    std::vector<Param> ps = params_of(layer);
    Rng drop_rng(1);
    Ctx ctx;
    ctx.training = true;
    ctx.rng = &drop_rng;  // advances on every call -> different masks
    auto loss_fn = [&]() {
        Var out = sigmoid(drop.forward(layer.forward(constant(x), ctx), ctx));
        return bce_loss(out, Tensor({5, 2}, 1.0));
    };
    CHECK_THROWS_AS(grad_check(loss_fn, ps, rng), NonDeterministicFragment);
}

TEST_CASE("adam reproduces a hand-computed trace") {
    // single scalar parameter, fixed gradient sequence
    Var w = parameter(Tensor::scalar(1.0));
    Adam opt({{"w", w}}, 0.1, 0.9, 0.999, 1e-8);

    const std::vector<double> grads{1.0, -0.5, 2.0};
    double ref_w = 1.0, m = 0.0, v = 0.0;
    for (size_t s = 0; s < grads.size(); ++s) {
        w->grad = Tensor::scalar(grads[s]);
        opt.step();

        const double g = grads[s];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, static_cast<double>(s + 1)));
        const double vhat = v / (1.0 - std::pow(0.999, static_cast<double>(s + 1)));
        ref_w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(w->value.data[0] == doctest::Approx(ref_w).epsilon(1e-12));
        CHECK(w->grad.data.empty());  // grads cleared by step()
    }
    CHECK(opt.step_count == 3);
}

TEST_CASE("adam with zero learning rate or missing grads leaves parameters alone") {
    Var w = parameter(Tensor::from_vector({1.0, -2.0, 3.0}));
    Adam frozen({{"w", w}}, 0.0);
    w->grad = Tensor::from_vector({5.0, 5.0, 5.0});
    frozen.step();
    CHECK(w->value.data == std::vector<double>{1.0, -2.0, 3.0});

    Adam live({{"w", w}}, 0.5);
    live.step();  // no grad set: treated as zero gradient
    CHECK(w->value.data == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("checkpoints round-trip parameters and buffers") {
    Rng rng(79);
    Dense layer(4, 2, rng);
    BatchNorm3d bn(2);
    bn.running_mean = {0.25, -0.75};
    bn.running_var = {1.5, 2.5};

    std::vector<Param> ps = params_of(layer);
    std::vector<BufferRef> bufs;
    bn.collect_buffers("bn", bufs);

    std::vector<unsigned char> bytes = serialize_checkpoint("test-model", 42, 17, ps, bufs);

    // perturb everything, then restore
    std::vector<double> saved_w = layer.weight->value.data;
    for (double& v : layer.weight->value.data) v += 1.0;
    bn.running_mean = {0.0, 0.0};
    load_checkpoint_bytes(bytes, ps, bufs);
    CHECK(layer.weight->value.data == saved_w);
    CHECK(bn.running_mean == std::vector<double>{0.25, -0.75});

    SUBCASE("file round-trip") {
        const std::string path = "/tmp/sto_test_ckpt.bin";
        save_checkpoint(path, "test-model", 42, 17, ps, bufs);
        for (double& v : layer.weight->value.data) v = 0.0;
        load_checkpoint(path, ps, bufs);
        CHECK(layer.weight->value.data == saved_w);
        std::remove(path.c_str());
    }
    SUBCASE("typed failures") {
        std::vector<unsigned char> short_bytes(bytes.begin(), bytes.begin() + 4);
        CHECK_THROWS_AS(load_checkpoint_bytes(short_bytes, ps, bufs), TruncatedData);

        std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 8);
        CHECK_THROWS_AS(load_checkpoint_bytes(cut, ps, bufs), TruncatedData);

        std::vector<unsigned char> garbled = bytes;
        garbled[9] = '!';  // corrupt the JSON manifest
        CHECK_THROWS_AS(load_checkpoint_bytes(garbled, ps, bufs), MalformedHeader);

        std::vector<Param> wrong_names = ps;
        wrong_names[0].name = "elsewhere";
        CHECK_THROWS_AS(load_checkpoint_bytes(bytes, wrong_names, bufs), ShapeMismatch);

        std::vector<Param> fewer(ps.begin(), ps.begin() + 1);
        CHECK_THROWS_AS(load_checkpoint_bytes(bytes, fewer, bufs), ShapeMismatch);

        CHECK_THROWS_AS(load_checkpoint("/tmp/does_not_exist_ckpt.bin", ps, bufs), IoError);
    }
}

TEST_CASE("same seed gives identical layers, different seeds differ") {
    Rng a(80), b(80), c(81);
    Dense da(16, 8, a), db(16, 8, b), dc(16, 8, c);
    CHECK(da.weight->value.data == db.weight->value.data);
    CHECK(da.weight->value.data != dc.weight->value.data);
}
