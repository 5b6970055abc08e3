#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "mpa/common.hpp"
#include "mpa/tensor.hpp"
#include "support/gradcheck.hpp"

using mpa::Tensor;
using mpa::testsupport::check_gradients;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::uint64_t seed, bool requires_grad,
                             double lo = -1.0, double hi = 1.0) {
    mpa::SplitMix rng(seed);
    std::int64_t n = 1;
    for (const int d : shape) {
        n *= d;
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) {
        v = rng.uniform(lo, hi);
    }
    return Tensor<double>::from_data(std::move(data), std::move(shape), requires_grad);
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    auto x = Tensor<double>::from_data({1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 3, 3}, false);
    auto w = Tensor<double>::from_data({1.0}, {1, 1, 1, 1}, false);
    auto b = Tensor<double>::zeros({1}, false);
    auto y = mpa::conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == std::vector<int>{1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(y.data()[i] == x.data()[i]);
    }
}

TEST_CASE("conv2d matches the hand-computed dot product") {
    auto x = Tensor<double>::from_data({1, 2, 3, 4}, {1, 2, 2}, false);
    auto w = Tensor<double>::from_data({1, 0, 0, 1}, {1, 1, 2, 2}, false);
    auto b = Tensor<double>::zeros({1}, false);
    auto y = mpa::conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 1});
    CHECK(y.data()[0] == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("conv2d output shape follows the stride arithmetic") {
    auto x = random_tensor({2, 7, 9}, 1, false);
    auto w = random_tensor({3, 2, 3, 3}, 2, false);
    auto b = Tensor<double>::zeros({3}, false);
    auto y = mpa::conv2d(x, w, b, 2, 1);
    CHECK(y.shape() == std::vector<int>{3, (7 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1});
}

TEST_CASE("conv2d rejects mismatched channels and bad geometry") {
    auto x = random_tensor({2, 5, 5}, 3, false);
    auto w = random_tensor({3, 4, 3, 3}, 4, false);
    auto b = Tensor<double>::zeros({3}, false);
    CHECK_THROWS_AS(mpa::conv2d(x, w, b, 1, 0), std::invalid_argument);

    auto w_big = random_tensor({3, 2, 7, 7}, 5, false);
    CHECK_THROWS_AS(mpa::conv2d(x, w_big, b, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(mpa::conv2d(x, random_tensor({3, 2, 3, 3}, 6, false), b, 0, 0),
                    std::invalid_argument);
}

TEST_CASE("conv2d gradients match central finite differences") {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        auto x = random_tensor({4, 5, 5}, 10 + seed, true);
        auto w = random_tensor({3, 4, 3, 3}, 20 + seed, true);
        auto b = random_tensor({3}, 30 + seed, true);
        const int stride = seed % 2 == 0 ? 1 : 2;
        const int pad = seed % 2 == 0 ? 0 : 1;
        auto make_loss = [&]() { return mpa::sum(mpa::conv2d(x, w, b, stride, pad)); };
        auto res = check_gradients(make_loss, {x, w, b});
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("relu forward values") {
    auto x = Tensor<double>::from_data({-1, 0, 2}, {3}, false);
    auto y = mpa::relu(x);
    CHECK(y.data() == std::vector<double>{0, 0, 2});
}

TEST_CASE("relu on all-negative input gives zero output and zero gradient") {
    auto x = random_tensor({2, 3, 3}, 7, true, -2.0, -0.5);
    auto y = mpa::relu(x);
    for (const double v : y.data()) {
        CHECK(v == 0.0);
    }
    mpa::backward(mpa::sum(y));
    for (const double g : x.grad()) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("relu gradients away from zero match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = random_tensor({3, 4}, 100 + seed, true);
        // keep samples away from the kink
        for (auto& v : x.mutable_data()) {
            if (std::fabs(v) < 0.1) {
                v = v < 0 ? v - 0.1 : v + 0.1;
            }
        }
        auto make_loss = [&]() { return mpa::sum(mpa::mul(mpa::relu(x), x)); };
        auto res = check_gradients(make_loss, {x});
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("cosine_map self-similarity and antiparallel cases") {
    std::vector<double> proto{0.3, -1.2, 0.7};
    std::vector<double> f(3 * 4);
    for (int c = 0; c < 3; ++c) {
        for (int p = 0; p < 4; ++p) {
            f[static_cast<std::size_t>(c) * 4 + p] = proto[static_cast<std::size_t>(c)];
        }
    }
    auto features = Tensor<double>::from_data(f, {3, 2, 2}, false);
    auto prototype = Tensor<double>::from_data(proto, {3}, false);
    auto sim = mpa::cosine_map(features, prototype);
    for (const double v : sim.data()) {
        CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }

    for (auto& v : f) {
        v = -v;
    }
    auto anti = mpa::cosine_map(Tensor<double>::from_data(f, {3, 2, 2}, false), prototype);
    for (const double v : anti.data()) {
        CHECK(v == doctest::Approx(-1.0).epsilon(1e-12));
    }
}

TEST_CASE("cosine_map matches the per-pixel scalar oracle") {
    auto features = random_tensor({4, 3, 3}, 41, false);
    auto prototype = random_tensor({4}, 42, false);
    auto sim = mpa::cosine_map(features, prototype);
    const int pixels = 9;
    for (int p = 0; p < pixels; ++p) {
        double dot = 0.0, fn = 0.0, pn = 0.0;
        for (int c = 0; c < 4; ++c) {
            const double fv = features.data()[static_cast<std::size_t>(c) * pixels + p];
            dot += fv * prototype.data()[static_cast<std::size_t>(c)];
            fn += fv * fv;
            pn += prototype.data()[static_cast<std::size_t>(c)] *
                  prototype.data()[static_cast<std::size_t>(c)];
        }
        const double expect = dot / (std::max(std::sqrt(fn), 1e-8) * std::max(std::sqrt(pn), 1e-8));
        CHECK(std::fabs(sim.data()[static_cast<std::size_t>(p)] - expect) < 1e-10);
    }
}

TEST_CASE("cosine_map outputs stay in [-1, 1] and channel mismatch throws") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto sim = mpa::cosine_map(random_tensor({5, 4, 4}, 300 + seed, false),
                                   random_tensor({5}, 400 + seed, false));
        for (const double v : sim.data()) {
            CHECK(v >= -1.0 - 1e-9);
            CHECK(v <= 1.0 + 1e-9);
        }
    }
    CHECK_THROWS_AS(mpa::cosine_map(random_tensor({5, 4, 4}, 1, false),
                                    random_tensor({4}, 2, false)),
                    std::invalid_argument);
}

TEST_CASE("cosine_map gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto features = random_tensor({4, 3, 3}, 500 + seed, true);
        auto prototype = random_tensor({4}, 600 + seed, true);
        auto weights = random_tensor({3, 3}, 700 + seed, false);
        auto make_loss = [&]() {
            return mpa::sum(mpa::mul(mpa::cosine_map(features, prototype), weights));
        };
        auto res = check_gradients(make_loss, {features, prototype});
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("fgbg_softmax symmetry, logistic identity and channel sum") {
    auto fg = random_tensor({3, 3}, 51, false);
    auto equal = mpa::fgbg_softmax(fg, fg, 7.0);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(equal.data()[i] == doctest::Approx(0.5).epsilon(1e-15));
    }

    auto bg = random_tensor({3, 3}, 52, false);
    const double temperature = 3.5;
    auto probs = mpa::fgbg_softmax(fg, bg, temperature);
    for (std::size_t i = 0; i < 9; ++i) {
        const double d = fg.data()[i] - bg.data()[i];
        const double expect = 1.0 / (1.0 + std::exp(-temperature * d));
        CHECK(probs.data()[i] == doctest::Approx(expect).epsilon(1e-12));
        CHECK(probs.data()[i] + probs.data()[9 + i] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fgbg_softmax saturated value matches the scalar logistic oracle") {
    auto fg = Tensor<double>::from_data({0.9}, {1, 1}, false);
    auto bg = Tensor<double>::from_data({0.1}, {1, 1}, false);
    auto probs = mpa::fgbg_softmax(fg, bg, 20.0);
    CHECK(probs.data()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-16.0))).epsilon(1e-12));
}

TEST_CASE("fgbg_softmax gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto fg = random_tensor({3, 3}, 800 + seed, true);
        auto bg = random_tensor({3, 3}, 900 + seed, true);
        auto wfg = random_tensor({3, 3}, 1000 + seed, false);
        auto wbg = random_tensor({3, 3}, 1100 + seed, false);
        auto make_loss = [&]() {
            auto probs = mpa::fgbg_softmax(fg, bg, 4.0);
            auto a = mpa::mul(mpa::channel(probs, 0), wfg);
            auto b = mpa::mul(mpa::channel(probs, 1), wbg);
            return mpa::sum(mpa::add(a, b));
        };
        auto res = check_gradients(make_loss, {fg, bg});
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("bce_loss analytic values") {
    auto half = Tensor<double>::full({4, 4}, 0.5, false);
    auto target = random_tensor({4, 4}, 61, false, 0.0, 1.0);
    for (auto& v : target.mutable_data()) {
        v = v > 0.5 ? 1.0 : 0.0;
    }
    CHECK(mpa::bce_loss(half, target).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    auto perfect = mpa::bce_loss(target, target);
    CHECK(perfect.item() <= -std::log(1.0 - 1e-7) + 1e-12);
}

TEST_CASE("bce_loss matches the per-pixel summation oracle") {
    auto pred = random_tensor({5, 4}, 62, false, 0.05, 0.95);
    auto target = random_tensor({5, 4}, 63, false, 0.0, 1.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        const double p = pred.data()[i];
        const double t = target.data()[i];
        acc += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    CHECK(std::fabs(mpa::bce_loss(pred, target).item() - acc / 20.0) < 1e-10);
    CHECK_THROWS_AS(mpa::bce_loss(pred, random_tensor({4, 5}, 64, false)),
                    std::invalid_argument);
}

TEST_CASE("bce_loss gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto pred = random_tensor({3, 4}, 1200 + seed, true, 0.05, 0.95);
        auto target = random_tensor({3, 4}, 1300 + seed, false, 0.0, 1.0);
        auto make_loss = [&]() { return mpa::bce_loss(pred, target); };
        auto res = check_gradients(make_loss, {pred});
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("backward populates simple analytic gradients") {
    auto x = random_tensor({2, 3}, 71, true);
    mpa::backward(mpa::sum(x));
    for (const double g : x.grad()) {
        CHECK(g == 1.0);
    }

    auto y = random_tensor({2, 3}, 72, true);
    mpa::backward(mpa::sum(mpa::mul(y, y)));
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(y.grad()[i] == doctest::Approx(2.0 * y.data()[i]).epsilon(1e-14));
    }
}

TEST_CASE("backward rejects non-scalar losses and accumulates across calls") {
    auto x = random_tensor({2, 2}, 73, true);
    CHECK_THROWS_AS(mpa::backward(mpa::mul(x, x)), std::invalid_argument);

    auto loss = mpa::sum(mpa::mul(x, x));
    mpa::backward(loss, /*retain_graph=*/true);
    const std::vector<double> once = x.grad();
    mpa::backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-14));
    }
}

TEST_CASE("backward frees the graph unless retained") {
    auto x = random_tensor({2, 2}, 74, true);
    auto loss = mpa::sum(x);
    mpa::backward(loss);
    CHECK(loss.node()->inputs.empty());

    auto loss2 = mpa::sum(x);
    mpa::backward(loss2, /*retain_graph=*/true);
    CHECK(loss2.node()->inputs.size() == 1);
}

TEST_CASE("masked_average weighted-sum oracle and gradients") {
    auto features = random_tensor({4, 3, 3}, 81, false);
    auto weights = random_tensor({3, 3}, 82, false, 0.0, 1.0);
    auto proto = mpa::masked_average(features, weights);
    double wsum = 0.0;
    for (const double v : weights.data()) {
        wsum += v;
    }
    for (int c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (int p = 0; p < 9; ++p) {
            acc += features.data()[static_cast<std::size_t>(c) * 9 + p] * weights.data()[static_cast<std::size_t>(p)];
        }
        CHECK(std::fabs(proto.data()[static_cast<std::size_t>(c)] - acc / wsum) < 1e-10);
    }

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto f = random_tensor({3, 2, 3}, 1400 + seed, true);
        auto m = random_tensor({2, 3}, 1500 + seed, true, 0.05, 1.0);
        auto coeff = random_tensor({3}, 1600 + seed, false);
        auto make_loss = [&]() { return mpa::sum(mpa::mul(mpa::masked_average(f, m), coeff)); };
        auto res = check_gradients(make_loss, {f, m});
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("masked_keep gates values and gradients") {
    auto x = random_tensor({2, 3}, 91, true);
    std::vector<std::uint8_t> keep{1, 0, 1, 0, 1, 0};
    auto y = mpa::masked_keep(x, keep);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(y.data()[i] == (keep[i] ? x.data()[i] : 0.0));
    }
    mpa::backward(mpa::sum(y));
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(x.grad()[i] == (keep[i] ? 1.0 : 0.0));
    }
}

TEST_CASE("weighted_sum composes scalars in fixed order with exact coefficients") {
    auto a = Tensor<double>::scalar(1.0, true);
    auto b = Tensor<double>::scalar(2.0, true);
    auto c = Tensor<double>::scalar(3.0, true);
    auto total = mpa::weighted_sum<double>({a, b, c}, {0.2, 0.1, 0.4});
    CHECK(total.item() == doctest::Approx(0.2 + 0.2 + 1.2).epsilon(1e-15));
    mpa::backward(total);
    CHECK(a.grad()[0] == 0.2);
    CHECK(b.grad()[0] == 0.1);
    CHECK(c.grad()[0] == 0.4);
}

TEST_CASE("downsample_mask area pooling") {
    auto ones = Tensor<double>::full({6, 6}, 1.0, false);
    for (const auto [th, tw] : {std::pair{1, 1}, {2, 3}, {6, 6}}) {
        auto down = mpa::downsample_mask(ones, th, tw);
        for (const double v : down.data()) {
            CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
        }
    }

    auto half = mpa::downsample_mask(Tensor<double>::from_data({1, 1, 0, 0}, {2, 2}, false), 1, 1);
    CHECK(half.data()[0] == doctest::Approx(0.5).epsilon(1e-15));

    std::vector<double> checker(16);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            checker[static_cast<std::size_t>(y) * 4 + x] = (x + y) % 2;
        }
    }
    auto down = mpa::downsample_mask(Tensor<double>::from_data(checker, {4, 4}, false), 2, 2);
    for (const double v : down.data()) {
        CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    }

    CHECK_THROWS_AS(mpa::downsample_mask(ones, 0, 2), std::invalid_argument);
}

TEST_CASE("graph topological order is consistent") {
    auto x = random_tensor({2, 2}, 95, true);
    auto y = random_tensor({2, 2}, 96, true);
    auto z = mpa::add(mpa::mul(x, y), mpa::relu(x));
    auto loss = mpa::sum(z);
    auto order = mpa::topo_order(loss);
    REQUIRE(!order.empty());
    CHECK(order.back() == loss.node().get());
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (const auto& in : order[i]->inputs) {
            if (!in->requires_grad) {
                continue;
            }
            bool found_before = false;
            for (std::size_t j = 0; j < i; ++j) {
                found_before = found_before || order[j] == in.get();
            }
            CHECK(found_before);
        }
    }
}

TEST_CASE("forward recomputation is bit-identical") {
    auto x = random_tensor({3, 6, 6}, 97, true);
    auto w = random_tensor({2, 3, 3, 3}, 98, true);
    auto b = random_tensor({2}, 99, true);
    auto run = [&]() {
        auto f = mpa::relu(mpa::conv2d(x, w, b, 2, 1));
        auto p = mpa::masked_average(f, Tensor<double>::full({3, 3}, 0.5));
        return mpa::fgbg_softmax(mpa::cosine_map(f, p), mpa::cosine_map(f, p), 10.0);
    };
    auto first = run();
    auto second = run();
    REQUIRE(first.data().size() == second.data().size());
    for (std::size_t i = 0; i < first.data().size(); ++i) {
        CHECK(first.data()[i] == second.data()[i]);
    }
}
