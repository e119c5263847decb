#include "doctest.h"
#include "oracles.hpp"
#include "osad/gradcheck.hpp"
#include "suites.hpp"

using namespace osad;

TEST_SUITE("tensor-core") {
    TEST_CASE("tensor construction and shape errors") {
        Tensor<float> t({2, 3}, 1.5f);
        CHECK(t.size() == 6);
        CHECK(t.at(1, 2) == 1.5f);
        CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
        CHECK_THROWS_AS(t.item(), DimensionError);
        CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
        CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    }

    TEST_CASE("matmul identity and oracle") {
        std::mt19937_64 rng(1);
        auto a = oracle::random_tensor({3, 4}, rng);
        Tensor<double> eye({4, 4});
        for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1;
        CHECK(kernels::matmul(a, eye) == a);
        auto b = oracle::random_tensor({4, 5}, rng);
        const oracle::Vec av(a.data().begin(), a.data().end()), bv(b.data().begin(), b.data().end());
        CHECK(oracle::max_abs_diff(kernels::matmul(a, b), oracle::mat_mul(av, bv, 3, 4, 5)) < 1e-12);
        CHECK_THROWS_AS(kernels::matmul(a, a), DimensionError);
    }

    TEST_CASE("softmax rows sum to one and survive large logits") {
        Tensor<double> x({2, 3}, std::vector<double>{1000, 1001, 1002, -5, 0, 5});
        auto s = kernels::softmax(x, 1);
        for (std::size_t r = 0; r < 2; ++r) CHECK(s.at(r, 0) + s.at(r, 1) + s.at(r, 2) == doctest::Approx(1).epsilon(1e-12));
        CHECK(std::isfinite(s.at(0, 2)));
        Tensor<double> u({1, 4}, 2.0);
        const auto su = kernels::softmax(u, 1);
        for (auto v : su.data()) CHECK(v == doctest::Approx(0.25));
    }

    TEST_CASE("conv2d: identity kernel, oracle, shape errors") {
        std::mt19937_64 rng(2);
        auto x = oracle::random_tensor({3, 5, 4}, rng);
        Tensor<double> eye({3, 3, 1, 1});
        for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
        CHECK(kernels::conv2d<double>(x, eye, nullptr) == x);

        auto w = oracle::random_tensor({2, 3, 3, 3}, rng);
        auto b = oracle::random_tensor({2}, rng);
        auto ref = oracle::conv(oracle::from_tensor(x), w, &b);
        CHECK(oracle::max_abs_diff(kernels::conv2d(x, w, &b), ref.v) < 1e-12);
        CHECK_THROWS_AS(kernels::conv2d<double>(x, oracle::random_tensor({2, 2, 3, 3}, rng), nullptr), DimensionError);
    }

    TEST_CASE("bilinear resize against oracle, identity at equal size") {
        std::mt19937_64 rng(3);
        auto x = oracle::random_tensor({2, 3, 5}, rng);
        CHECK(kernels::resize_bilinear(x, 3, 5) == x);
        for (auto [oh, ow] : {std::pair{6, 10}, {7, 3}, {1, 1}, {12, 12}})
            CHECK(oracle::max_abs_diff(kernels::resize_bilinear(x, oh, ow), oracle::resize(oracle::from_tensor(x), oh, ow).v) <
                  1e-12);
    }

    TEST_CASE("global max pool: scan oracle and first-occurrence routing") {
        std::mt19937_64 rng(4);
        auto x = oracle::random_tensor({4, 3, 3}, rng);
        CHECK(oracle::max_abs_diff(kernels::global_max_pool(x), oracle::gmp(oracle::from_tensor(x))) == 0);

        Tape<double> tape;
        auto v = tape.leaf(Tensor<double>({1, 2, 2}, std::vector<double>{1, 3, 3, 0}));
        tape.backward(sum(global_max_pool(v)));
        CHECK(v.grad() == Tensor<double>({1, 2, 2}, std::vector<double>{0, 1, 0, 0}));
        // A single position is the identity on channels.
        auto y = oracle::random_tensor({5, 1, 1}, rng);
        CHECK(kernels::global_max_pool(y).data()[3] == y[3]);
    }

    TEST_CASE("backward preconditions") {
        Tape<double> tape;
        auto a = tape.leaf(Tensor<double>({2}, 1.0));
        CHECK_THROWS_AS(tape.backward(a), AutogradError);
        auto c = tape.constant(Tensor<double>::scalar(2.0));
        CHECK_THROWS_AS(tape.backward(c), AutogradError);
        auto s = sum(a * a);
        tape.backward(s);
        CHECK(a.grad() == Tensor<double>({2}, 2.0));
        CHECK_THROWS_AS(tape.backward(s), AutogradError);
        tape.reset_grads();
        tape.backward(s);
        CHECK(a.grad() == Tensor<double>({2}, 2.0));
    }

    TEST_CASE("gradient accumulates over shared subexpressions") {
        Tape<double> tape;
        auto x = tape.leaf(Tensor<double>::scalar(3.0));
        auto y = x * x + x;  // dy/dx = 2x + 1
        tape.backward(y);
        CHECK(x.grad().item() == doctest::Approx(7.0));
    }

    TEST_CASE("parameters bind once per tape") {
        Tensor<double> w({2}, 0.5);
        Tape<double> tape;
        auto a = tape.parameter(w), b = tape.parameter(w);
        CHECK(a.id() == b.id());
        tape.backward(sum(a * b));
        CHECK((*tape.parameter_grad(w))[0] == doctest::Approx(1.0));
        Tensor<double> other({1});
        CHECK(tape.parameter_grad(other) == nullptr);
    }

    TEST_CASE("small closed-form cases") {
        Tensor<double> m({2, 2}, std::vector<double>{1, 2, 3, 4});
        CHECK(kernels::matmul(Tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1}), m) == m);
        Tensor<double> sel({1, 2}, std::vector<double>{1, 0});
        CHECK(kernels::matmul(sel, Tensor<double>({2, 1}, std::vector<double>{7, 9})).item() == 7);
        const auto s3 = kernels::softmax(Tensor<double>({1, 3}), 1);
        for (auto v : s3.data()) CHECK(v == doctest::Approx(1.0 / 3));
        auto big = kernels::softmax(Tensor<double>({1, 2}, std::vector<double>{1000, 0}), 1);
        CHECK(big[0] == doctest::Approx(1));
        CHECK(big[1] < 1e-300);

        std::mt19937_64 rng(5);
        auto v5 = oracle::random_tensor({1, 5}, rng);
        const oracle::Vec vv(v5.data().begin(), v5.data().end());
        CHECK(oracle::max_abs_diff(kernels::softmax(v5, 1), oracle::row_softmax(vv, 1, 5)) < 1e-9);

        auto x = oracle::random_tensor({2, 5, 5}, rng);
        Tensor<double> delta({2, 2, 3, 3});
        delta[((0 * 2 + 0) * 3 + 1) * 3 + 1] = 1;
        delta[((1 * 2 + 1) * 3 + 1) * 3 + 1] = 1;
        CHECK(kernels::conv2d<double>(x, delta, nullptr) == x);

        auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
        CHECK(oracle::max_abs_diff(kernels::conv2d<double>(x, w, nullptr), oracle::conv(oracle::from_tensor(x), w, nullptr).v) <
              1e-10);

        CHECK(kernels::global_max_pool(Tensor<double>({2, 2, 2}, 0.75)) == Tensor<double>({2}, 0.75));
    }

    TEST_CASE("bilinear upsample by two") {
        CHECK(kernels::resize_bilinear(Tensor<double>({1, 3, 3}, 0.4), 6, 6) == Tensor<double>({1, 6, 6}, 0.4));
        CHECK(kernels::resize_bilinear(Tensor<double>({1, 1, 1}, 2.5), 2, 2) == Tensor<double>({1, 2, 2}, 2.5));
        // Ramp [0 1; 2 3]: output centres sit at source coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
        Tensor<double> ramp({1, 2, 2}, std::vector<double>{0, 1, 2, 3});
        auto up = kernels::resize_bilinear(ramp, 4, 4);
        const double c[4] = {0, 0.25, 0.75, 1};
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t q = 0; q < 4; ++q) CHECK(up.at(0, y, q) == doctest::Approx(2 * c[y] + c[q]).epsilon(1e-14));
    }

    TEST_CASE("conv then subsample2 equals a stride-2 convolution") {
        std::mt19937_64 rng(8);
        const auto x = oracle::random_tensor({2, 6, 4}, rng);
        const auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
        const auto b = oracle::random_tensor({3}, rng);
        Tape<double> tape;
        const auto y = subsample2(conv2d(tape.constant(x), tape.constant(w), tape.constant(b)));
        CHECK(y.shape() == Shape{3, 3, 2});
        CHECK(oracle::max_abs_diff(y.value(), oracle::conv(oracle::from_tensor(x), w, &b, 2).v) < 1e-12);
        CHECK_THROWS_AS(subsample2(tape.constant(Tensor<double>({1, 3, 4}))), DimensionError);
    }

    TEST_CASE("analytic gradients") {
        Tape<double> tape;
        auto x = tape.leaf(Tensor<double>({3}, std::vector<double>{1, -2, 0.5}));
        tape.backward(sum(x * x));
        CHECK(x.grad() == Tensor<double>({3}, std::vector<double>{2, -4, 1}));

        Tape<double> t2;
        auto z = t2.leaf(Tensor<double>({1, 3}, std::vector<double>{0.3, -1.0, 2.0}));
        auto s = softmax(z, 1);
        t2.backward(crop(reshape(s, {1, 1, 3}), 0, 1, 0, 1));
        const auto& sv = s.value();
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(z.grad()[j] == doctest::Approx(sv[0] * ((j == 0 ? 1 : 0) - sv[j])).epsilon(1e-12));

        std::mt19937_64 rng(6);
        auto r = gradcheck(
            [](Tape<double>&, const std::vector<Var<double>>& v) {
                auto c = conv2d(v[0], v[1]);
                return sum(softmax(reshape(c, {1, c.value().size()}), 1) * reshape(c, {1, c.value().size()}));
            },
            {oracle::random_tensor({2, 3, 3}, rng), oracle::random_tensor({2, 2, 3, 3}, rng)});
        CHECK(r.max_rel_error < 1e-4);
    }

    TEST_CASE("finite-difference suite on every operation and module") {
        for (std::uint64_t seed : {1u, 2u}) {
            for (const auto& c : suites::gradient_suite(seed)) {
                INFO(c.name << " seed " << seed << " rel err " << c.value);
                CHECK(c.pass);
            }
        }
    }
}
