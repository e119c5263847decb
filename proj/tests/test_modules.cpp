#include "doctest.h"
#include "pipeline_oracle.hpp"
#include "osad/episodes.hpp"
#include "suites.hpp"

#include <set>

using namespace osad;
using suites::random_conv;

TEST_SUITE("encoder") {
    TEST_CASE("pyramid strides and channel profile") {
        Rng rng(1);
        Encoder<double> enc({8, 16, 32, 64, 64}, rng);
        Tape<double> tape;
        auto pyr = enc.encode(tape.constant(Tensor<double>({3, 64, 64}, 0.5)));
        const std::size_t sizes[] = {32, 16, 8, 4, 2}, ch[] = {8, 16, 32, 64, 64};
        for (std::size_t m = 1; m <= 5; ++m) CHECK(pyr.level(m).shape() == Shape{ch[m - 1], sizes[m - 1], sizes[m - 1]});
        CHECK_THROWS_AS(enc.encode(tape.constant(Tensor<double>({3, 48, 64}))), DimensionError);
        CHECK_THROWS_AS(enc.encode(tape.constant(Tensor<double>({1, 64, 64}))), DimensionError);
    }

    TEST_CASE("zero image with zero biases gives a zero pyramid; identical images give identical pyramids") {
        Rng rng(2);
        Encoder<double> enc({4, 4, 4, 4, 4}, rng);
        for (std::size_t m = 0; m < 5; ++m) enc.stage(m).bias.fill(0);
        Tape<double> tape;
        auto pyr = enc.encode(tape.constant(Tensor<double>({3, 32, 32})));
        for (std::size_t m = 1; m <= 5; ++m)
            for (auto v : pyr.level(m).value().data()) CHECK(v == 0);

        std::mt19937_64 g(3);
        auto img = oracle::random_tensor({3, 32, 32}, g, 0, 1);
        auto a = enc.encode(tape.constant(img)), b = enc.encode(tape.constant(img));
        for (std::size_t m = 1; m <= 5; ++m) CHECK(a.level(m).value() == b.level(m).value());
    }

    TEST_CASE("encoder matches the loop oracle") {
        Rng rng(4);
        Encoder<double> enc({3, 4, 5, 6, 7}, rng);
        std::mt19937_64 g(5);
        auto img = oracle::random_tensor({3, 32, 64}, g, 0, 1);
        Tape<double> tape;
        auto pyr = enc.encode(tape.constant(img));
        auto ref = oracle::encode(enc, oracle::from_tensor(img));
        for (std::size_t m = 0; m < 5; ++m) CHECK(oracle::max_abs_diff(pyr.level(m + 1).value(), ref[m].v) < 1e-12);
    }
}

TEST_SUITE("plm") {
    TEST_CASE("extract_roi box projection") {
        std::mt19937_64 g(1);
        auto x = oracle::random_tensor({2, 4, 6}, g);
        Tape<double> tape;
        auto xv = tape.constant(x);
        CHECK(plm::extract_roi(xv, BBox{0, 0, 192, 128}, 128, 192).value() == x);

        // Box inside cell (row 1, col 2) at stride 32.
        auto tiny = plm::extract_roi(xv, BBox{70, 40, 75, 50}, 128, 192).value();
        CHECK(tiny.shape() == Shape{2, 1, 1});
        CHECK(tiny[0] == x.at(0, 1, 2));
        CHECK(tiny[1] == x.at(1, 1, 2));

        auto left = plm::extract_roi(xv, BBox{0, 0, 96, 128}, 128, 192).value();
        CHECK(left.shape() == Shape{2, 4, 3});
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t q = 0; q < 3; ++q) CHECK(left.at(c, y, q) == x.at(c, y, q));

        // Outward rounding: pixels 33..65 touch cells 1 and 2.
        CHECK(plm::extract_roi(xv, BBox{33, 0, 65, 10}, 128, 192).value().shape() == Shape{2, 1, 2});
        CHECK_THROWS(plm::extract_roi(xv, BBox{10, 0, 5, 10}, 128, 192));
        CHECK_THROWS(plm::extract_roi(xv, BBox{0, 0, 200, 10}, 128, 192));
    }

    TEST_CASE("guided activation") {
        std::mt19937_64 g(2);
        auto x = oracle::random_tensor({3, 2, 2}, g);
        Tape<double> tape;
        auto m0 = plm::guided_activation(tape.constant(Tensor<double>({3})), tape.constant(x)).value();
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(m0[i] == doctest::Approx(x[i] / 4).epsilon(1e-14));

        auto single = oracle::random_tensor({3, 1, 1}, g);
        auto f = oracle::random_tensor({3}, g);
        CHECK(oracle::max_abs_diff(plm::guided_activation(tape.constant(f), tape.constant(single)).value(),
                                   oracle::Vec(single.data().begin(), single.data().end())) < 1e-15);

        const oracle::Vec fv(f.data().begin(), f.data().end());
        auto ref = oracle::scale_positions(oracle::from_tensor(x), oracle::attention(fv, oracle::from_tensor(x)));
        CHECK(oracle::max_abs_diff(plm::guided_activation(tape.constant(f), tape.constant(x)).value(), ref.v) < 1e-9);

        for (int s = 0; s < 20; ++s) {
            auto big = oracle::random_tensor({4, 3, 5}, g, -30, 30);
            auto alpha = plm::spatial_attention(tape.constant(oracle::random_tensor({4}, g, -5, 5)), tape.constant(big));
            double total = 0;
            for (auto a : alpha.value().data()) total += a;
            CHECK(std::abs(total - 1) < 1e-6);
        }
    }

    TEST_CASE("interaction map") {
        std::mt19937_64 g(3);
        auto conv = random_conv(3, 1, 3, g);
        conv.bias.fill(0);
        Tape<double> tape;
        auto xh = oracle::random_tensor({3, 3, 4}, g);
        auto zero = plm::interaction_map(tape.constant(Tensor<double>({3})), tape.constant(xh), conv, 6, 6).value();
        for (auto v : zero.data()) CHECK(v == 0);

        auto full = random_conv(3, 1, 3, g);
        auto fo = oracle::random_tensor({3}, g);
        const oracle::Vec fv(fo.data().begin(), fo.data().end());
        auto m = plm::interaction_map(tape.constant(fo), tape.constant(xh), full, 3, 4).value();
        auto ref = oracle::conv_layer(oracle::scale_channels(oracle::from_tensor(xh), fv), full);
        CHECK(oracle::max_abs_diff(m, ref.v) < 1e-12);

        auto c = plm::interaction_map(tape.constant(Tensor<double>({3}, 0.7)), tape.constant(Tensor<double>({3, 5, 5}, 1.3)),
                                      full, 5, 5)
                     .value();
        for (std::size_t y = 1; y < 4; ++y)
            for (std::size_t q = 1; q < 4; ++q) CHECK(c.at(0, y, q) == doctest::Approx(c.at(0, 2, 2)).epsilon(1e-12));
    }

    TEST_CASE("purpose encoding") {
        std::mt19937_64 g(4);
        auto mh = oracle::random_tensor({3, 2, 3}, g), mo = oracle::random_tensor({3, 2, 3}, g);
        Tape<double> tape;
        auto ones = plm::purpose_encode(tape.constant(Tensor<double>({1, 2, 3}, 1.0)), tape.constant(mh), tape.constant(mo));
        auto ref = oracle::gmp(oracle::add(oracle::from_tensor(mh), oracle::from_tensor(mo)));
        CHECK(oracle::max_abs_diff(ones.value(), ref) == 0);

        Tensor<double> ind({1, 2, 3});
        ind.at(0, 1, 2) = 1;
        // Positive inputs so the selected position wins the max over zeros.
        auto ph = oracle::random_tensor({3, 2, 3}, g, 0.1, 1), po = oracle::random_tensor({3, 2, 3}, g, 0.1, 1);
        auto sel = plm::purpose_encode(tape.constant(ind), tape.constant(ph), tape.constant(po)).value();
        for (std::size_t c = 0; c < 3; ++c) CHECK(sel[c] == ph.at(c, 1, 2) + po.at(c, 1, 2));

        auto mho = oracle::random_tensor({1, 2, 3}, g);
        auto r = plm::purpose_encode(tape.constant(mho), tape.constant(mh), tape.constant(mo)).value();
        auto ref2 = oracle::gmp(oracle::add(oracle::scale_positions(oracle::from_tensor(mh), oracle::from_tensor(mho).v),
                                            oracle::scale_positions(oracle::from_tensor(mo), oracle::from_tensor(mho).v)));
        CHECK(oracle::max_abs_diff(r, ref2) == 0);
    }

    TEST_CASE("module: zero features, determinism, straight-line oracle") {
        std::mt19937_64 g(5);
        plm::Params<double> p{random_conv(4, 1, 3, g)};
        p.interaction.bias.fill(0);
        Tape<double> tape;
        auto zero = plm::forward(p, BBox{0, 0, 20, 30}, BBox{30, 10, 64, 64}, tape.constant(Tensor<double>({4, 2, 2})), 64, 64);
        for (auto v : zero.f.value().data()) CHECK(v == 0);

        p = plm::Params<double>{random_conv(4, 1, 3, g)};
        auto x = oracle::random_tensor({4, 4, 4}, g);
        const BBox h{3, 5, 40, 60}, o{20, 2, 64, 30};
        auto a = plm::forward(p, h, o, tape.constant(x), 128, 128).f.value();
        auto b = plm::forward(p, h, o, tape.constant(x), 128, 128).f.value();
        CHECK(a == b);
        auto ref = oracle::purpose(p.interaction, oracle::from_tensor(x), suites::to_box(h), suites::to_box(o), 128, 128);
        CHECK(oracle::max_abs_diff(a, ref) < 1e-8);
    }

    TEST_CASE("purpose encoding is invariant to an interior one-cell shift") {
        std::mt19937_64 g(6);
        plm::Params<double> p{random_conv(3, 1, 3, g)};
        const std::size_t S = 8, stride = 8;
        Tensor<double> x({3, S, S}), xs({3, S, S});
        // Non-negative pattern in rows/cols 2..4, zeros elsewhere (as after a ReLU).
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 2; y < 5; ++y)
                for (std::size_t q = 2; q < 5; ++q) {
                    const double v = std::uniform_real_distribution<double>(0, 1)(g);
                    x.at(c, y, q) = v;
                    xs.at(c, y + 1, q + 1) = v;
                }
        const int st = static_cast<int>(stride);
        const BBox human{2 * st, 2 * st, 3 * st, 3 * st}, object{3 * st, 3 * st, 5 * st, 5 * st};
        const BBox human_s{3 * st, 3 * st, 4 * st, 4 * st}, object_s{4 * st, 4 * st, 6 * st, 6 * st};
        Tape<double> tape;
        const int I = static_cast<int>(S * stride);
        auto a = plm::forward(p, human, object, tape.constant(x), I, I).f.value();
        auto b = plm::forward(p, human_s, object_s, tape.constant(xs), I, I).f.value();
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(a[c] - b[c]) < 1e-5);
    }
}

TEST_SUITE("ptm") {
    TEST_CASE("closed forms and oracle") {
        std::mt19937_64 g(1);
        auto x = oracle::random_tensor({4, 3, 3}, g);
        Tape<double> tape;
        auto zero = ptm::transfer(tape.constant(x), PurposeEncoding<double>{tape.constant(Tensor<double>({4}))}).value();
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(zero[i] == doctest::Approx(x[i] * (1 + 1.0 / 9)).epsilon(1e-14));

        auto one = oracle::random_tensor({4, 1, 1}, g);
        auto f = oracle::random_tensor({4}, g);
        auto two = ptm::transfer(tape.constant(one), PurposeEncoding<double>{tape.constant(f)}).value();
        for (std::size_t i = 0; i < 4; ++i) CHECK(two[i] == doctest::Approx(2 * one[i]).epsilon(1e-15));

        const oracle::Vec fv(f.data().begin(), f.data().end());
        auto r = ptm::transfer(tape.constant(x), PurposeEncoding<double>{tape.constant(f)}).value();
        CHECK(oracle::max_abs_diff(r, oracle::transfer(oracle::from_tensor(x), fv).v) < 1e-9);
        CHECK_THROWS_AS(ptm::transfer(tape.constant(x), PurposeEncoding<double>{tape.constant(Tensor<double>({3}))}),
                        DimensionError);
    }
}

TEST_SUITE("cem") {
    TEST_CASE("projection") {
        std::mt19937_64 g(1);
        ConvLayer<double> eye;
        eye.weight = Tensor<double>({3, 3, 1, 1});
        for (std::size_t i = 0; i < 3; ++i) eye.weight[i * 3 + i] = 1;
        eye.bias = Tensor<double>({3});
        eye.has_bias = true;
        auto x = oracle::random_tensor({3, 2, 2}, g);
        Tape<double> tape;
        auto rows = cem::project(eye, tape.constant(x)).value();
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t c = 0; c < 3; ++c) CHECK(rows.at(j, c) == x[c * 4 + j]);
        for (auto v : cem::project(eye, tape.constant(Tensor<double>({3, 2, 2}))).value().data()) CHECK(v == 0);

        auto conv = random_conv(3, 5, 1, g);
        auto r = cem::project(conv, tape.constant(x)).value();
        CHECK(oracle::max_abs_diff(r, oracle::rows_of(oracle::conv_layer(oracle::from_tensor(x), conv))) < 1e-12);
    }

    TEST_CASE("E-step") {
        std::mt19937_64 g(2);
        auto f = oracle::random_tensor({5, 3}, g);
        const auto z1 = cem::e_step<double>({f}, oracle::random_tensor({1, 3}, g));
        for (auto v : z1[0].data()) CHECK(v == 1);

        // Rows equal to 10 * mu_k: the diagonal responsibility is 1 / (1 + (K - 1) e^-10).
        Tensor<double> mu({3, 3}), fs({3, 3});
        for (std::size_t k = 0; k < 3; ++k) {
            mu.at(k, k) = 1;
            fs.at(k, k) = 10;
        }
        auto z = cem::e_step<double>({fs}, mu)[0];
        const double expect = 1 / (1 + 2 * std::exp(-10.0));
        for (std::size_t k = 0; k < 3; ++k) CHECK(z.at(k, k) == doctest::Approx(expect).epsilon(1e-12));

        auto f2 = oracle::random_tensor({4, 3}, g), f3 = oracle::random_tensor({4, 3}, g);
        auto m3 = oracle::random_tensor({3, 3}, g);
        auto zs = cem::e_step<double>({f2, f3}, m3);
        const oracle::Vec mv(m3.data().begin(), m3.data().end());
        for (const auto* fi : {&f2, &f3}) {
            const oracle::Vec fv(fi->data().begin(), fi->data().end());
            oracle::Vec ref(12);
            for (std::size_t j = 0; j < 4; ++j) {
                double den = 0;
                for (std::size_t l = 0; l < 3; ++l) {
                    double dot = 0;
                    for (std::size_t c = 0; c < 3; ++c) dot += fv[j * 3 + c] * mv[l * 3 + c];
                    den += std::exp(dot);
                }
                for (std::size_t k = 0; k < 3; ++k) {
                    double dot = 0;
                    for (std::size_t c = 0; c < 3; ++c) dot += fv[j * 3 + c] * mv[k * 3 + c];
                    ref[j * 3 + k] = std::exp(dot) / den;
                }
            }
            CHECK(oracle::max_abs_diff(zs[fi == &f2 ? 0 : 1], ref) < 1e-9);
        }
    }

    TEST_CASE("M-step: single basis mean and hard assignments") {
        std::mt19937_64 g(3);
        auto a = oracle::random_tensor({3, 2}, g), b = oracle::random_tensor({2, 2}, g);
        auto mu = cem::m_step_unnormalized<double>({a, b}, {Tensor<double>({3, 1}, 1.0), Tensor<double>({2, 1}, 1.0)});
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0;
            for (std::size_t j = 0; j < 3; ++j) mean += a.at(j, c);
            for (std::size_t j = 0; j < 2; ++j) mean += b.at(j, c);
            CHECK(mu.at(0, c) == doctest::Approx(mean / 5).epsilon(1e-14));
        }
        // Rows 0,1 of a belong to basis 0; everything else to basis 1.
        Tensor<double> za({3, 2}, std::vector<double>{1, 0, 1, 0, 0, 1}), zb({2, 2}, std::vector<double>{0, 1, 0, 1});
        auto hard = cem::m_step_unnormalized<double>({a, b}, {za, zb});
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(hard.at(0, c) == doctest::Approx((a.at(0, c) + a.at(1, c)) / 2).epsilon(1e-14));
            CHECK(hard.at(1, c) == doctest::Approx((a.at(2, c) + b.at(0, c) + b.at(1, c)) / 3).epsilon(1e-14));
        }
        auto normed = cem::m_step<double>({a, b}, {za, zb});
        for (std::size_t k = 0; k < 2; ++k)
            CHECK(normed.at(k, 0) * normed.at(k, 0) + normed.at(k, 1) * normed.at(k, 1) == doctest::Approx(1).epsilon(1e-14));
    }

    TEST_CASE("module: rank-one collapse, permutation, clusters, oracle") {
        std::mt19937_64 g(4);
        Tape<double> tape;
        {
            auto p = suites::random_cem(3, 4, 1, g);
            auto r = cem::forward(p, {tape.constant(oracle::random_tensor({3, 2, 3}, g))}, 4);
            const auto& rec = r.reconstructed[0].value();
            for (std::size_t j = 1; j < rec.dim(0); ++j)
                for (std::size_t c = 0; c < 4; ++c) CHECK(rec.at(j, c) == rec.at(0, c));
        }
        {
            auto p = suites::random_cem(3, 4, 3, g);
            std::vector<Tensor<double>> xs;
            for (int i = 0; i < 4; ++i) xs.push_back(oracle::random_tensor({3, 2, 2}, g));
            const std::size_t perm[] = {2, 0, 3, 1};
            std::vector<Var<double>> v1, v2;
            for (const auto& x : xs) v1.push_back(tape.constant(x));
            for (auto i : perm) v2.push_back(tape.constant(xs[i]));
            auto r1 = cem::forward(p, v1, 3), r2 = cem::forward(p, v2, 3);
            CHECK(r1.bases == r2.bases);
            for (std::size_t i = 0; i < 4; ++i) CHECK(r2.outputs[i].value() == r1.outputs[perm[i]].value());
        }
        {
            // Identity projection, two well-separated clusters at scale 10 along e1 and e2.
            cem::Params<double> p;
            p.project.weight = Tensor<double>({3, 3, 1, 1});
            for (std::size_t i = 0; i < 3; ++i) p.project.weight[i * 3 + i] = 1;
            p.project.bias = Tensor<double>({3});
            p.project.has_bias = true;
            p.bases = Tensor<double>({2, 3}, std::vector<double>{1, 0.3, 0, 0.3, 1, 0});
            p.output = random_conv(3, 3, 1, g);
            std::normal_distribution<double> noise(0, 0.05);
            std::vector<Tensor<double>> xs(2, Tensor<double>({3, 2, 2}));
            std::vector<int> label;
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 4; ++j) {
                    const int k = static_cast<int>((i + j) % 2);
                    label.push_back(k);
                    for (std::size_t c = 0; c < 3; ++c) xs[i][c * 4 + j] = (static_cast<int>(c) == k ? 10 : 0) + noise(g);
                }
            std::vector<oracle::Vec> dir(2, oracle::Vec(3, 0.0));
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 4; ++j)
                    for (std::size_t c = 0; c < 3; ++c) dir[label[i * 4 + j]][c] += xs[i][c * 4 + j];
            for (auto& d : dir) d = oracle::normalize_rows(d, 1, 3);
            auto r = cem::forward(p, {tape.constant(xs[0]), tape.constant(xs[1])}, 10);
            double worst = 0;
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 4; ++j)
                    for (std::size_t c = 0; c < 3; ++c)
                        worst = std::max(worst, std::abs(r.reconstructed[i].value().at(j, c) - dir[label[i * 4 + j]][c]));
            CHECK(worst < 1e-2);
        }
        {
            auto p = suites::random_cem(4, 5, 3, g);
            std::vector<oracle::Map> xs;
            std::vector<Var<double>> vs;
            for (int i = 0; i < 3; ++i) {
                auto x = oracle::random_tensor({4, 2, 3}, g);
                xs.push_back(oracle::from_tensor(x));
                vs.push_back(tape.constant(x));
            }
            auto r = cem::forward(p, vs, 3);
            auto ref = oracle::collaborate(p, xs, 3);
            for (std::size_t i = 0; i < 3; ++i) CHECK(oracle::max_abs_diff(r.outputs[i].value(), ref[i].v) < 1e-10);
        }
        CHECK_THROWS(cem::forward(suites::random_cem(2, 2, 2, g), std::vector<Var<double>>{}, 3));
    }

    TEST_CASE("E-M property suite") {
        for (const auto& c : suites::em_suite(20)) {
            INFO(c.name << " = " << c.value);
            CHECK(c.pass);
        }
    }
}

TEST_SUITE("decoder-loss") {
    TEST_CASE("zero pyramid with zero biases predicts one half") {
        std::mt19937_64 g(1);
        auto p = suites::random_decoder({2, 2, 2, 2, 2}, 3, g);
        p.top.bias.fill(0);
        for (auto& l : p.lateral) l.bias.fill(0);
        for (auto& l : p.smooth) l.bias.fill(0);
        for (auto& l : p.heads) l.bias.fill(0);
        Tape<double> tape;
        FeaturePyramid<double> pyr;
        for (std::size_t m = 1; m <= 5; ++m) pyr.level(m) = tape.constant(Tensor<double>({2, 32u >> m, 32u >> m}));
        auto out = decoder::decode(p, pyr, 32, 32);
        for (const auto& d : out.probs) {
            CHECK(d.shape() == Shape{1, 32, 32});
            for (auto v : d.value().data()) CHECK(v == 0.5);
        }
    }

    TEST_CASE("recurrence against the unrolled oracle; channel mismatch") {
        std::mt19937_64 g(2);
        std::vector<std::size_t> ch{2, 3, 2, 4, 3};
        auto p = suites::random_decoder(ch, 3, g);
        Tape<double> tape;
        FeaturePyramid<double> pyr;
        std::vector<oracle::Map> levels;
        for (std::size_t m = 0; m < 5; ++m) {
            auto x = oracle::random_tensor({ch[m], 16u >> m, 16u >> m}, g);
            pyr.level(m + 1) = tape.constant(x);
            levels.push_back(oracle::from_tensor(x));
        }
        auto out = decoder::decode(p, pyr, 32, 32);
        auto ref = oracle::decode(p, levels, 32, 32);
        for (std::size_t m = 0; m < 5; ++m) CHECK(oracle::max_abs_diff(out.probs[m].value(), ref[m].v) < 1e-8);
        pyr.level(2) = tape.constant(Tensor<double>({5, 8, 8}));
        CHECK_THROWS_AS(decoder::decode(p, pyr, 32, 32), DimensionError);
    }

    TEST_CASE("loss closed forms, direct formula, additivity, validation") {
        const std::size_t n = 3;
        std::mt19937_64 g(3);
        Tape<double> tape;
        std::vector<Tensor<double>> masks;
        std::vector<decoder::PredictionStack<double>> half(n), exact(n);
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<double> m({1, 2, 2});
            for (auto& v : m.data()) v = static_cast<double>(g() % 2);
            masks.push_back(m);
            for (std::size_t l = 0; l < 5; ++l) {
                half[i].probs[l] = tape.constant(Tensor<double>({1, 2, 2}, 0.5));
                exact[i].probs[l] = tape.constant(m);
            }
        }
        CHECK(decoder::deep_supervision_loss(half, masks).value().item() == doctest::Approx(5 * n * std::log(2.0)).epsilon(1e-14));
        CHECK(decoder::deep_supervision_loss(exact, masks).value().item() <= 5 * n * -std::log(1 - 1e-7) + 1e-15);

        std::vector<decoder::PredictionStack<double>> rnd(n);
        double expect = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t l = 0; l < 5; ++l) {
                auto p = oracle::random_tensor({1, 2, 2}, g, 0, 1);
                rnd[i].probs[l] = tape.constant(p);
                const double single = oracle::bce(oracle::Vec(p.data().begin(), p.data().end()),
                                                  oracle::Vec(masks[i].data().begin(), masks[i].data().end()), 1e-7);
                CHECK(binary_cross_entropy(tape.constant(p), masks[i], 1e-7).value().item() ==
                      doctest::Approx(single).epsilon(1e-12));
                expect += single;
            }
        CHECK(std::abs(decoder::deep_supervision_loss(rnd, masks).value().item() - expect) < 1e-10);

        masks[1][0] = 0.5;
        CHECK_THROWS(decoder::deep_supervision_loss(rnd, masks));
        CHECK_THROWS(decoder::deep_supervision_loss(rnd, std::vector<Tensor<double>>{}));
    }

    TEST_CASE("loss decreases along the negative decoder gradient") {
        ModelConfig cfg;
        cfg.encoder_channels = {4, 4, 8, 8, 8};
        cfg.decoder_width = 4;
        cfg.num_bases = 4;
        cfg.basis_dim = 4;
        auto model = OsadModel<float>(cfg).cast<double>();
        auto ep = generate_synthetic(9, 0, 2);
        SupportSample<double> sup{ep.support.image.template cast<double>(), ep.support.human_box, ep.support.object_box};
        std::vector<Tensor<double>> qs, ms;
        for (std::size_t i = 0; i < 2; ++i) {
            qs.push_back(ep.queries[i].cast<double>());
            ms.push_back(ep.masks[i].cast<double>());
        }
        auto loss_of = [&] {
            Tape<double> t;
            return decoder::deep_supervision_loss(model.forward(t, sup, qs).predictions, ms).value().item();
        };
        Tape<double> tape;
        auto loss = decoder::deep_supervision_loss(model.forward(tape, sup, qs).predictions, ms);
        tape.backward(loss);
        const double before = loss.value().item();
        double sq = 0;
        std::vector<std::pair<Tensor<double>*, Tensor<double>>> grads;
        model.decoder_params().visit([&](const std::string&, Tensor<double>& t) {
            grads.emplace_back(&t, *tape.parameter_grad(t));
            for (auto v : grads.back().second.data()) sq += v * v;
        });
        CHECK(sq > 0);
        for (auto& [p, gr] : grads)
            for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] -= 1e-4 * gr[i];
        const double after = loss_of();
        CHECK(after < before);
        CHECK(before - after == doctest::Approx(1e-4 * sq).epsilon(0.05));
    }
}

TEST_SUITE("model") {
    TEST_CASE("full forward agrees with the straight-line pipeline") {
        ModelConfig cfg;
        cfg.encoder_channels = {4, 6, 8, 8, 8};
        cfg.decoder_width = 5;
        cfg.num_bases = 3;
        cfg.basis_dim = 6;
        auto model = OsadModel<float>(cfg).cast<double>();
        auto ep = generate_synthetic(3, 1, 3, 64);
        SupportSample<double> sup{ep.support.image.template cast<double>(), ep.support.human_box, ep.support.object_box};
        std::vector<Tensor<double>> qs, ms;
        std::vector<oracle::Map> oq, om;
        for (std::size_t i = 0; i < 3; ++i) {
            qs.push_back(ep.queries[i].cast<double>());
            ms.push_back(ep.masks[i].cast<double>());
            oq.push_back(oracle::from_tensor(qs.back()));
            om.push_back(oracle::from_tensor(ms.back()));
        }
        Tape<double> tape;
        auto out = model.forward(tape, sup, qs);
        auto loss = decoder::deep_supervision_loss(out.predictions, ms).value().item();
        auto ref = oracle::run_pipeline(model, oracle::from_tensor(sup.image), suites::to_box(sup.human_box),
                                        suites::to_box(sup.object_box), oq, om, cfg.em_iterations);
        CHECK(oracle::max_abs_diff(out.purpose.f.value(), ref.purpose) < 1e-8);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t m = 0; m < 5; ++m)
                CHECK(oracle::max_abs_diff(out.predictions[i].probs[m].value(), ref.probs[i][m].v) < 1e-8);
        CHECK(std::abs(loss - ref.loss) < 1e-8);
    }

    TEST_CASE("any number of queries; shape checks; parameter naming") {
        ModelConfig cfg;
        OsadModel<float> model(cfg);
        for (std::size_t n : {1u, 8u}) {
            auto ep = generate_synthetic(5, 2, n);
            Tape<float> tape;
            auto out = model.forward(tape, ep.support, ep.queries);
            CHECK(out.predictions.size() == n);
            for (const auto& p : out.predictions)
                for (const auto& d : p.probs) {
                    CHECK(d.shape() == Shape{1, 64, 64});
                    for (auto v : d.value().data()) CHECK((v > 0 && v < 1));
                }
        }
        auto ep = generate_synthetic(5, 2, 2);
        Tape<float> tape;
        CHECK_THROWS(model.forward(tape, ep.support, {}));
        CHECK_THROWS_AS(model.forward(tape, ep.support, {Tensor<float>({3, 32, 32})}), DimensionError);

        std::set<std::string> names;
        std::size_t count = 0;
        const auto& cmodel = model;
        cmodel.visit_parameters([&](const std::string& nm, const Tensor<float>&) {
            names.insert(nm);
            ++count;
        });
        CHECK(names.size() == count);
        CHECK(names.count("cem.bases") == 1);
        CHECK(names.count("plm.interaction.weight") == 1);
        CHECK(model.parameter_count() > 0);
    }

    TEST_CASE("every module matches its loop oracle over 20 seeds") {
        for (const auto& c : suites::oracle_suite(20)) {
            INFO(c.name << " max abs diff " << c.value);
            CHECK(c.pass);
        }
    }
}
