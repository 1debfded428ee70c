#include <catch2/catch_amalgamated.hpp>

#include "dmgan/tensor.hpp"
#include "gradcheck.hpp"

using dmgan::Tensor;
using dmgan::test::gradcheck;
using T64 = Tensor<double>;

namespace {

T64 randn64(dmgan::Shape shape, dmgan::Rng& rng, bool rg = true) {
    return T64::randn(std::move(shape), rng, 1.0, rg);
}

}  // namespace

TEST_CASE("matmul forward matches hand arithmetic") {
    T64 identity({2, 2}, {1, 0, 0, 1});
    T64 a({2, 2}, {1, 2, 3, 4});
    auto r = dmgan::matmul(identity, a);
    CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

    T64 row({1, 2}, {1, 2});
    T64 col({2, 1}, {3, 4});
    CHECK(dmgan::matmul(row, col).item() == 11.0);

    CHECK_THROWS_AS(dmgan::matmul(row, row), std::invalid_argument);
}

TEST_CASE("matmul gradcheck") {
    dmgan::Rng rng(1);
    auto a = randn64({3, 4}, rng);
    auto b = randn64({4, 2}, rng);
    double err = gradcheck({a, b}, [&] { return dmgan::sum(dmgan::matmul(a, b)); });
    CHECK(err < 1e-6);
}

TEST_CASE("conv3x3 trivial cases") {
    dmgan::Rng rng(2);
    auto x = randn64({2, 4, 4}, rng, false);

    SECTION("zero kernel gives zero output") {
        auto k = T64::zeros({3, 2, 3, 3});
        auto b = T64::zeros({3});
        auto y = dmgan::conv3x3(x, k, b);
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SECTION("identity kernel reproduces input") {
        std::vector<double> kd(9, 0.0);
        kd[4] = 1.0;  // centre tap
        T64 k({1, 1, 3, 3}, kd);
        T64 one_chan({1, 4, 4},
                     std::vector<double>(x.data().begin(), x.data().begin() + 16));
        auto y = dmgan::conv3x3(one_chan, k, T64::zeros({1}));
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(y.data()[i] == Catch::Approx(one_chan.data()[i]));
    }
    SECTION("channel mismatch throws") {
        auto k = T64::zeros({1, 3, 3, 3});
        CHECK_THROWS_AS(dmgan::conv3x3(x, k, T64::zeros({1})), std::invalid_argument);
    }
}

// Direct six-nested-loop cross-correlation oracle.
static std::vector<double> conv_oracle(const T64& x, const T64& k, const T64& b,
                                       std::size_t stride) {
    const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0);
    const std::size_t ho = (h + 2 - 3) / stride + 1, wo = (w + 2 - 3) / stride + 1;
    std::vector<double> out(co * ho * wo, 0.0);
    for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = b.data()[oc];
                for (std::size_t ic = 0; ic < ci; ++ic)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int iy = static_cast<int>(oy * stride) + dy;
                            const int ix = static_cast<int>(ox * stride) + dx;
                            if (iy < 0 || iy >= static_cast<int>(h) ||
                                ix < 0 || ix >= static_cast<int>(w)) continue;
                            acc += x.data()[(ic * h + iy) * w + ix] *
                                   k.data()[((oc * ci + ic) * 3 + dy + 1) * 3 + dx + 1];
                        }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
    return out;
}

TEST_CASE("conv3x3 matches nested-loop oracle") {
    dmgan::Rng rng(3);
    for (std::size_t trial = 0; trial < 5; ++trial) {
        auto x = randn64({4, 8, 8}, rng, false);
        auto k = randn64({3, 4, 3, 3}, rng, false);
        auto b = randn64({3}, rng, false);
        for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
            auto y = dmgan::conv3x3(x, k, b, stride);
            auto expect = conv_oracle(x, k, b, stride);
            REQUIRE(y.data().size() == expect.size());
            double worst = 0.0;
            for (std::size_t i = 0; i < expect.size(); ++i)
                worst = std::max(worst, std::fabs(y.data()[i] - expect[i]));
            CHECK(worst < 1e-6);
        }
    }
}

TEST_CASE("conv3x3 gradcheck") {
    dmgan::Rng rng(4);
    auto x = randn64({2, 3, 3}, rng);
    auto k = randn64({2, 2, 3, 3}, rng);
    auto b = randn64({2}, rng);
    double err = gradcheck({x, k, b}, [&] {
        return dmgan::sum(dmgan::mul(dmgan::conv3x3(x, k, b), dmgan::conv3x3(x, k, b)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("nearest_upsample") {
    T64 single({1, 1, 1}, {1.0});
    auto up = dmgan::nearest_upsample(single);
    CHECK(up.data() == std::vector<double>{1, 1, 1, 1});

    T64 grid({1, 2, 2}, {1, 2, 3, 4});
    auto up2 = dmgan::nearest_upsample(grid);
    CHECK(up2.data() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});

    dmgan::Rng rng(5);
    auto x = randn64({1, 2, 2}, rng);
    double err = gradcheck({x}, [&] {
        auto u = dmgan::nearest_upsample(x);
        return dmgan::sum(dmgan::mul(u, u));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("softmax properties") {
    T64 uniform({4}, {2.5, 2.5, 2.5, 2.5});
    auto usm = dmgan::softmax(uniform, 0);
    for (double v : usm.data()) CHECK(v == Catch::Approx(0.25));

    T64 pair({2}, {0.0, std::log(3.0)});
    auto sm = dmgan::softmax(pair, 0);
    CHECK(sm.data()[0] == Catch::Approx(0.25).margin(1e-12));
    CHECK(sm.data()[1] == Catch::Approx(0.75).margin(1e-12));

    SECTION("shift invariance and normalization") {
        dmgan::Rng rng(6);
        auto x = randn64({3, 5}, rng, false);
        auto shifted = dmgan::affine(x, 1.0, 17.0);
        auto a = dmgan::softmax(x, 0), b = dmgan::softmax(shifted, 0);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            CHECK(a.data()[i] == Catch::Approx(b.data()[i]).margin(1e-9));
            CHECK(a.data()[i] >= 0.0);
        }
        for (std::size_t j = 0; j < 5; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < 3; ++i) col += a.data()[i * 5 + j];
            CHECK(col == Catch::Approx(1.0).margin(1e-6));
        }
    }
    SECTION("gradcheck both axes") {
        dmgan::Rng rng(7);
        auto x = randn64({3, 4}, rng);
        for (std::size_t axis : {std::size_t{0}, std::size_t{1}}) {
            double err = gradcheck({x}, [&] {
                auto s = dmgan::softmax(x, axis);
                return dmgan::sum(dmgan::mul(s, s));
            });
            CHECK(err < 1e-6);
        }
    }
}

TEST_CASE("pointwise activations") {
    T64 zero({1}, {0.0});
    CHECK(dmgan::sigmoid(zero).item() == 0.5);
    CHECK(dmgan::tanh(zero).item() == 0.0);

    CHECK_THROWS_AS(dmgan::log(T64({1}, {-1.0})), std::domain_error);

    dmgan::Rng rng(8);
    auto x = randn64({3, 3}, rng);
    auto positive = T64({3, 3}, [&] {
        std::vector<double> d(9);
        for (auto& v : d) v = 0.5 + rng.uniform();
        return d;
    }(), true);

    CHECK(gradcheck({x}, [&] { return dmgan::sum(dmgan::mul(dmgan::sigmoid(x), dmgan::sigmoid(x))); }) < 1e-6);
    CHECK(gradcheck({x}, [&] { return dmgan::sum(dmgan::mul(dmgan::tanh(x), dmgan::tanh(x))); }) < 1e-6);
    CHECK(gradcheck({x}, [&] { return dmgan::sum(dmgan::mul(dmgan::leaky_relu(x), dmgan::leaky_relu(x))); }) < 1e-6);
    CHECK(gradcheck({x}, [&] { return dmgan::sum(dmgan::mul(dmgan::exp(x), dmgan::exp(x))); }) < 1e-6);
    CHECK(gradcheck({positive}, [&] { return dmgan::sum(dmgan::log(positive)); }) < 1e-6);
    // relu checked away from the kink
    auto far = T64({4}, {-2.0, -0.7, 0.9, 1.6}, true);
    CHECK(gradcheck({far}, [&] { return dmgan::sum(dmgan::mul(dmgan::relu(far), dmgan::relu(far))); }) < 1e-6);
}

TEST_CASE("reductions and shape ops") {
    T64 v({3}, {2, 4, 6});
    CHECK(dmgan::mean(v).item() == 4.0);

    auto cat = dmgan::concat<double>({T64({1}, {1.0}), T64({1}, {2.0})}, 0);
    CHECK(cat.data() == std::vector<double>{1, 2});

    dmgan::Rng rng(9);
    auto x = randn64({2, 6}, rng, false);
    auto reshaped = dmgan::reshape(x, {3, 4});
    CHECK(dmgan::sum(reshaped).item() == Catch::Approx(dmgan::sum(x).item()));

    SECTION("gradient routing") {
        auto a = randn64({2, 3}, rng);
        auto b = randn64({2, 2}, rng);
        CHECK(gradcheck({a, b}, [&] {
            auto c = dmgan::concat<double>({a, b}, 1);
            return dmgan::sum(dmgan::mul(c, c));
        }) < 1e-6);
        CHECK(gradcheck({a}, [&] {
            auto m = dmgan::mean_rows(a);
            return dmgan::sum(dmgan::mul(m, m));
        }) < 1e-6);
        CHECK(gradcheck({a}, [&] {
            auto t = dmgan::transpose(a);
            return dmgan::sum(dmgan::mul(t, t));
        }) < 1e-6);
        CHECK(gradcheck({a}, [&] {
            auto s = dmgan::slice_rows(a, 1, 1);
            return dmgan::sum(dmgan::mul(s, s));
        }) < 1e-6);
        CHECK(gradcheck({a}, [&] {
            auto g = dmgan::gather_rows(a, {1, 0, 1});
            return dmgan::sum(dmgan::mul(g, g));
        }) < 1e-6);
    }
    SECTION("concat shape mismatch throws") {
        CHECK_THROWS_AS(dmgan::concat<double>({T64::zeros({2, 3}), T64::zeros({3, 2})}, 1),
                        std::invalid_argument);
    }
}

TEST_CASE("row/scalar broadcast helpers gradcheck") {
    dmgan::Rng rng(10);
    auto mat = randn64({3, 4}, rng);
    auto vec = randn64({4}, rng);
    auto rowv = randn64({3}, rng);
    auto s = randn64({1}, rng);
    s.data()[0] = 1.5 + std::fabs(s.data()[0]);  // keep divisor away from 0

    CHECK(gradcheck({mat, vec}, [&] {
        auto y = dmgan::add_rowvec(mat, vec);
        return dmgan::sum(dmgan::mul(y, y));
    }) < 1e-6);
    CHECK(gradcheck({mat, rowv}, [&] {
        auto y = dmgan::scale_rows(mat, rowv);
        return dmgan::sum(dmgan::mul(y, y));
    }) < 1e-6);
    CHECK(gradcheck({mat, s}, [&] {
        auto y = dmgan::div_scalar_tensor(mat, s);
        return dmgan::sum(dmgan::mul(y, y));
    }) < 1e-6);
    CHECK(gradcheck({mat, s}, [&] {
        auto y = dmgan::add_scalar_tensor(mat, s);
        return dmgan::sum(dmgan::mul(y, y));
    }) < 1e-6);
    auto row = randn64({1, 4}, rng);
    CHECK(gradcheck({row}, [&] {
        auto y = dmgan::repeat_rows(row, 3);
        return dmgan::sum(dmgan::mul(y, y));
    }) < 1e-6);
}

TEST_CASE("backward basics") {
    T64 x({3}, {1, 2, 3}, true);

    SECTION("sum gives all-ones grad") {
        dmgan::sum(x).backward();
        CHECK(x.grad() == std::vector<double>{1, 1, 1});
    }
    SECTION("sum of squares gives 2x") {
        dmgan::sum(dmgan::mul(x, x)).backward();
        CHECK(x.grad() == std::vector<double>{2, 4, 6});
    }
    SECTION("non-scalar loss throws") {
        CHECK_THROWS_AS(x.backward(), std::logic_error);
    }
    SECTION("two backward passes are bit-identical") {
        auto loss_graph = dmgan::sum(dmgan::mul(dmgan::sigmoid(x), x));
        loss_graph.backward();
        auto first = x.grad();
        loss_graph.zero_all_grads();
        loss_graph.backward();
        CHECK(x.grad() == first);
    }
}
