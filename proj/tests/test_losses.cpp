#include <catch2/catch_amalgamated.hpp>

#include "dmgan/losses.hpp"
#include "gradcheck.hpp"

using dmgan::Tensor;
using T64 = Tensor<double>;

namespace {
const double kLn2 = std::log(2.0);
}

TEST_CASE("generator adversarial loss closed forms") {
    // zero logits -> both sigmoids 0.5 -> loss = ln 2
    CHECK(dmgan::generator_adv_loss(T64::zeros({1}), T64::zeros({1})).item() ==
          Catch::Approx(kLn2).margin(1e-9));
    // perfect fool
    CHECK(dmgan::generator_adv_loss(T64({1}, {50.0}), T64({1}, {50.0})).item() ==
          Catch::Approx(0.0).margin(1e-9));
    // random logits vs scalar oracle
    dmgan::Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const double lu = rng.normal() * 2, lc = rng.normal() * 2;
        const double expect = -0.5 * (std::log(1.0 / (1.0 + std::exp(-lu))) +
                                      std::log(1.0 / (1.0 + std::exp(-lc))));
        CHECK(dmgan::generator_adv_loss(T64({1}, {lu}), T64({1}, {lc})).item() ==
              Catch::Approx(expect).margin(1e-6));
    }
}

TEST_CASE("discriminator loss closed forms") {
    auto z = T64::zeros({1});
    CHECK(dmgan::discriminator_loss(z, z, z, z).item() ==
          Catch::Approx(2.0 * kLn2).margin(1e-9));
    // perfect discriminator: confident on real, confidently rejecting fake
    auto hi = T64({1}, {50.0}), lo = T64({1}, {-50.0});
    CHECK(dmgan::discriminator_loss(hi, hi, lo, lo).item() == Catch::Approx(0.0).margin(1e-9));

    dmgan::Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const double ru = rng.normal(), rc = rng.normal();
        const double fu = rng.normal(), fc = rng.normal();
        auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
        const double expect = -0.5 * (std::log(sig(ru)) + std::log(1 - sig(fu)) +
                                      std::log(sig(rc)) + std::log(1 - sig(fc)));
        CHECK(dmgan::discriminator_loss(T64({1}, {ru}), T64({1}, {rc}),
                                        T64({1}, {fu}), T64({1}, {fc})).item() ==
              Catch::Approx(expect).margin(1e-6));
    }
}

TEST_CASE("losses stay finite at extreme logits") {
    auto big = T64({1}, {1e4}), small = T64({1}, {-1e4});
    CHECK(std::isfinite(dmgan::generator_adv_loss(small, small).item()));
    CHECK(std::isfinite(dmgan::discriminator_loss(small, small, big, big).item()));
}

TEST_CASE("generator and discriminator fake terms move oppositely") {
    auto z = T64::zeros({1});
    double prev_g = 1e9, prev_d = -1e9;
    for (double logit : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
        T64 l({1}, {logit});
        const double g = dmgan::generator_adv_loss(l, l).item();
        const double d = dmgan::discriminator_loss(z, z, l, l).item();
        CHECK(g < prev_g);
        CHECK(d > prev_d);
        prev_g = g;
        prev_d = d;
    }
}

TEST_CASE("match_loss closed forms") {
    SECTION("perfectly separable pairs") {
        // cosine +1 on the diagonal, -1 off it
        T64 img({2, 2}, {1, 0, -1, 0});
        T64 txt({2, 2}, {1, 0, -1, 0});
        const double gamma = 10.0;
        const double expect = 2.0 * std::log(1.0 + std::exp(-2.0 * gamma));
        CHECK(dmgan::match_loss(img, txt, gamma).item() == Catch::Approx(expect).margin(1e-9));
    }
    SECTION("identical embeddings give 2 ln B") {
        for (std::size_t b : {2u, 3u, 5u}) {
            std::vector<double> rows(b * 3);
            for (std::size_t i = 0; i < b; ++i) {
                rows[i * 3] = 0.3;
                rows[i * 3 + 1] = -0.7;
                rows[i * 3 + 2] = 0.2;
            }
            T64 emb({b, 3}, rows);
            CHECK(dmgan::match_loss(emb, emb, 10.0).item() ==
                  Catch::Approx(2.0 * std::log(static_cast<double>(b))).margin(1e-9));
        }
    }
    SECTION("loss decreases as diagonal similarity rises") {
        T64 img({2, 2}, {1, 0, 0, 1});
        double prev = 1e9;
        for (double angle : {1.2, 0.8, 0.4, 0.1}) {
            T64 txt({2, 2}, {std::cos(angle), std::sin(angle),
                             std::sin(angle), std::cos(angle)});
            const double loss = dmgan::match_loss(img, txt, 10.0).item();
            CHECK(loss < prev);
            prev = loss;
        }
    }
    SECTION("invariant to positive per-vector rescaling") {
        dmgan::Rng rng(7);
        auto img = T64::randn({3, 4}, rng);
        auto txt = T64::randn({3, 4}, rng);
        const double base = dmgan::match_loss(img, txt, 10.0).item();
        std::vector<double> scaled_img = img.data(), scaled_txt = txt.data();
        const double scales[3] = {0.1, 3.0, 42.0};
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                scaled_img[i * 4 + j] *= scales[i];
                scaled_txt[i * 4 + j] *= scales[2 - i];
            }
        const double scaled =
            dmgan::match_loss(T64({3, 4}, scaled_img), T64({3, 4}, scaled_txt), 10.0).item();
        CHECK(scaled == Catch::Approx(base).margin(1e-9));
    }
    SECTION("batch of one is rejected") {
        T64 single({1, 3}, {1, 2, 3});
        CHECK_THROWS_AS(dmgan::match_loss(single, single, 10.0), std::logic_error);
    }
    SECTION("gradcheck") {
        dmgan::Rng rng(9);
        auto img = T64::randn({3, 4}, rng, 1.0, true);
        auto txt = T64::randn({3, 4}, rng, 1.0, true);
        CHECK(dmgan::test::gradcheck({img, txt},
                                     [&] { return dmgan::match_loss(img, txt, 5.0); }) < 1e-5);
    }
}

TEST_CASE("total generator loss weighting") {
    auto adv = T64::scalar(1.0);
    auto ca = T64::scalar(0.2);
    auto match = T64::scalar(0.1);

    CHECK(dmgan::total_generator_loss<double>({adv}, ca, match, 0.0, 0.0).item() ==
          Catch::Approx(1.0));
    // lambda1 = 1, lambda2 = 5: 1.0 + 0.2 + 0.5
    CHECK(dmgan::total_generator_loss<double>({adv}, ca, match, 1.0, 5.0).item() ==
          Catch::Approx(1.7).margin(1e-12));
    // linear in each part
    auto adv2 = T64::scalar(2.0);
    const double base = dmgan::total_generator_loss<double>({adv}, ca, match, 1.0, 5.0).item();
    const double bumped = dmgan::total_generator_loss<double>({adv2}, ca, match, 1.0, 5.0).item();
    CHECK(bumped - base == Catch::Approx(1.0).margin(1e-12));
    CHECK_THROWS_AS(dmgan::total_generator_loss<double>({adv}, ca, match, -1.0, 0.0),
                    std::invalid_argument);
}
