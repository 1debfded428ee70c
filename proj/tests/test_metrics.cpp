#include <catch2/catch_amalgamated.hpp>
#include <cstdio>

#include "dmgan/metrics.hpp"

using dmgan::GaussianStats;

TEST_CASE("gaussian_stats") {
    SECTION("two points by hand") {
        auto s = dmgan::gaussian_stats({0, 0, 2, 2}, 2, 2);
        CHECK(s.mean(0) == 1.0);
        CHECK(s.mean(1) == 1.0);
        // unbiased (n-1 = 1): cov = [[2,2],[2,2]]
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) CHECK(s.cov(i, j) == Catch::Approx(2.0));
    }
    SECTION("repeated point has zero covariance") {
        std::vector<double> pts;
        for (int i = 0; i < 5; ++i) {
            pts.push_back(1.5);
            pts.push_back(-0.5);
        }
        auto s = dmgan::gaussian_stats(pts, 5, 2);
        CHECK(s.cov.cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("covariance is exactly symmetric") {
        dmgan::Rng rng(3);
        std::vector<double> pts(50 * 4);
        for (auto& v : pts) v = rng.normal();
        auto s = dmgan::gaussian_stats(pts, 50, 4);
        CHECK((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("fewer than two samples rejected") {
        CHECK_THROWS_AS(dmgan::gaussian_stats({1.0, 2.0}, 1, 2), std::logic_error);
    }
}

TEST_CASE("fid closed forms") {
    SECTION("identical stats give zero") {
        dmgan::Rng rng(5);
        std::vector<double> pts(40 * 3);
        for (auto& v : pts) v = rng.normal();
        auto s = dmgan::gaussian_stats(pts, 40, 3);
        CHECK(std::fabs(dmgan::fid(s, s)) < 1e-8);
    }
    SECTION("scalar Gaussians (0,1) vs (1,4)") {
        GaussianStats a, b;
        a.mean = Eigen::VectorXd::Zero(1);
        a.cov = Eigen::MatrixXd::Identity(1, 1);
        b.mean = Eigen::VectorXd::Ones(1);
        b.cov = Eigen::MatrixXd::Identity(1, 1) * 4.0;
        // 1 + 1 + 4 - 2*2 = 2
        CHECK(dmgan::fid(a, b) == Catch::Approx(2.0).margin(1e-8));
    }
    SECTION("diagonal covariances") {
        GaussianStats a, b;
        a.mean = Eigen::VectorXd::Zero(2);
        b.mean = Eigen::VectorXd::Zero(2);
        a.cov = Eigen::MatrixXd::Identity(2, 2);
        b.cov = Eigen::Vector2d(4.0, 9.0).asDiagonal();
        // (1+4-4) + (1+9-6) = 5
        CHECK(dmgan::fid(a, b) == Catch::Approx(5.0).margin(1e-8));
    }
    SECTION("symmetry and nonnegativity") {
        dmgan::Rng rng(7);
        std::vector<double> p1(30 * 4), p2(30 * 4);
        for (auto& v : p1) v = rng.normal();
        for (auto& v : p2) v = rng.normal() * 2.0 + 0.3;
        auto a = dmgan::gaussian_stats(p1, 30, 4);
        auto b = dmgan::gaussian_stats(p2, 30, 4);
        const double ab = dmgan::fid(a, b), ba = dmgan::fid(b, a);
        CHECK(std::fabs(ab - ba) < 1e-8);
        CHECK(ab > -1e-8);
    }
    SECTION("non-symmetric covariance rejected") {
        GaussianStats a, b;
        a.mean = b.mean = Eigen::VectorXd::Zero(2);
        a.cov = Eigen::MatrixXd::Identity(2, 2);
        b.cov = a.cov;
        b.cov(0, 1) = 0.5;  // asymmetric beyond 1e-8
        CHECK_THROWS_AS(dmgan::fid(a, b), std::invalid_argument);
    }
}

TEST_CASE("inception_score") {
    SECTION("constant predictions give exactly 1") {
        std::vector<double> probs;
        for (int i = 0; i < 100; ++i) {
            probs.push_back(0.1);
            probs.push_back(0.6);
            probs.push_back(0.3);
        }
        auto is = dmgan::inception_score(probs, 100, 3);
        CHECK(is.mean == Catch::Approx(1.0).margin(1e-12));
        CHECK(is.std == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("uniform one-hot over 4 classes approaches 4") {
        const std::size_t m = 1000, c = 4;
        std::vector<double> probs(m * c, 0.0);
        for (std::size_t i = 0; i < m; ++i) probs[i * c + i % c] = 1.0;
        auto is = dmgan::inception_score(probs, m, c);
        CHECK(is.mean == Catch::Approx(4.0).margin(0.05));
    }
    SECTION("score lies in [1, C]") {
        dmgan::Rng rng(13);
        std::vector<double> probs(200 * 5);
        for (std::size_t i = 0; i < 200; ++i) {
            double denom = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                probs[i * 5 + j] = rng.uniform() + 1e-3;
                denom += probs[i * 5 + j];
            }
            for (std::size_t j = 0; j < 5; ++j) probs[i * 5 + j] /= denom;
        }
        auto is = dmgan::inception_score(probs, 200, 5);
        CHECK(is.mean >= 1.0 - 1e-9);
        CHECK(is.mean <= 5.0 + 1e-9);
    }
}

TEST_CASE("r_precision") {
    constexpr std::size_t kD = 8;
    dmgan::Rng rng(17);

    SECTION("separable embeddings retrieve perfectly") {
        const std::size_t m = 20;
        std::vector<double> img(m * kD), cap(m * kD);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < kD; ++j) {
                const double v = rng.normal();
                img[i * kD + j] = v;
                cap[i * kD + j] = v;  // true caption == image embedding
            }
        // orthogonal-ish random mismatches are never a better cosine match
        // than the exact duplicate (cosine 1)
        std::vector<double> pool(200 * kD);
        for (auto& v : pool) v = rng.normal();
        auto rp = dmgan::r_precision(img, cap, pool, m, kD, 200, 99, 10);
        CHECK(rp.mean == Catch::Approx(1.0));
        CHECK(rp.std == Catch::Approx(0.0));
    }
    SECTION("degenerate identical embeddings score near 1/100") {
        const std::size_t m = 1000;
        std::vector<double> same(m * kD, 0.5);
        std::vector<double> pool(150 * kD, 0.5);
        auto rp = dmgan::r_precision(same, same, pool, m, kD, 150, 7, 10);
        CHECK(rp.mean >= 0.002);
        CHECK(rp.mean <= 0.03);
    }
    SECTION("deterministic given seed") {
        const std::size_t m = 50;
        std::vector<double> img(m * kD), cap(m * kD), pool(120 * kD);
        for (auto& v : img) v = rng.normal();
        for (auto& v : cap) v = rng.normal();
        for (auto& v : pool) v = rng.normal();
        auto a = dmgan::r_precision(img, cap, pool, m, kD, 120, 3, 10);
        auto b = dmgan::r_precision(img, cap, pool, m, kD, 120, 3, 10);
        CHECK(a.mean == b.mean);
        CHECK(a.std == b.std);
    }
    SECTION("small pool rejected") {
        std::vector<double> img(20 * kD, 1.0), pool(50 * kD, 1.0);
        CHECK_THROWS_AS(dmgan::r_precision(img, img, pool, 20, kD, 50, 1, 10),
                        std::logic_error);
    }
}

TEST_CASE("feature file round trip") {
    dmgan::FeatureMatrix f;
    f.rows = 3;
    f.dim = 2;
    f.values = {1.5, -2.25, 0.125, 3.0, -0.5, 42.0};  // exactly representable in f32
    const std::string path = "feat_test.dmf";
    dmgan::save_features(path, f);
    auto loaded = dmgan::load_features(path);
    std::remove(path.c_str());
    CHECK(loaded.rows == 3);
    CHECK(loaded.dim == 2);
    CHECK(loaded.values == f.values);

    CHECK_THROWS(dmgan::load_features("nonexistent.dmf"));
}
