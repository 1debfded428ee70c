#include <catch2/catch_amalgamated.hpp>

#include "dmgan/memory.hpp"
#include "gradcheck.hpp"

using dmgan::DynamicMemory;
using dmgan::ParamSet;
using dmgan::Tensor;
using T64 = Tensor<double>;

namespace {

constexpr std::size_t kNw = 4, kNr = 3, kNm = 4;

struct Fixture {
    ParamSet<double> params;
    DynamicMemory<double> mem;
    Fixture(std::uint64_t seed = 5) {
        dmgan::Rng rng(seed);
        mem = DynamicMemory<double>(kNw, kNr, kNm, rng, params, "mem");
    }
    std::vector<double> p(const std::string& name) const {
        return params.find(name).data();
    }
};

T64 randn(dmgan::Shape shape, std::uint64_t seed, bool rg = false) {
    dmgan::Rng rng(seed);
    return T64::randn(std::move(shape), rng, 1.0, rg);
}

// Scalar oracle for gated writing, straight from the formulas.
struct GatedWriteOracle {
    std::vector<double> slots, gates;
    GatedWriteOracle(const Fixture& fx, const T64& words, const T64& image) {
        const std::size_t t = words.dim(0), n = image.dim(0);
        const auto A = fx.p("mem.gateA"), B = fx.p("mem.gateB");
        const double bias = fx.p("mem.gate_bias")[0];
        const auto Mw_w = fx.p("mem.Mw.w"), Mw_b = fx.p("mem.Mw.b");
        const auto Mr_w = fx.p("mem.Mr.w"), Mr_b = fx.p("mem.Mr.b");

        std::vector<double> rbar(kNr, 0.0);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < kNr; ++c) rbar[c] += image.data()[j * kNr + c];
        for (auto& v : rbar) v /= static_cast<double>(n);

        double img_term = bias;
        for (std::size_t c = 0; c < kNr; ++c) img_term += B[c] * rbar[c];

        std::vector<double> mr(kNm);
        for (std::size_t m = 0; m < kNm; ++m) {
            mr[m] = Mr_b[m];
            for (std::size_t c = 0; c < kNr; ++c) mr[m] += rbar[c] * Mr_w[c * kNm + m];
        }
        slots.resize(t * kNm);
        gates.resize(t);
        for (std::size_t i = 0; i < t; ++i) {
            double pre = img_term;
            for (std::size_t c = 0; c < kNw; ++c) pre += A[c] * words.data()[i * kNw + c];
            gates[i] = 1.0 / (1.0 + std::exp(-pre));
            for (std::size_t m = 0; m < kNm; ++m) {
                double mw = Mw_b[m];
                for (std::size_t c = 0; c < kNw; ++c)
                    mw += words.data()[i * kNw + c] * Mw_w[c * kNm + m];
                slots[i * kNm + m] = mw * gates[i] + mr[m] * (1.0 - gates[i]);
            }
        }
    }
};

}  // namespace

TEST_CASE("write_naive") {
    Fixture fx;
    auto words = randn({3, kNw}, 17);

    SECTION("identity map copies word features") {
        auto w = fx.params.find("mem.M.w");
        std::fill(w.data().begin(), w.data().end(), 0.0);
        for (std::size_t i = 0; i < kNw; ++i) w.data()[i * kNm + i] = 1.0;  // N_w == N_m here
        auto slots = fx.mem.write_naive(words).slots;
        for (std::size_t i = 0; i < words.numel(); ++i)
            CHECK(slots.data()[i] == Catch::Approx(words.data()[i]));
    }
    SECTION("zero map gives zero slots") {
        auto w = fx.params.find("mem.M.w");
        std::fill(w.data().begin(), w.data().end(), 0.0);
        auto slots = fx.mem.write_naive(words).slots;
        for (double v : slots.data()) CHECK(v == 0.0);
    }
    SECTION("random weights match matmul oracle") {
        auto slots = fx.mem.write_naive(words).slots;
        const auto Mw = fx.p("mem.M.w"), Mb = fx.p("mem.M.b");
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t m = 0; m < kNm; ++m) {
                double expect = Mb[m];
                for (std::size_t c = 0; c < kNw; ++c)
                    expect += words.data()[i * kNw + c] * Mw[c * kNm + m];
                CHECK(std::fabs(slots.data()[i * kNm + m] - expect) < 1e-6);
            }
    }
}

TEST_CASE("write_gated") {
    Fixture fx;
    auto words = randn({3, kNw}, 23);
    auto image = randn({4, kNr}, 29);

    SECTION("gate pinned open reduces to Mw(w_i)") {
        fx.params.find("mem.gate_bias").data()[0] = 1e4;
        auto res = fx.mem.write_gated(words, image);
        auto mw = dmgan::add_rowvec(dmgan::matmul(words, fx.params.find("mem.Mw.w")),
                                    fx.params.find("mem.Mw.b"));
        for (std::size_t i = 0; i < res.slots.numel(); ++i)
            CHECK(res.slots.data()[i] == Catch::Approx(mw.data()[i]).margin(1e-12));
    }
    SECTION("gate pinned closed gives identical image-only slots") {
        fx.params.find("mem.gate_bias").data()[0] = -1e4;
        auto res = fx.mem.write_gated(words, image);
        for (std::size_t i = 1; i < 3; ++i)
            for (std::size_t m = 0; m < kNm; ++m)
                CHECK(res.slots.data()[i * kNm + m] ==
                      Catch::Approx(res.slots.data()[m]).margin(1e-12));
    }
    SECTION("matches scalar formula oracle; gates in (0,1)") {
        auto res = fx.mem.write_gated(words, image);
        GatedWriteOracle oracle(fx, words, image);
        for (std::size_t i = 0; i < res.slots.numel(); ++i)
            CHECK(std::fabs(res.slots.data()[i] - oracle.slots[i]) < 1e-6);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(std::fabs(res.gates.data()[i] - oracle.gates[i]) < 1e-6);
            CHECK(res.gates.data()[i] > 0.0);
            CHECK(res.gates.data()[i] < 1.0);
        }
    }
    SECTION("reduces to write_naive when gate is open and weights shared") {
        fx.params.find("mem.gate_bias").data()[0] = 1e4;
        auto mw = fx.params.find("mem.Mw.w"), m = fx.params.find("mem.M.w");
        auto mwb = fx.params.find("mem.Mw.b"), mb = fx.params.find("mem.M.b");
        m.data() = mw.data();
        mb.data() = mwb.data();
        auto gated = fx.mem.write_gated(words, image);
        auto naive = fx.mem.write_naive(words);
        for (std::size_t i = 0; i < gated.slots.numel(); ++i)
            CHECK(gated.slots.data()[i] == Catch::Approx(naive.slots.data()[i]).margin(1e-12));
    }
}

TEST_CASE("key_address") {
    Fixture fx;
    auto image = randn({5, kNr}, 31);

    SECTION("single slot gets all the mass") {
        dmgan::MemorySlots<double> mem{randn({1, kNm}, 37), {}};
        auto alpha = fx.mem.key_address(mem, image);
        for (double v : alpha.data()) CHECK(v == Catch::Approx(1.0));
    }
    SECTION("identical slots share mass uniformly") {
        auto one = randn({1, kNm}, 41);
        dmgan::MemorySlots<double> mem{dmgan::repeat_rows(one, 4), {}};
        auto alpha = fx.mem.key_address(mem, image);
        for (double v : alpha.data()) CHECK(v == Catch::Approx(0.25));
    }
    SECTION("matches exp/normalize oracle and columns sum to 1") {
        dmgan::MemorySlots<double> mem{randn({3, kNm}, 43), {}};
        auto alpha = fx.mem.key_address(mem, image);
        auto keys = dmgan::add_rowvec(dmgan::matmul(mem.slots, fx.params.find("mem.phiK.w")),
                                      fx.params.find("mem.phiK.b"));
        for (std::size_t j = 0; j < 5; ++j) {
            double denom = 0.0;
            std::vector<double> e(3);
            for (std::size_t i = 0; i < 3; ++i) {
                double dot = 0.0;
                for (std::size_t c = 0; c < kNr; ++c)
                    dot += keys.data()[i * kNr + c] * image.data()[j * kNr + c];
                e[i] = std::exp(dot);
                denom += e[i];
            }
            double colsum = 0.0;
            for (std::size_t i = 0; i < 3; ++i) {
                CHECK(std::fabs(alpha.data()[i * 5 + j] - e[i] / denom) < 1e-6);
                colsum += alpha.data()[i * 5 + j];
            }
            CHECK(colsum == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("value_read") {
    Fixture fx;

    SECTION("single slot broadcasts phiV(m_1)") {
        dmgan::MemorySlots<double> mem{randn({1, kNm}, 47), {}};
        auto alpha = T64::full({1, 4}, 1.0);
        auto out = fx.mem.value_read(mem, alpha);
        auto expect = dmgan::add_rowvec(dmgan::matmul(mem.slots, fx.params.find("mem.phiV.w")),
                                        fx.params.find("mem.phiV.b"));
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t c = 0; c < kNr; ++c)
                CHECK(out.data()[j * kNr + c] == Catch::Approx(expect.data()[c]));
    }
    SECTION("uniform weights average the value slots") {
        dmgan::MemorySlots<double> mem{randn({4, kNm}, 53), {}};
        auto alpha = T64::full({4, 2}, 0.25);
        auto out = fx.mem.value_read(mem, alpha);
        auto values = dmgan::add_rowvec(dmgan::matmul(mem.slots, fx.params.find("mem.phiV.w")),
                                        fx.params.find("mem.phiV.b"));
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t c = 0; c < kNr; ++c) {
                double avg = 0.0;
                for (std::size_t i = 0; i < 4; ++i) avg += values.data()[i * kNr + c];
                avg /= 4.0;
                CHECK(out.data()[j * kNr + c] == Catch::Approx(avg));
            }
    }
    SECTION("random instance matches double-loop oracle") {
        dmgan::MemorySlots<double> mem{randn({3, kNm}, 59), {}};
        auto alpha = dmgan::softmax(randn({3, 6}, 61), 0);
        auto out = fx.mem.value_read(mem, alpha);
        auto values = dmgan::add_rowvec(dmgan::matmul(mem.slots, fx.params.find("mem.phiV.w")),
                                        fx.params.find("mem.phiV.b"));
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t c = 0; c < kNr; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < 3; ++i)
                    acc += alpha.data()[i * 6 + j] * values.data()[i * kNr + c];
                CHECK(std::fabs(out.data()[j * kNr + c] - acc) < 1e-6);
            }
    }
}

TEST_CASE("respond_naive") {
    auto o = randn({4, kNr}, 67);
    auto image = randn({4, kNr}, 71);
    auto out = DynamicMemory<double>::respond_naive(o, image);
    CHECK(out.shape() == dmgan::Shape{4, 2 * kNr});
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < kNr; ++c) {
            CHECK(out.data()[j * 2 * kNr + c] == o.data()[j * kNr + c]);
            CHECK(out.data()[j * 2 * kNr + kNr + c] == image.data()[j * kNr + c]);
        }
    CHECK_THROWS_AS(DynamicMemory<double>::respond_naive(o, randn({3, kNr}, 73)),
                    std::invalid_argument);
}

TEST_CASE("respond_gated") {
    Fixture fx;
    auto o = randn({5, kNr}, 79);
    auto image = randn({5, kNr}, 83);

    SECTION("gate pinned open returns memory output") {
        fx.params.find("mem.resp_bias").data()[0] = 1e4;
        auto out = fx.mem.respond_gated(o, image);
        for (std::size_t i = 0; i < o.numel(); ++i)
            CHECK(out.data()[i] == Catch::Approx(o.data()[i]).margin(1e-12));
    }
    SECTION("gate pinned closed returns image features") {
        fx.params.find("mem.resp_bias").data()[0] = -1e4;
        auto out = fx.mem.respond_gated(o, image);
        for (std::size_t i = 0; i < image.numel(); ++i)
            CHECK(out.data()[i] == Catch::Approx(image.data()[i]).margin(1e-12));
    }
    SECTION("matches per-pixel oracle and stays on the o-r segment") {
        auto out = fx.mem.respond_gated(o, image);
        const auto W = fx.p("mem.respW");
        const double b = fx.p("mem.resp_bias")[0];
        for (std::size_t j = 0; j < 5; ++j) {
            double pre = b;
            for (std::size_t c = 0; c < kNr; ++c) pre += W[c] * o.data()[j * kNr + c];
            for (std::size_t c = 0; c < kNr; ++c) pre += W[kNr + c] * image.data()[j * kNr + c];
            const double g = 1.0 / (1.0 + std::exp(-pre));
            for (std::size_t c = 0; c < kNr; ++c) {
                const double expect =
                    o.data()[j * kNr + c] * g + image.data()[j * kNr + c] * (1.0 - g);
                CHECK(std::fabs(out.data()[j * kNr + c] - expect) < 1e-6);
                const double lo = std::min(o.data()[j * kNr + c], image.data()[j * kNr + c]);
                const double hi = std::max(o.data()[j * kNr + c], image.data()[j * kNr + c]);
                CHECK(out.data()[j * kNr + c] >= lo - 1e-12);
                CHECK(out.data()[j * kNr + c] <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("full gated refinement block gradcheck (T=3, N=4)") {
    Fixture fx(13);
    auto words = randn({3, kNw}, 89, true);
    auto image = randn({4, kNr}, 97, true);
    std::vector<Tensor<double>> leaves{words, image};
    for (auto& [name, t] : fx.params.items()) leaves.push_back(t);
    double err = dmgan::test::gradcheck(leaves, [&] {
        auto mem = fx.mem.write_gated(words, image);
        auto alpha = fx.mem.key_address(mem, image);
        auto o = fx.mem.value_read(mem, alpha);
        auto r_new = fx.mem.respond_gated(o, image);
        return dmgan::sum(dmgan::mul(r_new, r_new));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("top_k_words") {
    SECTION("uniform alpha with distinct gates") {
        std::vector<double> alpha(4 * 3, 0.25);
        std::vector<double> gates{0.2, 0.9, 0.5, 0.7};
        auto r = dmgan::top_k_words(alpha, 4, 3, gates, 3);
        REQUIRE(r.by_write_gate.size() == 3);
        CHECK(r.by_write_gate[0].first == 1);
        CHECK(r.by_write_gate[1].first == 3);
        CHECK(r.by_write_gate[2].first == 2);
        // addressing scores all tie -> index order
        CHECK(r.by_addressing[0].first == 0);
        CHECK(r.by_addressing[1].first == 1);
        CHECK(r.by_addressing[2].first == 2);
    }
    SECTION("k = T yields a permutation") {
        dmgan::Rng rng(101);
        std::vector<double> alpha(5 * 4);
        for (auto& v : alpha) v = rng.uniform();
        std::vector<double> gates(5);
        for (auto& v : gates) v = rng.uniform();
        auto r = dmgan::top_k_words(alpha, 5, 4, gates, 5);
        std::vector<bool> seen(5, false);
        for (auto& [idx, score] : r.by_addressing) seen[idx] = true;
        for (bool s : seen) CHECK(s);
    }
    SECTION("prefix matches a full-sort oracle") {
        dmgan::Rng rng(103);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> alpha(6 * 5);
            for (auto& v : alpha) v = rng.uniform();
            std::vector<double> gates(6);
            for (auto& v : gates) v = rng.uniform();
            auto r = dmgan::top_k_words(alpha, 6, 5, gates, 4);

            std::vector<double> means(6, 0.0);
            for (std::size_t i = 0; i < 6; ++i) {
                for (std::size_t j = 0; j < 5; ++j) means[i] += alpha[i * 5 + j];
                means[i] /= 5.0;
            }
            std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return means[a] > means[b]; });
            for (std::size_t i = 0; i < 4; ++i) CHECK(r.by_addressing[i].first == idx[i]);
        }
    }
    SECTION("k > T throws") {
        CHECK_THROWS_AS(dmgan::top_k_words(std::vector<double>(2, 0.5), 2, 1, {}, 3),
                        std::invalid_argument);
    }
}
