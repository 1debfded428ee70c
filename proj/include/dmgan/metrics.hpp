// Evaluation metrics: Inception Score, Frechet distance between feature
// Gaussians, and R-precision retrieval. Pure functions over row-major
// double matrices; no autodiff involvement.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmgan/rng.hpp"

namespace dmgan {

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // symmetric, unbiased estimator
};

// Sample mean and unbiased covariance, explicitly symmetrized.
inline GaussianStats gaussian_stats(const std::vector<double>& features,
                                    std::size_t m, std::size_t d) {
    if (m < 2) throw std::logic_error("gaussian_stats: need at least 2 samples");
    if (features.size() != m * d) throw std::invalid_argument("gaussian_stats: size mismatch");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        x(features.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    GaussianStats out;
    out.mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - out.mean.transpose();
    out.cov = centered.transpose() * centered / static_cast<double>(m - 1);
    out.cov = 0.5 * (out.cov + out.cov.transpose());
    return out;
}

namespace detail {

// Eigendecomposition-based PSD square root; eigenvalues below -1e-10 are a
// numerical error, small negatives are clamped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, const char* what) {
    Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    Eigen::VectorXd vals = eig.eigenvalues();
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals[i] < -1e-10)
            throw std::runtime_error(std::string(what) +
                                     ": eigenvalue below -1e-10, matrix not PSD");
        vals[i] = std::sqrt(std::max(vals[i], 0.0));
    }
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

inline void check_symmetric(const Eigen::MatrixXd& s, const char* what) {
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8)
        throw std::invalid_argument(std::string(what) + ": covariance not symmetric");
}

}  // namespace detail

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the cross term
// computed as sqrtm(S1^{1/2} S2 S1^{1/2}) so only symmetric
// eigendecompositions are needed.
inline double fid(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size())
        throw std::invalid_argument("fid: dimension mismatch");
    detail::check_symmetric(a.cov, "fid");
    detail::check_symmetric(b.cov, "fid");
    const Eigen::MatrixXd s1h = detail::psd_sqrt(a.cov, "fid");
    const Eigen::MatrixXd cross = detail::psd_sqrt(s1h * b.cov * s1h, "fid cross term");
    const double mean_term = (a.mean - b.mean).squaredNorm();
    return mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
}

// exp( mean_x KL(p(y|x) || p_marginal) ) per split; mean and (population)
// std over splits. Probabilities are floored at 1e-12 before any log.
inline MeanStd inception_score(const std::vector<double>& probs, std::size_t m,
                               std::size_t c, std::size_t splits = 10) {
    if (probs.size() != m * c) throw std::invalid_argument("inception_score: size mismatch");
    if (m < splits) throw std::invalid_argument("inception_score: fewer samples than splits");
    constexpr double kEps = 1e-12;

    std::vector<double> scores;
    const std::size_t chunk = m / splits;
    for (std::size_t s = 0; s < splits; ++s) {
        const std::size_t begin = s * chunk;
        const std::size_t end = (s + 1 == splits) ? m : begin + chunk;
        std::vector<double> marginal(c, 0.0);
        for (std::size_t i = begin; i < end; ++i)
            for (std::size_t j = 0; j < c; ++j) marginal[j] += probs[i * c + j];
        for (auto& v : marginal) v /= static_cast<double>(end - begin);

        double mean_kl = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            double kl = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::max(probs[i * c + j], kEps);
                kl += p * (std::log(p) - std::log(std::max(marginal[j], kEps)));
            }
            mean_kl += kl;
        }
        scores.push_back(std::exp(mean_kl / static_cast<double>(end - begin)));
    }
    MeanStd out;
    for (double s : scores) out.mean += s;
    out.mean /= static_cast<double>(scores.size());
    for (double s : scores) out.std += (s - out.mean) * (s - out.mean);
    out.std = std::sqrt(out.std / static_cast<double>(scores.size()));
    return out;
}

// R-precision with R=1: for each image, rank its true caption against 99
// mismatches sampled without replacement from the pool; candidate order is
// shuffled per query so degenerate ties resolve uniformly. Scores are
// averaged per fold; mean and std are over folds. Deterministic per seed.
inline MeanStd r_precision(const std::vector<double>& image_embs,
                           const std::vector<double>& caption_embs,
                           const std::vector<double>& mismatch_pool,
                           std::size_t m, std::size_t d, std::size_t pool_size,
                           std::uint64_t seed, std::size_t folds = 10) {
    constexpr std::size_t kCandidates = 100, kR = 1;
    if (image_embs.size() != m * d || caption_embs.size() != m * d)
        throw std::invalid_argument("r_precision: embedding size mismatch");
    if (pool_size < kCandidates - kR)
        throw std::logic_error("r_precision: mismatch pool smaller than 99");
    if (m < folds) throw std::invalid_argument("r_precision: fewer queries than folds");

    auto cosine = [d](const double* a, const double* b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-24);
    };

    std::vector<double> per_query(m);
    for (std::size_t q = 0; q < m; ++q) {
        Rng rng = derive_rng(seed, "rprecision", q);
        // sample 99 distinct pool indices (partial Fisher-Yates)
        std::vector<std::size_t> pool_ids(pool_size);
        std::iota(pool_ids.begin(), pool_ids.end(), 0);
        for (std::size_t i = 0; i < kCandidates - kR; ++i)
            std::swap(pool_ids[i], pool_ids[i + rng.below(pool_size - i)]);

        // candidate 0 is the true caption, then shuffle all positions
        std::vector<const double*> candidates;
        candidates.push_back(caption_embs.data() + q * d);
        for (std::size_t i = 0; i < kCandidates - kR; ++i)
            candidates.push_back(mismatch_pool.data() + pool_ids[i] * d);
        std::vector<std::size_t> order(kCandidates);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = 0; i + 1 < kCandidates; ++i)
            std::swap(order[i], order[i + rng.below(kCandidates - i)]);

        const double* img = image_embs.data() + q * d;
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t i = 0; i < kCandidates; ++i) {
            const double sim = cosine(img, candidates[order[i]]);
            if (sim > best_sim) {  // strict: ties keep the lower index
                best_sim = sim;
                best = order[i];
            }
        }
        per_query[q] = best == 0 ? 1.0 : 0.0;
    }

    MeanStd out;
    std::vector<double> fold_scores;
    const std::size_t chunk = m / folds;
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t begin = f * chunk;
        const std::size_t end = (f + 1 == folds) ? m : begin + chunk;
        double acc = 0.0;
        for (std::size_t q = begin; q < end; ++q) acc += per_query[q];
        fold_scores.push_back(acc / static_cast<double>(end - begin));
    }
    for (double s : fold_scores) out.mean += s;
    out.mean /= static_cast<double>(fold_scores.size());
    for (double s : fold_scores) out.std += (s - out.mean) * (s - out.mean);
    out.std = std::sqrt(out.std / static_cast<double>(fold_scores.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Feature file: "DMF1", u32-LE rows, u32-LE dim, then rows*dim f32 LE.

struct FeatureMatrix {
    std::size_t rows = 0, dim = 0;
    std::vector<double> values;  // row-major
};

inline void save_features(const std::string& path, const FeatureMatrix& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_features: cannot write " + path);
    out.write("DMF1", 4);
    auto write_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    write_u32(static_cast<std::uint32_t>(f.rows));
    write_u32(static_cast<std::uint32_t>(f.dim));
    for (double v : f.values) {
        const float fv = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&fv), 4);
    }
}

inline FeatureMatrix load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_features: cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "DMF1")
        throw std::runtime_error("load_features: bad magic in " + path);
    auto read_u32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    FeatureMatrix f;
    f.rows = read_u32();
    f.dim = read_u32();
    f.values.resize(f.rows * f.dim);
    for (auto& v : f.values) {
        float fv;
        in.read(reinterpret_cast<char*>(&fv), 4);
        v = fv;
    }
    if (!in) throw std::runtime_error("load_features: truncated file " + path);
    return f;
}

}  // namespace dmgan
