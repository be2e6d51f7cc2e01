// Initial prototype construction. Patch-text contrast scores the sampled
// training pool against prototype text embeddings (S = X_proto T^T) and sets
// p_j = t_j + pool row with the highest similarity in column j. k-means over
// the same pool is the prior-art initialization, kept as a baseline.
#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "proalign/core.hpp"
#include "proalign/rng.hpp"
#include "proalign/tensor_io.hpp"

namespace proalign {

struct PatchProvenance {
    std::string slide_id;
    std::size_t patch_row = 0;  // row index in the source slide file
};

struct PatchSamplePool {
    EmbeddingMatrix matrix;
    std::vector<PatchProvenance> provenance;  // one entry per pool row
    std::uint64_t seed = 0;
    std::size_t requested_total = 0;

    bool shortfall() const { return matrix.rows < requested_total; }
};

// Per-slide quota floor(n_total / N_train); each train slide contributes
// min(quota, n_i) distinct rows, sampled without replacement, concatenated
// in manifest order. Slides smaller than the quota contribute everything
// they have; the pool may fall short of n_total.
inline PatchSamplePool sample_training_patches(const DatasetManifest& manifest, const PrototypeInitConfig& cfg,
                                               const std::filesystem::path& base_dir) {
    std::vector<const SlideRecord*> train;
    for (const auto& rec : manifest.records) {
        if (rec.split == Split::train) train.push_back(&rec);
    }
    if (train.empty()) raise(Errc::empty_train_split, "no slides with split=train");

    const std::size_t n_total = cfg.n_total();
    const std::size_t quota = n_total / train.size();

    PatchSamplePool pool;
    pool.seed = cfg.seed;
    pool.requested_total = n_total;

    Rng rng(cfg.seed);
    for (const SlideRecord* rec : train) {
        EmbeddingMatrix slide = read_paem(base_dir / rec->embedding_path);
        if (pool.matrix.dim == 0) {
            pool.matrix.dim = slide.dim;
        } else if (slide.dim != pool.matrix.dim) {
            raise(Errc::dim_mismatch_across_slides, rec->slide_id + " has dim " + std::to_string(slide.dim) +
                                                        ", pool dim is " + std::to_string(pool.matrix.dim));
        }
        const std::size_t take = quota < slide.rows ? quota : slide.rows;
        const std::vector<std::size_t> picked = rng.sample_without_replacement(slide.rows, take);
        for (std::size_t r : picked) {
            const auto row = slide.row(r);
            pool.matrix.data.insert(pool.matrix.data.end(), row.begin(), row.end());
            pool.provenance.push_back(PatchProvenance{rec->slide_id, r});
        }
        pool.matrix.rows += picked.size();
    }
    if (pool.matrix.rows == 0) raise(Errc::empty_pool, "sampled pool has no rows");
    return pool;
}

// S[i][j] = dot(pool row i, texts row j), 64-bit accumulation.
inline SimMatrix compute_patch_text_similarity(const EmbeddingMatrix& pool, const EmbeddingMatrix& texts) {
    return dot_rows(pool, texts);
}

// For each prototype j, pick i* = argmax_i S[i][j] (ties toward the smaller
// index) and set p_j = t_j + pool row i*. The chosen row is recorded as
// provenance on the bank.
inline PrototypeBank build_initial_prototypes(const EmbeddingMatrix& pool, const EmbeddingMatrix& texts,
                                              const std::vector<PrototypeDescriptor>& descriptors,
                                              const SimMatrix& S,
                                              const std::vector<PatchProvenance>* provenance = nullptr) {
    if (pool.rows == 0) raise(Errc::empty_pool, "build_initial_prototypes: empty pool");
    if (S.rows != pool.rows || S.cols != texts.rows) {
        raise(Errc::shape_mismatch, "build_initial_prototypes: S is " + std::to_string(S.rows) + "x" +
                                        std::to_string(S.cols) + ", expected " + std::to_string(pool.rows) + "x" +
                                        std::to_string(texts.rows));
    }
    if (pool.dim != texts.dim) {
        raise(Errc::dim_mismatch, "build_initial_prototypes: pool dim " + std::to_string(pool.dim) +
                                      " vs texts dim " + std::to_string(texts.dim));
    }

    PrototypeBank bank;
    bank.stage = BankStage::initial;
    bank.matrix = EmbeddingMatrix::zeros(texts.rows, texts.dim);
    bank.descriptors = descriptors;
    for (std::size_t j = 0; j < texts.rows; ++j) {
        std::size_t best = 0;
        double best_sim = S.at(0, j);
        for (std::size_t i = 1; i < pool.rows; ++i) {
            if (S.at(i, j) > best_sim) {
                best_sim = S.at(i, j);
                best = i;
            }
        }
        for (std::size_t k = 0; k < texts.dim; ++k) {
            bank.matrix.at(j, k) = static_cast<float>(static_cast<double>(texts.at(j, k)) +
                                                      static_cast<double>(pool.at(best, k)));
        }
        SourcePatch src;
        src.pool_row = best;
        if (provenance && best < provenance->size()) {
            src.slide_id = (*provenance)[best].slide_id;
            src.patch_row = (*provenance)[best].patch_row;
        }
        bank.sources.push_back(src);
    }
    return bank;
}

struct KMeansInfo {
    std::vector<double> inertia_per_iter;
    std::size_t iterations = 0;
};

namespace detail {

inline double sq_distance(std::span<const float> x, const double* c, std::size_t d) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(x[k]) - c[k];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded to
// the point farthest from its assigned centroid. Stops when the largest
// centroid shift drops below tol or after max_iters.
inline PrototypeBank kmeans_init(const EmbeddingMatrix& pool, std::size_t k, std::uint64_t seed,
                                 std::size_t max_iters = 100, double tol = 1e-6, KMeansInfo* info = nullptr) {
    require_valid(pool, "kmeans_init");
    if (pool.rows < k) {
        raise(Errc::too_few_points, "kmeans_init: " + std::to_string(pool.rows) + " points for k=" +
                                        std::to_string(k));
    }
    if (k == 0) raise(Errc::bad_config, "kmeans_init: k must be >= 1");

    const std::size_t n = pool.rows;
    const std::size_t d = pool.dim;
    Rng rng(seed);

    // k-means++ seeding with D^2 weighting
    std::vector<double> centroids(k * d, 0.0);
    std::vector<double> min_sq(n, std::numeric_limits<double>::max());
    {
        const std::size_t first = rng.next_index(n);
        for (std::size_t c = 0; c < d; ++c) centroids[c] = pool.at(first, c);
        for (std::size_t j = 1; j < k; ++j) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dist = detail::sq_distance(pool.row(i), centroids.data() + (j - 1) * d, d);
                if (dist < min_sq[i]) min_sq[i] = dist;
                total += min_sq[i];
            }
            std::size_t pick = 0;
            if (total > 0.0) {
                const double target = rng.next_unit() * total;
                double running = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    running += min_sq[i];
                    if (running >= target) {
                        pick = i;
                        break;
                    }
                    pick = i;
                }
            } else {
                pick = rng.next_index(n);
            }
            for (std::size_t c = 0; c < d; ++c) centroids[j * d + c] = pool.at(pick, c);
        }
    }

    std::vector<std::size_t> assign(n, 0);
    std::vector<double> next(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    std::size_t iter = 0;
    for (; iter < max_iters; ++iter) {
        // assignment step
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = detail::sq_distance(pool.row(i), centroids.data(), d);
            for (std::size_t j = 1; j < k; ++j) {
                const double dist = detail::sq_distance(pool.row(i), centroids.data() + j * d, d);
                if (dist < best_d) {
                    best_d = dist;
                    best = j;
                }
            }
            assign[i] = best;
            inertia += best_d;
        }
        if (info) info->inertia_per_iter.push_back(inertia);

        // update step, fixed ascending order
        std::fill(next.begin(), next.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = pool.row(i);
            double* c = next.data() + assign[i] * d;
            for (std::size_t kk = 0; kk < d; ++kk) c[kk] += row[kk];
            ++counts[assign[i]];
        }
        // re-seed empty clusters to the point farthest from its assigned
        // centroid, pulling it out of the donor's sum before dividing
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] != 0) continue;
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i]] < 2) continue;
                const double dist = detail::sq_distance(pool.row(i), centroids.data() + assign[i] * d, d);
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            if (far == n) continue;  // nothing to steal; cluster stays at its old centroid
            const auto row = pool.row(far);
            double* donor = next.data() + assign[far] * d;
            for (std::size_t c = 0; c < d; ++c) {
                donor[c] -= row[c];
                next[j * d + c] = row[c];
            }
            --counts[assign[far]];
            counts[j] = 1;
            assign[far] = j;
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) {
                // keep the previous centroid when no donor point exists
                for (std::size_t c = 0; c < d; ++c) next[j * d + c] = centroids[j * d + c];
                continue;
            }
            for (std::size_t c = 0; c < d; ++c) next[j * d + c] /= static_cast<double>(counts[j]);
        }

        double max_shift = 0.0;
        for (std::size_t j = 0; j < k * d; ++j) {
            const double shift = std::abs(next[j] - centroids[j]);
            if (shift > max_shift) max_shift = shift;
        }
        centroids = next;
        if (max_shift < tol) {
            ++iter;
            break;
        }
    }
    if (info) info->iterations = iter;

    PrototypeBank bank;
    bank.stage = BankStage::initial;
    bank.matrix = EmbeddingMatrix::zeros(k, d);
    for (std::size_t j = 0; j < k; ++j) {
        PrototypeDescriptor desc;
        desc.index = j;
        desc.name = "cluster-" + std::to_string(j);
        desc.text_embedding.resize(d);
        for (std::size_t c = 0; c < d; ++c) {
            bank.matrix.at(j, c) = static_cast<float>(centroids[j * d + c]);
            desc.text_embedding[c] = bank.matrix.at(j, c);
        }
        bank.descriptors.push_back(std::move(desc));
    }
    return bank;
}

}  // namespace proalign
