#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include <proalign/proto_init.hpp>

#include "test_util.hpp"

using namespace proalign;
using testutil::TempDir;

namespace {

// Writes a dataset of train slides with the given patch counts; patch values
// are deterministic from (slide, row, column).
DatasetManifest write_train_slides(const std::filesystem::path& dir, const std::vector<std::size_t>& patch_counts,
                                   std::size_t dim) {
    DatasetManifest manifest;
    for (std::size_t s = 0; s < patch_counts.size(); ++s) {
        EmbeddingMatrix m = EmbeddingMatrix::zeros(patch_counts[s], dim);
        for (std::size_t r = 0; r < m.rows; ++r) {
            for (std::size_t c = 0; c < dim; ++c) {
                m.at(r, c) = static_cast<float>(s * 1000 + r * 10 + c);
            }
        }
        const std::string id = "t" + std::to_string(s);
        write_paem(m, dir / (id + ".paem"));
        manifest.records.push_back({id, id + ".paem", 0, Split::train});
    }
    return manifest;
}

const EmbeddingMatrix kWorkedPool{3, 2, {1, 1, 2, 0, 0, 3}};
const EmbeddingMatrix kWorkedTexts{2, 2, {1, 2, 3, 1}};

}  // namespace

TEST_CASE("per-slide quota floor(n_total/N_train) fills the pool") {
    TempDir tmp;
    const DatasetManifest manifest = write_train_slides(tmp.path, {10, 10, 10, 10}, 3);
    PrototypeInitConfig cfg;
    cfg.n_proto = 2;
    cfg.n_patch_per_proto = 4;  // n_total = 8, quota = 2
    cfg.seed = 42;
    const PatchSamplePool pool = sample_training_patches(manifest, cfg, tmp.path);
    CHECK(pool.matrix.rows == 8);
    CHECK(pool.provenance.size() == 8);
    CHECK_FALSE(pool.shortfall());
    // concatenated in manifest order, two rows per slide
    CHECK(pool.provenance[0].slide_id == "t0");
    CHECK(pool.provenance[2].slide_id == "t1");
    CHECK(pool.provenance[6].slide_id == "t3");
}

TEST_CASE("a single train slide contributes the whole quota") {
    TempDir tmp;
    const DatasetManifest manifest = write_train_slides(tmp.path, {100}, 2);
    PrototypeInitConfig cfg;
    cfg.n_proto = 2;
    cfg.n_patch_per_proto = 5;  // n_total = 10
    const PatchSamplePool pool = sample_training_patches(manifest, cfg, tmp.path);
    CHECK(pool.matrix.rows == 10);
    std::set<std::size_t> rows;
    for (const auto& p : pool.provenance) {
        CHECK(p.slide_id == "t0");
        rows.insert(p.patch_row);
    }
    CHECK(rows.size() == 10);  // sampled without replacement
}

TEST_CASE("slides smaller than the quota contribute everything and flag a shortfall") {
    TempDir tmp;
    const DatasetManifest manifest = write_train_slides(tmp.path, {3, 20}, 2);
    PrototypeInitConfig cfg;
    cfg.n_proto = 2;
    cfg.n_patch_per_proto = 5;  // n_total = 10, quota = 5, slide t0 has only 3
    const PatchSamplePool pool = sample_training_patches(manifest, cfg, tmp.path);
    CHECK(pool.matrix.rows == 8);
    CHECK(pool.shortfall());
}

TEST_CASE("sampling requires a train split and consistent dims") {
    TempDir tmp;
    DatasetManifest manifest;
    manifest.records.push_back({"v0", "v0.paem", 0, Split::val});
    PrototypeInitConfig cfg;
    try {
        sample_training_patches(manifest, cfg, tmp.path);
        FAIL("expected EmptyTrainSplit");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_train_split);
    }

    write_paem(EmbeddingMatrix{2, 2, {1, 2, 3, 4}}, tmp.path / "a.paem");
    write_paem(EmbeddingMatrix{2, 3, {1, 2, 3, 4, 5, 6}}, tmp.path / "b.paem");
    DatasetManifest mixed;
    mixed.records.push_back({"a", "a.paem", 0, Split::train});
    mixed.records.push_back({"b", "b.paem", 0, Split::train});
    try {
        sample_training_patches(mixed, cfg, tmp.path);
        FAIL("expected DimMismatchAcrossSlides");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::dim_mismatch_across_slides);
    }
}

TEST_CASE("sampling is deterministic for a fixed seed") {
    TempDir tmp;
    const DatasetManifest manifest = write_train_slides(tmp.path, {30, 30}, 4);
    PrototypeInitConfig cfg;
    cfg.n_proto = 3;
    cfg.n_patch_per_proto = 4;
    cfg.seed = 7;
    const PatchSamplePool a = sample_training_patches(manifest, cfg, tmp.path);
    const PatchSamplePool b = sample_training_patches(manifest, cfg, tmp.path);
    REQUIRE(a.matrix.data == b.matrix.data);
}

TEST_CASE("patch-text similarity reproduces the worked matrix") {
    const SimMatrix S = compute_patch_text_similarity(kWorkedPool, kWorkedTexts);
    REQUIRE(S.rows == 3);
    REQUIRE(S.cols == 2);
    const double expected[3][2] = {{3, 4}, {2, 6}, {6, 3}};
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(S.at(i, j) == Catch::Approx(expected[i][j]).margin(1e-12));
        }
    }
}

TEST_CASE("identity text rows reproduce the pool matrix") {
    const EmbeddingMatrix identity{2, 2, {1, 0, 0, 1}};
    const SimMatrix S = compute_patch_text_similarity(kWorkedPool, identity);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(S.at(i, j) == Catch::Approx(kWorkedPool.at(i, j)).margin(1e-12));
        }
    }
}

TEST_CASE("a zero pool yields a zero similarity matrix") {
    const EmbeddingMatrix zeros = EmbeddingMatrix::zeros(3, 2);
    const SimMatrix S = compute_patch_text_similarity(zeros, kWorkedTexts);
    for (double v : S.data) CHECK(v == 0.0);
}

TEST_CASE("similarity agrees with a naive reference on random instances") {
    std::mt19937_64 rng(31);
    const EmbeddingMatrix pool = testutil::random_matrix(rng, 200, 32);
    const EmbeddingMatrix texts = testutil::random_matrix(rng, 8, 32);
    const SimMatrix S = compute_patch_text_similarity(pool, texts);
    for (std::size_t i = 0; i < pool.rows; ++i) {
        for (std::size_t j = 0; j < texts.rows; ++j) {
            double ref = 0.0;
            for (std::size_t k = 0; k < 32; ++k) {
                ref += static_cast<double>(pool.at(i, k)) * static_cast<double>(texts.at(j, k));
            }
            REQUIRE(std::abs(S.at(i, j) - ref) < 1e-5);
        }
    }
}

TEST_CASE("initial prototypes continue the worked example") {
    const SimMatrix S = compute_patch_text_similarity(kWorkedPool, kWorkedTexts);
    const auto descriptors = std::vector<PrototypeDescriptor>{};
    const PrototypeBank bank = build_initial_prototypes(kWorkedPool, kWorkedTexts, descriptors, S);
    REQUIRE(bank.n_proto() == 2);
    CHECK(bank.matrix.at(0, 0) == 1.0f);  // t_0 + pool[2] = [1, 5]
    CHECK(bank.matrix.at(0, 1) == 5.0f);
    CHECK(bank.matrix.at(1, 0) == 5.0f);  // t_1 + pool[1] = [5, 1]
    CHECK(bank.matrix.at(1, 1) == 1.0f);
    REQUIRE(bank.sources.size() == 2);
    CHECK(bank.sources[0].pool_row == 2);
    CHECK(bank.sources[1].pool_row == 1);
}

TEST_CASE("single prototype, single patch forces p = t + x") {
    const EmbeddingMatrix pool{1, 2, {0.25f, -1.5f}};
    const EmbeddingMatrix texts{1, 2, {2.0f, 4.0f}};
    const SimMatrix S = compute_patch_text_similarity(pool, texts);
    const PrototypeBank bank = build_initial_prototypes(pool, texts, {}, S);
    CHECK(bank.matrix.at(0, 0) == 2.25f);
    CHECK(bank.matrix.at(0, 1) == 2.5f);
}

TEST_CASE("equal similarities break toward the smallest pool row") {
    // all pool rows identical, so every column is constant
    const EmbeddingMatrix pool{3, 2, {1, 1, 1, 1, 1, 1}};
    const EmbeddingMatrix texts{1, 2, {2, 3}};
    const SimMatrix S = compute_patch_text_similarity(pool, texts);
    const PrototypeBank bank = build_initial_prototypes(pool, texts, {}, S);
    REQUIRE(bank.sources.size() == 1);
    CHECK(bank.sources[0].pool_row == 0);
}

TEST_CASE("argmax choice is invariant under positive pool scaling") {
    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        const EmbeddingMatrix pool = testutil::random_matrix(rng, 15, 4);
        const EmbeddingMatrix texts = testutil::random_matrix(rng, 3, 4);
        EmbeddingMatrix scaled = pool;
        const float c = 0.5f + static_cast<float>(rng() % 50);
        for (float& v : scaled.data) v *= c;
        const PrototypeBank a = build_initial_prototypes(pool, texts, {}, compute_patch_text_similarity(pool, texts));
        const PrototypeBank b =
            build_initial_prototypes(scaled, texts, {}, compute_patch_text_similarity(scaled, texts));
        for (std::size_t j = 0; j < a.sources.size(); ++j) {
            REQUIRE(a.sources[j].pool_row == b.sources[j].pool_row);
        }
    }
}

TEST_CASE("every prototype equals its text plus one pool row exactly") {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        const EmbeddingMatrix pool = testutil::random_matrix(rng, 25, 5);
        const EmbeddingMatrix texts = testutil::random_matrix(rng, 4, 5);
        const PrototypeBank bank =
            build_initial_prototypes(pool, texts, {}, compute_patch_text_similarity(pool, texts));
        for (std::size_t j = 0; j < bank.n_proto(); ++j) {
            bool matched = false;
            for (std::size_t i = 0; i < pool.rows && !matched; ++i) {
                bool all_equal = true;
                for (std::size_t k = 0; k < pool.dim; ++k) {
                    const float expect = static_cast<float>(static_cast<double>(texts.at(j, k)) +
                                                            static_cast<double>(pool.at(i, k)));
                    if (expect != bank.matrix.at(j, k)) {
                        all_equal = false;
                        break;
                    }
                }
                matched = all_equal;
            }
            REQUIRE(matched);
        }
    }
}

TEST_CASE("build rejects an empty pool") {
    EmbeddingMatrix pool;
    pool.dim = 2;
    const SimMatrix S;
    CHECK_THROWS_AS(build_initial_prototypes(pool, kWorkedTexts, {}, S), Error);
}

TEST_CASE("kmeans with k equal to the point count has zero inertia") {
    const EmbeddingMatrix pool{4, 1, {0.0f, 1.0f, 2.0f, 3.0f}};
    KMeansInfo info;
    const PrototypeBank bank = kmeans_init(pool, 4, 9, 100, 1e-6, &info);
    REQUIRE(bank.n_proto() == 4);
    REQUIRE_FALSE(info.inertia_per_iter.empty());
    CHECK(info.inertia_per_iter.back() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("kmeans on two separated 1-D pairs finds both midpoints") {
    const EmbeddingMatrix pool{4, 1, {0.0f, 0.1f, 10.0f, 10.1f}};
    // oracle: enumerate both 2-partitions, minimum inertia is {0,0.1 | 10,10.1}
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 17ull, 99ull}) {
        const PrototypeBank bank = kmeans_init(pool, 2, seed);
        std::vector<float> centroids{bank.matrix.at(0, 0), bank.matrix.at(1, 0)};
        std::sort(centroids.begin(), centroids.end());
        CHECK(centroids[0] == Catch::Approx(0.05).margin(1e-6));
        CHECK(centroids[1] == Catch::Approx(10.05).margin(1e-6));
    }
}

TEST_CASE("kmeans is bit-exact deterministic per seed") {
    std::mt19937_64 rng(71);
    const EmbeddingMatrix pool = testutil::random_matrix(rng, 60, 6);
    const PrototypeBank a = kmeans_init(pool, 5, 1234);
    const PrototypeBank b = kmeans_init(pool, 5, 1234);
    REQUIRE(a.matrix.data == b.matrix.data);
}

TEST_CASE("kmeans rejects k larger than the pool") {
    const EmbeddingMatrix pool{2, 1, {0.0f, 1.0f}};
    try {
        kmeans_init(pool, 3, 1);
        FAIL("expected TooFewPoints");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::too_few_points);
    }
}

TEST_CASE("kmeans inertia is non-increasing across iterations") {
    std::mt19937_64 rng(83);
    for (int trial = 0; trial < 10; ++trial) {
        const EmbeddingMatrix pool = testutil::random_matrix(rng, 80, 4, -10.0f, 10.0f);
        KMeansInfo info;
        kmeans_init(pool, 6, rng(), 100, 0.0, &info);  // tol 0 forces full iteration
        for (std::size_t i = 1; i < info.inertia_per_iter.size(); ++i) {
            REQUIRE(info.inertia_per_iter[i] <= info.inertia_per_iter[i - 1] + 1e-9);
        }
    }
}

TEST_CASE("kmeans survives duplicate points that empty a cluster") {
    const EmbeddingMatrix pool{5, 1, {0.0f, 0.0f, 0.0f, 0.0f, 10.0f}};
    const PrototypeBank bank = kmeans_init(pool, 3, 5);
    REQUIRE(bank.n_proto() == 3);
    for (float v : bank.matrix.data) REQUIRE(std::isfinite(v));
    CHECK(bank.descriptors[0].name == "cluster-0");
}
