// Synthetic datasets with planted prototype structure, plus the naive
// reference pipeline used as an independent oracle in tests. Prototype
// centers sit on a sphere (equal norms keep dot-product argmax equivalent to
// nearest-center) rescaled so the minimum pairwise distance matches the
// configured separation; classes differ by sparse Dirichlet mixtures over
// prototypes; patches are center + Gaussian noise.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "proalign/core.hpp"
#include "proalign/rng.hpp"
#include "proalign/tensor_io.hpp"

namespace proalign {

struct SynthConfig {
    std::size_t n_proto = 16;
    std::size_t dim = 32;
    std::size_t train_slides = 200;
    std::size_t val_slides = 60;
    std::size_t test_slides = 60;
    std::size_t patches_lo = 50;
    std::size_t patches_hi = 200;
    double center_separation = 4.0;  // in units of noise_std
    double noise_std = 1.0;
    std::size_t n_classes = 4;
    double mixture_alpha = 0.25;
    std::uint64_t seed = 1;
};

struct PlantedTruth {
    EmbeddingMatrix centers;                                    // n_proto x dim
    std::vector<std::vector<double>> class_mixtures;            // n_classes x n_proto
    std::map<std::string, std::vector<std::size_t>> patch_prototypes;  // per slide
};

struct SynthDataset {
    DatasetManifest manifest;
    PlantedTruth truth;
    std::vector<PrototypeDescriptor> text_bank;
};

inline void validate_synth_config(const SynthConfig& cfg) {
    if (cfg.n_proto < 1 || cfg.dim < 1) raise(Errc::bad_config, "synth: n_proto and dim must be >= 1");
    if (cfg.patches_lo < 1 || cfg.patches_hi < cfg.patches_lo) {
        raise(Errc::bad_config, "synth: need 1 <= patches_lo <= patches_hi");
    }
    if (!(cfg.center_separation > 0.0)) raise(Errc::bad_config, "synth: center_separation must be > 0");
    if (cfg.noise_std < 0.0) raise(Errc::bad_config, "synth: noise_std must be >= 0");
    if (cfg.n_classes < 1) raise(Errc::bad_config, "synth: n_classes must be >= 1");
    if (!(cfg.mixture_alpha > 0.0)) raise(Errc::bad_config, "synth: mixture_alpha must be > 0");
    if (cfg.train_slides + cfg.val_slides + cfg.test_slides < 1) {
        raise(Errc::bad_config, "synth: at least one slide required");
    }
}

namespace detail {

inline double min_pairwise_distance(const EmbeddingMatrix& m) {
    double best = std::numeric_limits<double>::max();
    for (std::size_t a = 0; a + 1 < m.rows; ++a) {
        for (std::size_t b = a + 1; b < m.rows; ++b) {
            double sq = 0.0;
            for (std::size_t k = 0; k < m.dim; ++k) {
                const double diff = static_cast<double>(m.at(a, k)) - static_cast<double>(m.at(b, k));
                sq += diff * diff;
            }
            best = std::min(best, std::sqrt(sq));
        }
    }
    return best;
}

}  // namespace detail

// Writes a self-contained dataset directory: manifest.csv, slides/*.paem,
// text_bank.json, truth.json. Byte-identical for identical configs.
inline SynthDataset generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    validate_synth_config(cfg);
    std::filesystem::create_directories(out_dir / "slides");

    SynthDataset ds;
    Rng rng(cfg.seed);

    // centers: uniform directions at radius sqrt(dim), rescaled so the
    // minimum pairwise distance equals separation * noise_std
    ds.truth.centers = EmbeddingMatrix::zeros(cfg.n_proto, cfg.dim);
    const double radius = std::sqrt(static_cast<double>(cfg.dim));
    for (std::size_t j = 0; j < cfg.n_proto; ++j) {
        std::vector<double> dir(cfg.dim);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& v : dir) {
                v = rng.next_normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (std::size_t k = 0; k < cfg.dim; ++k) {
            ds.truth.centers.at(j, k) = static_cast<float>(dir[k] / norm * radius);
        }
    }
    if (cfg.n_proto > 1 && cfg.noise_std > 0.0) {
        const double target = cfg.center_separation * cfg.noise_std;
        const double current = detail::min_pairwise_distance(ds.truth.centers);
        if (current > 0.0) {
            const double scale = target / current;
            for (float& v : ds.truth.centers.data) v = static_cast<float>(v * scale);
        }
    }

    // text embeddings: center + 0.1 * noise_std perturbation
    for (std::size_t j = 0; j < cfg.n_proto; ++j) {
        PrototypeDescriptor d;
        d.index = j;
        d.name = "prototype-" + std::to_string(j);
        d.description = "synthetic prototype region " + std::to_string(j);
        d.text_embedding.resize(cfg.dim);
        for (std::size_t k = 0; k < cfg.dim; ++k) {
            d.text_embedding[k] = static_cast<float>(static_cast<double>(ds.truth.centers.at(j, k)) +
                                                     0.1 * cfg.noise_std * rng.next_normal());
        }
        ds.text_bank.push_back(std::move(d));
    }

    // one sparse mixture signature per class
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        ds.truth.class_mixtures.push_back(rng.next_dirichlet(cfg.mixture_alpha, cfg.n_proto));
    }

    const std::size_t total = cfg.train_slides + cfg.val_slides + cfg.test_slides;
    std::vector<std::string> ids(total);
    std::vector<int> labels(total);
    for (std::size_t i = 0; i < total; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "slide_%04zu", i);
        ids[i] = buf;
        labels[i] = static_cast<int>(i % cfg.n_classes);
    }

    SplitRatios ratios;
    ratios.train = static_cast<double>(cfg.train_slides) / static_cast<double>(total);
    ratios.val = static_cast<double>(cfg.val_slides) / static_cast<double>(total);
    ratios.test = static_cast<double>(cfg.test_slides) / static_cast<double>(total);
    const std::vector<Split> splits = make_splits(ids, labels, ratios, cfg.seed);

    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t n_patches = cfg.patches_lo + rng.next_index(cfg.patches_hi - cfg.patches_lo + 1);
        const std::vector<double>& mixture = ds.truth.class_mixtures[static_cast<std::size_t>(labels[i])];
        EmbeddingMatrix X = EmbeddingMatrix::zeros(n_patches, cfg.dim);
        std::vector<std::size_t> true_protos(n_patches);
        for (std::size_t p = 0; p < n_patches; ++p) {
            const double u = rng.next_unit();
            double running = 0.0;
            std::size_t proto = cfg.n_proto - 1;
            for (std::size_t j = 0; j < cfg.n_proto; ++j) {
                running += mixture[j];
                if (u < running) {
                    proto = j;
                    break;
                }
            }
            true_protos[p] = proto;
            for (std::size_t k = 0; k < cfg.dim; ++k) {
                X.at(p, k) = static_cast<float>(static_cast<double>(ds.truth.centers.at(proto, k)) +
                                                cfg.noise_std * rng.next_normal());
            }
        }
        const std::string rel_path = "slides/" + ids[i] + ".paem";
        write_paem(X, out_dir / rel_path);
        ds.truth.patch_prototypes[ids[i]] = std::move(true_protos);
        ds.manifest.records.push_back(SlideRecord{ids[i], rel_path, labels[i], splits[i]});
    }

    write_manifest(ds.manifest, out_dir / "manifest.csv");
    write_text_bank(ds.text_bank, out_dir / "text_bank.json");

    nlohmann::json truth;
    truth["n_proto"] = cfg.n_proto;
    truth["dim"] = cfg.dim;
    truth["centers"] = nlohmann::json::array();
    for (std::size_t j = 0; j < cfg.n_proto; ++j) {
        const auto row = ds.truth.centers.row(j);
        truth["centers"].push_back(std::vector<float>(row.begin(), row.end()));
    }
    truth["class_mixtures"] = ds.truth.class_mixtures;
    nlohmann::json per_slide = nlohmann::json::object();
    for (const auto& [slide_id, protos] : ds.truth.patch_prototypes) per_slide[slide_id] = protos;
    truth["patch_prototypes"] = per_slide;
    detail::write_file_bytes(out_dir / "truth.json", truth.dump() + "\n");
    return ds;
}

inline PlantedTruth load_planted_truth(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(detail::read_file_bytes(path));
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::parse_error, path.string() + ": " + e.what());
    }
    PlantedTruth truth;
    const auto& centers = doc.at("centers");
    truth.centers.rows = centers.size();
    truth.centers.dim = doc.at("dim").get<std::size_t>();
    for (const auto& row : centers) {
        const auto vals = row.get<std::vector<float>>();
        truth.centers.data.insert(truth.centers.data.end(), vals.begin(), vals.end());
    }
    truth.class_mixtures = doc.at("class_mixtures").get<std::vector<std::vector<double>>>();
    for (const auto& [slide_id, protos] : doc.at("patch_prototypes").items()) {
        truth.patch_prototypes[slide_id] = protos.get<std::vector<std::size_t>>();
    }
    return truth;
}

// ---------------------------------------------------------------------------
// Naive reference pipeline. Plain loops, 64-bit throughout, no max
// subtraction, no unrolling, no parallelism. Used only by tests; kept
// independent of the kernels it checks.
// ---------------------------------------------------------------------------

inline EmbeddingMatrix brute_force_initial_prototypes(const EmbeddingMatrix& pool, const EmbeddingMatrix& texts) {
    EmbeddingMatrix bank = EmbeddingMatrix::zeros(texts.rows, texts.dim);
    for (std::size_t j = 0; j < texts.rows; ++j) {
        std::size_t best = 0;
        double best_sim = -std::numeric_limits<double>::max();
        for (std::size_t i = 0; i < pool.rows; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < pool.dim; ++k) {
                s += static_cast<double>(pool.at(i, k)) * static_cast<double>(texts.at(j, k));
            }
            if (s > best_sim) {
                best_sim = s;
                best = i;
            }
        }
        for (std::size_t k = 0; k < texts.dim; ++k) {
            bank.at(j, k) = static_cast<float>(static_cast<double>(texts.at(j, k)) +
                                               static_cast<double>(pool.at(best, k)));
        }
    }
    return bank;
}

// Full chain on one slide: similarity, hard assignment, plain softmax
// weights, weighted sums, concatenation. Returns doubles.
inline std::vector<double> brute_force_slide_embedding(const EmbeddingMatrix& X, const EmbeddingMatrix& P) {
    if (X.rows < 1) raise(Errc::empty_slide, "brute_force_slide_embedding: slide has no patches");
    const std::size_t n = X.rows, k = P.rows, d = P.dim;

    std::vector<std::vector<double>> sim(n, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                s += static_cast<double>(X.at(i, c)) * static_cast<double>(P.at(j, c));
            }
            sim[i][j] = s;
        }
    }

    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (sim[i][j] > sim[i][best]) best = j;
        }
        members[best].push_back(i);
    }

    std::vector<double> out(k * d, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        if (members[j].empty()) {
            for (std::size_t c = 0; c < d; ++c) out[j * d + c] = static_cast<double>(P.at(j, c));
            continue;
        }
        double denom = 0.0;
        for (std::size_t i : members[j]) denom += std::exp(sim[i][j]);
        for (std::size_t i : members[j]) {
            const double w = std::exp(sim[i][j]) / denom;
            for (std::size_t c = 0; c < d; ++c) out[j * d + c] += w * static_cast<double>(X.at(i, c));
        }
    }
    return out;
}

inline double assignment_recovery_rate(const AssignmentMap& asn, const std::vector<std::size_t>& truth) {
    if (asn.patch_to_proto.size() != truth.size()) {
        raise(Errc::length_mismatch, "assignment_recovery_rate: " + std::to_string(asn.patch_to_proto.size()) +
                                         " assignments vs " + std::to_string(truth.size()) + " planted labels");
    }
    if (truth.empty()) raise(Errc::length_mismatch, "assignment_recovery_rate: empty inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (asn.patch_to_proto[i] == truth[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace proalign
