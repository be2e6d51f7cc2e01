// Parameter-free attention over per-slide prototype assignments. Each patch
// goes to the prototype with the highest dot-product similarity; each
// nonempty prototype becomes the softmax(similarity)-weighted average of its
// patches; empty prototypes keep their initial embedding. The slide embedding
// is the refined prototypes concatenated in ascending index order.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "proalign/core.hpp"

namespace proalign {

// S'[i][j] = dot(x_i, p_j), 64-bit accumulation.
inline SimMatrix compute_patch_prototype_similarity(const EmbeddingMatrix& X, const PrototypeBank& P) {
    return dot_rows(X, P.matrix);
}

inline SimMatrix compute_patch_prototype_similarity(const EmbeddingMatrix& X, const EmbeddingMatrix& P) {
    return dot_rows(X, P);
}

// Row argmax with ties toward the smaller prototype index; member lists are
// built in ascending patch order.
inline AssignmentMap assign_patches(const SimMatrix& S) {
    if (S.cols == 0) raise(Errc::shape_mismatch, "assign_patches: similarity matrix has no prototype columns");
    AssignmentMap map;
    map.patch_to_proto.resize(S.rows);
    map.best_similarity.resize(S.rows);
    map.proto_members.resize(S.cols);
    for (std::size_t i = 0; i < S.rows; ++i) {
        std::size_t best = 0;
        double best_sim = S.at(i, 0);
        for (std::size_t j = 1; j < S.cols; ++j) {
            if (S.at(i, j) > best_sim) {
                best_sim = S.at(i, j);
                best = j;
            }
        }
        map.patch_to_proto[i] = best;
        map.best_similarity[i] = best_sim;
        map.proto_members[best].push_back(i);
    }
    return map;
}

// Softmax attention weights per prototype, aligned with proto_members order.
// Computed with per-prototype max subtraction; exp(s - max) keeps the sums
// finite for arbitrarily large similarities.
inline std::vector<std::vector<double>> attention_weights(const SimMatrix& S, const AssignmentMap& asn) {
    std::vector<std::vector<double>> weights(asn.proto_members.size());
    for (std::size_t j = 0; j < asn.proto_members.size(); ++j) {
        const auto& members = asn.proto_members[j];
        if (members.empty()) continue;
        double max_sim = S.at(members[0], j);
        for (std::size_t i : members) max_sim = std::max(max_sim, S.at(i, j));
        auto& w = weights[j];
        w.resize(members.size());
        double sum = 0.0;
        for (std::size_t m = 0; m < members.size(); ++m) {
            w[m] = std::exp(S.at(members[m], j) - max_sim);
            sum += w[m];
        }
        for (double& v : w) v /= sum;
    }
    return weights;
}

// Eq.-style refinement: p'_j = sum over assigned patches of a_{j,i} * x_i;
// prototypes with no assigned patches keep p_j bit-exactly.
inline PrototypeBank refine_prototypes(const EmbeddingMatrix& X, const SimMatrix& S, const AssignmentMap& asn,
                                       const PrototypeBank& P, const std::string& slide_id) {
    if (S.rows != X.rows || S.cols != P.n_proto()) {
        raise(Errc::shape_mismatch, "refine_prototypes: S is " + std::to_string(S.rows) + "x" +
                                        std::to_string(S.cols) + ", expected " + std::to_string(X.rows) + "x" +
                                        std::to_string(P.n_proto()));
    }
    if (X.dim != P.dim()) {
        raise(Errc::dim_mismatch, "refine_prototypes: X dim " + std::to_string(X.dim) + " vs bank dim " +
                                      std::to_string(P.dim()));
    }

    PrototypeBank refined;
    refined.stage = BankStage::refined;
    refined.refined_for = slide_id;
    refined.descriptors = P.descriptors;
    refined.matrix = P.matrix;  // empty prototypes pass through unchanged

    const std::vector<std::vector<double>> weights = attention_weights(S, asn);
    std::vector<double> acc(X.dim);
    for (std::size_t j = 0; j < P.n_proto(); ++j) {
        const auto& members = asn.proto_members[j];
        if (members.empty()) continue;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t m = 0; m < members.size(); ++m) {
            const auto row = X.row(members[m]);
            const double w = weights[j][m];
            for (std::size_t k = 0; k < X.dim; ++k) acc[k] += w * static_cast<double>(row[k]);
        }
        for (std::size_t k = 0; k < X.dim; ++k) refined.matrix.at(j, k) = static_cast<float>(acc[k]);
    }
    return refined;
}

inline SlideEmbedding build_slide_embedding(const PrototypeBank& refined, const std::string& slide_id) {
    if (refined.stage != BankStage::refined) {
        raise(Errc::bad_config, "build_slide_embedding: bank is not refined");
    }
    SlideEmbedding emb;
    emb.slide_id = slide_id;
    emb.n_proto = refined.n_proto();
    emb.dim = refined.dim();
    emb.values = refined.matrix.data;  // row-major layout is already the concatenation
    return emb;
}

// Full per-slide chain: similarity -> assignment -> refinement -> concat.
inline SlideEmbedding embed_slide(const EmbeddingMatrix& X, const PrototypeBank& P, const std::string& slide_id) {
    if (X.rows == 0) raise(Errc::empty_slide, slide_id + ": slide has no patches");
    const SimMatrix S = compute_patch_prototype_similarity(X, P);
    const AssignmentMap asn = assign_patches(S);
    const PrototypeBank refined = refine_prototypes(X, S, asn, P, slide_id);
    return build_slide_embedding(refined, slide_id);
}

struct AllocationTopPatch {
    std::size_t patch = 0;
    double similarity = 0.0;
};

struct AllocationEntry {
    std::size_t index = 0;
    std::string name;
    std::size_t patch_count = 0;
    double proportion = 0.0;
    std::vector<AllocationTopPatch> top;  // up to top_k, similarity descending
};

struct AllocationReport {
    std::string slide_id;
    std::size_t n_patches = 0;
    std::vector<AllocationEntry> prototypes;
    std::vector<std::size_t> empty_prototypes;
};

inline AllocationReport allocation_report(const AssignmentMap& asn, const SimMatrix& S, const PrototypeBank& P,
                                          std::size_t top_k, const std::string& slide_id) {
    if (top_k < 1) raise(Errc::bad_config, "allocation_report: top_k must be >= 1");
    AllocationReport report;
    report.slide_id = slide_id;
    report.n_patches = asn.n_patches();
    const double n = static_cast<double>(asn.n_patches());
    for (std::size_t j = 0; j < asn.n_proto(); ++j) {
        AllocationEntry entry;
        entry.index = j;
        entry.name = j < P.descriptors.size() ? P.descriptors[j].name : "proto-" + std::to_string(j);
        entry.patch_count = asn.proto_members[j].size();
        entry.proportion = n > 0 ? static_cast<double>(entry.patch_count) / n : 0.0;

        std::vector<std::size_t> members = asn.proto_members[j];
        std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            const double sa = S.at(a, j), sb = S.at(b, j);
            if (sa != sb) return sa > sb;
            return a < b;  // ties toward the smaller patch index
        });
        const std::size_t take = std::min(top_k, members.size());
        for (std::size_t m = 0; m < take; ++m) {
            entry.top.push_back(AllocationTopPatch{members[m], S.at(members[m], j)});
        }
        if (entry.patch_count == 0) report.empty_prototypes.push_back(j);
        report.prototypes.push_back(std::move(entry));
    }
    return report;
}

inline nlohmann::json allocation_report_to_json(const AllocationReport& report) {
    nlohmann::json doc;
    doc["slide_id"] = report.slide_id;
    doc["n_patches"] = report.n_patches;
    nlohmann::json protos = nlohmann::json::array();
    for (const auto& e : report.prototypes) {
        nlohmann::json top = nlohmann::json::array();
        for (const auto& t : e.top) {
            top.push_back({{"patch", t.patch}, {"similarity", t.similarity}});
        }
        protos.push_back({{"index", e.index},
                          {"name", e.name},
                          {"patch_count", e.patch_count},
                          {"proportion", e.proportion},
                          {"top_patches", top}});
    }
    doc["prototypes"] = protos;
    doc["empty_prototypes"] = report.empty_prototypes;
    return doc;
}

}  // namespace proalign
