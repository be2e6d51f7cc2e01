// Embedding engine: runs the per-slide PFAM chain over a manifest, optionally
// on a worker pool. Per-slide work is independent and internally ordered, so
// outputs are byte-identical for any worker count. Writes one PAEM per slide,
// a stacked matrix plus label list per split, and optional allocation reports.
#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "proalign/core.hpp"
#include "proalign/pfam.hpp"
#include "proalign/tensor_io.hpp"

namespace proalign {

enum class PoolBaseline { none, mean, max };

struct EmbedOptions {
    std::optional<Split> split;  // nullopt = all splits
    std::size_t workers = 1;
    bool write_reports = false;
    std::size_t top_k = 3;
    PoolBaseline baseline = PoolBaseline::none;
};

struct SlideFailure {
    std::string slide_id;
    std::string message;
};

struct EmbedResult {
    std::size_t n_slides = 0;
    std::vector<SlideFailure> failures;
    std::vector<std::filesystem::path> artifacts;
};

inline EmbeddingMatrix load_slide_matrix(const std::filesystem::path& path, const std::string& slide_id) {
    try {
        return read_paem(path);
    } catch (const Error& e) {
        if (e.code() == Errc::empty_matrix) {
            raise(Errc::empty_slide, slide_id + ": slide embedding file has no patches");
        }
        throw;
    }
}

// Elementwise mean or max over patches; the untrained pooling baselines.
inline SlideEmbedding pool_baseline_embedding(const EmbeddingMatrix& X, PoolBaseline kind,
                                              const std::string& slide_id) {
    if (X.rows == 0) raise(Errc::empty_slide, slide_id + ": slide has no patches");
    SlideEmbedding emb;
    emb.slide_id = slide_id;
    emb.n_proto = 1;
    emb.dim = X.dim;
    emb.values.resize(X.dim);
    if (kind == PoolBaseline::mean) {
        for (std::size_t k = 0; k < X.dim; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < X.rows; ++i) acc += static_cast<double>(X.at(i, k));
            emb.values[k] = static_cast<float>(acc / static_cast<double>(X.rows));
        }
    } else {
        for (std::size_t k = 0; k < X.dim; ++k) {
            float best = X.at(0, k);
            for (std::size_t i = 1; i < X.rows; ++i) best = std::max(best, X.at(i, k));
            emb.values[k] = best;
        }
    }
    return emb;
}

inline EmbedResult embed_manifest(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
                                  const PrototypeBank& bank, const std::filesystem::path& out_dir,
                                  const EmbedOptions& opt) {
    std::filesystem::create_directories(out_dir);

    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        if (!opt.split || manifest.records[i].split == *opt.split) selected.push_back(i);
    }

    struct SlideOutcome {
        bool ok = false;
        SlideEmbedding embedding;
        std::string report_json;
        std::string error;
    };
    std::vector<SlideOutcome> outcomes(selected.size());

    auto process = [&](std::size_t s) {
        const SlideRecord& rec = manifest.records[selected[s]];
        SlideOutcome& out = outcomes[s];
        try {
            const EmbeddingMatrix X = load_slide_matrix(base_dir / rec.embedding_path, rec.slide_id);
            if (opt.baseline != PoolBaseline::none) {
                out.embedding = pool_baseline_embedding(X, opt.baseline, rec.slide_id);
            } else {
                if (X.dim != bank.dim()) {
                    raise(Errc::dim_mismatch, rec.slide_id + ": slide dim " + std::to_string(X.dim) +
                                                  " vs prototype dim " + std::to_string(bank.dim()));
                }
                const SimMatrix S = compute_patch_prototype_similarity(X, bank);
                const AssignmentMap asn = assign_patches(S);
                const PrototypeBank refined = refine_prototypes(X, S, asn, bank, rec.slide_id);
                out.embedding = build_slide_embedding(refined, rec.slide_id);
                if (opt.write_reports) {
                    const AllocationReport report = allocation_report(asn, S, bank, opt.top_k, rec.slide_id);
                    out.report_json = allocation_report_to_json(report).dump(2) + "\n";
                }
            }
            out.ok = true;
        } catch (const Error& e) {
            out.error = e.what();
        }
    };

    const std::size_t workers = std::min(std::max<std::size_t>(opt.workers, 1), std::max<std::size_t>(selected.size(), 1));
    if (workers <= 1) {
        for (std::size_t s = 0; s < selected.size(); ++s) process(s);
    } else {
        std::atomic<std::size_t> cursor{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t s = cursor.fetch_add(1);
                    if (s >= selected.size()) return;
                    process(s);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    // write per-slide artifacts in manifest order
    EmbedResult result;
    result.n_slides = selected.size();
    for (std::size_t s = 0; s < selected.size(); ++s) {
        const SlideRecord& rec = manifest.records[selected[s]];
        const SlideOutcome& out = outcomes[s];
        if (!out.ok) {
            result.failures.push_back(SlideFailure{rec.slide_id, out.error});
            continue;
        }
        EmbeddingMatrix row;
        row.rows = 1;
        row.dim = out.embedding.values.size();
        row.data = out.embedding.values;
        const std::filesystem::path slide_path = out_dir / (rec.slide_id + ".paem");
        write_paem(row, slide_path);
        result.artifacts.push_back(slide_path);
        if (!out.report_json.empty()) {
            const std::filesystem::path report_path = out_dir / (rec.slide_id + ".allocation.json");
            detail::write_file_bytes(report_path, out.report_json);
            result.artifacts.push_back(report_path);
        }
    }

    // stacked matrix + labels per split, manifest order, successful slides only
    for (Split split : {Split::train, Split::val, Split::test}) {
        if (opt.split && *opt.split != split) continue;
        EmbeddingMatrix stacked;
        std::string labels = "slide_id,label\n";
        for (std::size_t s = 0; s < selected.size(); ++s) {
            const SlideRecord& rec = manifest.records[selected[s]];
            if (rec.split != split || !outcomes[s].ok) continue;
            const auto& values = outcomes[s].embedding.values;
            if (stacked.rows == 0) {
                stacked.dim = values.size();
            } else if (values.size() != stacked.dim) {
                raise(Errc::dim_mismatch, rec.slide_id + ": slide embedding length varies within split");
            }
            stacked.data.insert(stacked.data.end(), values.begin(), values.end());
            ++stacked.rows;
            labels += rec.slide_id + "," + std::to_string(rec.label) + "\n";
        }
        if (stacked.rows == 0) continue;
        const std::filesystem::path stack_path = out_dir / ("embeddings_" + to_string(split) + ".paem");
        const std::filesystem::path label_path = out_dir / ("labels_" + to_string(split) + ".csv");
        write_paem(stacked, stack_path);
        detail::write_file_bytes(label_path, labels);
        result.artifacts.push_back(stack_path);
        result.artifacts.push_back(label_path);
    }
    return result;
}

// Reads the stacked embeddings + labels a previous embed run wrote.
struct LabeledEmbeddings {
    EmbeddingMatrix x;
    std::vector<int> y;
    std::vector<std::string> slide_ids;
};

inline LabeledEmbeddings load_labeled_embeddings(const std::filesystem::path& embed_dir, Split split) {
    LabeledEmbeddings out;
    out.x = read_paem(embed_dir / ("embeddings_" + to_string(split) + ".paem"));
    const std::filesystem::path label_path = embed_dir / ("labels_" + to_string(split) + ".csv");
    std::ifstream in(label_path);
    if (!in) raise(Errc::io_error, "cannot open " + label_path.string());
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() < 2) raise(Errc::parse_error, label_path.string() + ": bad row '" + line + "'");
        out.slide_ids.push_back(fields[0]);
        out.y.push_back(std::stoi(fields[1]));
    }
    if (out.y.size() != out.x.rows) {
        raise(Errc::length_mismatch, embed_dir.string() + ": " + std::to_string(out.x.rows) +
                                         " embeddings vs " + std::to_string(out.y.size()) + " labels for split " +
                                         to_string(split));
    }
    return out;
}

}  // namespace proalign
