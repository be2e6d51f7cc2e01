// Core domain types shared by every module: row-major float32 embedding
// matrices, prototype banks, assignment maps, manifests, and the error type.
// All reductions (dot products, softmax sums, means) accumulate in 64-bit.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace proalign {

enum class Errc {
    non_finite_value,
    shape_mismatch,
    empty_matrix,
    bad_magic,
    unsupported_version,
    truncated_payload,
    io_error,
    parse_error,
    duplicate_slide_id,
    unknown_split,
    bad_label,
    missing_column,
    index_gap,
    dim_mismatch,
    count_mismatch,
    too_few_slides,
    empty_train_split,
    dim_mismatch_across_slides,
    empty_pool,
    too_few_points,
    bad_config,
    length_mismatch,
    no_supported_classes,
    empty_runs,
    non_finite_gradient,
    empty_slide,
    usage,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::non_finite_value: return "NonFiniteValue";
        case Errc::shape_mismatch: return "ShapeMismatch";
        case Errc::empty_matrix: return "EmptyMatrix";
        case Errc::bad_magic: return "BadMagic";
        case Errc::unsupported_version: return "UnsupportedVersion";
        case Errc::truncated_payload: return "TruncatedPayload";
        case Errc::io_error: return "IoError";
        case Errc::parse_error: return "ParseError";
        case Errc::duplicate_slide_id: return "DuplicateSlideId";
        case Errc::unknown_split: return "UnknownSplit";
        case Errc::bad_label: return "BadLabel";
        case Errc::missing_column: return "MissingColumn";
        case Errc::index_gap: return "IndexGap";
        case Errc::dim_mismatch: return "DimMismatch";
        case Errc::count_mismatch: return "CountMismatch";
        case Errc::too_few_slides: return "TooFewSlides";
        case Errc::empty_train_split: return "EmptyTrainSplit";
        case Errc::dim_mismatch_across_slides: return "DimMismatchAcrossSlides";
        case Errc::empty_pool: return "EmptyPool";
        case Errc::too_few_points: return "TooFewPoints";
        case Errc::bad_config: return "BadConfig";
        case Errc::length_mismatch: return "LengthMismatch";
        case Errc::no_supported_classes: return "NoSupportedClasses";
        case Errc::empty_runs: return "EmptyRuns";
        case Errc::non_finite_gradient: return "NonFiniteGradient";
        case Errc::empty_slide: return "EmptySlide";
        case Errc::usage: return "Usage";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
    throw Error(code, message);
}

// n x d matrix of float32 embedding coordinates, row-major.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<float> data;

    static EmbeddingMatrix zeros(std::size_t rows, std::size_t dim) {
        return EmbeddingMatrix{rows, dim, std::vector<float>(rows * dim, 0.0f)};
    }

    float& at(std::size_t r, std::size_t c) { return data[r * dim + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * dim + c]; }

    std::span<const float> row(std::size_t r) const { return {data.data() + r * dim, dim}; }
    std::span<float> row(std::size_t r) { return {data.data() + r * dim, dim}; }
};

// 64-bit matrix used for similarity values and other reduction results.
struct SimMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    static SimMatrix zeros(std::size_t rows, std::size_t cols) {
        return SimMatrix{rows, cols, std::vector<double>(rows * cols, 0.0)};
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct ValidationResult {
    bool ok = true;
    Errc code = Errc::empty_matrix;
    std::size_t row = 0;
    std::size_t col = 0;
    std::string message;

    static ValidationResult pass() { return ValidationResult{}; }
    static ValidationResult fail(Errc code, std::size_t row, std::size_t col, std::string message) {
        return ValidationResult{false, code, row, col, std::move(message)};
    }
};

// Checks the EmbeddingMatrix invariants in order and reports the first
// violation with its location.
inline ValidationResult validate_embedding_matrix(const EmbeddingMatrix& m) {
    if (m.rows < 1 || m.dim < 1) {
        return ValidationResult::fail(Errc::empty_matrix, 0, 0,
                                      "matrix must have rows >= 1 and dim >= 1, got " +
                                          std::to_string(m.rows) + "x" + std::to_string(m.dim));
    }
    if (m.data.size() != m.rows * m.dim) {
        return ValidationResult::fail(Errc::shape_mismatch, 0, 0,
                                      "declared " + std::to_string(m.rows) + "x" + std::to_string(m.dim) +
                                          " but data holds " + std::to_string(m.data.size()) + " values");
    }
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.dim; ++c) {
            if (!std::isfinite(m.at(r, c))) {
                return ValidationResult::fail(Errc::non_finite_value, r, c,
                                              "non-finite value at (" + std::to_string(r) + "," +
                                                  std::to_string(c) + ")");
            }
        }
    }
    return ValidationResult::pass();
}

inline void require_valid(const EmbeddingMatrix& m, const std::string& what) {
    ValidationResult v = validate_embedding_matrix(m);
    if (!v.ok) raise(v.code, what + ": " + v.message);
}

struct RowNormalizeResult {
    EmbeddingMatrix matrix;
    std::vector<std::size_t> zero_rows;  // rows with norm < 1e-12, returned unchanged
};

inline RowNormalizeResult l2_normalize_rows(const EmbeddingMatrix& m) {
    require_valid(m, "l2_normalize_rows");
    RowNormalizeResult out;
    out.matrix = m;
    for (std::size_t r = 0; r < m.rows; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < m.dim; ++c) {
            const double v = m.at(r, c);
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm < 1e-12) {
            out.zero_rows.push_back(r);
            continue;
        }
        for (std::size_t c = 0; c < m.dim; ++c) {
            out.matrix.at(r, c) = static_cast<float>(m.at(r, c) / norm);
        }
    }
    return out;
}

// a * b^T with 64-bit accumulation. Four running sums break the add latency
// chain; the summation order is fixed, so results are reproducible.
inline SimMatrix dot_rows(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.dim != b.dim) {
        raise(Errc::dim_mismatch, "dot_rows: dim " + std::to_string(a.dim) + " vs " + std::to_string(b.dim));
    }
    SimMatrix s = SimMatrix::zeros(a.rows, b.rows);
    const std::size_t d = a.dim;
    for (std::size_t i = 0; i < a.rows; ++i) {
        const float* x = a.data.data() + i * d;
        double* out = s.data.data() + i * b.rows;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const float* y = b.data.data() + j * d;
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            std::size_t k = 0;
            for (; k + 4 <= d; k += 4) {
                a0 += static_cast<double>(x[k]) * static_cast<double>(y[k]);
                a1 += static_cast<double>(x[k + 1]) * static_cast<double>(y[k + 1]);
                a2 += static_cast<double>(x[k + 2]) * static_cast<double>(y[k + 2]);
                a3 += static_cast<double>(x[k + 3]) * static_cast<double>(y[k + 3]);
            }
            double acc = (a0 + a1) + (a2 + a3);
            for (; k < d; ++k) {
                acc += static_cast<double>(x[k]) * static_cast<double>(y[k]);
            }
            out[j] = acc;
        }
    }
    return s;
}

enum class BankStage { initial, refined };

struct PrototypeDescriptor {
    std::size_t index = 0;
    std::string name;
    std::string description;
    std::vector<float> text_embedding;
};

// Provenance of the pool row chosen by patch-text contrast for a prototype.
struct SourcePatch {
    std::size_t pool_row = 0;
    std::string slide_id;
    std::size_t patch_row = 0;
};

struct PrototypeBank {
    BankStage stage = BankStage::initial;
    EmbeddingMatrix matrix;  // rows = n_proto
    std::vector<PrototypeDescriptor> descriptors;
    std::string refined_for;            // slide id, set when stage == refined
    std::vector<SourcePatch> sources;   // per prototype, set by patch-text contrast

    std::size_t n_proto() const { return matrix.rows; }
    std::size_t dim() const { return matrix.dim; }
};

// Hard assignment of patches to prototypes: patch_to_proto[i] = j
// iff i is in proto_members[j]; the member sets partition {0..n-1}.
struct AssignmentMap {
    std::vector<std::size_t> patch_to_proto;
    std::vector<double> best_similarity;
    std::vector<std::vector<std::size_t>> proto_members;

    std::size_t n_patches() const { return patch_to_proto.size(); }
    std::size_t n_proto() const { return proto_members.size(); }
};

// Concatenation of refined prototype embeddings, ascending prototype index.
struct SlideEmbedding {
    std::string slide_id;
    std::size_t n_proto = 0;
    std::size_t dim = 0;
    std::vector<float> values;  // length n_proto * dim
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    return std::nullopt;
}

struct SlideRecord {
    std::string slide_id;
    std::string embedding_path;
    int label = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    std::vector<SlideRecord> records;

    std::size_t count(Split s) const {
        std::size_t n = 0;
        for (const auto& r : records) {
            if (r.split == s) ++n;
        }
        return n;
    }

    int n_classes() const {
        int c = 0;
        for (const auto& r : records) {
            if (r.label + 1 > c) c = r.label + 1;
        }
        return c;
    }
};

struct PrototypeInitConfig {
    std::size_t n_proto = 16;
    std::size_t n_patch_per_proto = 100000;
    std::uint64_t seed = 0;
    bool normalize = false;  // L2-normalize rows before similarity

    std::size_t n_total() const { return n_proto * n_patch_per_proto; }
};

}  // namespace proalign
