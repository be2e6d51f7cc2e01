// File formats: PAEM binary matrices, manifest CSV, text-bank JSON, and
// prototype-bank save/load. PAEM layout (all little-endian):
//   "PAEM" | u32 version=1 | u32 dtype=1 (float32) | u64 rows | u64 cols |
//   rows*cols float32 values, row-major
// so a file holds exactly 28 + 4*rows*cols bytes.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "proalign/core.hpp"
#include "proalign/rng.hpp"

namespace proalign {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline float get_f32(const unsigned char* p) {
    return std::bit_cast<float>(get_u32(p));
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::io_error, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::io_error, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) raise(Errc::io_error, "short write to " + path.string());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

inline constexpr std::uint32_t kPaemVersion = 1;
inline constexpr std::uint32_t kPaemDtypeF32 = 1;
inline constexpr std::size_t kPaemHeaderBytes = 28;

inline void write_paem(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    require_valid(m, "write_paem(" + path.string() + ")");
    std::string bytes;
    bytes.reserve(kPaemHeaderBytes + 4 * m.data.size());
    bytes += "PAEM";
    detail::put_u32(bytes, kPaemVersion);
    detail::put_u32(bytes, kPaemDtypeF32);
    detail::put_u64(bytes, m.rows);
    detail::put_u64(bytes, m.dim);
    for (float v : m.data) detail::put_f32(bytes, v);
    detail::write_file_bytes(path, bytes);
}

inline EmbeddingMatrix read_paem(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file_bytes(path);
    if (bytes.size() < kPaemHeaderBytes) {
        raise(Errc::truncated_payload, path.string() + ": only " + std::to_string(bytes.size()) + " bytes");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, "PAEM", 4) != 0) {
        raise(Errc::bad_magic, path.string() + ": magic is not PAEM");
    }
    const std::uint32_t version = detail::get_u32(p + 4);
    if (version != kPaemVersion) {
        raise(Errc::unsupported_version, path.string() + ": version " + std::to_string(version));
    }
    const std::uint32_t dtype = detail::get_u32(p + 8);
    if (dtype != kPaemDtypeF32) {
        raise(Errc::unsupported_version, path.string() + ": dtype " + std::to_string(dtype));
    }
    const std::uint64_t rows = detail::get_u64(p + 12);
    const std::uint64_t cols = detail::get_u64(p + 20);
    if (rows == 0 || cols == 0) {
        raise(Errc::empty_matrix, path.string() + ": declared " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    const std::uint64_t want = rows * cols;
    if (bytes.size() != kPaemHeaderBytes + 4 * want) {
        raise(Errc::truncated_payload, path.string() + ": payload holds " +
                                           std::to_string(bytes.size() - kPaemHeaderBytes) + " bytes, need " +
                                           std::to_string(4 * want));
    }
    EmbeddingMatrix m;
    m.rows = static_cast<std::size_t>(rows);
    m.dim = static_cast<std::size_t>(cols);
    m.data.resize(static_cast<std::size_t>(want));
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = detail::get_f32(p + kPaemHeaderBytes + 4 * i);
    }
    ValidationResult v = validate_embedding_matrix(m);
    if (!v.ok) raise(v.code, path.string() + ": " + v.message);
    return m;
}

// Manifest CSV: header `slide_id,embedding_path,label,split`, UTF-8, LF.
inline DatasetManifest parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::io_error, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) raise(Errc::parse_error, path.string() + ": empty file");

    const std::vector<std::string> header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* name : {"slide_id", "embedding_path", "label", "split"}) {
        if (!col.count(name)) {
            raise(Errc::missing_column, path.string() + ": header lacks column '" + name + "'");
        }
    }

    DatasetManifest manifest;
    std::set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> fields = detail::split_csv_line(line);
        if (fields.size() < header.size()) {
            raise(Errc::parse_error, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                         std::to_string(header.size()) + " fields");
        }
        SlideRecord rec;
        rec.slide_id = fields[col["slide_id"]];
        rec.embedding_path = fields[col["embedding_path"]];
        if (rec.slide_id.empty() || rec.slide_id.find('/') != std::string::npos ||
            rec.slide_id.find('\\') != std::string::npos) {
            raise(Errc::parse_error, path.string() + ":" + std::to_string(line_no) +
                                         ": slide_id must be nonempty and path-safe");
        }
        if (!seen.insert(rec.slide_id).second) {
            raise(Errc::duplicate_slide_id, path.string() + ":" + std::to_string(line_no) + ": '" +
                                                rec.slide_id + "' appears twice");
        }
        const std::string& label_text = fields[col["label"]];
        try {
            std::size_t used = 0;
            rec.label = std::stoi(label_text, &used);
            if (used != label_text.size()) throw std::invalid_argument(label_text);
        } catch (const std::exception&) {
            raise(Errc::bad_label, path.string() + ":" + std::to_string(line_no) + ": label '" + label_text + "'");
        }
        if (rec.label < 0) {
            raise(Errc::bad_label, path.string() + ":" + std::to_string(line_no) + ": negative label");
        }
        const std::string& split_text = fields[col["split"]];
        const auto split = parse_split(split_text);
        if (!split) {
            raise(Errc::unknown_split, path.string() + ":" + std::to_string(line_no) + ": '" + split_text + "'");
        }
        rec.split = *split;
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

inline void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::string out = "slide_id,embedding_path,label,split\n";
    for (const auto& r : manifest.records) {
        out += r.slide_id + "," + r.embedding_path + "," + std::to_string(r.label) + "," + to_string(r.split) + "\n";
    }
    detail::write_file_bytes(path, out);
}

struct TextBank {
    std::vector<PrototypeDescriptor> descriptors;  // sorted by index
    EmbeddingMatrix stacked;                       // row j = text embedding of prototype j
};

namespace detail {

inline std::vector<PrototypeDescriptor> parse_descriptor_array(const nlohmann::json& arr, const std::string& where) {
    if (!arr.is_array() || arr.empty()) {
        raise(Errc::parse_error, where + ": 'prototypes' must be a nonempty array");
    }
    std::vector<PrototypeDescriptor> descriptors;
    for (const auto& item : arr) {
        PrototypeDescriptor d;
        if (!item.contains("index") || !item.contains("name") || !item.contains("description") ||
            !item.contains("embedding")) {
            raise(Errc::parse_error, where + ": each prototype needs index/name/description/embedding");
        }
        d.index = item.at("index").get<std::size_t>();
        d.name = item.at("name").get<std::string>();
        d.description = item.at("description").get<std::string>();
        d.text_embedding = item.at("embedding").get<std::vector<float>>();
        descriptors.push_back(std::move(d));
    }
    std::sort(descriptors.begin(), descriptors.end(),
              [](const PrototypeDescriptor& a, const PrototypeDescriptor& b) { return a.index < b.index; });
    for (std::size_t j = 0; j < descriptors.size(); ++j) {
        if (descriptors[j].index != j) {
            raise(Errc::index_gap, where + ": prototype indices must be 0.." +
                                       std::to_string(descriptors.size() - 1) + " exactly once");
        }
    }
    const std::size_t dim = descriptors.front().text_embedding.size();
    for (const auto& d : descriptors) {
        if (d.text_embedding.size() != dim) {
            raise(Errc::dim_mismatch, where + ": prototype " + std::to_string(d.index) + " embedding has dim " +
                                          std::to_string(d.text_embedding.size()) + ", expected " +
                                          std::to_string(dim));
        }
        if (dim == 0) raise(Errc::dim_mismatch, where + ": empty embedding");
    }
    return descriptors;
}

inline nlohmann::json descriptor_array_to_json(const std::vector<PrototypeDescriptor>& descriptors) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : descriptors) {
        arr.push_back({{"index", d.index},
                       {"name", d.name},
                       {"description", d.description},
                       {"embedding", d.text_embedding}});
    }
    return arr;
}

inline EmbeddingMatrix stack_descriptors(const std::vector<PrototypeDescriptor>& descriptors) {
    EmbeddingMatrix stacked;
    stacked.rows = descriptors.size();
    stacked.dim = descriptors.front().text_embedding.size();
    stacked.data.reserve(stacked.rows * stacked.dim);
    for (const auto& d : descriptors) {
        stacked.data.insert(stacked.data.end(), d.text_embedding.begin(), d.text_embedding.end());
    }
    return stacked;
}

}  // namespace detail

inline TextBank parse_text_bank(const std::filesystem::path& path, std::size_t expected_n_proto) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(detail::read_file_bytes(path));
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::parse_error, path.string() + ": " + e.what());
    }
    if (!doc.contains("prototypes")) {
        raise(Errc::parse_error, path.string() + ": missing 'prototypes'");
    }
    TextBank bank;
    bank.descriptors = detail::parse_descriptor_array(doc.at("prototypes"), path.string());
    if (bank.descriptors.size() != expected_n_proto) {
        raise(Errc::count_mismatch, path.string() + ": bank holds " + std::to_string(bank.descriptors.size()) +
                                        " prototypes, expected " + std::to_string(expected_n_proto));
    }
    bank.stacked = detail::stack_descriptors(bank.descriptors);
    ValidationResult v = validate_embedding_matrix(bank.stacked);
    if (!v.ok) raise(v.code, path.string() + ": " + v.message);
    return bank;
}

inline void write_text_bank(const std::vector<PrototypeDescriptor>& descriptors,
                            const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["prototypes"] = detail::descriptor_array_to_json(descriptors);
    detail::write_file_bytes(path, doc.dump(2) + "\n");
}

// A prototype bank on disk is the matrix as <prefix>.paem plus a text-bank
// shaped sidecar <prefix>.json carrying stage, descriptors, and provenance.
inline void save_prototype_bank(const PrototypeBank& bank, const std::filesystem::path& prefix) {
    write_paem(bank.matrix, prefix.string() + ".paem");
    nlohmann::json doc;
    doc["stage"] = bank.stage == BankStage::initial ? "initial" : "refined";
    if (bank.stage == BankStage::refined) doc["refined_for"] = bank.refined_for;
    doc["prototypes"] = detail::descriptor_array_to_json(bank.descriptors);
    if (!bank.sources.empty()) {
        nlohmann::json src = nlohmann::json::array();
        for (const auto& s : bank.sources) {
            src.push_back({{"pool_row", s.pool_row}, {"slide_id", s.slide_id}, {"patch_row", s.patch_row}});
        }
        doc["sources"] = src;
    }
    detail::write_file_bytes(prefix.string() + ".json", doc.dump(2) + "\n");
}

inline PrototypeBank load_prototype_bank(const std::filesystem::path& prefix) {
    PrototypeBank bank;
    bank.matrix = read_paem(prefix.string() + ".paem");
    nlohmann::json doc;
    const std::filesystem::path json_path = prefix.string() + ".json";
    try {
        doc = nlohmann::json::parse(detail::read_file_bytes(json_path));
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::parse_error, json_path.string() + ": " + e.what());
    }
    const std::string stage = doc.value("stage", "initial");
    bank.stage = stage == "refined" ? BankStage::refined : BankStage::initial;
    bank.refined_for = doc.value("refined_for", "");
    bank.descriptors = detail::parse_descriptor_array(doc.at("prototypes"), json_path.string());
    if (bank.descriptors.size() != bank.matrix.rows) {
        raise(Errc::count_mismatch, prefix.string() + ": matrix has " + std::to_string(bank.matrix.rows) +
                                        " rows but sidecar lists " + std::to_string(bank.descriptors.size()) +
                                        " prototypes");
    }
    if (doc.contains("sources")) {
        for (const auto& s : doc.at("sources")) {
            bank.sources.push_back(SourcePatch{s.value("pool_row", std::size_t{0}), s.value("slide_id", ""),
                                               s.value("patch_row", std::size_t{0})});
        }
    }
    return bank;
}

struct SplitRatios {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

// Stratified split: per class, ids are sorted, shuffled with the seeded
// generator, and cut at the ratio boundaries. Remainders after flooring go
// to train, then val, then test. Deterministic and input-order independent.
inline std::vector<Split> make_splits(const std::vector<std::string>& ids, const std::vector<int>& labels,
                                      const SplitRatios& ratios, std::uint64_t seed) {
    if (ids.size() != labels.size()) {
        raise(Errc::length_mismatch, "make_splits: " + std::to_string(ids.size()) + " ids vs " +
                                         std::to_string(labels.size()) + " labels");
    }
    if (ids.empty()) raise(Errc::too_few_slides, "make_splits: no slides");
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
        raise(Errc::bad_config, "make_splits: ratios must be nonnegative and sum to 1");
    }

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (labels[i] < 0) raise(Errc::bad_label, "make_splits: negative label");
        by_class[labels[i]].push_back(i);
    }

    std::vector<Split> assignment(ids.size(), Split::train);
    for (auto& [label, members] : by_class) {
        std::sort(members.begin(), members.end(),
                  [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
        rng.shuffle(members);

        const std::size_t n = members.size();
        std::array<std::size_t, 3> sizes = {static_cast<std::size_t>(std::floor(ratios.train * n)),
                                            static_cast<std::size_t>(std::floor(ratios.val * n)),
                                            static_cast<std::size_t>(std::floor(ratios.test * n))};
        std::size_t assigned = sizes[0] + sizes[1] + sizes[2];
        for (std::size_t k = 0; assigned < n && k < 3; ++k) {
            ++sizes[k];
            ++assigned;
        }
        const std::array<double, 3> requested = {ratios.train, ratios.val, ratios.test};
        for (std::size_t k = 0; k < 3; ++k) {
            if (requested[k] > 0.0 && sizes[k] == 0) {
                raise(Errc::too_few_slides, "make_splits: class " + std::to_string(label) + " has " +
                                                std::to_string(n) + " slides, not enough for a nonempty " +
                                                to_string(static_cast<Split>(k)) + " split");
            }
        }
        std::size_t pos = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            for (std::size_t c = 0; c < sizes[k]; ++c) {
                assignment[members[pos++]] = static_cast<Split>(k);
            }
        }
    }
    return assignment;
}

// FNV-1a over file bytes; used for artifact checksums in run records.
inline std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file_bytes(path);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace proalign
