#pragma once

// Per-word contextual states and their projection to the node feature space.
// Three backends: a trainable embedding-lookup encoder for desk-scale runs,
// precomputed per-document matrices exported from a pretrained model, and a
// placeholder hook for an in-process pretrained encoder.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "glre/autodiff.hpp"
#include "glre/common.hpp"
#include "glre/corpus.hpp"

namespace glre::encoder {

enum class BackendKind { TrainableToy, PrecomputedFile, PretrainedContextual };

inline std::string backend_kind_name(BackendKind k) {
    switch (k) {
        case BackendKind::TrainableToy: return "trainable-toy";
        case BackendKind::PrecomputedFile: return "precomputed-file";
        case BackendKind::PretrainedContextual: return "pretrained-contextual";
    }
    return "?";
}

inline BackendKind backend_kind_from_name(const std::string& s) {
    if (s == "trainable-toy") return BackendKind::TrainableToy;
    if (s == "precomputed-file") return BackendKind::PrecomputedFile;
    if (s == "pretrained-contextual") return BackendKind::PretrainedContextual;
    throw ConfigError("unknown encoder backend: " + s);
}

// Word vocabulary for the toy backend. Index 0 is the unknown-word bucket.
struct Vocabulary {
    std::map<std::string, int> index;

    int size() const { return static_cast<int>(index.size()) + 1; }

    int lookup(const std::string& w) const {
        auto it = index.find(w);
        return it == index.end() ? 0 : it->second;
    }

    static Vocabulary build(const std::vector<corpus::Document>& docs) {
        Vocabulary v;
        int next = 1;
        for (const auto& d : docs)
            for (const auto& s : d.sentences)
                for (const auto& w : s)
                    if (v.index.emplace(w, next).second) ++next;
        return v;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [w, i] : index) j[w] = i;
        return j;
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        Vocabulary v;
        for (auto it = j.begin(); it != j.end(); ++it) v.index[it.key()] = it.value().get<int>();
        return v;
    }
};

// Greedy sentence packing: cut only at sentence boundaries, never exceed
// max_len words per segment. Returns half-open sentence-index ranges.
inline std::vector<std::pair<int, int>> chunk_document(
    const std::vector<std::vector<std::string>>& sentences, int max_len) {
    if (max_len <= 0) throw ConfigError("chunk_document: max_len must be positive");
    for (size_t s = 0; s < sentences.size(); ++s)
        if (static_cast<int>(sentences[s].size()) > max_len)
            throw ConfigError("chunk_document: sentence " + std::to_string(s) +
                              " is longer than max segment length " + std::to_string(max_len));
    std::vector<std::pair<int, int>> segments;
    int start = 0, used = 0;
    for (int s = 0; s < static_cast<int>(sentences.size()); ++s) {
        const int len = static_cast<int>(sentences[s].size());
        if (used > 0 && used + len > max_len) {
            segments.push_back({start, s});
            start = s;
            used = 0;
        }
        used += len;
    }
    if (used > 0 || sentences.empty()) segments.push_back({start, static_cast<int>(sentences.size())});
    return segments;
}

// ---------------------------------------------------------------------------
// Precomputed embedding files: per-document row-major little-endian float32
// binaries with a sidecar JSON index {doc_id -> {rows, cols, file}}.
// ---------------------------------------------------------------------------

struct PrecomputedStore {
    std::string dir;
    nlohmann::json index;

    static PrecomputedStore open(const std::string& dir) {
        PrecomputedStore store;
        store.dir = dir;
        std::ifstream in(dir + "/index.json");
        if (!in) throw DataError("precomputed store: missing index.json in " + dir);
        in >> store.index;
        return store;
    }

    ad::Mat load(const std::string& doc_id) const {
        if (!index.contains(doc_id))
            throw DataError("precomputed store: no entry for doc " + doc_id);
        const auto& e = index.at(doc_id);
        const int rows = e.at("rows").get<int>();
        const int cols = e.at("cols").get<int>();
        std::ifstream f(dir + "/" + e.at("file").get<std::string>(), std::ios::binary);
        if (!f) throw DataError("precomputed store: cannot open matrix for doc " + doc_id);
        std::vector<float> buf(static_cast<size_t>(rows) * cols);
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw DataError("precomputed store: truncated matrix for doc " + doc_id);
        ad::Mat m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                m(i, j) = buf[static_cast<size_t>(i) * cols + j];
        return m;
    }

    static void write(const std::string& dir, const std::string& doc_id, const ad::Mat& m,
                      nlohmann::json& index) {
        std::filesystem::create_directories(dir);
        const std::string file = doc_id + ".f32";
        std::ofstream f(dir + "/" + file, std::ios::binary);
        std::vector<float> buf;
        buf.reserve(static_cast<size_t>(m.rows()) * m.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) buf.push_back(static_cast<float>(m(i, j)));
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        index[doc_id] = {{"rows", m.rows()}, {"cols", m.cols()}, {"file", file}};
    }

    static void write_index(const std::string& dir, const nlohmann::json& index) {
        std::ofstream out(dir + "/index.json");
        out << index.dump(2) << "\n";
    }
};

struct Backend {
    BackendKind kind = BackendKind::TrainableToy;
    int width = 64;           // d_w
    int max_segment_len = 512;
    Vocabulary vocab;                          // toy only
    std::optional<PrecomputedStore> store;     // precomputed only
};

// One row of contextual state per document word. Segments are encoded
// independently and concatenated in order; for the context-free toy encoder
// any chunking yields the identical matrix.
inline ad::Var encode(ad::Tape& tape, const corpus::Document& doc, const Backend& backend,
                      ad::Var toy_embedding) {
    switch (backend.kind) {
        case BackendKind::TrainableToy: {
            if (!toy_embedding.valid())
                throw ConfigError("encode: toy backend requires an embedding table");
            if (toy_embedding.value().cols() != backend.width)
                throw ConfigError("encode: embedding width mismatch");
            auto segments = chunk_document(doc.sentences, backend.max_segment_len);
            std::vector<ad::Var> parts;
            for (auto [s0, s1] : segments) {
                std::vector<int> ids;
                for (int s = s0; s < s1; ++s)
                    for (const auto& w : doc.sentences[s])
                        ids.push_back(backend.vocab.lookup(w));
                if (!ids.empty()) parts.push_back(tape.rows(toy_embedding, ids));
            }
            if (parts.empty()) return tape.constant(ad::Mat::Zero(0, backend.width));
            return parts.size() == 1 ? parts[0] : tape.concat_rows(parts);
        }
        case BackendKind::PrecomputedFile: {
            if (!backend.store) throw ConfigError("encode: precomputed store not opened");
            ad::Mat m = backend.store->load(doc.doc_id);
            if (m.rows() != doc.word_count())
                throw DataError("encode: precomputed matrix for doc " + doc.doc_id +
                                " has wrong row count");
            if (m.cols() != backend.width)
                throw ConfigError("encode: precomputed width mismatch for doc " + doc.doc_id);
            return tape.constant(std::move(m));
        }
        case BackendKind::PretrainedContextual:
            throw ConfigError(
                "encode: no pretrained encoder runtime is linked into this build; export "
                "embeddings and use the precomputed-file backend");
    }
    throw ConfigError("encode: unknown backend");
}

// Mean-pools sub-token rows onto words. Used when importing precomputed
// matrices produced by sub-token encoders.
inline ad::Mat pool_subtokens(const ad::Mat& subtoken_states,
                              const std::vector<std::vector<int>>& word_to_subtokens) {
    ad::Mat out(static_cast<Eigen::Index>(word_to_subtokens.size()), subtoken_states.cols());
    for (size_t w = 0; w < word_to_subtokens.size(); ++w) {
        if (word_to_subtokens[w].empty())
            throw ValidationError("pool_subtokens: word " + std::to_string(w) +
                                  " has no sub-tokens");
        out.row(static_cast<Eigen::Index>(w)).setZero();
        for (int t : word_to_subtokens[w]) out.row(static_cast<Eigen::Index>(w)) += subtoken_states.row(t);
        out.row(static_cast<Eigen::Index>(w)) /= static_cast<double>(word_to_subtokens[w].size());
    }
    return out;
}

// Affine row-wise projection into the node feature space.
inline ad::Var project(ad::Tape& tape, ad::Var states, ad::Var weight, ad::Var bias) {
    if (states.value().cols() != weight.value().rows())
        throw ConfigError("project: state width does not match projection rows");
    return tape.add_row(tape.matmul(states, weight), bias);
}

}  // namespace glre::encoder
