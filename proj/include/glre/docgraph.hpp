#pragma once

// Heterogeneous document graph: mention / entity / sentence nodes with five
// typed edge sets (MM, ME, MS, ES, SS). Entity-entity edges never exist;
// those pairs are what the classifier predicts.

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "glre/autodiff.hpp"
#include "glre/common.hpp"
#include "glre/corpus.hpp"

namespace glre::docgraph {

enum class NodeKind { Mention, Entity, Sentence };

enum class EdgeType { MM, ME, MS, ES, SS };

inline const std::vector<EdgeType>& all_edge_types() {
    static const std::vector<EdgeType> kTypes = {EdgeType::MM, EdgeType::ME, EdgeType::MS,
                                                 EdgeType::ES, EdgeType::SS};
    return kTypes;
}

inline std::string edge_type_name(EdgeType t) {
    switch (t) {
        case EdgeType::MM: return "MM";
        case EdgeType::ME: return "ME";
        case EdgeType::MS: return "MS";
        case EdgeType::ES: return "ES";
        case EdgeType::SS: return "SS";
    }
    return "?";
}

// Undirected edge stored with smaller node index first.
using EdgeSet = std::set<std::pair<int, int>>;
using EdgeMap = std::map<EdgeType, EdgeSet>;

struct Node {
    NodeKind kind;
    int anchor;  // mention index / entity index / sentence index in the Document
};

// Node ordering is fixed: mentions (document order), entities (id order as
// stored), sentences (index order). Tests and checkpoints rely on it.
struct GraphLayout {
    std::vector<Node> nodes;
    int n_mentions = 0, n_entities = 0, n_sentences = 0;

    int mention_node(int i) const { return i; }
    int entity_node(int i) const { return n_mentions + i; }
    int sentence_node(int i) const { return n_mentions + n_entities + i; }
    int size() const { return n_mentions + n_entities + n_sentences; }
};

inline GraphLayout make_layout(const corpus::Document& doc) {
    GraphLayout g;
    g.n_mentions = static_cast<int>(doc.mentions.size());
    g.n_entities = static_cast<int>(doc.entities.size());
    g.n_sentences = static_cast<int>(doc.sentences.size());
    for (int i = 0; i < g.n_mentions; ++i) g.nodes.push_back({NodeKind::Mention, i});
    for (int i = 0; i < g.n_entities; ++i) g.nodes.push_back({NodeKind::Entity, i});
    for (int i = 0; i < g.n_sentences; ++i) g.nodes.push_back({NodeKind::Sentence, i});
    return g;
}

inline void add_edge(EdgeSet& set, int a, int b) {
    if (a == b) return;  // self-information is W_0's job, never an explicit edge
    set.insert({std::min(a, b), std::max(a, b)});
}

inline EdgeMap build_edges(const corpus::Document& doc) {
    GraphLayout g = make_layout(doc);
    std::map<std::string, int> entity_idx;
    for (int i = 0; i < g.n_entities; ++i) entity_idx[doc.entities[i].entity_id] = i;

    EdgeMap edges;
    for (EdgeType t : all_edge_types()) edges[t];

    for (int i = 0; i < g.n_mentions; ++i) {
        const corpus::Mention& mi = doc.mentions[i];
        // MM: any two mentions in the same sentence
        for (int j = i + 1; j < g.n_mentions; ++j)
            if (doc.mentions[j].sent_index == mi.sent_index)
                add_edge(edges[EdgeType::MM], g.mention_node(i), g.mention_node(j));
        // ME: the mention refers to the entity
        add_edge(edges[EdgeType::ME], g.mention_node(i),
                 g.entity_node(entity_idx.at(mi.entity_id)));
        // MS: the mention appears in the sentence
        add_edge(edges[EdgeType::MS], g.mention_node(i), g.sentence_node(mi.sent_index));
        // ES: at least one mention of the entity appears in the sentence
        add_edge(edges[EdgeType::ES], g.entity_node(entity_idx.at(mi.entity_id)),
                 g.sentence_node(mi.sent_index));
    }
    // SS: all sentence nodes connected
    for (int s = 0; s < g.n_sentences; ++s)
        for (int t = s + 1; t < g.n_sentences; ++t)
            add_edge(edges[EdgeType::SS], g.sentence_node(s), g.sentence_node(t));
    return edges;
}

inline size_t total_edges(const EdgeMap& edges) {
    size_t n = 0;
    for (const auto& [t, set] : edges) n += set.size();
    return n;
}

// ---------------------------------------------------------------------------
// Node feature initialization on the tape
// ---------------------------------------------------------------------------

// Word-average part of a mention node: mean of projected word rows over the
// mention's global span. `offsets` are sentence start offsets in the document.
inline std::vector<int> mention_word_indices(const corpus::Document& doc,
                                             const corpus::Mention& m,
                                             const std::vector<int>& offsets) {
    if (m.span.start >= m.span.end)
        throw ValidationError("doc " + doc.doc_id + ": mention " + m.mention_id +
                              " has empty span");
    std::vector<int> idx;
    for (int w = m.span.start; w < m.span.end; ++w) idx.push_back(offsets[m.sent_index] + w);
    return idx;
}

inline ad::Var init_mention_node(ad::Tape& tape, const corpus::Document& doc,
                                 const corpus::Mention& m, ad::Var projected, ad::Var type_emb,
                                 const std::vector<int>& offsets) {
    ad::Var avg = tape.mean_rows(projected, mention_word_indices(doc, m, offsets));
    return tape.concat_cols({avg, type_emb});
}

// Entity nodes average the word-average parts of their mention nodes (the
// type component is excluded so that all node kinds share one dimension),
// then concatenate the entity type embedding.
inline ad::Var init_entity_node(ad::Tape& tape, const std::vector<ad::Var>& mention_word_parts,
                                ad::Var type_emb) {
    if (mention_word_parts.empty())
        throw ValidationError("init_entity_node: entity has no mentions");
    ad::Var stacked = tape.concat_rows(mention_word_parts);
    std::vector<int> all(mention_word_parts.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    ad::Var avg = tape.mean_rows(stacked, all);
    return tape.concat_cols({avg, type_emb});
}

inline ad::Var init_sentence_node(ad::Tape& tape, const corpus::Document& doc, int sent_index,
                                  ad::Var projected, ad::Var type_emb,
                                  const std::vector<int>& offsets) {
    const int len = static_cast<int>(doc.sentences[sent_index].size());
    if (len == 0)
        throw ValidationError("doc " + doc.doc_id + ": sentence " +
                              std::to_string(sent_index) + " is empty");
    std::vector<int> idx(len);
    for (int w = 0; w < len; ++w) idx[w] = offsets[sent_index] + w;
    ad::Var avg = tape.mean_rows(projected, idx);
    return tape.concat_cols({avg, type_emb});
}

// Full initial feature matrix in layout order. Returns the matrix Var plus the
// word-average parts of mention nodes (reused as attention values later).
struct InitialFeatures {
    ad::Var features;                         // |nodes| x d_n
    std::vector<ad::Var> mention_word_parts;  // 1 x d_p each
};

inline InitialFeatures init_features(ad::Tape& tape, const corpus::Document& doc,
                                     ad::Var projected, ad::Var type_m, ad::Var type_e,
                                     ad::Var type_s) {
    const GraphLayout g = make_layout(doc);
    const std::vector<int> offsets = doc.sentence_offsets();

    InitialFeatures out;
    std::vector<ad::Var> rows;
    rows.reserve(g.size());
    for (int i = 0; i < g.n_mentions; ++i) {
        ad::Var part =
            tape.mean_rows(projected, mention_word_indices(doc, doc.mentions[i], offsets));
        out.mention_word_parts.push_back(part);
        rows.push_back(tape.concat_cols({part, type_m}));
    }
    for (int i = 0; i < g.n_entities; ++i) {
        std::vector<ad::Var> parts;
        for (const auto& mid : doc.entities[i].mention_ids) {
            for (int m = 0; m < g.n_mentions; ++m)
                if (doc.mentions[m].mention_id == mid) {
                    parts.push_back(out.mention_word_parts[m]);
                    break;
                }
        }
        rows.push_back(init_entity_node(tape, parts, type_e));
    }
    for (int s = 0; s < g.n_sentences; ++s)
        rows.push_back(init_sentence_node(tape, doc, s, projected, type_s, offsets));
    out.features = tape.concat_rows(rows);
    return out;
}

// Debug/stats dump consumed by the graph-stats CLI subcommand.
inline nlohmann::json graph_to_json(const corpus::Document& doc) {
    const GraphLayout g = make_layout(doc);
    const EdgeMap edges = build_edges(doc);
    nlohmann::json j;
    j["doc_id"] = doc.doc_id;
    j["nodes"] = nlohmann::json::array();
    for (const Node& n : g.nodes) {
        const char* kind = n.kind == NodeKind::Mention ? "M"
                           : n.kind == NodeKind::Entity ? "E"
                                                        : "S";
        j["nodes"].push_back({{"kind", kind}, {"anchor", n.anchor}});
    }
    for (const auto& [t, set] : edges) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [a, b] : set) arr.push_back({a, b});
        j["edges"][edge_type_name(t)] = arr;
    }
    return j;
}

}  // namespace glre::docgraph
