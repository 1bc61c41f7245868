#pragma once

// Annotated-document model plus the DocRED / PubTator ingestion paths and the
// canonical JSONL serialization used by every downstream stage.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "glre/common.hpp"

namespace glre::corpus {

using json = nlohmann::json;

inline constexpr int kCanonicalFormatVersion = 1;

struct Span {
    int start = 0;  // half-open word interval within one sentence
    int end = 0;
};

struct Mention {
    std::string mention_id;
    std::string entity_id;
    int sent_index = 0;
    Span span;
    std::string surface;
};

struct Entity {
    std::string entity_id;
    std::vector<std::string> mention_ids;
    std::string entity_type;  // empty when unknown
};

struct RelationFact {
    std::string head_entity_id;
    std::string tail_entity_id;
    int relation_id = 0;
};

struct Document {
    std::string doc_id;
    std::vector<std::vector<std::string>> sentences;
    std::vector<Mention> mentions;
    std::vector<Entity> entities;
    std::vector<RelationFact> gold_facts;
    std::string provenance = "train";  // split of origin, kept for Ign F1

    int word_count() const {
        int n = 0;
        for (const auto& s : sentences) n += static_cast<int>(s.size());
        return n;
    }

    // First global word index of each sentence.
    std::vector<int> sentence_offsets() const {
        std::vector<int> off;
        off.reserve(sentences.size());
        int n = 0;
        for (const auto& s : sentences) {
            off.push_back(n);
            n += static_cast<int>(s.size());
        }
        return off;
    }

    const Entity& entity(const std::string& id) const {
        for (const auto& e : entities)
            if (e.entity_id == id) return e;
        throw ValidationError("doc " + doc_id + ": unknown entity id " + id);
    }

    const Mention& mention(const std::string& id) const {
        for (const auto& m : mentions)
            if (m.mention_id == id) return m;
        throw ValidationError("doc " + doc_id + ": unknown mention id " + id);
    }
};

struct LabelVocabulary {
    std::vector<std::string> names;  // N/A is not a member

    int size() const { return static_cast<int>(names.size()); }

    int add_or_get(const std::string& name) {
        for (int i = 0; i < size(); ++i)
            if (names[i] == name) return i;
        names.push_back(name);
        return size() - 1;
    }

    std::optional<int> index_of(const std::string& name) const {
        for (int i = 0; i < size(); ++i)
            if (names[i] == name) return i;
        return std::nullopt;
    }
};

inline LabelVocabulary cdr_vocabulary() { return LabelVocabulary{{"CID"}}; }

inline void validate(const Document& doc, int n_relations = -1) {
    std::set<std::string> mention_ids, entity_ids;
    for (const auto& e : doc.entities) {
        if (e.mention_ids.empty())
            throw ValidationError("doc " + doc.doc_id + ": entity " + e.entity_id +
                                  " has no mentions");
        if (!entity_ids.insert(e.entity_id).second)
            throw ValidationError("doc " + doc.doc_id + ": duplicate entity id " + e.entity_id);
        std::set<std::string> seen(e.mention_ids.begin(), e.mention_ids.end());
        if (seen.size() != e.mention_ids.size())
            throw ValidationError("doc " + doc.doc_id + ": entity " + e.entity_id +
                                  " lists a mention twice");
    }
    for (const auto& m : doc.mentions) {
        if (!mention_ids.insert(m.mention_id).second)
            throw ValidationError("doc " + doc.doc_id + ": duplicate mention id " + m.mention_id);
        if (m.sent_index < 0 || m.sent_index >= static_cast<int>(doc.sentences.size()))
            throw ValidationError("doc " + doc.doc_id + ": mention " + m.mention_id +
                                  " references missing sentence");
        if (m.span.start >= m.span.end)
            throw ValidationError("doc " + doc.doc_id + ": mention " + m.mention_id +
                                  " has empty span");
        if (m.span.end > static_cast<int>(doc.sentences[m.sent_index].size()))
            throw ValidationError("doc " + doc.doc_id + ": mention " + m.mention_id +
                                  " span exceeds sentence length");
        if (entity_ids.count(m.entity_id) == 0)
            throw ValidationError("doc " + doc.doc_id + ": mention " + m.mention_id +
                                  " references missing entity " + m.entity_id);
    }
    for (const auto& e : doc.entities)
        for (const auto& mid : e.mention_ids) {
            const Mention& m = doc.mention(mid);
            if (m.entity_id != e.entity_id)
                throw ValidationError("doc " + doc.doc_id + ": mention " + mid +
                                      " assigned to two entities");
        }
    for (const auto& f : doc.gold_facts) {
        if (entity_ids.count(f.head_entity_id) == 0 || entity_ids.count(f.tail_entity_id) == 0)
            throw ValidationError("doc " + doc.doc_id + ": fact references missing entity");
        if (f.head_entity_id == f.tail_entity_id)
            throw ValidationError("doc " + doc.doc_id + ": fact head equals tail");
        if (f.relation_id < 0 || (n_relations >= 0 && f.relation_id >= n_relations))
            throw ValidationError("doc " + doc.doc_id + ": relation id out of range");
    }
}

// ---------------------------------------------------------------------------
// DocRED
// ---------------------------------------------------------------------------

// Parses one DocRED-schema JSON file, extending `vocab` with unseen relation
// names so that train/dev/test splits share a single label space.
inline std::vector<Document> parse_docred(const std::string& path, LabelVocabulary& vocab,
                                          const std::string& provenance = "train") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open DocRED file: " + path);
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw ValidationError("malformed JSON in " + path + ": " + e.what());
    }
    if (!root.is_array()) throw ValidationError(path + ": top-level JSON value must be an array");

    std::vector<Document> docs;
    for (size_t rec = 0; rec < root.size(); ++rec) {
        const json& r = root[rec];
        try {
            Document doc;
            doc.doc_id = r.at("title").get<std::string>();
            doc.provenance = provenance;
            for (const json& sent : r.at("sents"))
                doc.sentences.push_back(sent.get<std::vector<std::string>>());

            const json& vertex_set = r.at("vertexSet");
            int mention_counter = 0;
            for (size_t ei = 0; ei < vertex_set.size(); ++ei) {
                Entity entity;
                entity.entity_id = "E" + std::to_string(ei);
                for (const json& jm : vertex_set[ei]) {
                    Mention m;
                    m.mention_id = "M" + std::to_string(mention_counter++);
                    m.entity_id = entity.entity_id;
                    m.sent_index = jm.at("sent_id").get<int>();
                    m.span.start = jm.at("pos")[0].get<int>();
                    m.span.end = jm.at("pos")[1].get<int>();
                    m.surface = jm.at("name").get<std::string>();
                    if (entity.entity_type.empty() && jm.contains("type"))
                        entity.entity_type = jm.at("type").get<std::string>();
                    entity.mention_ids.push_back(m.mention_id);
                    doc.mentions.push_back(std::move(m));
                }
                doc.entities.push_back(std::move(entity));
            }

            if (r.contains("labels")) {
                std::set<std::tuple<std::string, std::string, int>> seen;
                for (const json& jl : r.at("labels")) {
                    RelationFact f;
                    f.head_entity_id = "E" + std::to_string(jl.at("h").get<int>());
                    f.tail_entity_id = "E" + std::to_string(jl.at("t").get<int>());
                    f.relation_id = vocab.add_or_get(jl.at("r").get<std::string>());
                    if (seen.insert({f.head_entity_id, f.tail_entity_id, f.relation_id}).second)
                        doc.gold_facts.push_back(std::move(f));
                }
            }
            validate(doc);
            docs.push_back(std::move(doc));
        } catch (const json::exception& e) {
            throw ValidationError(path + ": record " + std::to_string(rec) + ": " + e.what());
        }
    }
    return docs;
}

// ---------------------------------------------------------------------------
// PubTator (CDR)
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
    std::string text;
    int char_start = 0;  // half-open character range in the full text
    int char_end = 0;
};

inline bool is_abbreviation(const std::string& word) {
    static const std::set<std::string> kGuard = {
        "e.g", "i.e", "etc", "vs", "al", "Fig", "fig", "Dr", "Mr",
        "Mrs", "Ms", "Prof", "St", "No", "no", "approx", "ca"};
    return kGuard.count(word) > 0 || (word.size() == 1 && std::isupper((unsigned char)word[0]));
}

// Sentence boundaries: after ". ", "? " or "! " unless the preceding word is a
// guarded abbreviation or a single initial. Returns half-open char ranges.
inline std::vector<std::pair<int, int>> split_sentences(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    int start = 0;
    const int n = static_cast<int>(text.size());
    for (int i = 0; i + 1 < n; ++i) {
        char c = text[i];
        if ((c == '.' || c == '?' || c == '!') && text[i + 1] == ' ') {
            if (c == '.') {
                int w = i - 1;
                while (w >= start && (std::isalnum((unsigned char)text[w]) || text[w] == '.')) --w;
                std::string word = text.substr(w + 1, i - w - 1);
                if (is_abbreviation(word)) continue;
            }
            out.push_back({start, i + 1});
            start = i + 2;
        }
    }
    if (start < n) out.push_back({start, n});
    return out;
}

// Whitespace split followed by peeling punctuation off token edges. Internal
// hyphens, dots and apostrophes stay inside the token.
inline std::vector<Token> tokenize(const std::string& text, int base, int sent_start,
                                   int sent_end) {
    std::vector<Token> toks;
    int i = sent_start;
    auto is_word_char = [](char c) {
        return std::isalnum((unsigned char)c) || c == '-' || c == '\'' || c == '.' || c == '/';
    };
    while (i < sent_end) {
        if (std::isspace((unsigned char)text[i])) {
            ++i;
            continue;
        }
        if (!is_word_char(text[i])) {
            toks.push_back({std::string(1, text[i]), base + i, base + i + 1});
            ++i;
            continue;
        }
        int j = i;
        while (j < sent_end && is_word_char(text[j])) ++j;
        // trailing sentence punctuation peels off
        int k = j;
        while (k > i + 1 && (text[k - 1] == '.' || text[k - 1] == '\'')) --k;
        if (k > i) {
            toks.push_back({text.substr(i, k - i), base + i, base + k});
            for (int p = k; p < j; ++p)
                toks.push_back({std::string(1, text[p]), base + p, base + p + 1});
        }
        i = j;
    }
    return toks;
}

struct PubtatorAnnotation {
    int start = 0, end = 0;
    std::string text, type, concept_id;
};

struct PubtatorBlock {
    std::string pmid, title, abstract;
    std::vector<PubtatorAnnotation> annotations;
    std::vector<std::pair<std::string, std::string>> cid;  // chemical id -> disease id
};

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline Document block_to_document(const PubtatorBlock& block, const std::string& provenance) {
    const std::string text = block.title + " " + block.abstract;
    Document doc;
    doc.doc_id = block.pmid;
    doc.provenance = provenance;

    std::vector<std::vector<Token>> sent_tokens;
    for (auto [s, e] : split_sentences(text)) {
        auto toks = tokenize(text, 0, s, e);
        if (toks.empty()) continue;
        doc.sentences.emplace_back();
        for (const Token& t : toks) doc.sentences.back().push_back(t.text);
        sent_tokens.push_back(std::move(toks));
    }

    // concept id -> entity, in annotation order
    std::map<std::string, size_t> entity_index;
    int mention_counter = 0;
    for (const auto& ann : block.annotations) {
        if (ann.concept_id == "-1") continue;  // unlinked annotation
        int si = -1, first = -1, last = -1;
        for (size_t s = 0; s < sent_tokens.size() && si < 0; ++s) {
            for (size_t t = 0; t < sent_tokens[s].size(); ++t) {
                const Token& tok = sent_tokens[s][t];
                if (tok.char_start < ann.end && ann.start < tok.char_end) {
                    si = static_cast<int>(s);
                    first = static_cast<int>(t);
                    last = first;
                    for (size_t u = t + 1; u < sent_tokens[s].size(); ++u) {
                        const Token& nx = sent_tokens[s][u];
                        if (nx.char_start < ann.end && ann.start < nx.char_end)
                            last = static_cast<int>(u);
                        else
                            break;
                    }
                    break;
                }
            }
        }
        if (si < 0)
            throw ValidationError("doc " + block.pmid + ": annotation at offset " +
                                  std::to_string(ann.start) + " aligns with no token");

        Mention m;
        m.mention_id = "M" + std::to_string(mention_counter++);
        m.entity_id = ann.concept_id;
        m.sent_index = si;
        m.span = {first, last + 1};
        m.surface = ann.text;

        auto it = entity_index.find(ann.concept_id);
        if (it == entity_index.end()) {
            entity_index[ann.concept_id] = doc.entities.size();
            doc.entities.push_back({ann.concept_id, {m.mention_id}, ann.type});
        } else {
            doc.entities[it->second].mention_ids.push_back(m.mention_id);
        }
        doc.mentions.push_back(std::move(m));
    }

    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& [chem, dis] : block.cid) {
        if (entity_index.count(chem) == 0)
            throw ValidationError("doc " + block.pmid + ": CID references unknown concept " +
                                  chem);
        if (entity_index.count(dis) == 0)
            throw ValidationError("doc " + block.pmid + ": CID references unknown concept " +
                                  dis);
        if (seen.insert({chem, dis}).second) doc.gold_facts.push_back({chem, dis, 0});
    }
    validate(doc);
    return doc;
}

}  // namespace detail

// Optional hook for MeSH-hierarchy hypernym filtering of CDR gold facts.
// The default pipeline never applies it; callers with an external hierarchy
// can drop facts whose disease is a hypernym of a more specific co-occurring one.
using HypernymFilter = std::function<void(Document&)>;

inline std::vector<Document> parse_pubtator(const std::string& path,
                                            const std::string& provenance = "train",
                                            const HypernymFilter& filter = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open PubTator file: " + path);

    std::vector<Document> docs;
    detail::PubtatorBlock block;
    bool have_block = false;
    auto flush = [&]() {
        if (!have_block) return;
        Document doc = detail::block_to_document(block, provenance);
        if (filter) filter(doc);
        docs.push_back(std::move(doc));
        block = {};
        have_block = false;
    };

    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
            continue;
        }
        auto t_pos = line.find("|t|");
        auto a_pos = line.find("|a|");
        if (t_pos != std::string::npos && line.find('\t') == std::string::npos) {
            block.pmid = line.substr(0, t_pos);
            block.title = line.substr(t_pos + 3);
            have_block = true;
            continue;
        }
        if (a_pos != std::string::npos && line.find('\t') == std::string::npos) {
            block.abstract = line.substr(a_pos + 3);
            continue;
        }
        auto fields = detail::split_tabs(line);
        if (fields.size() >= 4 && fields[1] == "CID") {
            block.cid.push_back({fields[2], fields[3]});
        } else if (fields.size() >= 6) {
            detail::PubtatorAnnotation ann;
            ann.start = std::stoi(fields[1]);
            ann.end = std::stoi(fields[2]);
            ann.text = fields[3];
            ann.type = fields[4];
            ann.concept_id = fields[5];
            block.annotations.push_back(std::move(ann));
        } else {
            throw ValidationError(path + ": unrecognized PubTator line: " + line);
        }
    }
    flush();
    return docs;
}

// ---------------------------------------------------------------------------
// Pair enumeration and pair-level statistics
// ---------------------------------------------------------------------------

enum class PairMode { AllOrdered, ChemicalDisease };

struct CandidatePair {
    std::string head_entity_id;
    std::string tail_entity_id;
    std::vector<std::uint8_t> labels;  // {0,1}^{|R|}; all-zero encodes N/A

    bool is_positive() const {
        return std::any_of(labels.begin(), labels.end(), [](std::uint8_t b) { return b != 0; });
    }
};

inline std::vector<CandidatePair> enumerate_pairs(const Document& doc, int n_relations,
                                                  PairMode mode = PairMode::AllOrdered) {
    std::map<std::pair<std::string, std::string>, std::vector<std::uint8_t>> gold;
    for (const auto& f : doc.gold_facts) {
        auto& v = gold[{f.head_entity_id, f.tail_entity_id}];
        if (v.empty()) v.assign(n_relations, 0);
        v[f.relation_id] = 1;
    }
    std::vector<CandidatePair> pairs;
    for (const auto& a : doc.entities) {
        for (const auto& b : doc.entities) {
            if (a.entity_id == b.entity_id) continue;
            if (mode == PairMode::ChemicalDisease &&
                (a.entity_type != "Chemical" || b.entity_type != "Disease"))
                continue;
            CandidatePair p;
            p.head_entity_id = a.entity_id;
            p.tail_entity_id = b.entity_id;
            auto it = gold.find({a.entity_id, b.entity_id});
            p.labels = it != gold.end() ? it->second
                                        : std::vector<std::uint8_t>(n_relations, 0);
            pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

// Shortest sentence distance over all mention pairs of the two entities.
inline int entity_distance(const Document& doc, const std::string& a, const std::string& b) {
    const Entity& ea = doc.entity(a);
    const Entity& eb = doc.entity(b);
    int best = -1;
    for (const auto& ma : ea.mention_ids)
        for (const auto& mb : eb.mention_ids) {
            int d = std::abs(doc.mention(ma).sent_index - doc.mention(mb).sent_index);
            if (best < 0 || d < best) best = d;
        }
    return best;
}

inline double avg_mention_count(const Document& doc, const std::string& a,
                                const std::string& b) {
    return (static_cast<double>(doc.entity(a).mention_ids.size()) +
            static_cast<double>(doc.entity(b).mention_ids.size())) /
           2.0;
}

inline std::vector<Document> merge_train_dev(const std::vector<Document>& train,
                                             const std::vector<Document>& dev) {
    std::set<std::string> ids;
    std::vector<Document> merged;
    merged.reserve(train.size() + dev.size());
    for (const auto& d : train) {
        if (!ids.insert(d.doc_id).second)
            throw ValidationError("merge_train_dev: duplicate doc_id " + d.doc_id);
        merged.push_back(d);
    }
    for (const auto& d : dev) {
        if (!ids.insert(d.doc_id).second)
            throw ValidationError("merge_train_dev: duplicate doc_id " + d.doc_id);
        merged.push_back(d);
        merged.back().provenance = "dev";
    }
    return merged;
}

// ---------------------------------------------------------------------------
// Canonical JSONL serialization
// ---------------------------------------------------------------------------

inline json to_json(const Document& doc) {
    json j;
    j["format_version"] = kCanonicalFormatVersion;
    j["doc_id"] = doc.doc_id;
    j["provenance"] = doc.provenance;
    j["sentences"] = doc.sentences;
    j["mentions"] = json::array();
    for (const auto& m : doc.mentions)
        j["mentions"].push_back({{"id", m.mention_id},
                                 {"entity_id", m.entity_id},
                                 {"sent", m.sent_index},
                                 {"start", m.span.start},
                                 {"end", m.span.end},
                                 {"surface", m.surface}});
    j["entities"] = json::array();
    for (const auto& e : doc.entities)
        j["entities"].push_back(
            {{"id", e.entity_id}, {"mentions", e.mention_ids}, {"type", e.entity_type}});
    j["facts"] = json::array();
    for (const auto& f : doc.gold_facts)
        j["facts"].push_back(
            {{"h", f.head_entity_id}, {"t", f.tail_entity_id}, {"r", f.relation_id}});
    return j;
}

inline Document from_json(const json& j) {
    if (j.at("format_version").get<int>() != kCanonicalFormatVersion)
        throw ValidationError("unsupported canonical format version");
    Document doc;
    doc.doc_id = j.at("doc_id").get<std::string>();
    doc.provenance = j.at("provenance").get<std::string>();
    doc.sentences = j.at("sentences").get<std::vector<std::vector<std::string>>>();
    for (const json& jm : j.at("mentions"))
        doc.mentions.push_back({jm.at("id").get<std::string>(),
                                jm.at("entity_id").get<std::string>(),
                                jm.at("sent").get<int>(),
                                {jm.at("start").get<int>(), jm.at("end").get<int>()},
                                jm.at("surface").get<std::string>()});
    for (const json& je : j.at("entities"))
        doc.entities.push_back({je.at("id").get<std::string>(),
                                je.at("mentions").get<std::vector<std::string>>(),
                                je.at("type").get<std::string>()});
    for (const json& jf : j.at("facts"))
        doc.gold_facts.push_back({jf.at("h").get<std::string>(), jf.at("t").get<std::string>(),
                                  jf.at("r").get<int>()});
    validate(doc);
    return doc;
}

inline void write_canonical(const std::string& path, const std::vector<Document>& docs) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write canonical file: " + path);
    for (const auto& d : docs) out << to_json(d).dump() << "\n";
}

inline std::vector<Document> read_canonical(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open canonical file: " + path);
    std::vector<Document> docs;
    std::string line;
    size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty()) continue;
        try {
            docs.push_back(from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ValidationError(path + ": line " + std::to_string(ln) + ": " + e.what());
        }
    }
    return docs;
}

}  // namespace glre::corpus
