#pragma once

// Metric computation over completed prediction sets: micro P/R/F1, Ign F1,
// bucketed breakdowns by entity distance / mention count, and case dumps.

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "glre/common.hpp"
#include "glre/corpus.hpp"

namespace glre::evaluator {

// One decided relation fact.
struct Fact {
    std::string doc_id;
    std::string head_entity_id;
    std::string tail_entity_id;
    int relation_id = 0;

    auto key() const { return std::tie(doc_id, head_entity_id, tail_entity_id, relation_id); }
    bool operator<(const Fact& o) const { return key() < o.key(); }
};

using FactSet = std::set<Fact>;

// Name-level triple for Ign F1 duplicate matching: case-sensitive surface of
// the first mention of head and tail plus the relation id.
using NameTriple = std::tuple<std::string, std::string, int>;

struct Counts {
    long tp = 0, fp = 0, fn = 0;

    double precision() const { return tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0; }
    double recall() const { return tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0; }
    double f1() const {
        const double p = precision(), r = recall();
        return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
};

inline Counts count(const FactSet& predictions, const FactSet& gold) {
    Counts c;
    for (const Fact& f : predictions) (gold.count(f) ? c.tp : c.fp)++;
    for (const Fact& f : gold)
        if (!predictions.count(f)) c.fn++;
    return c;
}

// Micro-averaged precision / recall / F1; N/A is never a class.
inline std::tuple<double, double, double> prf1(const FactSet& predictions, const FactSet& gold) {
    Counts c = count(predictions, gold);
    return {c.precision(), c.recall(), c.f1()};
}

inline std::string entity_name(const corpus::Document& doc, const std::string& entity_id) {
    return doc.mention(doc.entity(entity_id).mention_ids.front()).surface;
}

inline NameTriple name_triple(const corpus::Document& doc, const Fact& f) {
    return {entity_name(doc, f.head_entity_id), entity_name(doc, f.tail_entity_id),
            f.relation_id};
}

inline std::set<NameTriple> collect_name_triples(const std::vector<corpus::Document>& docs) {
    std::set<NameTriple> out;
    std::map<std::string, const corpus::Document*> by_id;
    for (const auto& d : docs) by_id[d.doc_id] = &d;
    for (const auto& d : docs)
        for (const auto& f : d.gold_facts)
            out.insert(name_triple(d, Fact{d.doc_id, f.head_entity_id, f.tail_entity_id,
                                           f.relation_id}));
    return out;
}

// F1 after removing, from predictions and gold alike, every fact whose
// name-level triple already occurs in the training split.
inline double ign_f1(const FactSet& predictions, const FactSet& gold,
                     const std::set<NameTriple>& train_facts,
                     const std::map<std::string, const corpus::Document*>& docs) {
    auto keep = [&](const Fact& f) {
        auto it = docs.find(f.doc_id);
        if (it == docs.end()) throw ValidationError("ign_f1: unknown doc " + f.doc_id);
        return train_facts.count(name_triple(*it->second, f)) == 0;
    };
    FactSet p2, g2;
    for (const Fact& f : predictions)
        if (keep(f)) p2.insert(f);
    for (const Fact& f : gold)
        if (keep(f)) g2.insert(f);
    auto [p, r, f1] = prf1(p2, g2);
    (void)p;
    (void)r;
    return f1;
}

// ---------------------------------------------------------------------------
// Bucketed breakdowns
// ---------------------------------------------------------------------------

enum class BucketAxis { Distance, Mentions };

struct Bucket {
    std::string label;
    double lo;  // inclusive
    double hi;  // exclusive
};

inline std::vector<Bucket> default_distance_buckets() {
    return {{"0", 0.0, 1.0}, {"1-2", 1.0, 3.0}, {">=3", 3.0, 1e18}};
}

inline std::vector<Bucket> default_mention_buckets() {
    return {{"[1,2)", 1.0, 2.0}, {"[2,4)", 2.0, 4.0}, {">=4", 4.0, 1e18}};
}

struct BucketReport {
    std::map<std::string, Counts> buckets;

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [label, c] : buckets)
            j[label] = {{"tp", c.tp},        {"fp", c.fp},           {"fn", c.fn},
                        {"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()}};
        return j;
    }
};

// Each fact lands in exactly one bucket, chosen by its pair's entity distance
// or average mention count.
inline BucketReport bucket_report(const FactSet& predictions, const FactSet& gold,
                                  const std::map<std::string, const corpus::Document*>& docs,
                                  BucketAxis axis, const std::vector<Bucket>& buckets) {
    BucketReport report;
    for (const auto& b : buckets) report.buckets[b.label];

    auto bucket_of = [&](const Fact& f) -> const std::string& {
        auto it = docs.find(f.doc_id);
        if (it == docs.end()) throw ValidationError("bucket_report: unknown doc " + f.doc_id);
        const corpus::Document& d = *it->second;
        const double v = axis == BucketAxis::Distance
                             ? double(corpus::entity_distance(d, f.head_entity_id,
                                                              f.tail_entity_id))
                             : corpus::avg_mention_count(d, f.head_entity_id, f.tail_entity_id);
        for (const auto& b : buckets)
            if (v >= b.lo && v < b.hi) return b.label;
        throw ValidationError("bucket_report: value " + std::to_string(v) +
                              " falls in no bucket");
    };

    for (const Fact& f : predictions)
        (gold.count(f) ? report.buckets[bucket_of(f)].tp : report.buckets[bucket_of(f)].fp)++;
    for (const Fact& f : gold)
        if (!predictions.count(f)) report.buckets[bucket_of(f)].fn++;
    return report;
}

// ---------------------------------------------------------------------------
// Case dumps
// ---------------------------------------------------------------------------

// Plain-text record of one document: marked text plus gold/predicted label
// sets per pair. Deterministic, suitable for golden-file comparison.
inline std::string case_dump(const corpus::Document& doc, const FactSet& predictions,
                             const FactSet& gold, const corpus::LabelVocabulary& vocab) {
    std::ostringstream out;
    out << "== doc " << doc.doc_id << " ==\n";
    for (size_t s = 0; s < doc.sentences.size(); ++s) {
        out << "[S" << s + 1 << "]";
        for (size_t w = 0; w < doc.sentences[s].size(); ++w) {
            std::string open, close;
            for (const auto& m : doc.mentions) {
                if (m.sent_index != static_cast<int>(s)) continue;
                if (m.span.start == static_cast<int>(w)) open += "[" + m.entity_id + ":";
                if (m.span.end == static_cast<int>(w) + 1) close += "]";
            }
            out << " " << open << doc.sentences[s][w] << close;
        }
        out << "\n";
    }

    std::set<std::pair<std::string, std::string>> pairs;
    for (const Fact& f : gold)
        if (f.doc_id == doc.doc_id) pairs.insert({f.head_entity_id, f.tail_entity_id});
    for (const Fact& f : predictions)
        if (f.doc_id == doc.doc_id) pairs.insert({f.head_entity_id, f.tail_entity_id});

    auto labels_of = [&](const FactSet& set, const std::string& h, const std::string& t) {
        std::string s;
        for (const Fact& f : set)
            if (f.doc_id == doc.doc_id && f.head_entity_id == h && f.tail_entity_id == t)
                s += (s.empty() ? "" : ",") + vocab.names.at(f.relation_id);
        return s.empty() ? std::string("N/A") : s;
    };

    for (const auto& [h, t] : pairs) {
        const std::string g = labels_of(gold, h, t);
        const std::string p = labels_of(predictions, h, t);
        out << "pair " << h << " -> " << t << " | gold: " << g << " | predicted: " << p;
        if (g != p) out << (p == "N/A" ? " | FN" : (g == "N/A" ? " | FP" : " | MISMATCH"));
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricsReport {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    double ign_f1 = -1.0;  // < 0 when not applicable
    Counts counts;
    BucketReport distance_buckets;
    BucketReport mention_buckets;
    std::string fingerprint;  // config/ablation identifier

    nlohmann::json to_json() const {
        nlohmann::json j = {{"precision", precision},
                            {"recall", recall},
                            {"f1", f1},
                            {"tp", counts.tp},
                            {"fp", counts.fp},
                            {"fn", counts.fn},
                            {"fingerprint", fingerprint}};
        if (ign_f1 >= 0.0) j["ign_f1"] = ign_f1;
        if (!distance_buckets.buckets.empty())
            j["distance_buckets"] = distance_buckets.to_json();
        if (!mention_buckets.buckets.empty()) j["mention_buckets"] = mention_buckets.to_json();
        return j;
    }

    std::string to_text() const {
        std::ostringstream out;
        out << "metric     value\n";
        out << "precision  " << precision << "\n";
        out << "recall     " << recall << "\n";
        out << "f1         " << f1 << "\n";
        if (ign_f1 >= 0.0) out << "ign_f1     " << ign_f1 << "\n";
        out << "tp/fp/fn   " << counts.tp << "/" << counts.fp << "/" << counts.fn << "\n";
        if (!fingerprint.empty()) out << "config     " << fingerprint << "\n";
        return out.str();
    }
};

}  // namespace glre::evaluator
