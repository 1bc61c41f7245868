#include <doctest.h>

#include <random>

#include "glre/docgraph.hpp"
#include "test_util.hpp"

using namespace glre;
using namespace glre::docgraph;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

// Independent rule oracle: decide membership for every unordered node pair
// straight from the document, without touching build_edges internals.
EdgeMap oracle_edges(const corpus::Document& doc) {
    GraphLayout g = make_layout(doc);
    std::map<std::string, int> eidx;
    for (int i = 0; i < g.n_entities; ++i) eidx[doc.entities[i].entity_id] = i;
    auto entity_of = [&](int m) { return eidx.at(doc.mentions[m].entity_id); };
    auto entity_in_sentence = [&](int e, int s) {
        for (const auto& m : doc.mentions)
            if (eidx.at(m.entity_id) == e && m.sent_index == s) return true;
        return false;
    };

    EdgeMap edges;
    for (EdgeType t : all_edge_types()) edges[t];
    for (int a = 0; a < g.size(); ++a) {
        for (int b = a + 1; b < g.size(); ++b) {
            const Node& na = g.nodes[a];
            const Node& nb = g.nodes[b];
            if (na.kind == NodeKind::Mention && nb.kind == NodeKind::Mention) {
                if (doc.mentions[na.anchor].sent_index == doc.mentions[nb.anchor].sent_index)
                    edges[EdgeType::MM].insert({a, b});
            } else if (na.kind == NodeKind::Mention && nb.kind == NodeKind::Entity) {
                if (entity_of(na.anchor) == nb.anchor) edges[EdgeType::ME].insert({a, b});
            } else if (na.kind == NodeKind::Mention && nb.kind == NodeKind::Sentence) {
                if (doc.mentions[na.anchor].sent_index == nb.anchor)
                    edges[EdgeType::MS].insert({a, b});
            } else if (na.kind == NodeKind::Entity && nb.kind == NodeKind::Sentence) {
                if (entity_in_sentence(na.anchor, nb.anchor)) edges[EdgeType::ES].insert({a, b});
            } else if (na.kind == NodeKind::Sentence && nb.kind == NodeKind::Sentence) {
                edges[EdgeType::SS].insert({a, b});
            }
            // Entity-Entity pairs never produce an edge.
        }
    }
    return edges;
}

}  // namespace

TEST_CASE("the hand fixture produces exactly eleven edges") {
    corpus::Document doc = testutil::eleven_edge_document();
    GraphLayout g = make_layout(doc);
    REQUIRE(g.size() == 3 + 2 + 2);  // m1 m2 m3, A B, S1 S2

    EdgeMap edges = build_edges(doc);
    const int m1 = g.mention_node(0), m2 = g.mention_node(1), m3 = g.mention_node(2);
    const int A = g.entity_node(0), B = g.entity_node(1);
    const int S1 = g.sentence_node(0), S2 = g.sentence_node(1);

    CHECK(edges[EdgeType::MM] == EdgeSet{{m1, m3}});
    CHECK(edges[EdgeType::ME] == EdgeSet{{m1, A}, {m2, A}, {m3, B}});
    CHECK(edges[EdgeType::MS] == EdgeSet{{m1, S1}, {m2, S2}, {m3, S1}});
    CHECK(edges[EdgeType::ES] == EdgeSet{{A, S1}, {A, S2}, {B, S1}});
    CHECK(edges[EdgeType::SS] == EdgeSet{{S1, S2}});
    CHECK(total_edges(edges) == 11);
}

TEST_CASE("build_edges matches the brute-force rule oracle on random documents") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        corpus::Document doc = testutil::random_document(rng);
        CAPTURE(doc.doc_id);
        EdgeMap built = build_edges(doc);
        EdgeMap expected = oracle_edges(doc);
        for (EdgeType t : all_edge_types()) {
            CAPTURE(edge_type_name(t));
            CHECK(built[t] == expected[t]);
        }
    }
}

TEST_CASE("edge structure properties") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        corpus::Document doc = testutil::random_document(rng);
        GraphLayout g = make_layout(doc);
        EdgeMap edges = build_edges(doc);

        // no self loops, indices in range, min-first storage
        for (const auto& [t, set] : edges) {
            for (const auto& [a, b] : set) {
                CHECK(a < b);
                CHECK(a >= 0);
                CHECK(b < g.size());
            }
        }
        // an ES edge implies some mention realizes it, so |ES| <= |MS|
        CHECK(edges[EdgeType::ES].size() <= edges[EdgeType::MS].size());
        // every mention yields exactly one ME and one MS incidence
        CHECK(edges[EdgeType::ME].size() <= (size_t)g.n_mentions);
        CHECK(edges[EdgeType::MS].size() <= (size_t)g.n_mentions);
        // SS is the complete graph over sentences
        CHECK(edges[EdgeType::SS].size() ==
              (size_t)(g.n_sentences * (g.n_sentences - 1) / 2));
        // rebuilding is deterministic
        CHECK(total_edges(build_edges(doc)) == total_edges(edges));
    }
}

TEST_CASE("single-sentence single-mention document has one ME and one MS edge") {
    corpus::Document doc;
    doc.doc_id = "tiny";
    doc.sentences = {{"word"}};
    doc.mentions = {{"m0", "E0", 0, {0, 1}, "word"}};
    doc.entities = {{"E0", {"m0"}, ""}};
    EdgeMap edges = build_edges(doc);
    CHECK(edges[EdgeType::MM].empty());
    CHECK(edges[EdgeType::SS].empty());
    CHECK(edges[EdgeType::ME].size() == 1);
    CHECK(edges[EdgeType::MS].size() == 1);
    CHECK(edges[EdgeType::ES].size() == 1);
    CHECK(total_edges(edges) == 3);
}

TEST_CASE("node initialization") {
    corpus::Document doc = testutil::eleven_edge_document();
    const int n_words = doc.word_count();
    const int d_p = 3, d_t = 2;

    Tape tape;
    Mat proj(n_words, d_p);
    for (int i = 0; i < n_words; ++i)
        for (int j = 0; j < d_p; ++j) proj(i, j) = i * 10.0 + j;
    Var projected = tape.constant(proj);
    Mat tm(1, d_t), te(1, d_t), ts(1, d_t);
    tm << 1, 0;
    te << 0, 1;
    ts << 1, 1;

    InitialFeatures feats = init_features(tape, doc, projected, tape.constant(tm),
                                          tape.constant(te), tape.constant(ts));
    GraphLayout g = make_layout(doc);
    const Mat& F = feats.features.value();
    REQUIRE(F.rows() == g.size());
    REQUIRE(F.cols() == d_p + d_t);

    SUBCASE("mention node is word average plus its kind embedding") {
        // m2 is "anna" at word 4 (sentence offsets: S1 has 4 words)
        CHECK(F(g.mention_node(1), 0) == doctest::Approx(proj(4, 0)));
        CHECK(F(g.mention_node(1), 2) == doctest::Approx(proj(4, 2)));
        CHECK(F(g.mention_node(1), 3) == doctest::Approx(1.0));
        CHECK(F(g.mention_node(1), 4) == doctest::Approx(0.0));
    }
    SUBCASE("entity node averages only the word parts of its mentions") {
        // A has mentions at words 0 and 4
        for (int j = 0; j < d_p; ++j)
            CHECK(F(g.entity_node(0), j) ==
                  doctest::Approx(0.5 * (proj(0, j) + proj(4, j))));
        CHECK(F(g.entity_node(0), d_p) == doctest::Approx(0.0));
        CHECK(F(g.entity_node(0), d_p + 1) == doctest::Approx(1.0));
    }
    SUBCASE("sentence node averages its words") {
        // S2 = words 4..6
        for (int j = 0; j < d_p; ++j)
            CHECK(F(g.sentence_node(1), j) ==
                  doctest::Approx((proj(4, j) + proj(5, j) + proj(6, j)) / 3.0));
        CHECK(F(g.sentence_node(1), d_p) == doctest::Approx(1.0));
    }
    SUBCASE("mention word parts line up with the feature rows") {
        REQUIRE(feats.mention_word_parts.size() == 3);
        for (int m = 0; m < 3; ++m)
            for (int j = 0; j < d_p; ++j)
                CHECK(feats.mention_word_parts[m].value()(0, j) ==
                      doctest::Approx(F(g.mention_node(m), j)));
    }
}

TEST_CASE("multi-word mention span averages its words") {
    corpus::Document doc;
    doc.doc_id = "span2";
    doc.sentences = {{"new", "york", "shines"}};
    doc.mentions = {{"m0", "E0", 0, {0, 2}, "new york"}};
    doc.entities = {{"E0", {"m0"}, "LOC"}};

    Tape tape;
    Mat proj(3, 2);
    proj << 2, 4, 6, 8, 100, 100;
    InitialFeatures feats =
        init_features(tape, doc, tape.constant(proj), tape.constant(Mat::Zero(1, 1)),
                      tape.constant(Mat::Zero(1, 1)), tape.constant(Mat::Zero(1, 1)));
    CHECK(feats.features.value()(0, 0) == doctest::Approx(4.0));
    CHECK(feats.features.value()(0, 1) == doctest::Approx(6.0));
}

TEST_CASE("graph_to_json reports the layout and the edge sets") {
    corpus::Document doc = testutil::eleven_edge_document();
    nlohmann::json j = graph_to_json(doc);
    CHECK(j["doc_id"] == "fixture-11");
    CHECK(j["nodes"].size() == 7);
    CHECK(j["nodes"][0]["kind"] == "M");
    CHECK(j["nodes"][3]["kind"] == "E");
    CHECK(j["nodes"][5]["kind"] == "S");
    size_t n = 0;
    for (const auto& [name, arr] : j["edges"].items()) n += arr.size();
    CHECK(n == 11);
    CHECK(j == graph_to_json(doc));  // deterministic
}
