#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "glre/encoder.hpp"
#include "glre/gradcheck.hpp"
#include "test_util.hpp"

using namespace glre;
using ad::Mat;
using ad::Tape;
using ad::Var;

TEST_CASE("chunk_document packs greedily at sentence boundaries") {
    std::vector<std::vector<std::string>> sents(3, std::vector<std::string>(10, "w"));
    auto segs = encoder::chunk_document(sents, 25);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0] == std::pair<int, int>{0, 2});  // 20 words
    CHECK(segs[1] == std::pair<int, int>{2, 3});  // 10 words

    SUBCASE("short document is one segment") {
        CHECK(encoder::chunk_document(sents, 100).size() == 1);
    }
    SUBCASE("sentence longer than max_len is a configuration error") {
        CHECK_THROWS_AS(encoder::chunk_document(sents, 9), ConfigError);
    }
}

TEST_CASE("toy encoder is an embedding lookup") {
    auto docs = testutil::overfit_corpus(2);
    encoder::Backend backend;
    backend.kind = encoder::BackendKind::TrainableToy;
    backend.width = 8;
    backend.vocab = encoder::Vocabulary::build(docs);

    SUBCASE("all-zero embedding table gives a zero matrix") {
        Tape tape;
        Var table = tape.constant(Mat::Zero(backend.vocab.size(), 8));
        Var states = encoder::encode(tape, docs[0], backend, table);
        CHECK(states.value().rows() == docs[0].word_count());
        CHECK(states.value().isZero());
    }

    SUBCASE("encoding is invariant to the chunking") {
        std::mt19937_64 rng(4);
        Mat table(backend.vocab.size(), 8);
        std::normal_distribution<double> n;
        for (int i = 0; i < table.rows(); ++i)
            for (int j = 0; j < 8; ++j) table(i, j) = n(rng);
        Mat reference;
        for (int max_len : {4, 7, 512}) {
            backend.max_segment_len = max_len;
            Tape tape;
            Mat out = encoder::encode(tape, docs[0], backend, tape.constant(table)).value();
            if (reference.size() == 0)
                reference = out;
            else
                CHECK(out == reference);
        }
    }

    SUBCASE("unknown words hit the shared bucket row") {
        corpus::Document d = docs[0];
        d.sentences[0][0] = "never-seen-token";
        Tape tape;
        Mat table = Mat::Zero(backend.vocab.size(), 8);
        table.row(0).setOnes();
        Mat out = encoder::encode(tape, d, backend, tape.constant(table)).value();
        CHECK(out.row(0).sum() == doctest::Approx(8.0));
    }
}

TEST_CASE("precomputed store round-trips and validates") {
    const std::string dir = "fixtures_tmp_store";
    std::filesystem::remove_all(dir);
    auto docs = testutil::overfit_corpus(1);
    const corpus::Document& doc = docs[0];

    Mat m(doc.word_count(), 6);
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < 6; ++j) m(i, j) = float(i * 6 + j) * 0.25f;
    nlohmann::json index = nlohmann::json::object();
    encoder::PrecomputedStore::write(dir, doc.doc_id, m, index);
    encoder::PrecomputedStore::write_index(dir, index);

    encoder::Backend backend;
    backend.kind = encoder::BackendKind::PrecomputedFile;
    backend.width = 6;
    backend.store = encoder::PrecomputedStore::open(dir);

    Tape tape;
    Var states = encoder::encode(tape, doc, backend, {});
    CHECK(states.value() == m);

    SUBCASE("missing entry names the document") {
        corpus::Document other = doc;
        other.doc_id = "absent";
        CHECK_THROWS_WITH_AS(encoder::encode(tape, other, backend, {}),
                             doctest::Contains("absent"), DataError);
    }
    SUBCASE("width mismatch is a configuration error") {
        backend.width = 12;
        CHECK_THROWS_AS(encoder::encode(tape, doc, backend, {}), ConfigError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("pretrained-contextual backend is a hook only") {
    encoder::Backend backend;
    backend.kind = encoder::BackendKind::PretrainedContextual;
    Tape tape;
    CHECK_THROWS_AS(encoder::encode(tape, testutil::overfit_corpus(1)[0], backend, {}),
                    ConfigError);
}

TEST_CASE("sub-token pooling averages rows") {
    Mat sub(3, 2);
    sub << 1, 2, 3, 4, 5, 6;
    Mat pooled = encoder::pool_subtokens(sub, {{0}, {1, 2}});
    CHECK(pooled(0, 0) == 1);
    CHECK(pooled(1, 0) == doctest::Approx(4.0));  // (3+5)/2
    CHECK(pooled(1, 1) == doctest::Approx(5.0));  // (4+6)/2
}

TEST_CASE("projection") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    auto rnd = [&](int r, int c) {
        Mat m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = n(rng);
        return m;
    };

    SUBCASE("zero weights and bias give zero output") {
        Tape tape;
        Var out = encoder::project(tape, tape.constant(rnd(5, 4)),
                                   tape.constant(Mat::Zero(4, 3)),
                                   tape.constant(Mat::Zero(1, 3)));
        CHECK(out.value().isZero());
    }
    SUBCASE("identity projection preserves the input") {
        Mat x = rnd(5, 4);
        Tape tape;
        Var out = encoder::project(tape, tape.constant(x), tape.constant(Mat::Identity(4, 4)),
                                   tape.constant(Mat::Zero(1, 4)));
        CHECK(out.value().isApprox(x, 1e-14));
    }
    SUBCASE("matches a naive triple-loop matmul oracle") {
        Mat x = rnd(4, 6), w = rnd(6, 3), b = rnd(1, 3);
        Tape tape;
        Mat out = encoder::project(tape, tape.constant(x), tape.constant(w), tape.constant(b))
                      .value();
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = b(0, j);
                for (int k = 0; k < 6; ++k) s += x(i, k) * w(k, j);
                CHECK(std::abs(out(i, j) - s) <= 1e-10);
            }
    }
    SUBCASE("projection gradient passes finite differences") {
        auto report = ad::grad_check(
            [](Tape& t, const std::vector<Var>& v) {
                return t.sum(encoder::project(t, v[0], v[1], v[2]));
            },
            {rnd(5, 8), rnd(8, 3), rnd(1, 3)});
        CHECK(report.max_rel_error <= 1e-4);
    }
}
