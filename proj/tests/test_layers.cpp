#include <doctest.h>

#include <random>

#include "glre/gradcheck.hpp"
#include "glre/layers.hpp"
#include "test_util.hpp"

using namespace glre;
using namespace glre::layers;
using docgraph::EdgeMap;
using docgraph::EdgeSet;
using docgraph::EdgeType;

namespace {

Mat random_mat(std::mt19937_64& rng, int rows, int cols, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

EdgeMap toy_edges() {
    // 4 nodes: MM over {0,1}, ME over {0,2} and {1,2}, SS over {2,3}
    EdgeMap edges;
    for (EdgeType t : docgraph::all_edge_types()) edges[t];
    edges[EdgeType::MM] = {{0, 1}};
    edges[EdgeType::ME] = {{0, 2}, {1, 2}};
    edges[EdgeType::SS] = {{2, 3}};
    return edges;
}

}  // namespace

TEST_CASE("normalized adjacency divides by per-node neighbor count") {
    EdgeSet set = {{0, 1}, {0, 2}, {1, 2}};
    Mat A = normalized_adjacency(set, 4);
    CHECK(A(0, 1) == doctest::Approx(0.5));
    CHECK(A(0, 2) == doctest::Approx(0.5));
    CHECK(A(1, 0) == doctest::Approx(0.5));
    CHECK(A(2, 1) == doctest::Approx(0.5));
    CHECK(A(0, 0) == 0.0);
    CHECK(A.row(3).isZero());  // node without neighbors
    for (int i = 0; i < 3; ++i) CHECK(A.row(i).sum() == doctest::Approx(1.0));
}

TEST_CASE("rgcn layer matches a per-node loop oracle") {
    std::mt19937_64 rng(101);
    const int n = 4, d = 5;
    Mat H = random_mat(rng, n, d);
    EdgeMap edges = toy_edges();

    Tape tape;
    RgcnLayerVars params;
    std::map<EdgeType, Mat> W;
    for (EdgeType t : docgraph::all_edge_types()) {
        W[t] = random_mat(rng, d, d);
        params.edge_weights[t] = tape.constant(W[t]);
    }
    Mat W0 = random_mat(rng, d, d);
    params.self_weight = tape.constant(W0);

    Mat out = rgcn_forward(tape, tape.constant(H), edges, params).value();

    // oracle: h_i' = relu(sum_x sum_{j in N_i^x} (1/|N_i^x|) h_j W_x + h_i W_0)
    for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd acc = H.row(i) * W0;
        for (const auto& [t, set] : edges) {
            std::vector<int> nbrs;
            for (const auto& [a, b] : set) {
                if (a == i) nbrs.push_back(b);
                if (b == i) nbrs.push_back(a);
            }
            if (nbrs.empty()) continue;
            Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(d);
            for (int j : nbrs) s += H.row(j) * W[t];
            acc += s / double(nbrs.size());
        }
        for (int k = 0; k < d; ++k)
            CHECK(out(i, k) == doctest::Approx(std::max(0.0, acc(k))).epsilon(1e-10));
    }
}

TEST_CASE("rgcn with zero weights gives zero output, identity self keeps positives") {
    Tape tape;
    Mat H(2, 3);
    H << 1, -2, 3, -4, 5, -6;
    EdgeMap edges;
    for (EdgeType t : docgraph::all_edge_types()) edges[t];

    RgcnLayerVars zero;
    for (EdgeType t : docgraph::all_edge_types())
        zero.edge_weights[t] = tape.constant(Mat::Zero(3, 3));
    zero.self_weight = tape.constant(Mat::Zero(3, 3));
    CHECK(rgcn_forward(tape, tape.constant(H), edges, zero).value().isZero());

    RgcnLayerVars ident = zero;
    ident.self_weight = tape.constant(Mat::Identity(3, 3));
    Mat out = rgcn_forward(tape, tape.constant(H), edges, ident).value();
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 0.0);  // relu clamps negatives
    CHECK(out(1, 1) == 5.0);
}

TEST_CASE("rgcn gradients pass finite differences") {
    std::mt19937_64 rng(103);
    const int n = 4, d = 4;
    EdgeMap edges = toy_edges();

    std::vector<Mat> inputs;
    inputs.push_back(random_mat(rng, n, d, 0.5));                       // features
    for (int k = 0; k < 6; ++k) inputs.push_back(random_mat(rng, d, d, 0.5));

    auto report = ad::grad_check(
        [&](Tape& t, const std::vector<Var>& v) {
            RgcnLayerVars p;
            int k = 1;
            for (EdgeType et : docgraph::all_edge_types()) p.edge_weights[et] = v[k++];
            p.self_weight = v[6];
            return t.sum(rgcn_forward(t, v[0], edges, p));
        },
        inputs);
    CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("rgcn is equivariant under node relabeling") {
    std::mt19937_64 rng(104);
    const int n = 4, d = 3;
    Mat H = random_mat(rng, n, d);
    EdgeMap edges = toy_edges();
    std::vector<int> perm = {2, 0, 3, 1};  // perm[i] = new index of old node i

    EdgeMap perm_edges;
    for (const auto& [t, set] : edges) {
        perm_edges[t];
        for (const auto& [a, b] : set) docgraph::add_edge(perm_edges[t], perm[a], perm[b]);
    }
    Mat Hp(n, d);
    for (int i = 0; i < n; ++i) Hp.row(perm[i]) = H.row(i);

    Tape tape;
    RgcnLayerVars params;
    for (EdgeType t : docgraph::all_edge_types())
        params.edge_weights[t] = tape.constant(random_mat(rng, d, d));
    params.self_weight = tape.constant(random_mat(rng, d, d));

    Mat out = rgcn_forward(tape, tape.constant(H), edges, params).value();
    Mat outp = rgcn_forward(tape, tape.constant(Hp), perm_edges, params).value();
    for (int i = 0; i < n; ++i) CHECK(out.row(i).isApprox(outp.row(perm[i]), 1e-12));
}

TEST_CASE("multi-head attention matches a per-head loop oracle") {
    std::mt19937_64 rng(105);
    const int d_n = 8, z = 2, d_v = d_n / z, m = 5;
    Mat q = random_mat(rng, 1, d_n), K = random_mat(rng, m, d_n), V = random_mat(rng, m, d_n);

    Tape tape;
    MultiHeadVars params;
    std::vector<Mat> Wq, Wk, Wv;
    for (int h = 0; h < z; ++h) {
        Wq.push_back(random_mat(rng, d_n, d_v));
        Wk.push_back(random_mat(rng, d_n, d_v));
        Wv.push_back(random_mat(rng, d_n, d_v));
        params.w_query.push_back(tape.constant(Wq[h]));
        params.w_key.push_back(tape.constant(Wk[h]));
        params.w_value.push_back(tape.constant(Wv[h]));
    }
    Mat Wo = random_mat(rng, d_n, d_n);
    params.w_out = tape.constant(Wo);

    Mat out = multi_head_attention(tape, tape.constant(q), tape.constant(K),
                                   tape.constant(V), params)
                  .value();

    Eigen::RowVectorXd concat(d_n);
    for (int h = 0; h < z; ++h) {
        Eigen::RowVectorXd qh = q * Wq[h];
        Eigen::VectorXd scores(m);
        for (int i = 0; i < m; ++i)
            scores(i) = qh.dot(K.row(i) * Wk[h]) / std::sqrt(double(d_v));
        Eigen::VectorXd w = (scores.array() - scores.maxCoeff()).exp();
        w /= w.sum();
        Eigen::RowVectorXd head = Eigen::RowVectorXd::Zero(d_v);
        for (int i = 0; i < m; ++i) head += w(i) * (V.row(i) * Wv[h]);
        concat.segment(h * d_v, d_v) = head;
    }
    Eigen::RowVectorXd expected = concat * Wo;
    for (int j = 0; j < d_n; ++j) CHECK(out(0, j) == doctest::Approx(expected(j)).epsilon(1e-9));

    SUBCASE("attention weights are a distribution") {
        Mat w = attention_weights_head(tape, tape.constant(q), tape.constant(K), params, 0)
                    .value();
        CHECK(w.rows() == 1);
        CHECK(w.cols() == m);
        CHECK(w.sum() == doctest::Approx(1.0));
        CHECK(w.minCoeff() >= 0.0);
    }
}

TEST_CASE("attention over a single key collapses to that value row") {
    std::mt19937_64 rng(106);
    const int d_n = 6, d_v = 3;
    Tape tape;
    MultiHeadVars params;
    for (int h = 0; h < 2; ++h) {
        params.w_query.push_back(tape.constant(random_mat(rng, d_n, d_v)));
        params.w_key.push_back(tape.constant(random_mat(rng, d_n, d_v)));
        params.w_value.push_back(tape.constant(random_mat(rng, d_n, d_v)));
    }
    params.w_out = tape.constant(Mat::Identity(d_n, d_n));

    Mat v = random_mat(rng, 1, d_n);
    Mat out = multi_head_attention(tape, tape.constant(random_mat(rng, 1, d_n)),
                                   tape.constant(random_mat(rng, 1, d_n)), tape.constant(v),
                                   params)
                  .value();
    // single key: softmax weight is exactly 1, output is [v Wv0 ; v Wv1]
    for (int h = 0; h < 2; ++h) {
        Mat expect = v * params.w_value[h].value();
        for (int j = 0; j < d_v; ++j)
            CHECK(out(0, h * d_v + j) == doctest::Approx(expect(0, j)));
    }
}

TEST_CASE("multi-head attention gradients pass finite differences") {
    std::mt19937_64 rng(107);
    const int d_n = 8, z = 2, d_v = 4, m = 4;
    std::vector<Mat> inputs = {random_mat(rng, 1, d_n, 0.5), random_mat(rng, m, d_n, 0.5),
                               random_mat(rng, m, d_n, 0.5)};
    for (int h = 0; h < z; ++h) {
        inputs.push_back(random_mat(rng, d_n, d_v, 0.5));
        inputs.push_back(random_mat(rng, d_n, d_v, 0.5));
        inputs.push_back(random_mat(rng, d_n, d_v, 0.5));
    }
    inputs.push_back(random_mat(rng, d_n, d_n, 0.5));

    auto report = ad::grad_check(
        [&](Tape& t, const std::vector<Var>& v) {
            MultiHeadVars p;
            for (int h = 0; h < z; ++h) {
                p.w_query.push_back(v[3 + 3 * h]);
                p.w_key.push_back(v[4 + 3 * h]);
                p.w_value.push_back(v[5 + 3 * h]);
            }
            p.w_out = v.back();
            return t.sum(multi_head_attention(t, v[0], v[1], v[2], p));
        },
        inputs);
    CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("multi-head attention validates its inputs") {
    Tape tape;
    MultiHeadVars params;
    params.w_query.push_back(tape.constant(Mat::Identity(2, 2)));
    params.w_key.push_back(tape.constant(Mat::Identity(2, 2)));
    params.w_value.push_back(tape.constant(Mat::Identity(2, 2)));
    params.w_out = tape.constant(Mat::Identity(2, 2));
    Var q = tape.constant(Mat::Ones(1, 2));
    CHECK_THROWS_AS(multi_head_attention(tape, q, tape.constant(Mat(0, 2)),
                                         tape.constant(Mat(0, 2)), params),
                    ConfigError);
    CHECK_THROWS_AS(multi_head_attention(tape, q, tape.constant(Mat::Ones(2, 2)),
                                         tape.constant(Mat::Ones(3, 2)), params),
                    ConfigError);
}

TEST_CASE("layer norm hand example") {
    Tape tape;
    Mat x(1, 4);
    x << 1, 2, 3, 4;  // mean 2.5, var 1.25
    Mat out = layer_norm(tape, tape.constant(x), tape.constant(Mat::Ones(1, 4)),
                         tape.constant(Mat::Zero(1, 4)))
                  .value();
    const double sd = std::sqrt(1.25 + 1e-5);
    CHECK(out(0, 0) == doctest::Approx(-1.5 / sd));
    CHECK(out(0, 3) == doctest::Approx(1.5 / sd));
    CHECK(out.sum() == doctest::Approx(0.0).epsilon(1e-9));

    // gain and bias apply elementwise after normalization
    Mat g(1, 4), b(1, 4);
    g << 2, 2, 2, 2;
    b << 1, 1, 1, 1;
    Mat out2 =
        layer_norm(tape, tape.constant(x), tape.constant(g), tape.constant(b)).value();
    CHECK(out2(0, 0) == doctest::Approx(2 * out(0, 0) + 1));
}

TEST_CASE("bce loss hand examples") {
    Tape tape;
    SUBCASE("perfect prediction has near-zero loss") {
        Mat p(1, 2), y(1, 2);
        p << 1 - 1e-9, 1e-9;
        y << 1, 0;
        CHECK(tape.bce_loss(tape.constant(p), y).value()(0, 0) ==
              doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("uniform half probabilities cost ln 2 per cell") {
        Mat p = Mat::Constant(2, 3, 0.5);
        Mat y(2, 3);
        y << 1, 0, 1, 0, 0, 1;
        CHECK(tape.bce_loss(tape.constant(p), y).value()(0, 0) ==
              doctest::Approx(6.0 * std::log(2.0)));
    }
    SUBCASE("clamp keeps an exact zero probability finite") {
        Mat p(1, 1), y(1, 1);
        p << 0.0;
        y << 1.0;
        double loss = tape.bce_loss(tape.constant(p), y).value()(0, 0);
        CHECK(std::isfinite(loss));
        CHECK(loss == doctest::Approx(-std::log(1e-12)));
    }
}

TEST_CASE("ffnn") {
    std::mt19937_64 rng(108);
    Tape tape;
    SUBCASE("single layer is affine with identity output activation") {
        Mat x(2, 2);
        x << 1, -2, -3, 4;
        FfnnVars p;
        p.weights = {tape.constant(Mat::Identity(2, 2))};
        p.biases = {tape.constant(Mat::Zero(1, 2))};
        Mat out = ffnn(tape, tape.constant(x), p).value();
        CHECK(out == x);
        CHECK(out.minCoeff() < 0.0);  // no relu on the output layer
    }
    SUBCASE("two layers apply relu between them") {
        Mat x(1, 2);
        x << 1, 1;
        Mat W1(2, 2), W2(2, 1);
        W1 << 1, -1, 1, -1;  // h = [2, -2] -> relu -> [2, 0]
        W2 << 3, 5;
        FfnnVars p;
        p.weights = {tape.constant(W1), tape.constant(W2)};
        p.biases = {tape.constant(Mat::Zero(1, 2)), tape.constant(Mat::Zero(1, 1))};
        CHECK(ffnn(tape, tape.constant(x), p).value()(0, 0) == doctest::Approx(6.0));
    }
    SUBCASE("gradients pass finite differences") {
        auto report = ad::grad_check(
            [](Tape& t, const std::vector<Var>& v) {
                FfnnVars p;
                p.weights = {v[1], v[3]};
                p.biases = {v[2], v[4]};
                return t.sum(ffnn(t, v[0], p));
            },
            {random_mat(rng, 2, 4, 0.5), random_mat(rng, 4, 3, 0.5),
             random_mat(rng, 1, 3, 0.5), random_mat(rng, 3, 2, 0.5),
             random_mat(rng, 1, 2, 0.5)});
        CHECK(report.max_rel_error <= 1e-4);
    }
    SUBCASE("dropout in training mode requires an rng") {
        FfnnVars p;
        p.weights = {tape.constant(Mat::Ones(2, 2)), tape.constant(Mat::Ones(2, 1))};
        p.biases = {tape.constant(Mat::Zero(1, 2)), tape.constant(Mat::Zero(1, 1))};
        CHECK_THROWS_AS(ffnn(tape, tape.constant(Mat::Ones(1, 2)), p, 0.5, nullptr, true),
                        ConfigError);
    }
}
