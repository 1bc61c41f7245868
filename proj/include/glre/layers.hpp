#pragma once

// Differentiable building blocks: relational graph convolution, multi-head
// attention, feed-forward stacks. Layer norm, dropout and the multi-label
// BCE loss are tape primitives (autodiff.hpp); thin aliases live here so the
// library surface matches the block structure of the model.

#include <random>
#include <vector>

#include "glre/autodiff.hpp"
#include "glre/common.hpp"
#include "glre/docgraph.hpp"

namespace glre::layers {

using ad::Mat;
using ad::Tape;
using ad::Var;

// One R-GCN layer: a weight per edge type plus the self matrix. Weights act
// on the right of row vectors (h' = relu(sum_x A_x H W_x + H W_0)).
struct RgcnLayerVars {
    std::map<docgraph::EdgeType, Var> edge_weights;
    Var self_weight;
};

// Per-type neighbor-normalized adjacency: A[i][j] = 1/|N_i^x| for each
// x-neighbor j of i. Nodes without x-neighbors get an all-zero row.
inline Mat normalized_adjacency(const docgraph::EdgeSet& edges, int n_nodes) {
    std::vector<std::vector<int>> nbr(n_nodes);
    for (const auto& [a, b] : edges) {
        nbr[a].push_back(b);
        nbr[b].push_back(a);
    }
    Mat A = Mat::Zero(n_nodes, n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
        if (nbr[i].empty()) continue;
        const double w = 1.0 / static_cast<double>(nbr[i].size());
        for (int j : nbr[i]) A(i, j) += w;
    }
    return A;
}

inline Var rgcn_forward(Tape& tape, Var features, const docgraph::EdgeMap& edges,
                        const RgcnLayerVars& params) {
    const int n = static_cast<int>(features.value().rows());
    Var acc = tape.matmul(features, params.self_weight);
    for (const auto& [type, set] : edges) {
        auto it = params.edge_weights.find(type);
        if (it == params.edge_weights.end())
            throw ConfigError("rgcn_forward: missing weight for edge type " +
                              docgraph::edge_type_name(type));
        if (set.empty()) continue;  // no neighbors of this type anywhere
        Var mixed = tape.const_mul(normalized_adjacency(set, n), tape.matmul(features, it->second));
        acc = tape.add(acc, mixed);
    }
    return tape.relu(acc);
}

inline Var rgcn_stack(Tape& tape, Var features, const docgraph::EdgeMap& edges,
                      const std::vector<RgcnLayerVars>& stack) {
    Var h = features;
    for (const auto& layer : stack) h = rgcn_forward(tape, h, edges, layer);
    return h;
}

// Multi-head attention with a single query row.
struct MultiHeadVars {
    std::vector<Var> w_query;  // one d_n x d_v per head
    std::vector<Var> w_key;
    std::vector<Var> w_value;
    Var w_out;                 // d_n x d_n
};

inline Var multi_head_attention(Tape& tape, Var query, Var keys, Var values,
                                const MultiHeadVars& params) {
    if (keys.value().rows() == 0)
        throw ConfigError("multi_head_attention: at least one key/value row required");
    if (keys.value().rows() != values.value().rows())
        throw ConfigError("multi_head_attention: keys and values must be row-aligned");
    const size_t z = params.w_query.size();
    if (z == 0 || params.w_key.size() != z || params.w_value.size() != z)
        throw ConfigError("multi_head_attention: inconsistent head parameter counts");
    const double d_v = static_cast<double>(params.w_query[0].value().cols());

    std::vector<Var> heads;
    heads.reserve(z);
    for (size_t i = 0; i < z; ++i) {
        Var q = tape.matmul(query, params.w_query[i]);           // 1 x d_v
        Var k = tape.matmul(keys, params.w_key[i]);              // m x d_v
        Var scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(d_v));  // 1 x m
        Var weights = tape.softmax_rows(scores);
        heads.push_back(tape.matmul(weights, tape.matmul(values, params.w_value[i])));
    }
    return tape.matmul(tape.concat_cols(heads), params.w_out);
}

// Diagnostic variant that also exposes the per-head attention weights.
inline Var attention_weights_head(Tape& tape, Var query, Var keys, const MultiHeadVars& params,
                                  size_t head) {
    Var q = tape.matmul(query, params.w_query[head]);
    Var k = tape.matmul(keys, params.w_key[head]);
    const double d_v = static_cast<double>(params.w_query[head].value().cols());
    return tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(d_v)));
}

inline Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps = 1e-5) {
    return tape.layer_norm(x, gain, bias, eps);
}

inline Var bce_multilabel_loss(Tape& tape, Var probs, Mat labels) {
    return tape.bce_loss(probs, std::move(labels));
}

// Feed-forward stack: ReLU on hidden layers, identity on the output layer.
// Optional dropout after each hidden activation.
struct FfnnVars {
    std::vector<Var> weights;  // layer i: in_i x out_i
    std::vector<Var> biases;   // 1 x out_i
};

inline Var ffnn(Tape& tape, Var x, const FfnnVars& params, double dropout_rate = 0.0,
                std::mt19937_64* rng = nullptr, bool train = false) {
    if (params.weights.empty() || params.weights.size() != params.biases.size())
        throw ConfigError("ffnn: inconsistent layer parameters");
    Var h = x;
    for (size_t i = 0; i < params.weights.size(); ++i) {
        h = tape.add_row(tape.matmul(h, params.weights[i]), params.biases[i]);
        if (i + 1 < params.weights.size()) {
            h = tape.relu(h);
            if (train && dropout_rate > 0.0) {
                if (!rng) throw ConfigError("ffnn: dropout requires an RNG in training mode");
                h = tape.dropout(h, dropout_rate, *rng, true);
            }
        }
    }
    return h;
}

}  // namespace glre::layers
