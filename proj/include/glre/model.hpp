#pragma once

// Full model composition: encoder projection -> document graph -> stacked
// R-GCN (entity global representations) -> pairwise multi-head attention
// (entity local representations) -> distance-aware relation representations
// -> context-attended multi-label classifier.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "glre/autodiff.hpp"
#include "glre/common.hpp"
#include "glre/corpus.hpp"
#include "glre/docgraph.hpp"
#include "glre/encoder.hpp"
#include "glre/layers.hpp"

namespace glre::model {

using ad::Mat;
using ad::Tape;
using ad::Var;

inline constexpr int kCheckpointFormatVersion = 1;

struct ModelConfig {
    int d_w = 768;        // encoder width
    int d_p = 236;        // projected word dimension
    int d_n = 256;        // node dimension (= d_p + d_t)
    int d_t = 20;         // node type embedding dimension
    int rgcn_layers = 2;  // L: 3 for CDR, 2 for DocRED
    int heads = 2;        // z: 4 for CDR, 2 for DocRED
    int dist_dim = 20;
    int dist_bins = 9;    // b; bin indices span [0, 2b]
    int n_relations = 96;
    double dropout_graph = 0.2;
    double dropout_classifier = 0.5;
    double threshold = 0.5;
    bool use_global = true;
    bool use_local = true;
    bool use_context = true;
    bool chem_disease_pairs = false;  // CDR: head chemical, tail disease
    std::string encoder_kind = "trainable-toy";
    int encoder_max_segment = 512;

    int d_v() const { return d_n / heads; }

    int entity_final_dim() const {
        return (use_global ? d_n : 0) + (use_local ? d_n : 0) + dist_dim;
    }

    int relation_dim() const { return 2 * entity_final_dim(); }

    int classifier_input_dim() const {
        return use_context ? 2 * relation_dim() : relation_dim();
    }

    corpus::PairMode pair_mode() const {
        return chem_disease_pairs ? corpus::PairMode::ChemicalDisease
                                  : corpus::PairMode::AllOrdered;
    }

    void validate() const {
        if (d_w <= 0 || d_p <= 0 || d_n <= 0 || d_t <= 0 || dist_dim <= 0 || dist_bins <= 0 ||
            rgcn_layers <= 0 || heads <= 0 || n_relations <= 0)
            throw ConfigError("model config: all dimensions must be positive");
        if (d_n != d_p + d_t)
            throw ConfigError("model config: d_n must equal d_p + d_t");
        if (d_n % heads != 0)
            throw ConfigError("model config: heads must divide d_n");
        if (dropout_graph < 0 || dropout_graph >= 1 || dropout_classifier < 0 ||
            dropout_classifier >= 1)
            throw ConfigError("model config: dropout rates must be in [0,1)");
    }

    nlohmann::json to_json() const {
        return {{"d_w", d_w},
                {"d_p", d_p},
                {"d_n", d_n},
                {"d_t", d_t},
                {"rgcn_layers", rgcn_layers},
                {"heads", heads},
                {"dist_dim", dist_dim},
                {"dist_bins", dist_bins},
                {"n_relations", n_relations},
                {"dropout_graph", dropout_graph},
                {"dropout_classifier", dropout_classifier},
                {"threshold", threshold},
                {"use_global", use_global},
                {"use_local", use_local},
                {"use_context", use_context},
                {"chem_disease_pairs", chem_disease_pairs},
                {"encoder_kind", encoder_kind},
                {"encoder_max_segment", encoder_max_segment}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.d_w = j.value("d_w", c.d_w);
        c.d_p = j.value("d_p", c.d_p);
        c.d_n = j.value("d_n", c.d_n);
        c.d_t = j.value("d_t", c.d_t);
        c.rgcn_layers = j.value("rgcn_layers", c.rgcn_layers);
        c.heads = j.value("heads", c.heads);
        c.dist_dim = j.value("dist_dim", c.dist_dim);
        c.dist_bins = j.value("dist_bins", c.dist_bins);
        c.n_relations = j.value("n_relations", c.n_relations);
        c.dropout_graph = j.value("dropout_graph", c.dropout_graph);
        c.dropout_classifier = j.value("dropout_classifier", c.dropout_classifier);
        c.threshold = j.value("threshold", c.threshold);
        c.use_global = j.value("use_global", c.use_global);
        c.use_local = j.value("use_local", c.use_local);
        c.use_context = j.value("use_context", c.use_context);
        c.chem_disease_pairs = j.value("chem_disease_pairs", c.chem_disease_pairs);
        c.encoder_kind = j.value("encoder_kind", c.encoder_kind);
        c.encoder_max_segment = j.value("encoder_max_segment", c.encoder_max_segment);
        c.validate();
        return c;
    }
};

// Every trainable tensor keyed by module/role.
struct ModelParams {
    std::map<std::string, Mat> tensors;

    Mat& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("missing parameter: " + name);
        return it->second;
    }
    const Mat& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("missing parameter: " + name);
        return it->second;
    }
};

struct ParamShape {
    std::string name;
    int rows, cols;
};

// Shape table for every parameter the configuration requires. `vocab_size` is
// only consulted for the trainable-toy encoder.
inline std::vector<ParamShape> param_shapes(const ModelConfig& cfg, int vocab_size) {
    cfg.validate();
    std::vector<ParamShape> shapes;
    if (cfg.encoder_kind == "trainable-toy") {
        if (vocab_size <= 0) throw ConfigError("param_shapes: toy encoder needs a vocabulary");
        shapes.push_back({"encoder.embedding", vocab_size, cfg.d_w});
    }
    shapes.push_back({"encoder.projection.weight", cfg.d_w, cfg.d_p});
    shapes.push_back({"encoder.projection.bias", 1, cfg.d_p});
    shapes.push_back({"graph.type.mention", 1, cfg.d_t});
    shapes.push_back({"graph.type.entity", 1, cfg.d_t});
    shapes.push_back({"graph.type.sentence", 1, cfg.d_t});
    for (int l = 0; l < cfg.rgcn_layers; ++l) {
        const std::string p = "rgcn." + std::to_string(l) + ".";
        for (docgraph::EdgeType t : docgraph::all_edge_types())
            shapes.push_back({p + docgraph::edge_type_name(t), cfg.d_n, cfg.d_n});
        shapes.push_back({p + "self", cfg.d_n, cfg.d_n});
    }
    if (cfg.use_local) {
        for (int side = 0; side < 2; ++side) {
            const std::string p = "local." + std::to_string(side) + ".";
            for (int h = 0; h < cfg.heads; ++h) {
                const std::string hp = p + "head" + std::to_string(h) + ".";
                shapes.push_back({hp + "query", cfg.d_n, cfg.d_v()});
                shapes.push_back({hp + "key", cfg.d_n, cfg.d_v()});
                shapes.push_back({hp + "value", cfg.d_n, cfg.d_v()});
            }
            shapes.push_back({p + "out", cfg.d_n, cfg.d_n});
            shapes.push_back({p + "ln.gain", 1, cfg.d_n});
            shapes.push_back({p + "ln.bias", 1, cfg.d_n});
        }
    }
    shapes.push_back({"distance.embedding", 2 * cfg.dist_bins + 1, cfg.dist_dim});
    if (cfg.use_context)
        shapes.push_back({"context.weight", cfg.relation_dim(), cfg.relation_dim()});
    shapes.push_back({"classifier.0.weight", cfg.classifier_input_dim(), cfg.relation_dim()});
    shapes.push_back({"classifier.0.bias", 1, cfg.relation_dim()});
    shapes.push_back({"classifier.1.weight", cfg.relation_dim(), cfg.n_relations});
    shapes.push_back({"classifier.1.bias", 1, cfg.n_relations});
    return shapes;
}

// Signed logarithmic distance bucketing. bin(0) = 0; positive deltas occupy
// [1, b]; negative deltas mirror into [b+1, 2b].
inline int distance_bin(long delta, int bins) {
    if (delta == 0) return 0;
    if (delta > 0) {
        int lg = static_cast<int>(std::floor(std::log2(static_cast<double>(delta))));
        return std::min(bins, lg + 1);
    }
    return bins + distance_bin(-delta, bins);
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct BoundParams {
    std::map<std::string, Var> vars;

    Var at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw ConfigError("missing bound parameter: " + name);
        return it->second;
    }
};

inline BoundParams bind_params(Tape& tape, const ModelParams& params) {
    BoundParams bound;
    for (const auto& [name, tensor] : params.tensors) bound.vars[name] = tape.leaf(tensor);
    return bound;
}

struct RelationPrediction {
    std::string head_entity_id;
    std::string tail_entity_id;
    Eigen::VectorXd probabilities;     // (0,1)^{|R|}
    std::vector<int> decided;          // {r : y_r > threshold}; empty = N/A
    Eigen::RowVectorXd context_weights;  // attention over candidate pairs (diagnostic)
};

struct ForwardResult {
    std::vector<corpus::CandidatePair> pairs;
    std::vector<Var> pair_probs;  // 1 x |R| each
    Var loss;                     // summed BCE over pairs
    std::vector<Eigen::RowVectorXd> context_weights;
};

namespace detail {

inline std::vector<layers::RgcnLayerVars> bind_rgcn(const ModelConfig& cfg,
                                                    const BoundParams& bound) {
    std::vector<layers::RgcnLayerVars> stack;
    for (int l = 0; l < cfg.rgcn_layers; ++l) {
        const std::string p = "rgcn." + std::to_string(l) + ".";
        layers::RgcnLayerVars layer;
        for (docgraph::EdgeType t : docgraph::all_edge_types())
            layer.edge_weights[t] = bound.at(p + docgraph::edge_type_name(t));
        layer.self_weight = bound.at(p + "self");
        stack.push_back(std::move(layer));
    }
    return stack;
}

inline layers::MultiHeadVars bind_mha(const ModelConfig& cfg, const BoundParams& bound,
                                      int side) {
    const std::string p = "local." + std::to_string(side) + ".";
    layers::MultiHeadVars mha;
    for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = p + "head" + std::to_string(h) + ".";
        mha.w_query.push_back(bound.at(hp + "query"));
        mha.w_key.push_back(bound.at(hp + "key"));
        mha.w_value.push_back(bound.at(hp + "value"));
    }
    mha.w_out = bound.at(p + "out");
    return mha;
}

}  // namespace detail

// Entity global representations: L R-GCN layers over the graph, entity rows.
inline Var entity_global(Tape& tape, Var features, const docgraph::EdgeMap& edges,
                         const std::vector<layers::RgcnLayerVars>& stack,
                         const docgraph::GraphLayout& layout) {
    Var h = layers::rgcn_stack(tape, features, edges, stack);
    std::vector<int> entity_rows(layout.n_entities);
    for (int i = 0; i < layout.n_entities; ++i) entity_rows[i] = layout.entity_node(i);
    return tape.rows(h, entity_rows);
}

// Pair-specific local representation of one entity: attention over its
// mention nodes, queried by the counterpart's global representation, keyed by
// the initial features of the hosting sentences.
inline Var entity_local_side(Tape& tape, const corpus::Document& doc,
                             const docgraph::GraphLayout& layout, Var initial_features,
                             int entity_index, Var counterpart_global,
                             const layers::MultiHeadVars& mha, Var ln_gain, Var ln_bias) {
    const corpus::Entity& e = doc.entities[entity_index];
    if (e.mention_ids.empty())
        throw ConfigError("entity_local: entity " + e.entity_id + " has no mentions");
    std::vector<int> value_rows, key_rows;
    for (const auto& mid : e.mention_ids) {
        for (int m = 0; m < layout.n_mentions; ++m)
            if (doc.mentions[m].mention_id == mid) {
                value_rows.push_back(layout.mention_node(m));
                key_rows.push_back(layout.sentence_node(doc.mentions[m].sent_index));
                break;
            }
    }
    Var keys = tape.rows(initial_features, key_rows);
    Var values = tape.rows(initial_features, value_rows);
    Var attended = layers::multi_head_attention(tape, counterpart_global, keys, values, mha);
    return tape.layer_norm(attended, ln_gain, ln_bias);
}

// Context relation representation (self-attention over all pair reps) plus
// the attention weights. `stacked` is p x d_r with one row per candidate pair.
inline std::pair<Var, Var> context_rep(Tape& tape, Var target, Var stacked, Var weight) {
    if (stacked.value().rows() < 1) throw ConfigError("context_rep: empty context");
    Var logits = tape.matmul_nt(tape.matmul_nt(target, weight), stacked);  // 1 x p
    Var theta = tape.softmax_rows(logits);
    return {tape.matmul(theta, stacked), theta};
}

class GlreModel {
public:
    GlreModel(ModelConfig cfg, ModelParams params, encoder::Backend backend)
        : cfg_(std::move(cfg)), params_(std::move(params)), backend_(std::move(backend)) {
        cfg_.validate();
        for (const auto& shape : param_shapes(cfg_, toy_vocab_size())) {
            const Mat& t = params_.at(shape.name);
            if (t.rows() != shape.rows || t.cols() != shape.cols)
                throw ConfigError("parameter " + shape.name + " has shape " +
                                  std::to_string(t.rows()) + "x" + std::to_string(t.cols()) +
                                  ", expected " + std::to_string(shape.rows) + "x" +
                                  std::to_string(shape.cols));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }
    encoder::Backend& backend() { return backend_; }

    // Runs the whole pipeline on one document. In training mode dropout is
    // active and `rng` must be supplied. `neg_keep_ratio` < 0 keeps every N/A
    // pair; otherwise each batch keeps at most ratio * max(1, positives)
    // sampled negatives (training only).
    ForwardResult forward(Tape& tape, const corpus::Document& doc, bool train = false,
                          std::mt19937_64* rng = nullptr, double neg_keep_ratio = -1.0) const {
        if (train && rng == nullptr)
            throw ConfigError("forward: training mode requires an RNG");
        BoundParams bound = bind_params(tape, params_);
        return forward_bound(tape, bound, doc, train, rng, neg_keep_ratio);
    }

    // Forward against already-bound parameters; lets the trainer read
    // gradients off the same tape after backward().
    ForwardResult forward_bound(Tape& tape, const BoundParams& bound,
                                const corpus::Document& doc, bool train,
                                std::mt19937_64* rng, double neg_keep_ratio) const {
        const docgraph::GraphLayout layout = docgraph::make_layout(doc);
        const docgraph::EdgeMap edges = docgraph::build_edges(doc);

        Var toy_embedding;
        if (cfg_.encoder_kind == "trainable-toy") toy_embedding = bound.at("encoder.embedding");
        Var states = encoder::encode(tape, doc, backend_, toy_embedding);
        Var projected = encoder::project(tape, states, bound.at("encoder.projection.weight"),
                                         bound.at("encoder.projection.bias"));
        if (train && cfg_.dropout_graph > 0.0)
            projected = tape.dropout(projected, cfg_.dropout_graph, *rng, true);

        docgraph::InitialFeatures init = docgraph::init_features(
            tape, doc, projected, bound.at("graph.type.mention"), bound.at("graph.type.entity"),
            bound.at("graph.type.sentence"));

        Var e_glo = entity_global(tape, init.features, edges, detail::bind_rgcn(cfg_, bound),
                                  layout);

        std::vector<corpus::CandidatePair> pairs =
            corpus::enumerate_pairs(doc, cfg_.n_relations, cfg_.pair_mode());
        if (train && neg_keep_ratio >= 0.0) pairs = subsample_negatives(pairs, neg_keep_ratio, *rng);

        ForwardResult result;
        result.pairs = pairs;
        if (pairs.empty()) {
            result.loss = tape.constant(Mat::Zero(1, 1));
            return result;
        }

        std::map<std::string, int> entity_index;
        for (int i = 0; i < layout.n_entities; ++i)
            entity_index[doc.entities[i].entity_id] = i;

        layers::MultiHeadVars mha0, mha1;
        Var ln0_gain, ln0_bias, ln1_gain, ln1_bias;
        if (cfg_.use_local) {
            mha0 = detail::bind_mha(cfg_, bound, 0);
            mha1 = detail::bind_mha(cfg_, bound, 1);
            ln0_gain = bound.at("local.0.ln.gain");
            ln0_bias = bound.at("local.0.ln.bias");
            ln1_gain = bound.at("local.1.ln.gain");
            ln1_bias = bound.at("local.1.ln.bias");
        }
        Var dist_table = bound.at("distance.embedding");
        const std::vector<int> first_word = first_mention_positions(doc);

        std::vector<Var> pair_reps;
        pair_reps.reserve(pairs.size());
        for (const auto& pair : pairs) {
            const int a = entity_index.at(pair.head_entity_id);
            const int b = entity_index.at(pair.tail_entity_id);
            Var glo_a = tape.rows(e_glo, {a});
            Var glo_b = tape.rows(e_glo, {b});

            std::vector<Var> parts_a, parts_b;
            if (cfg_.use_global) {
                parts_a.push_back(glo_a);
                parts_b.push_back(glo_b);
            }
            if (cfg_.use_local) {
                parts_a.push_back(entity_local_side(tape, doc, layout, init.features, a, glo_b,
                                                    mha0, ln0_gain, ln0_bias));
                parts_b.push_back(entity_local_side(tape, doc, layout, init.features, b, glo_a,
                                                    mha1, ln1_gain, ln1_bias));
            }
            const long delta_ab = static_cast<long>(first_word[b]) - first_word[a];
            parts_a.push_back(tape.rows(dist_table, {distance_bin(delta_ab, cfg_.dist_bins)}));
            parts_b.push_back(tape.rows(dist_table, {distance_bin(-delta_ab, cfg_.dist_bins)}));

            Var e_hat_a = tape.concat_cols(parts_a);
            Var e_hat_b = tape.concat_cols(parts_b);
            pair_reps.push_back(tape.concat_cols({e_hat_a, e_hat_b}));
        }

        Var stacked;
        if (cfg_.use_context) stacked = tape.concat_rows(pair_reps);

        layers::FfnnVars clf;
        clf.weights = {bound.at("classifier.0.weight"), bound.at("classifier.1.weight")};
        clf.biases = {bound.at("classifier.0.bias"), bound.at("classifier.1.bias")};

        std::vector<Var> losses;
        for (size_t i = 0; i < pairs.size(); ++i) {
            Var clf_in = pair_reps[i];
            if (cfg_.use_context) {
                auto [o_c, theta] = context_rep(tape, pair_reps[i], stacked,
                                                bound.at("context.weight"));
                result.context_weights.push_back(theta.value().row(0));
                clf_in = tape.concat_cols({pair_reps[i], o_c});
            }
            Var logits = layers::ffnn(tape, clf_in, clf, cfg_.dropout_classifier, rng, train);
            Var probs = tape.sigmoid(logits);
            result.pair_probs.push_back(probs);

            Mat labels(1, cfg_.n_relations);
            for (int r = 0; r < cfg_.n_relations; ++r) labels(0, r) = pairs[i].labels[r];
            losses.push_back(tape.bce_loss(probs, std::move(labels)));
        }
        Var total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = tape.add(total, losses[i]);
        result.loss = total;
        return result;
    }

    std::vector<RelationPrediction> predict_document(const corpus::Document& doc) const {
        Tape tape;
        ForwardResult fwd = forward(tape, doc, false, nullptr);
        std::vector<RelationPrediction> out;
        for (size_t i = 0; i < fwd.pairs.size(); ++i) {
            RelationPrediction p;
            p.head_entity_id = fwd.pairs[i].head_entity_id;
            p.tail_entity_id = fwd.pairs[i].tail_entity_id;
            p.probabilities = fwd.pair_probs[i].value().row(0).transpose();
            for (int r = 0; r < cfg_.n_relations; ++r)
                if (p.probabilities(r) > cfg_.threshold) p.decided.push_back(r);
            if (!fwd.context_weights.empty()) p.context_weights = fwd.context_weights[i];
            out.push_back(std::move(p));
        }
        return out;
    }

    double document_loss(const corpus::Document& doc) const {
        Tape tape;
        return forward(tape, doc, false, nullptr).loss.value()(0, 0);
    }

    // Global word index of the first (document-order) mention of each entity.
    static std::vector<int> first_mention_positions(const corpus::Document& doc) {
        const std::vector<int> offsets = doc.sentence_offsets();
        std::vector<int> pos(doc.entities.size(), -1);
        for (size_t e = 0; e < doc.entities.size(); ++e) {
            for (const auto& mid : doc.entities[e].mention_ids) {
                const corpus::Mention& m = doc.mention(mid);
                const int p = offsets[m.sent_index] + m.span.start;
                if (pos[e] < 0 || p < pos[e]) pos[e] = p;
            }
        }
        return pos;
    }

private:
    int toy_vocab_size() const {
        return cfg_.encoder_kind == "trainable-toy" ? backend_.vocab.size() : 0;
    }

    static std::vector<corpus::CandidatePair> subsample_negatives(
        const std::vector<corpus::CandidatePair>& pairs, double ratio, std::mt19937_64& rng) {
        std::vector<corpus::CandidatePair> pos, neg;
        for (const auto& p : pairs) (p.is_positive() ? pos : neg).push_back(p);
        const size_t keep = static_cast<size_t>(ratio * std::max<size_t>(1, pos.size()));
        if (neg.size() > keep) {
            std::shuffle(neg.begin(), neg.end(), rng);
            neg.resize(keep);
        }
        std::vector<corpus::CandidatePair> out = std::move(pos);
        out.insert(out.end(), neg.begin(), neg.end());
        return out;
    }

    ModelConfig cfg_;
    ModelParams params_;
    encoder::Backend backend_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ModelParams& params,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["config"] = cfg.to_json();
    j["extra"] = extra;
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : params.tensors) {
        std::vector<double> data;
        data.reserve(static_cast<size_t>(t.rows()) * t.cols());
        for (Eigen::Index i = 0; i < t.rows(); ++i)
            for (Eigen::Index k = 0; k < t.cols(); ++k) data.push_back(t(i, k));
        tensors[name] = {{"rows", t.rows()}, {"cols", t.cols()}, {"data", data}};
    }
    j["params"] = std::move(tensors);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
}

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    nlohmann::json extra;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw DataError("unsupported checkpoint format version");
    Checkpoint ck;
    ck.config = ModelConfig::from_json(j.at("config"));
    ck.extra = j.value("extra", nlohmann::json::object());
    for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it) {
        const int rows = it.value().at("rows").get<int>();
        const int cols = it.value().at("cols").get<int>();
        const auto data = it.value().at("data").get<std::vector<double>>();
        if (static_cast<int>(data.size()) != rows * cols)
            throw DataError("checkpoint tensor " + it.key() + " has inconsistent size");
        Mat t(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int k = 0; k < cols; ++k) t(i, k) = data[static_cast<size_t>(i) * cols + k];
        ck.params.tensors[it.key()] = std::move(t);
    }
    return ck;
}

}  // namespace glre::model
