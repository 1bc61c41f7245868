#pragma once

// Pipeline stages behind the CLI subcommands: prepare, train, evaluate,
// predict, analyze, graph-stats. Each stage reads/writes files under the run's
// output directory so stages can be re-run and composed.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "glre/common.hpp"
#include "glre/corpus.hpp"
#include "glre/docgraph.hpp"
#include "glre/encoder.hpp"
#include "glre/evaluator.hpp"
#include "glre/model.hpp"
#include "glre/trainer.hpp"

namespace glre::commands {

struct RunConfig {
    std::string dataset = "cdr";  // "cdr" or "docred"
    std::string train_path, dev_path, test_path;
    std::string output_dir = "out";
    std::string protocol = "train";  // "train" or "train-dev"
    model::ModelConfig model;
    trainer::TrainConfig train;
    std::vector<std::string> ablations;

    void validate() const {
        if (dataset != "cdr" && dataset != "docred")
            throw ConfigError("run config: dataset must be cdr or docred");
        if (protocol != "train" && protocol != "train-dev")
            throw ConfigError("run config: protocol must be train or train-dev");
        for (const auto& a : ablations)
            if (a != "no-bert" && a != "no-global" && a != "no-local" && a != "no-context")
                throw ConfigError("run config: unknown ablation " + a);
        model.validate();
        train.validate();
    }

    nlohmann::json to_json() const {
        return {{"dataset", dataset},       {"train_path", train_path},
                {"dev_path", dev_path},     {"test_path", test_path},
                {"output_dir", output_dir}, {"protocol", protocol},
                {"model", model.to_json()}, {"train", train.to_json()},
                {"ablations", ablations}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.dataset = j.value("dataset", c.dataset);
        c.train_path = j.value("train_path", c.train_path);
        c.dev_path = j.value("dev_path", c.dev_path);
        c.test_path = j.value("test_path", c.test_path);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.protocol = j.value("protocol", c.protocol);
        if (j.contains("model")) c.model = model::ModelConfig::from_json(j.at("model"));
        if (j.contains("train")) c.train = trainer::TrainConfig::from_json(j.at("train"));
        if (j.contains("ablations"))
            c.ablations = j.at("ablations").get<std::vector<std::string>>();
        c.validate();
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open run config: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed run config " + path + ": " + e.what());
        }
        return from_json(j);
    }

    // Model configuration with the requested ablations switched off.
    model::ModelConfig effective_model() const {
        model::ModelConfig cfg = model;
        for (const auto& a : ablations) {
            if (a == "no-bert") cfg.encoder_kind = "trainable-toy";
            if (a == "no-global") cfg.use_global = false;
            if (a == "no-local") cfg.use_local = false;
            if (a == "no-context") cfg.use_context = false;
        }
        cfg.validate();
        return cfg;
    }

    std::string fingerprint() const {
        const model::ModelConfig cfg = effective_model();
        std::string s = dataset + "|" + cfg.encoder_kind + "|L=" +
                        std::to_string(cfg.rgcn_layers) + ",z=" + std::to_string(cfg.heads);
        s += cfg.use_global ? "|global" : "|-global";
        s += cfg.use_local ? "+local" : "-local";
        s += cfg.use_context ? "+context" : "-context";
        s += "|seed=" + std::to_string(train.seed);
        return s;
    }
};

namespace detail {

inline std::string split_file(const RunConfig& run, const std::string& split) {
    return run.output_dir + "/" + split + ".jsonl";
}

inline std::vector<corpus::Document> load_split(const RunConfig& run, const std::string& split) {
    return corpus::read_canonical(split_file(run, split));
}

inline corpus::LabelVocabulary load_labels(const RunConfig& run) {
    std::ifstream in(run.output_dir + "/labels.json");
    if (!in) throw DataError("missing labels.json; run prepare first");
    nlohmann::json j;
    in >> j;
    corpus::LabelVocabulary vocab;
    vocab.names = j.at("names").get<std::vector<std::string>>();
    return vocab;
}

inline encoder::Vocabulary load_words(const RunConfig& run) {
    std::ifstream in(run.output_dir + "/words.json");
    if (!in) throw DataError("missing words.json; run prepare first");
    nlohmann::json j;
    in >> j;
    return encoder::Vocabulary::from_json(j);
}

inline encoder::Backend make_backend(const RunConfig& run, const model::ModelConfig& cfg) {
    encoder::Backend backend;
    backend.kind = encoder::backend_kind_from_name(cfg.encoder_kind);
    backend.width = cfg.d_w;
    backend.max_segment_len = cfg.encoder_max_segment;
    if (backend.kind == encoder::BackendKind::TrainableToy) backend.vocab = load_words(run);
    if (backend.kind == encoder::BackendKind::PrecomputedFile)
        backend.store = encoder::PrecomputedStore::open(run.output_dir + "/embeddings");
    return backend;
}

inline std::set<evaluator::NameTriple> load_train_facts(const RunConfig& run) {
    std::ifstream in(run.output_dir + "/train_facts.json");
    if (!in) throw DataError("missing train_facts.json; run prepare first");
    nlohmann::json j;
    in >> j;
    std::set<evaluator::NameTriple> out;
    for (const auto& t : j)
        out.insert({t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<int>()});
    return out;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << "\n";
}

inline std::map<std::string, const corpus::Document*> doc_map(
    const std::vector<corpus::Document>& docs) {
    std::map<std::string, const corpus::Document*> m;
    for (const auto& d : docs) m[d.doc_id] = &d;
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// prepare: raw corpus files -> canonical JSONL + vocabularies + train facts
// ---------------------------------------------------------------------------

inline void cmd_prepare(const RunConfig& run) {
    run.validate();
    if (run.train_path.empty()) throw ConfigError("prepare: train_path is required");
    std::filesystem::create_directories(run.output_dir);

    corpus::LabelVocabulary labels;
    std::vector<corpus::Document> train, dev, test;
    if (run.dataset == "docred") {
        train = corpus::parse_docred(run.train_path, labels, "train");
        if (!run.dev_path.empty()) dev = corpus::parse_docred(run.dev_path, labels, "dev");
        if (!run.test_path.empty()) test = corpus::parse_docred(run.test_path, labels, "test");
    } else {
        labels = corpus::cdr_vocabulary();
        train = corpus::parse_pubtator(run.train_path, "train");
        if (!run.dev_path.empty()) dev = corpus::parse_pubtator(run.dev_path, "dev");
        if (!run.test_path.empty()) test = corpus::parse_pubtator(run.test_path, "test");
    }
    for (const auto& d : train) corpus::validate(d, labels.size());

    corpus::write_canonical(detail::split_file(run, "train"), train);
    if (!dev.empty()) corpus::write_canonical(detail::split_file(run, "dev"), dev);
    if (!test.empty()) corpus::write_canonical(detail::split_file(run, "test"), test);

    detail::write_json(run.output_dir + "/labels.json", {{"names", labels.names}});

    std::vector<corpus::Document> all = train;
    all.insert(all.end(), dev.begin(), dev.end());
    all.insert(all.end(), test.begin(), test.end());
    detail::write_json(run.output_dir + "/words.json",
                       encoder::Vocabulary::build(all).to_json());

    nlohmann::json facts = nlohmann::json::array();
    for (const auto& t : evaluator::collect_name_triples(train))
        facts.push_back({std::get<0>(t), std::get<1>(t), std::get<2>(t)});
    detail::write_json(run.output_dir + "/train_facts.json", facts);
}

// ---------------------------------------------------------------------------
// train: canonical splits -> checkpoint + training log + resolved config
// ---------------------------------------------------------------------------

inline trainer::TrainResult cmd_train(const RunConfig& run) {
    run.validate();
    const corpus::LabelVocabulary labels = detail::load_labels(run);
    model::ModelConfig cfg = run.effective_model();
    cfg.n_relations = labels.size();
    if (run.dataset == "cdr") cfg.chem_disease_pairs = run.model.chem_disease_pairs;
    const encoder::Backend backend = detail::make_backend(run, cfg);

    std::vector<corpus::Document> train = detail::load_split(run, "train");
    std::vector<corpus::Document> dev;
    if (std::filesystem::exists(detail::split_file(run, "dev")))
        dev = detail::load_split(run, "dev");

    trainer::TrainResult result = trainer::train(train, dev, cfg, run.train, backend);
    model::ModelParams final_params = result.best_params;
    if (run.protocol == "train-dev")
        final_params =
            trainer::train_plus_dev(train, dev, cfg, run.train, backend, result.best_epoch);

    nlohmann::json extra = {{"fingerprint", run.fingerprint()},
                            {"protocol", run.protocol},
                            {"best_epoch", result.best_epoch},
                            {"best_dev_f1", result.best_dev_f1}};
    model::save_checkpoint(run.output_dir + "/checkpoint.json", cfg, final_params, extra);
    trainer::write_training_log(run.output_dir + "/training_log.jsonl", result.log);
    detail::write_json(run.output_dir + "/resolved_config.json", run.to_json());
    return result;
}

// ---------------------------------------------------------------------------
// evaluate / predict
// ---------------------------------------------------------------------------

inline model::GlreModel load_model(const RunConfig& run, const std::string& checkpoint_path) {
    model::Checkpoint ck = model::load_checkpoint(checkpoint_path);
    if (ck.extra.contains("fingerprint") &&
        ck.extra.at("fingerprint").get<std::string>() != run.fingerprint())
        throw ConfigError("checkpoint fingerprint " +
                          ck.extra.at("fingerprint").get<std::string>() +
                          " does not match the requested run " + run.fingerprint());
    const encoder::Backend backend = detail::make_backend(run, ck.config);
    return model::GlreModel(ck.config, ck.params, backend);
}

inline void write_predictions(const std::string& path, const model::GlreModel& m,
                              const std::vector<corpus::Document>& docs,
                              const corpus::LabelVocabulary& labels) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write predictions: " + path);
    for (const auto& d : docs) {
        for (const auto& p : m.predict_document(d)) {
            for (int r : p.decided) {
                nlohmann::json j = {{"doc_id", d.doc_id},
                                    {"head", p.head_entity_id},
                                    {"tail", p.tail_entity_id},
                                    {"relation", labels.names.at(r)},
                                    {"probability", p.probabilities(r)}};
                out << j.dump() << "\n";
            }
        }
    }
}

inline evaluator::MetricsReport cmd_evaluate(const RunConfig& run, const std::string& split,
                                             double threshold_override = -1.0) {
    run.validate();
    const corpus::LabelVocabulary labels = detail::load_labels(run);
    model::GlreModel m = load_model(run, run.output_dir + "/checkpoint.json");
    if (threshold_override >= 0.0) {
        model::ModelConfig cfg = m.config();
        cfg.threshold = threshold_override;
        m = model::GlreModel(cfg, m.params(), m.backend());
    }

    std::vector<corpus::Document> docs = detail::load_split(run, split);
    const evaluator::FactSet gold = trainer::gold_facts(docs);
    const evaluator::FactSet pred = trainer::predicted_facts(m, docs);
    const auto by_id = detail::doc_map(docs);

    evaluator::MetricsReport report;
    auto [p, r, f1] = evaluator::prf1(pred, gold);
    report.precision = p;
    report.recall = r;
    report.f1 = f1;
    report.counts = evaluator::count(pred, gold);
    report.fingerprint = run.fingerprint();
    if (run.dataset == "docred")
        report.ign_f1 = evaluator::ign_f1(pred, gold, detail::load_train_facts(run), by_id);
    report.distance_buckets = evaluator::bucket_report(
        pred, gold, by_id, evaluator::BucketAxis::Distance,
        evaluator::default_distance_buckets());
    report.mention_buckets = evaluator::bucket_report(
        pred, gold, by_id, evaluator::BucketAxis::Mentions,
        evaluator::default_mention_buckets());

    detail::write_json(run.output_dir + "/metrics_" + split + ".json", report.to_json());
    {
        std::ofstream out(run.output_dir + "/metrics_" + split + ".txt");
        out << report.to_text();
    }
    write_predictions(run.output_dir + "/predictions_" + split + ".jsonl", m, docs, labels);
    return report;
}

inline void cmd_predict(const RunConfig& run, const std::string& input_jsonl,
                        const std::string& out_path) {
    run.validate();
    const corpus::LabelVocabulary labels = detail::load_labels(run);
    model::GlreModel m = load_model(run, run.output_dir + "/checkpoint.json");
    write_predictions(out_path, m, corpus::read_canonical(input_jsonl), labels);
}

// ---------------------------------------------------------------------------
// analyze: bucket breakdowns, case dumps, optional ablation sweep
// ---------------------------------------------------------------------------

inline void cmd_analyze(const RunConfig& run, const std::string& split, bool sweep_ablations,
                        int max_cases = 20) {
    run.validate();
    const corpus::LabelVocabulary labels = detail::load_labels(run);
    model::GlreModel m = load_model(run, run.output_dir + "/checkpoint.json");

    std::vector<corpus::Document> docs = detail::load_split(run, split);
    const evaluator::FactSet gold = trainer::gold_facts(docs);
    const evaluator::FactSet pred = trainer::predicted_facts(m, docs);

    std::ofstream cases(run.output_dir + "/cases_" + split + ".txt");
    if (!cases) throw DataError("cannot write case dump");
    int dumped = 0;
    for (const auto& d : docs) {
        if (dumped >= max_cases) break;
        cases << evaluator::case_dump(d, pred, gold, labels) << "\n";
        ++dumped;
    }

    if (!sweep_ablations) return;
    // Ablation flags change parameter shapes, so every configuration in the
    // sweep is retrained from scratch with the shared training settings.
    nlohmann::json sweep = nlohmann::json::array();
    const std::vector<std::vector<std::string>> combos = {
        {}, {"no-global"}, {"no-local"}, {"no-context"}};
    for (const auto& combo : combos) {
        RunConfig variant = run;
        variant.ablations = combo;
        if (variant.effective_model().entity_final_dim() == variant.model.dist_dim)
            continue;  // both global and local off leaves nothing to classify with
        cmd_train(variant);
        evaluator::MetricsReport rep = cmd_evaluate(variant, split);
        sweep.push_back({{"ablations", combo},
                         {"fingerprint", variant.fingerprint()},
                         {"f1", rep.f1},
                         {"precision", rep.precision},
                         {"recall", rep.recall}});
    }
    detail::write_json(run.output_dir + "/ablation_sweep_" + split + ".json", sweep);
    // restore the primary checkpoint
    cmd_train(run);
}

// ---------------------------------------------------------------------------
// graph-stats
// ---------------------------------------------------------------------------

inline nlohmann::json cmd_graph_stats(const RunConfig& run, const std::string& split) {
    run.validate();
    std::vector<corpus::Document> docs = detail::load_split(run, split);
    nlohmann::json per_doc = nlohmann::json::array();
    std::map<std::string, long> edge_totals;
    long node_total = 0;
    for (const auto& d : docs) {
        const docgraph::GraphLayout g = docgraph::make_layout(d);
        const docgraph::EdgeMap edges = docgraph::build_edges(d);
        nlohmann::json j = {{"doc_id", d.doc_id},
                            {"mentions", g.n_mentions},
                            {"entities", g.n_entities},
                            {"sentences", g.n_sentences}};
        for (const auto& [t, set] : edges) {
            j["edges"][docgraph::edge_type_name(t)] = set.size();
            edge_totals[docgraph::edge_type_name(t)] += static_cast<long>(set.size());
        }
        node_total += g.size();
        per_doc.push_back(std::move(j));
    }
    nlohmann::json out = {{"documents", docs.size()},
                          {"total_nodes", node_total},
                          {"edge_totals", edge_totals},
                          {"per_doc", per_doc}};
    detail::write_json(run.output_dir + "/graph_stats_" + split + ".json", out);
    return out;
}

}  // namespace glre::commands
