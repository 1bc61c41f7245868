#pragma once

// Adam training loop with global-norm gradient clipping, seeded shuffling,
// dev-F1 early stopping, and the train / train+dev protocols.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "glre/common.hpp"
#include "glre/evaluator.hpp"
#include "glre/model.hpp"

namespace glre::trainer {

using ad::Mat;

enum class InitMode { PaperGaussian, Scaled };

inline std::string init_mode_name(InitMode m) {
    return m == InitMode::PaperGaussian ? "paper-gaussian" : "scaled";
}

inline InitMode init_mode_from_name(const std::string& s) {
    if (s == "paper-gaussian") return InitMode::PaperGaussian;
    if (s == "scaled") return InitMode::Scaled;
    throw ConfigError("unknown init mode: " + s);
}

struct TrainConfig {
    int batch_size = 8;
    double learning_rate = 5e-4;
    double clip_norm = 10.0;       // <= 0 disables clipping
    int patience = 15;
    double weight_decay = 1e-4;    // decoupled, applied in the Adam step
    int max_epochs = 200;
    unsigned long seed = 17;
    InitMode init_mode = InitMode::Scaled;
    double neg_sample_ratio = -1.0;  // < 0: train on all N/A pairs

    void validate() const {
        if (batch_size <= 0 || learning_rate <= 0 || patience <= 0 || max_epochs <= 0 ||
            weight_decay < 0)
            throw ConfigError("train config: values must be positive");
        if (patience > max_epochs)
            throw ConfigError("train config: patience must not exceed max_epochs");
    }

    nlohmann::json to_json() const {
        return {{"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"clip_norm", clip_norm},
                {"patience", patience},
                {"weight_decay", weight_decay},
                {"max_epochs", max_epochs},
                {"seed", seed},
                {"init_mode", init_mode_name(init_mode)},
                {"neg_sample_ratio", neg_sample_ratio}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.patience = j.value("patience", c.patience);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.seed = j.value("seed", c.seed);
        c.init_mode = init_mode_from_name(j.value("init_mode", init_mode_name(c.init_mode)));
        c.neg_sample_ratio = j.value("neg_sample_ratio", c.neg_sample_ratio);
        c.validate();
        return c;
    }
};

// Deterministic parameter initialization. paper-gaussian draws N(0,1) per
// entry; scaled draws N(0, 1/sqrt(fan_in)) which is what desk-scale training
// actually converges with.
inline model::ModelParams init_params(const model::ModelConfig& cfg, int vocab_size,
                                      InitMode mode, unsigned long seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    model::ModelParams params;
    for (const auto& shape : model::param_shapes(cfg, vocab_size)) {
        Mat t(shape.rows, shape.cols);
        const double sd =
            mode == InitMode::PaperGaussian ? 1.0 : 1.0 / std::sqrt(double(shape.rows));
        for (int i = 0; i < shape.rows; ++i)
            for (int j = 0; j < shape.cols; ++j) t(i, j) = unit(rng) * sd;
        // Norm gains start at 1, every bias at 0.
        if (shape.name.ends_with("ln.gain"))
            t.setOnes();
        else if (shape.name.ends_with("bias"))
            t.setZero();
        params.tensors[shape.name] = std::move(t);
    }
    return params;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

class AdamOptimizer {
public:
    AdamOptimizer(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(model::ModelParams& params, const std::map<std::string, Mat>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (auto& [name, p] : params.tensors) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const Mat& g = git->second;
            Mat& m = m_[name];
            Mat& v = v_[name];
            if (m.size() == 0) {
                m = Mat::Zero(p.rows(), p.cols());
                v = Mat::Zero(p.rows(), p.cols());
            }
            m = beta1_ * m + (1.0 - beta1_) * g;
            v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
            const Mat mhat = m / bc1;
            const Mat vhat = v / bc2;
            p -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
            if (wd_ > 0.0) p -= lr_ * wd_ * p;
        }
    }

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, Mat> m_, v_;
};

inline double global_grad_norm(const std::map<std::string, Mat>& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    return std::sqrt(sq);
}

inline void clip_gradients(std::map<std::string, Mat>& grads, double clip_norm) {
    if (clip_norm <= 0.0) return;
    const double norm = global_grad_norm(grads);
    if (norm > clip_norm) {
        const double s = clip_norm / norm;
        for (auto& [name, g] : grads) g *= s;
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_p = 0.0, dev_r = 0.0, dev_f1 = 0.0;
    double seconds = 0.0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},   {"train_loss", train_loss}, {"dev_p", dev_p},
                {"dev_r", dev_r},   {"dev_f1", dev_f1},         {"seconds", seconds}};
    }
};

struct TrainResult {
    model::ModelParams best_params;
    int best_epoch = 0;  // 1-based; 0 means initialization was never improved on
    double best_dev_f1 = 0.0;
    std::vector<EpochLog> log;
};

inline evaluator::FactSet gold_facts(const std::vector<corpus::Document>& docs) {
    evaluator::FactSet set;
    for (const auto& d : docs)
        for (const auto& f : d.gold_facts)
            set.insert({d.doc_id, f.head_entity_id, f.tail_entity_id, f.relation_id});
    return set;
}

inline evaluator::FactSet predicted_facts(const model::GlreModel& m,
                                          const std::vector<corpus::Document>& docs) {
    evaluator::FactSet set;
    for (const auto& d : docs)
        for (const auto& p : m.predict_document(d))
            for (int r : p.decided)
                set.insert({d.doc_id, p.head_entity_id, p.tail_entity_id, r});
    return set;
}

namespace detail {

// One optimizer step over a batch of documents. Returns the batch loss (mean
// over documents of the summed pair losses).
inline double batch_step(model::GlreModel& m, const std::vector<const corpus::Document*>& batch,
                         AdamOptimizer& opt, const TrainConfig& tcfg, std::mt19937_64& rng,
                         int epoch, int batch_index) {
    std::map<std::string, Mat> grads;
    double batch_loss = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const corpus::Document* doc : batch) {
        ad::Tape tape;
        model::BoundParams bound = model::bind_params(tape, m.params());
        model::ForwardResult fwd =
            m.forward_bound(tape, bound, *doc, true, &rng, tcfg.neg_sample_ratio);
        const double loss = fwd.loss.value()(0, 0);
        if (!std::isfinite(loss)) {
            double pnorm = 0.0;
            for (const auto& [n, t] : m.params().tensors) pnorm += t.squaredNorm();
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index) + ", doc " + doc->doc_id +
                               " (parameter norm " + std::to_string(std::sqrt(pnorm)) + ")");
        }
        batch_loss += loss * inv;
        tape.backward(fwd.loss);
        for (const auto& [name, var] : bound.vars) {
            Mat g = tape.grad(var) * inv;
            auto [it, inserted] = grads.emplace(name, std::move(g));
            if (!inserted) it->second += tape.grad(var) * inv;
        }
    }
    clip_gradients(grads, tcfg.clip_norm);
    opt.step(m.params(), grads);
    return batch_loss;
}

}  // namespace detail

// Trains until dev F1 stops improving for `patience` epochs, returning the
// best-epoch parameters. With an empty dev set (overfit mode) the training
// split itself provides the early-stopping metric.
inline TrainResult train(const std::vector<corpus::Document>& docs,
                         const std::vector<corpus::Document>& dev_docs,
                         const model::ModelConfig& cfg, const TrainConfig& tcfg,
                         const encoder::Backend& backend, int fixed_epochs = -1) {
    tcfg.validate();
    if (docs.empty()) throw ConfigError("train: empty training set");

    std::mt19937_64 rng(tcfg.seed);
    model::ModelParams params = init_params(
        cfg, cfg.encoder_kind == "trainable-toy" ? backend.vocab.size() : 0, tcfg.init_mode,
        tcfg.seed);
    model::GlreModel m(cfg, std::move(params), backend);
    AdamOptimizer opt(tcfg.learning_rate, tcfg.weight_decay);

    const std::vector<corpus::Document>& eval_docs = dev_docs.empty() ? docs : dev_docs;
    const evaluator::FactSet eval_gold = gold_facts(eval_docs);

    TrainResult result;
    result.best_params = m.params();
    int since_best = 0;
    const int n_epochs = fixed_epochs >= 0 ? fixed_epochs : tcfg.max_epochs;

    std::vector<size_t> order(docs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= n_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        int n_batches = 0;
        for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            std::vector<const corpus::Document*> batch;
            for (size_t i = start; i < std::min(order.size(), start + tcfg.batch_size); ++i)
                batch.push_back(&docs[order[i]]);
            epoch_loss += detail::batch_step(m, batch, opt, tcfg, rng, epoch, n_batches);
            ++n_batches;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / std::max(1, n_batches);
        auto [p, r, f1] = evaluator::prf1(predicted_facts(m, eval_docs), eval_gold);
        log.dev_p = p;
        log.dev_r = r;
        log.dev_f1 = f1;
        log.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(log);

        if (fixed_epochs < 0) {
            if (f1 > result.best_dev_f1 || result.best_epoch == 0) {
                result.best_dev_f1 = f1;
                result.best_epoch = epoch;
                result.best_params = m.params();
                since_best = 0;
            } else if (++since_best >= tcfg.patience) {
                break;
            }
        } else {
            result.best_epoch = epoch;
            result.best_dev_f1 = f1;
            result.best_params = m.params();
        }
    }
    if (fixed_epochs == 0) result.best_params = m.params();
    return result;
}

// Train + dev protocol: once the best epoch E is known from a train() run,
// re-initialize with the same seed and train on the merged split for exactly
// E epochs.
inline model::ModelParams train_plus_dev(const std::vector<corpus::Document>& train_docs,
                                         const std::vector<corpus::Document>& dev_docs,
                                         const model::ModelConfig& cfg, const TrainConfig& tcfg,
                                         const encoder::Backend& backend, int best_epoch) {
    if (best_epoch < 0) throw ConfigError("train_plus_dev: best epoch not set");
    std::vector<corpus::Document> merged = corpus::merge_train_dev(train_docs, dev_docs);
    if (best_epoch == 0)
        return init_params(cfg,
                           cfg.encoder_kind == "trainable-toy" ? backend.vocab.size() : 0,
                           tcfg.init_mode, tcfg.seed);
    TrainResult r = train(merged, {}, cfg, tcfg, backend, best_epoch);
    return r.best_params;
}

inline void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write training log: " + path);
    for (const auto& e : log) out << e.to_json().dump() << "\n";
}

}  // namespace glre::trainer
