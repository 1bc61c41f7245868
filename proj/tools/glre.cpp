// Command-line front end for the relation-extraction pipeline.
//
// Exit codes: 0 success, 2 data/validation error, 3 numeric training abort,
// 4 configuration / checkpoint mismatch.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glre/commands.hpp"

using namespace glre;

namespace {

struct CliOptions {
    std::string config_path;
    std::string split = "test";
    std::string input, output;
    std::string protocol;
    std::vector<std::string> ablations;
    double threshold = -1.0;
    long seed = -1;
    bool sweep = false;
};

commands::RunConfig resolve(const CliOptions& opt) {
    commands::RunConfig run = commands::RunConfig::load(opt.config_path);
    if (!opt.protocol.empty()) run.protocol = opt.protocol;
    if (!opt.ablations.empty()) run.ablations = opt.ablations;
    if (opt.seed >= 0) run.train.seed = static_cast<unsigned long>(opt.seed);
    if (opt.threshold >= 0.0) run.model.threshold = opt.threshold;
    run.validate();
    return run;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"document-level relation extraction pipeline"};
    app.require_subcommand(1);

    CliOptions opt;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "run configuration JSON")->required();
        cmd->add_option("--seed", opt.seed, "override training seed");
    };

    CLI::App* prepare = app.add_subcommand("prepare", "convert raw corpora to canonical JSONL");
    add_common(prepare);

    CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(train);
    train->add_option("--protocol", opt.protocol, "train or train-dev")
        ->check(CLI::IsMember({"train", "train-dev"}));
    train->add_option("--ablation", opt.ablations,
                      "disable a component (no-bert, no-global, no-local, no-context)");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a split");
    add_common(evaluate);
    evaluate->add_option("--split", opt.split, "split to score (train/dev/test)");
    evaluate->add_option("--threshold", opt.threshold, "decision threshold override");
    evaluate->add_option("--ablation", opt.ablations, "match the checkpoint's ablations");

    CLI::App* predict = app.add_subcommand("predict", "emit predictions for a canonical file");
    add_common(predict);
    predict->add_option("--input", opt.input, "canonical JSONL input")->required();
    predict->add_option("--out", opt.output, "predictions JSONL output")->required();

    CLI::App* analyze = app.add_subcommand("analyze", "error breakdowns and case dumps");
    add_common(analyze);
    analyze->add_option("--split", opt.split, "split to analyze");
    analyze->add_flag("--sweep", opt.sweep, "retrain and score each ablation variant");
    analyze->add_option("--ablation", opt.ablations, "match the checkpoint's ablations");

    CLI::App* graph_stats = app.add_subcommand("graph-stats", "document graph statistics");
    add_common(graph_stats);
    graph_stats->add_option("--split", opt.split, "split to summarize");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed()) {
            commands::cmd_prepare(resolve(opt));
        } else if (train->parsed()) {
            trainer::TrainResult r = commands::cmd_train(resolve(opt));
            std::cout << "best epoch " << r.best_epoch << ", dev f1 " << r.best_dev_f1 << "\n";
        } else if (evaluate->parsed()) {
            evaluator::MetricsReport rep =
                commands::cmd_evaluate(resolve(opt), opt.split, opt.threshold);
            std::cout << rep.to_text();
        } else if (predict->parsed()) {
            commands::cmd_predict(resolve(opt), opt.input, opt.output);
        } else if (analyze->parsed()) {
            commands::cmd_analyze(resolve(opt), opt.split, opt.sweep);
        } else if (graph_stats->parsed()) {
            nlohmann::json j = commands::cmd_graph_stats(resolve(opt), opt.split);
            std::cout << "documents " << j.at("documents") << ", nodes "
                      << j.at("total_nodes") << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
