// moma: agent-pipeline orchestration CLI.
//
// Stages are separate subcommands (summarize is orders of magnitude more
// expensive than the rest) so each can be rerun independently against the
// same cache and output directory.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "moma/orchestrator.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    int workers = 0; // 0 = leave config value alone
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--workers", args.workers, "Worker pool size")->check(CLI::PositiveNumber);
    cmd->add_option("--out", args.out_dir, "Override output directory");
}

moma::RunConfig load_with_overrides(const CommonArgs& args) {
    moma::RunConfig cfg = moma::load_run_config(args.config_path);
    if (args.workers > 0) cfg.workers = args.workers;
    if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
    return cfg;
}

// Per-encounter failures are recorded, not thrown; point at the list so a
// nonzero exit is never silent.
int report_failures(int rc, const std::filesystem::path& output_dir) {
    if (rc != 0)
        std::fprintf(stderr, "some encounters failed; see %s\n",
                     (output_dir / "failures.jsonl").string().c_str());
    return rc;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"moma: multimodal agent pipeline"};
    app.set_version_flag("--version", moma::version_string());
    app.require_subcommand(1);

    CommonArgs args;
    std::string drop_kind;

    CLI::App* summarize = app.add_subcommand("summarize", "Run specialists and aggregator");
    add_common(summarize, args);
    CLI::App* train = app.add_subcommand("train", "Train the prediction head");
    add_common(train, args);
    CLI::App* predict = app.add_subcommand("predict", "Predict on the held-out split");
    add_common(predict, args);
    CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate predictions");
    add_common(evaluate, args);
    CLI::App* ablate = app.add_subcommand("ablate", "Rerun with a modality kind removed");
    add_common(ablate, args);
    ablate->add_option("--drop", drop_kind, "Modality kind to remove (e.g. image)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        moma::RunConfig cfg = load_with_overrides(args);
        if (summarize->parsed()) return report_failures(moma::cmd_summarize(cfg), cfg.output_dir);
        if (train->parsed()) return moma::cmd_train(cfg);
        if (predict->parsed()) return report_failures(moma::cmd_predict(cfg), cfg.output_dir);
        if (evaluate->parsed()) return moma::cmd_evaluate(cfg);
        if (ablate->parsed())
            return report_failures(moma::cmd_ablate(cfg, drop_kind),
                                   moma::ablated_config(cfg, drop_kind).output_dir);
    } catch (const moma::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const moma::TemplateError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
