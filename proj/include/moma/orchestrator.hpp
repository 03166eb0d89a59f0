#pragma once

// Command implementations behind the CLI: summarize, train, predict,
// evaluate, ablate. Each stage consumes the previous stage's artifacts from
// the output directory and appends a run log (config digest, version, seed)
// under <out>/logs/. Exit codes: 0 success, 1 partial or run failure;
// configuration errors throw ConfigError for the CLI to map to 2.

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "moma/config.hpp"
#include "moma/core.hpp"
#include "moma/encounter.hpp"
#include "moma/eval.hpp"
#include "moma/head.hpp"
#include "moma/pipeline.hpp"

#ifndef MOMA_VERSION
#define MOMA_VERSION "0.0.0-unknown"
#endif

namespace moma {

inline std::string version_string() { return MOMA_VERSION; }

// Owns the client and cache that the pipeline context points at.
struct Runtime {
    PipelineContext ctx;
    std::unique_ptr<AgentClient> client;
    std::unique_ptr<Cache> cache;
};

inline Runtime make_runtime(const RunConfig& cfg) {
    cfg.validate();
    Runtime rt;
    rt.client = std::make_unique<AgentClient>();
    if (!cfg.transcript_path.empty()) rt.client->set_transcript_path(cfg.transcript_path);
    rt.cache = std::make_unique<Cache>(cfg.cache_dir);
    rt.ctx.spec = cfg.pipeline;
    for (const auto& a : cfg.agents) rt.ctx.agents.add(a);
    for (const auto& t : cfg.templates) rt.ctx.templates.add(t);
    rt.ctx.client = rt.client.get();
    rt.ctx.cache = rt.cache.get();
    rt.ctx.workers = cfg.workers;
    return rt;
}

namespace detail_orchestrator {

inline void write_run_log(const RunConfig& cfg, const Runtime& rt, const std::string& command,
                          nlohmann::json extra) {
    extra["command"] = command;
    extra["config_digest"] = cfg.config_digest.empty() ? "unconfigured" : cfg.config_digest;
    extra["version"] = version_string();
    extra["seed"] = cfg.seed;
    extra["backend_calls"] = rt.client->backend_calls();
    extra["embedding_calls"] = rt.client->embedding_calls();
    auto dir = cfg.output_dir / "logs";
    std::filesystem::create_directories(dir);
    write_text_file_atomic(dir / (command + "_log.json"), extra.dump(2) + "\n");
}

inline Dataset dev_split(const Dataset& ds, const std::optional<Date>& cutoff) {
    if (!cutoff) return ds;
    return temporal_split(ds, *cutoff).first;
}

inline Dataset test_split(const Dataset& ds, const std::optional<Date>& cutoff) {
    if (!cutoff) return ds;
    return temporal_split(ds, *cutoff).second;
}

inline std::filesystem::path head_checkpoint_path(const RunConfig& cfg) {
    return cfg.output_dir / (cfg.pipeline.head_id + ".json");
}

inline std::vector<std::vector<int>> label_rows(const Dataset& ds) {
    std::vector<std::vector<int>> rows;
    rows.reserve(ds.encounters.size());
    for (const auto& enc : ds.encounters) {
        std::vector<int> row;
        for (const auto& name : ds.spec.subtask_names) row.push_back(enc.labels.at(name));
        rows.push_back(std::move(row));
    }
    return rows;
}

// Embeds the aggregated summaries through the predictor agent, in parallel,
// preserving encounter order.
inline std::vector<Vec> embed_texts(const Runtime& rt, const std::vector<std::string>& texts) {
    const AgentConfig& cfg = rt.ctx.agents.get(rt.ctx.spec.predictor_agent_id);
    std::vector<Vec> out(texts.size());
    detail_pipeline::parallel_for_indices(texts.size(), rt.ctx.workers, [&](std::size_t i) {
        out[i] = rt.client->embed_last_hidden(cfg, texts[i]).vector;
    });
    return out;
}

} // namespace detail_orchestrator

// Specialists + aggregator over the whole dataset, populating cache and
// bundle. Cached work is skipped, so reruns are cheap and resumable.
inline int cmd_summarize(const RunConfig& cfg) {
    Runtime rt = make_runtime(cfg);
    Dataset ds = load_dataset(cfg.dataset_path, cfg.task);
    BundlePaths bundle{cfg.output_dir};
    RunOutcome outcome = run_summarize(rt.ctx, ds, bundle);
    detail_orchestrator::write_run_log(cfg, rt, "summarize",
                                       {{"n_encounters", ds.encounters.size()},
                                        {"failures", outcome.failures}});
    return outcome.failures == 0 ? 0 : 1;
}

// Trains the head on the development side of the temporal split, reading
// aggregated summaries written by cmd_summarize.
inline int cmd_train(const RunConfig& cfg) {
    Runtime rt = make_runtime(cfg);
    Dataset full = load_dataset(cfg.dataset_path, cfg.task);
    Dataset dev = detail_orchestrator::dev_split(full, cfg.split_cutoff);
    if (dev.encounters.empty())
        throw ValidationError("train: no encounters on the development side of the split");
    BundlePaths bundle{cfg.output_dir};
    std::vector<std::string> texts;
    texts.reserve(dev.encounters.size());
    for (const auto& enc : dev.encounters) {
        auto path = bundle.aggregated_dir() / (enc.encounter_id + ".txt");
        std::error_code ec;
        if (!std::filesystem::exists(path, ec) || ec)
            throw Error("missing prerequisite: aggregated summary " + path.string() +
                        " (run `moma summarize` first)");
        texts.push_back(read_text_file(path));
    }
    auto embeddings = detail_orchestrator::embed_texts(rt, texts);
    auto labels = detail_orchestrator::label_rows(dev);
    TrainResult result = train_head(embeddings, labels, cfg.task, cfg.train);
    nlohmann::json checkpoint = head_to_json(result.head, cfg.train);
    checkpoint["task_name"] = cfg.task.name;
    checkpoint["embedding_agent"] = cfg.pipeline.predictor_agent_id;
    write_text_file_atomic(detail_orchestrator::head_checkpoint_path(cfg),
                           checkpoint.dump(2) + "\n");
    write_text_file_atomic(cfg.output_dir / "loss_history.json",
                           nlohmann::json(result.loss_history).dump() + "\n");
    detail_orchestrator::write_run_log(cfg, rt, "train",
                                       {{"n_train", dev.encounters.size()},
                                        {"steps", result.loss_history.size()},
                                        {"final_loss", result.loss_history.back()},
                                        {"warnings", result.warnings}});
    return 0;
}

// Full pipeline over the test side of the split with the trained head,
// emitting predictions.jsonl into the bundle.
inline int cmd_predict(const RunConfig& cfg) {
    Runtime rt = make_runtime(cfg);
    auto head_path = detail_orchestrator::head_checkpoint_path(cfg);
    std::error_code ec;
    if (!std::filesystem::exists(head_path, ec) || ec)
        throw Error("missing prerequisite: head checkpoint " + head_path.string() +
                    " (run `moma train` first)");
    auto [head, train_cfg] = head_from_json(nlohmann::json::parse(read_text_file(head_path)));
    (void)train_cfg;
    Dataset full = load_dataset(cfg.dataset_path, cfg.task);
    Dataset test = detail_orchestrator::test_split(full, cfg.split_cutoff);
    if (test.encounters.empty())
        throw ValidationError("predict: no encounters on the test side of the split");
    BundlePaths bundle{cfg.output_dir};
    RunOutcome outcome = run_pipeline(rt.ctx, test, head, bundle);
    detail_orchestrator::write_run_log(cfg, rt, "predict",
                                       {{"n_test", test.encounters.size()},
                                        {"failures", outcome.failures}});
    return outcome.failures == 0 ? 0 : 1;
}

inline std::vector<PredictionResult> load_predictions(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec) || ec)
        throw Error("missing prerequisite: predictions file " + path.string() +
                    " (run `moma predict` first)");
    std::vector<PredictionResult> out;
    std::string content = read_text_file(path);
    std::size_t pos = 0;
    int line_no = 0;
    while (pos < content.size()) {
        std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) nl = content.size();
        std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(prediction_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// Joins predictions with dataset labels/demographics into an EvalInput.
inline EvalInput build_eval_input(const Dataset& ds, const std::vector<PredictionResult>& preds) {
    std::map<std::string, const Encounter*> by_id;
    for (const auto& enc : ds.encounters) by_id[enc.encounter_id] = &enc;
    EvalInput in;
    in.task = ds.spec;
    std::size_t n_sub = ds.spec.subtask_names.size();
    for (const auto& p : preds) {
        auto it = by_id.find(p.encounter_id);
        if (it == by_id.end())
            throw ValidationError("predictions reference unknown encounter '" + p.encounter_id +
                                  "'");
        const Encounter& enc = *it->second;
        if (p.pred.size() != n_sub || p.logits.size() != n_sub)
            throw ValidationError("prediction for '" + p.encounter_id +
                                  "' has wrong subtask count");
        std::vector<int> labels;
        for (const auto& name : ds.spec.subtask_names) labels.push_back(enc.labels.at(name));
        std::vector<Vec> probs;
        for (std::size_t s = 0; s < n_sub; ++s) {
            if (ds.spec.kind == TaskKind::binary) {
                double prob = sigmoid(p.logits[s].at(0));
                probs.push_back(Vec{1.0 - prob, prob});
            } else {
                probs.push_back(softmax(p.logits[s]));
            }
        }
        in.encounter_ids.push_back(p.encounter_id);
        in.labels.push_back(std::move(labels));
        in.preds.push_back(p.pred);
        in.probs.push_back(std::move(probs));
        in.demographics.push_back(enc.demographics);
    }
    return in;
}

// Bootstrap CIs, subgroup breakdowns, and paired significance tests over
// predictions.jsonl, written as report.json + report.txt.
inline int cmd_evaluate(const RunConfig& cfg) {
    Runtime rt = make_runtime(cfg);
    Dataset ds = load_dataset(cfg.dataset_path, cfg.task);
    BundlePaths bundle{cfg.output_dir};
    auto preds = load_predictions(bundle.predictions_file());
    if (preds.empty()) throw ValidationError("evaluate: predictions file is empty");
    EvalInput in = build_eval_input(ds, preds);
    auto metrics = cfg.metrics.empty() ? default_metrics(cfg.task.kind) : cfg.metrics;
    MetricReport report = evaluate(in, metrics, cfg.subgroup_axes, cfg.bootstrap);
    write_text_file_atomic(cfg.output_dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_text_file_atomic(cfg.output_dir / "report.txt", report_to_text(report, metrics));
    detail_orchestrator::write_run_log(cfg, rt, "evaluate",
                                       {{"n_evaluated", in.size()}, {"metrics", metrics}});
    return 0;
}

// Derives the ablated run configuration: the modality kind is dropped from
// the pipeline mask and artifacts land in a sibling directory.
inline RunConfig ablated_config(const RunConfig& cfg, const std::string& drop_kind) {
    RunConfig out = cfg;
    out.pipeline = ablate(cfg.pipeline, drop_kind);
    out.output_dir = cfg.output_dir.string() + "-ablated";
    return out;
}

// Full pipeline rerun (summarize, train, predict, evaluate) with the
// modality kind masked out, keeping every other component unchanged.
inline int cmd_ablate(const RunConfig& cfg, const std::string& drop_kind) {
    RunConfig ab = ablated_config(cfg, drop_kind);
    if (int rc = cmd_summarize(ab); rc != 0) return rc;
    if (int rc = cmd_train(ab); rc != 0) return rc;
    if (int rc = cmd_predict(ab); rc != 0) return rc;
    return cmd_evaluate(ab);
}

} // namespace moma
