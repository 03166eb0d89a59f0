#pragma once

// Run configuration: one JSON document wiring dataset, task, agents,
// pipeline, training, and evaluation together. Parsing is strict about
// types and spells out the offending field on error.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moma/agent.hpp"
#include "moma/core.hpp"
#include "moma/detail/sha256.hpp"
#include "moma/encounter.hpp"
#include "moma/eval.hpp"
#include "moma/head.hpp"
#include "moma/pipeline.hpp"
#include "moma/prompt.hpp"

namespace moma {

namespace detail_config {

template <typename T>
T require_field(const nlohmann::json& j, const std::string& key, const std::string& context) {
    if (!j.contains(key))
        throw ConfigError(context + ": missing required field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(context + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback,
         const std::string& context) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(context + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

} // namespace detail_config

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path dataset_path;
    TaskSpec task;
    PipelineSpec pipeline;
    std::vector<AgentConfig> agents;
    TrainConfig train;
    BootstrapConfig bootstrap;
    std::vector<std::string> metrics;               // empty = defaults for the task kind
    std::vector<std::string> subgroup_axes{"sex", "race"};
    std::optional<Date> split_cutoff;               // temporal split; absent = no split
    std::filesystem::path cache_dir = "cache";
    std::filesystem::path output_dir = "out";
    int workers = 4;
    std::string transcript_path;                    // empty = no transcript
    std::vector<PromptTemplate> templates;          // registered over the built-in presets
    std::string config_digest;                      // sha256 of the source document

    void validate() const {
        task.validate();
        pipeline.validate();
        train.validate();
        bootstrap.validate();
        if (dataset_path.empty()) throw ConfigError("config: dataset path is required");
        if (agents.empty()) throw ConfigError("config: at least one agent is required");
        if (workers < 1) throw ConfigError("config: workers must be >= 1");
        AgentRegistry reg;
        for (const auto& a : agents) reg.add(a);
        reg.get(pipeline.aggregator.agent_id);
        reg.get(pipeline.predictor_agent_id);
        if (pipeline.text_specialist) reg.get(pipeline.text_specialist->agent_id);
        for (const auto& rule : pipeline.specialists) reg.get(rule.agent_id);
    }
};

inline TaskSpec task_from_json(const nlohmann::json& j) {
    auto name = detail_config::require_field<std::string>(j, "name", "task");
    auto kind = task_kind_from_string(detail_config::require_field<std::string>(j, "kind", "task"));
    auto classes =
        detail_config::require_field<std::vector<std::vector<std::string>>>(j, "classes", "task");
    auto subtask_names = detail_config::get_or<std::vector<std::string>>(j, "subtask_names", {},
                                                                         "task");
    return TaskSpec::make(name, kind, classes, subtask_names);
}

inline AgentConfig agent_from_json(const nlohmann::json& j) {
    using detail_config::get_or;
    using detail_config::require_field;
    AgentConfig cfg;
    cfg.agent_id = require_field<std::string>(j, "agent_id", "agent");
    std::string context = "agent '" + cfg.agent_id + "'";
    std::string backend = get_or<std::string>(j, "backend", "mock", context);
    if (backend == "mock") cfg.backend = BackendKind::mock;
    else if (backend == "remote") cfg.backend = BackendKind::remote;
    else throw ConfigError(context + ": backend must be 'mock' or 'remote', got '" + backend + "'");
    cfg.endpoint_url = get_or<std::string>(j, "endpoint_url", "", context);
    cfg.model_name = get_or<std::string>(j, "model_name", cfg.agent_id, context);
    cfg.temperature = get_or<double>(j, "temperature", 0.0, context);
    cfg.max_tokens = get_or<int>(j, "max_tokens", 512, context);
    cfg.timeout = std::chrono::milliseconds(get_or<int>(j, "timeout_ms", 30000, context));
    cfg.max_retries = get_or<int>(j, "max_retries", 3, context);
    cfg.requests_in_flight_limit = get_or<int>(j, "requests_in_flight_limit", 4, context);
    cfg.backoff_base_s = get_or<double>(j, "backoff_base_s", 0.5, context);
    cfg.api_key_env = get_or<std::string>(j, "api_key_env", "", context);
    cfg.mock_behavior = get_or<std::string>(j, "mock_behavior", "echo", context);
    cfg.mock_embedder = get_or<std::string>(j, "mock_embedder", "hash", context);
    cfg.embedding_dim = get_or<int>(j, "embedding_dim", 0, context);
    cfg.validate();
    return cfg;
}

inline StageRef stage_from_json(const nlohmann::json& j, const std::string& context) {
    StageRef ref;
    ref.agent_id = detail_config::require_field<std::string>(j, "agent_id", context);
    ref.template_id = detail_config::get_or<std::string>(j, "template_id", "", context);
    return ref;
}

inline PipelineSpec pipeline_from_json(const nlohmann::json& j) {
    using detail_config::get_or;
    PipelineSpec spec;
    if (j.contains("specialists")) {
        for (const auto& r : j.at("specialists")) {
            SpecialistRule rule;
            rule.match = detail_config::require_field<std::string>(r, "match", "specialist rule");
            rule.agent_id =
                detail_config::require_field<std::string>(r, "agent_id", "specialist rule");
            rule.template_id = get_or<std::string>(r, "template_id", "", "specialist rule");
            spec.specialists.push_back(std::move(rule));
        }
    }
    if (j.contains("text_specialist"))
        spec.text_specialist = stage_from_json(j.at("text_specialist"), "text_specialist");
    spec.aggregator = stage_from_json(
        j.contains("aggregator") ? j.at("aggregator") : nlohmann::json::object(), "aggregator");
    spec.predictor_agent_id =
        detail_config::require_field<std::string>(j, "predictor_agent_id", "pipeline");
    spec.head_id = get_or<std::string>(j, "head_id", "head", "pipeline");
    spec.separator = get_or<std::string>(j, "separator", "\n\n", "pipeline");
    if (j.contains("modality_mask")) {
        spec.modality_mask.clear();
        for (const auto& m : j.at("modality_mask"))
            spec.modality_mask.insert(m.get<std::string>());
    }
    spec.fixed_timestamp = get_or<std::string>(j, "fixed_timestamp", "", "pipeline");
    spec.validate();
    return spec;
}

inline TrainConfig train_from_json(const nlohmann::json& j, std::uint64_t default_seed,
                                   TaskKind task_kind) {
    using detail_config::get_or;
    TrainConfig cfg;
    cfg.max_steps = get_or<int>(j, "max_steps", 4500, "train");
    cfg.batch_size = get_or<int>(j, "batch_size", 8, "train");
    cfg.warmup_steps = get_or<int>(j, "warmup_steps", 0, "train");
    cfg.seed = get_or<std::uint64_t>(j, "seed", default_seed, "train");
    cfg.loss_kind = j.contains("loss_kind")
                        ? loss_kind_from_string(j.at("loss_kind").get<std::string>())
                        : loss_kind_for(task_kind);
    cfg.learning_rate = get_or<double>(j, "learning_rate", 1e-4, "train");
    cfg.weight_decay = get_or<double>(j, "weight_decay", 0.01, "train");
    cfg.beta1 = get_or<double>(j, "beta1", 0.9, "train");
    cfg.beta2 = get_or<double>(j, "beta2", 0.999, "train");
    cfg.epsilon = get_or<double>(j, "epsilon", 1e-8, "train");
    cfg.hidden_width = get_or<int>(j, "hidden_width", 0, "train");
    cfg.validate();
    return cfg;
}

inline BootstrapConfig bootstrap_from_json(const nlohmann::json& j, std::uint64_t default_seed) {
    using detail_config::get_or;
    BootstrapConfig cfg;
    cfg.replicates = get_or<int>(j, "replicates", 1000, "bootstrap");
    cfg.ci_level = get_or<double>(j, "ci_level", 0.95, "bootstrap");
    cfg.seed = get_or<std::uint64_t>(j, "seed", default_seed, "bootstrap");
    cfg.max_redraws = get_or<int>(j, "max_redraws", 100, "bootstrap");
    cfg.min_subgroup_size = get_or<int>(j, "min_subgroup_size", 10, "bootstrap");
    cfg.validate();
    return cfg;
}

inline RunConfig run_config_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {}) {
    using detail_config::get_or;
    RunConfig cfg;
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
        std::filesystem::path path(p);
        if (path.is_absolute() || base_dir.empty()) return path;
        return base_dir / path;
    };
    cfg.dataset_path =
        resolve(detail_config::require_field<std::string>(j, "dataset", "config"));
    if (!j.contains("task")) throw ConfigError("config: missing required field 'task'");
    cfg.task = task_from_json(j.at("task"));
    if (!j.contains("pipeline")) throw ConfigError("config: missing required field 'pipeline'");
    cfg.pipeline = pipeline_from_json(j.at("pipeline"));
    if (!j.contains("agents")) throw ConfigError("config: missing required field 'agents'");
    for (const auto& a : j.at("agents")) cfg.agents.push_back(agent_from_json(a));
    cfg.train = train_from_json(j.contains("train") ? j.at("train") : nlohmann::json::object(),
                                cfg.seed, cfg.task.kind);
    cfg.bootstrap = bootstrap_from_json(
        j.contains("bootstrap") ? j.at("bootstrap") : nlohmann::json::object(), cfg.seed);
    cfg.metrics = get_or<std::vector<std::string>>(j, "metrics", {}, "config");
    cfg.subgroup_axes = get_or<std::vector<std::string>>(j, "subgroup_axes", {"sex", "race"},
                                                         "config");
    if (j.contains("split")) {
        auto cutoff = detail_config::require_field<std::string>(j.at("split"), "cutoff", "split");
        cfg.split_cutoff = Date::parse(cutoff);
    }
    cfg.cache_dir = resolve(get_or<std::string>(j, "cache_dir", "cache", "config"));
    cfg.output_dir = resolve(get_or<std::string>(j, "output_dir", "out", "config"));
    cfg.workers = get_or<int>(j, "workers", 4, "config");
    cfg.transcript_path = get_or<std::string>(j, "transcript", "", "config");
    if (j.contains("templates")) {
        for (const auto& t : j.at("templates")) {
            if (t.contains("file")) {
                cfg.templates.push_back(load_template_file(resolve(t.at("file").get<std::string>())));
            } else {
                auto id = detail_config::require_field<std::string>(t, "template_id", "template");
                auto body = detail_config::require_field<std::string>(t, "body", "template");
                cfg.templates.push_back(make_template(id, body));
            }
        }
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::string content;
    try {
        content = read_text_file(path);
    } catch (const Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": invalid JSON (" + e.what() + ")");
    }
    auto cfg = run_config_from_json(j, path.parent_path());
    cfg.config_digest = detail::sha256_hex(content);
    return cfg;
}

} // namespace moma
