#pragma once

// The agent composition: specialists turn each enabled non-text modality
// into a text summary, the composed input concatenates clinical text with
// those summaries, an aggregator condenses the composition, and the
// predictor embeds the aggregate for the classification head. Every
// generation is cached content-addressed on the exact request, so reruns
// and resumed batches skip completed work.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <ctime>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "moma/agent.hpp"
#include "moma/core.hpp"
#include "moma/detail/sha256.hpp"
#include "moma/encounter.hpp"
#include "moma/head.hpp"
#include "moma/presets.hpp"
#include "moma/prompt.hpp"

namespace moma {

// ---------------------------------------------------------------------------
// Pipeline specification

struct SpecialistRule {
    std::string match; // modality kind ("image"/"table") or modality_id glob
    std::string agent_id;
    std::string template_id; // empty = raw modality data as the prompt
};

struct StageRef {
    std::string agent_id;
    std::string template_id;
};

struct PipelineSpec {
    std::vector<SpecialistRule> specialists;
    std::optional<StageRef> text_specialist; // absent = clinical text passes through
    StageRef aggregator;
    std::string predictor_agent_id;
    std::string head_id = "head";
    std::string separator = "\n\n";
    std::set<std::string> modality_mask{"image", "table"}; // enabled kinds/ids
    std::string fixed_timestamp; // nonempty pins SummaryRecord.created_at

    void validate() const {
        if (aggregator.agent_id.empty())
            throw ConfigError("pipeline: aggregator agent_id is required");
        if (predictor_agent_id.empty())
            throw ConfigError("pipeline: predictor agent_id is required");
        for (const auto& rule : specialists)
            if (rule.match.empty() || rule.agent_id.empty())
                throw ConfigError("pipeline: specialist rules need match and agent_id");
    }
};

// Classic '*' wildcard match (no escaping; '*' matches any run of bytes).
inline bool wildcard_match(const std::string& pattern, const std::string& text) {
    std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

inline bool rule_matches(const SpecialistRule& rule, const ModalityPayload& m) {
    if (rule.match == to_string(m.kind)) return true;
    return wildcard_match(rule.match, m.modality_id);
}

inline bool modality_enabled(const PipelineSpec& spec, const ModalityPayload& m) {
    return spec.modality_mask.count(to_string(m.kind)) > 0 ||
           spec.modality_mask.count(m.modality_id) > 0;
}

// Removes a modality kind from the mask; everything else stays identical.
inline PipelineSpec ablate(const PipelineSpec& spec, const std::string& drop_kind) {
    if (drop_kind != "image" && drop_kind != "table")
        throw ConfigError("ablate: unknown modality kind '" + drop_kind + "'");
    if (!spec.modality_mask.count(drop_kind))
        throw ValidationError("ablate: kind '" + drop_kind + "' is not in the modality mask");
    PipelineSpec out = spec;
    out.modality_mask.erase(drop_kind);
    return out;
}

// ---------------------------------------------------------------------------
// Template resolution: explicitly registered templates shadow built-in
// presets; "guideline:<role>" builds from the canonical role guideline.

class TemplateStore {
public:
    void add(PromptTemplate t) { templates_[t.template_id] = std::move(t); }

    PromptTemplate get(const std::string& id) const {
        if (auto it = templates_.find(id); it != templates_.end()) return it->second;
        if (id.rfind("guideline:", 0) == 0) {
            std::string role = id.substr(10);
            if (role == "text_specialist")
                return build_from_guideline(default_guideline(AgentRole::text_specialist), {});
            if (role == "nontext_specialist")
                return build_from_guideline(default_guideline(AgentRole::nontext_specialist), {});
            if (role == "aggregator")
                return build_from_guideline(default_guideline(AgentRole::aggregator), {});
            throw TemplateError("unknown guideline role '" + role + "'");
        }
        return preset(id);
    }

private:
    std::map<std::string, PromptTemplate> templates_;
};

struct AgentRegistry {
    std::map<std::string, AgentConfig> configs;

    const AgentConfig& get(const std::string& agent_id) const {
        auto it = configs.find(agent_id);
        if (it == configs.end())
            throw ConfigError("agent_id '" + agent_id + "' is not configured");
        return it->second;
    }

    void add(AgentConfig cfg) {
        cfg.validate();
        configs[cfg.agent_id] = std::move(cfg);
    }
};

// ---------------------------------------------------------------------------
// Content-addressed summary cache

struct SummaryRecord {
    std::string cache_key; // 64-hex SHA-256 of the canonical request
    std::string agent_id;
    std::string source; // modality_id, "text", or "aggregate"
    std::string text;
    std::string created_at;
    std::string backend_fingerprint;
    std::string prompt_sha256;
};

inline nlohmann::json summary_record_to_json(const SummaryRecord& r) {
    return {{"cache_key", r.cache_key},
            {"agent_id", r.agent_id},
            {"source", r.source},
            {"text", r.text},
            {"created_at", r.created_at},
            {"backend_fingerprint", r.backend_fingerprint},
            {"prompt_sha256", r.prompt_sha256}};
}

inline SummaryRecord summary_record_from_json(const nlohmann::json& j) {
    SummaryRecord r;
    r.cache_key = j.at("cache_key").get<std::string>();
    r.agent_id = j.at("agent_id").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.created_at = j.at("created_at").get<std::string>();
    r.backend_fingerprint = j.at("backend_fingerprint").get<std::string>();
    r.prompt_sha256 = j.at("prompt_sha256").get<std::string>();
    return r;
}

inline std::string attachment_digest(const AttachmentRef& a) {
    std::error_code ec;
    if (std::filesystem::exists(a.path, ec) && !ec) {
        std::ifstream in(a.path, std::ios::binary);
        if (in) {
            std::string bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
            return detail::sha256_hex(bytes);
        }
    }
    // unreadable refs still key deterministically on the path itself
    return detail::sha256_hex("ref:" + a.path);
}

// SHA-256 of the canonical JSON of everything that shapes a generation:
// agent identity, model, sampling parameters, rendered prompt, attachments.
inline std::string compute_cache_key(const AgentConfig& cfg, const std::string& prompt,
                                     const std::vector<AttachmentRef>& attachments) {
    nlohmann::json digests = nlohmann::json::array();
    for (const auto& a : attachments) digests.push_back(attachment_digest(a));
    nlohmann::json canonical{{"agent_id", cfg.agent_id},
                             {"model_name", cfg.model_name},
                             {"temperature", cfg.temperature},
                             {"max_tokens", cfg.max_tokens},
                             {"prompt", prompt},
                             {"attachments", digests}};
    return detail::sha256_hex(canonical.dump());
}

// One JSON file per cache_key; writes are atomic (temp + rename), and since
// keys are content-addressed, concurrent writers of the same key race only
// over identical bytes.
class Cache {
public:
    explicit Cache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& dir() const { return dir_; }

    std::filesystem::path path_for(const std::string& key) const {
        return dir_ / (key + ".json");
    }

    std::optional<SummaryRecord> lookup(const std::string& key) const {
        auto path = path_for(key);
        std::error_code ec;
        if (!std::filesystem::exists(path, ec) || ec) return std::nullopt;
        auto rec = summary_record_from_json(nlohmann::json::parse(read_text_file(path)));
        if (rec.cache_key != key)
            throw ValidationError("cache file " + path.string() + " holds key " + rec.cache_key);
        return rec;
    }

    void store(const SummaryRecord& rec) const {
        write_text_file_atomic(path_for(rec.cache_key),
                               summary_record_to_json(rec).dump(2) + "\n");
    }

private:
    std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Stage execution

struct PipelineContext {
    PipelineSpec spec;
    AgentRegistry agents;
    TemplateStore templates;
    AgentClient* client = nullptr;
    Cache* cache = nullptr;
    int workers = 4;

    void validate() const {
        spec.validate();
        if (!client) throw ConfigError("pipeline context: agent client missing");
        if (!cache) throw ConfigError("pipeline context: cache missing");
        agents.get(spec.aggregator.agent_id);
        agents.get(spec.predictor_agent_id);
        if (spec.text_specialist) agents.get(spec.text_specialist->agent_id);
        for (const auto& rule : specialist_rules()) agents.get(rule.agent_id);
        if (workers < 1) throw ConfigError("pipeline context: workers must be >= 1");
    }

    const std::vector<SpecialistRule>& specialist_rules() const { return spec.specialists; }
};

namespace detail_pipeline {

inline std::string now_iso8601_utc() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string timestamp_for(const PipelineSpec& spec) {
    return spec.fixed_timestamp.empty() ? now_iso8601_utc() : spec.fixed_timestamp;
}

// Deterministic plain-text rendering of a modality payload, used both as
// template binding and as the raw prompt when a rule has no template.
inline std::string serialize_modality(const ModalityPayload& m) {
    if (m.kind == ModalityKind::image) return "[image] " + m.image_ref;
    std::string out = "[table] " + m.modality_id + "\n";
    for (const auto& row : m.table_rows) {
        out += row.name + ": " + nlohmann::json(row.value).dump();
        if (!row.unit.empty()) out += " " + row.unit;
        if (!row.taken_at.empty()) out += " (" + row.taken_at + ")";
        out += "\n";
    }
    return out;
}

// Runs one generation through the cache: hit returns the stored text with no
// backend call (after verifying the stored prompt digest), miss calls the
// backend and persists the record.
inline SummaryRecord cached_complete(const PipelineContext& ctx, const AgentConfig& cfg,
                                     const AgentRequest& req, const std::string& source) {
    std::string key = compute_cache_key(cfg, req.prompt, req.attachments);
    std::string prompt_digest = detail::sha256_hex(req.prompt);
    if (auto hit = ctx.cache->lookup(key)) {
        if (hit->prompt_sha256 != prompt_digest)
            throw ValidationError("cache entry " + key + " fails the prompt digest check");
        return *hit;
    }
    AgentResponse resp = ctx.client->complete(cfg, req);
    SummaryRecord rec;
    rec.cache_key = key;
    rec.agent_id = cfg.agent_id;
    rec.source = source;
    rec.text = resp.text;
    rec.created_at = timestamp_for(ctx.spec);
    rec.backend_fingerprint = resp.backend_fingerprint;
    rec.prompt_sha256 = prompt_digest;
    ctx.cache->store(rec);
    return rec;
}

} // namespace detail_pipeline

struct SpecialistOutput {
    std::string modality_id;
    std::string text;
    std::string cache_key;
};

// One summary per enabled non-text modality, in specialist-rule order (and
// encounter order within a rule). Every enabled modality must match exactly
// one rule.
inline std::vector<SpecialistOutput> run_specialists(const PipelineContext& ctx,
                                                     const Encounter& enc) {
    // validate the exactly-one-rule precondition over all enabled modalities
    std::vector<const SpecialistRule*> chosen(enc.modalities.size(), nullptr);
    for (std::size_t i = 0; i < enc.modalities.size(); ++i) {
        const auto& m = enc.modalities[i];
        if (!modality_enabled(ctx.spec, m)) continue;
        int matches = 0;
        for (const auto& rule : ctx.spec.specialists) {
            if (rule_matches(rule, m)) {
                ++matches;
                chosen[i] = &rule;
            }
        }
        if (matches == 0)
            throw ValidationError("encounter '" + enc.encounter_id + "': modality '" +
                                  m.modality_id + "' (" + to_string(m.kind) +
                                  ") matches no specialist rule");
        if (matches > 1)
            throw ValidationError("encounter '" + enc.encounter_id + "': modality '" +
                                  m.modality_id + "' matches " + std::to_string(matches) +
                                  " specialist rules; exactly one is required");
    }
    std::vector<SpecialistOutput> out;
    for (const auto& rule : ctx.spec.specialists) {
        for (std::size_t i = 0; i < enc.modalities.size(); ++i) {
            if (chosen[i] != &rule) continue;
            const auto& m = enc.modalities[i];
            const AgentConfig& cfg = ctx.agents.get(rule.agent_id);
            AgentRequest req;
            std::string data = detail_pipeline::serialize_modality(m);
            if (rule.template_id.empty()) {
                req.prompt = data;
            } else {
                PromptTemplate t = ctx.templates.get(rule.template_id);
                req.prompt = render_from_context(t, {{"modality_data", data}});
            }
            if (m.kind == ModalityKind::image)
                req.attachments.push_back(AttachmentRef{m.image_ref});
            try {
                auto rec = detail_pipeline::cached_complete(ctx, cfg, req, m.modality_id);
                out.push_back({m.modality_id, rec.text, rec.cache_key});
            } catch (const BackendError& e) {
                throw BackendError("specialist for modality '" + m.modality_id +
                                       "': " + e.what(),
                                   e.retryable, e.http_status);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composition

struct ComposedPart {
    std::string source; // "text" or a modality_id
    std::size_t offset = 0;
    std::size_t length = 0;

    friend bool operator==(const ComposedPart&, const ComposedPart&) = default;
};

struct ComposedInput {
    std::string m_text;
    std::vector<ComposedPart> parts; // spans tile m_text exactly
};

inline std::string encounter_text(const Encounter& enc) {
    std::string t;
    for (const auto& doc : enc.text_docs) t += doc.content;
    return t;
}

// m_text = clinical text ++ per summary: separator ++ "[SUMMARY:<id>]\n" ++
// summary. The text part always exists (possibly empty); each summary part's
// span covers its separator+header+body chunk.
inline ComposedInput compose_input(const Encounter& enc,
                                   const std::vector<SpecialistOutput>& summaries,
                                   const PipelineSpec& spec,
                                   const std::optional<std::string>& text_override = std::nullopt) {
    ComposedInput composed;
    std::string text = text_override ? *text_override : encounter_text(enc);
    composed.m_text = text;
    composed.parts.push_back({"text", 0, text.size()});
    for (const auto& s : summaries) {
        std::string chunk = spec.separator + "[SUMMARY:" + s.modality_id + "]\n" + s.text;
        composed.parts.push_back({s.modality_id, composed.m_text.size(), chunk.size()});
        composed.m_text += chunk;
    }
    return composed;
}

// Optional text-specialist stage: processes the concatenated clinical text
// into a summary that takes the place of t_i. Pass-through when unset.
inline std::optional<SummaryRecord> run_text_specialist(const PipelineContext& ctx,
                                                        const Encounter& enc) {
    if (!ctx.spec.text_specialist) return std::nullopt;
    std::string text = encounter_text(enc);
    if (text.empty()) return std::nullopt;
    const AgentConfig& cfg = ctx.agents.get(ctx.spec.text_specialist->agent_id);
    AgentRequest req;
    if (ctx.spec.text_specialist->template_id.empty()) {
        req.prompt = text;
    } else {
        PromptTemplate t = ctx.templates.get(ctx.spec.text_specialist->template_id);
        req.prompt = render_from_context(t, {{"clinical_notes", text}, {"clinical_text", text}});
    }
    return detail_pipeline::cached_complete(ctx, cfg, req, "text");
}

inline SummaryRecord aggregate(const PipelineContext& ctx, const ComposedInput& composed) {
    const AgentConfig& cfg = ctx.agents.get(ctx.spec.aggregator.agent_id);
    AgentRequest req;
    if (ctx.spec.aggregator.template_id.empty()) {
        req.prompt = composed.m_text;
    } else {
        PromptTemplate t = ctx.templates.get(ctx.spec.aggregator.template_id);
        req.prompt = render_from_context(t, {{"clinical_and_summaries", composed.m_text}});
    }
    if (req.prompt.empty())
        throw ValidationError("aggregate: empty prompt (encounter carries no content)");
    return detail_pipeline::cached_complete(ctx, cfg, req, "aggregate");
}

// ---------------------------------------------------------------------------
// Prediction

struct PredictionResult {
    std::string encounter_id;
    std::vector<Vec> logits; // per subtask
    std::vector<int> pred;   // per subtask
    std::optional<double> prob; // binary positive-class probability
};

inline PredictionResult predict(const PipelineContext& ctx, const std::string& encounter_id,
                                const std::string& aggregated_summary,
                                const FeedForwardHead& head, const TaskSpec& task) {
    const AgentConfig& cfg = ctx.agents.get(ctx.spec.predictor_agent_id);
    EmbeddingResponse emb = ctx.client->embed_last_hidden(cfg, aggregated_summary);
    if (emb.vector.size() != head.input_dim)
        throw ValidationError("predict: embedding dim " + std::to_string(emb.vector.size()) +
                              " != head input dim " + std::to_string(head.input_dim));
    LossKind kind = loss_kind_for(task.kind);
    Vec all_logits = forward(head, emb.vector);
    PredictionResult res;
    res.encounter_id = encounter_id;
    for (const auto& [offset, length] : head.subtask_slices)
        res.logits.emplace_back(all_logits.begin() + static_cast<std::ptrdiff_t>(offset),
                                all_logits.begin() + static_cast<std::ptrdiff_t>(offset + length));
    res.pred = predict_labels(head, emb.vector, kind);
    if (task.kind == TaskKind::binary) res.prob = sigmoid(all_logits[0]);
    return res;
}

// ---------------------------------------------------------------------------
// Full runs and the artifact bundle

struct EncounterArtifacts {
    std::string encounter_id;
    std::vector<SpecialistOutput> summaries;
    std::vector<std::string> summary_cache_keys; // incl. text specialist + aggregate
    ComposedInput composed;
    std::string aggregated;
    std::optional<PredictionResult> prediction;
    bool failed = false;
    std::string error;
};

struct RunOutcome {
    std::vector<EncounterArtifacts> encounters; // dataset order
    std::size_t failures = 0;
};

namespace detail_pipeline {

inline void parallel_for_indices(std::size_t n, int workers,
                                 const std::function<void(std::size_t)>& fn) {
    int pool_size = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
    if (pool_size <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(pool_size));
    for (int t = 0; t < pool_size; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lk(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace detail_pipeline

// Specialist + composition + aggregation for one encounter. Failures are
// captured in the artifact record, not thrown.
inline EncounterArtifacts summarize_encounter(const PipelineContext& ctx, const Encounter& enc) {
    EncounterArtifacts art;
    art.encounter_id = enc.encounter_id;
    try {
        art.summaries = run_specialists(ctx, enc);
        for (const auto& s : art.summaries) art.summary_cache_keys.push_back(s.cache_key);
        std::optional<std::string> text_override;
        if (auto text_rec = run_text_specialist(ctx, enc)) {
            text_override = text_rec->text;
            art.summary_cache_keys.push_back(text_rec->cache_key);
        }
        art.composed = compose_input(enc, art.summaries, ctx.spec, text_override);
        auto agg = aggregate(ctx, art.composed);
        art.aggregated = agg.text;
        art.summary_cache_keys.push_back(agg.cache_key);
    } catch (const std::exception& e) {
        art.failed = true;
        art.error = e.what();
    }
    return art;
}

struct BundlePaths {
    std::filesystem::path root;

    std::filesystem::path summaries_dir() const { return root / "summaries"; }
    std::filesystem::path composed_dir() const { return root / "composed"; }
    std::filesystem::path aggregated_dir() const { return root / "aggregated"; }
    std::filesystem::path predictions_file() const { return root / "predictions.jsonl"; }
    std::filesystem::path failures_file() const { return root / "failures.jsonl"; }

    void prepare() const {
        std::filesystem::create_directories(summaries_dir());
        std::filesystem::create_directories(composed_dir());
        std::filesystem::create_directories(aggregated_dir());
    }
};

inline nlohmann::json prediction_to_json(const PredictionResult& p) {
    nlohmann::json j{{"encounter_id", p.encounter_id}, {"logits", p.logits}, {"pred", p.pred}};
    if (p.prob) j["prob"] = *p.prob;
    return j;
}

inline PredictionResult prediction_from_json(const nlohmann::json& j) {
    PredictionResult p;
    p.encounter_id = j.at("encounter_id").get<std::string>();
    p.logits = j.at("logits").get<std::vector<Vec>>();
    p.pred = j.at("pred").get<std::vector<int>>();
    if (j.contains("prob")) p.prob = j.at("prob").get<double>();
    return p;
}

// Persists per-encounter artifacts: cache records under summaries/, the
// composed input and aggregated summary as plain text, predictions as JSONL
// in dataset order, failures (when any) likewise.
inline void write_bundle(const PipelineContext& ctx, const BundlePaths& bundle,
                         const RunOutcome& outcome) {
    bundle.prepare();
    for (const auto& art : outcome.encounters) {
        if (art.failed) continue;
        for (const auto& key : art.summary_cache_keys) {
            auto rec = ctx.cache->lookup(key);
            if (rec)
                write_text_file_atomic(bundle.summaries_dir() / (key + ".json"),
                                       summary_record_to_json(*rec).dump(2) + "\n");
        }
        write_text_file_atomic(bundle.composed_dir() / (art.encounter_id + ".txt"),
                               art.composed.m_text);
        write_text_file_atomic(bundle.aggregated_dir() / (art.encounter_id + ".txt"),
                               art.aggregated);
    }
    bool any_pred = false;
    for (const auto& art : outcome.encounters) any_pred = any_pred || art.prediction.has_value();
    if (any_pred) {
        std::string lines;
        for (const auto& art : outcome.encounters)
            if (art.prediction) lines += prediction_to_json(*art.prediction).dump() + "\n";
        write_text_file_atomic(bundle.predictions_file(), lines);
    }
    if (outcome.failures > 0) {
        std::string lines;
        for (const auto& art : outcome.encounters)
            if (art.failed)
                lines += nlohmann::json{{"encounter_id", art.encounter_id},
                                        {"error", art.error}}
                             .dump() +
                         "\n";
        write_text_file_atomic(bundle.failures_file(), lines);
    }
}

// Summarization over a dataset with the worker pool; results return in
// dataset order regardless of completion order.
inline RunOutcome run_summarize(const PipelineContext& ctx, const Dataset& dataset,
                                const BundlePaths& bundle) {
    ctx.validate();
    RunOutcome outcome;
    outcome.encounters.resize(dataset.encounters.size());
    detail_pipeline::parallel_for_indices(
        dataset.encounters.size(), ctx.workers, [&](std::size_t i) {
            outcome.encounters[i] = summarize_encounter(ctx, dataset.encounters[i]);
        });
    for (const auto& art : outcome.encounters)
        if (art.failed) ++outcome.failures;
    write_bundle(ctx, bundle, outcome);
    return outcome;
}

// Full pipeline: summarize, embed, classify. Per-encounter failures are
// collected; surviving encounters still produce predictions.
inline RunOutcome run_pipeline(const PipelineContext& ctx, const Dataset& dataset,
                               const FeedForwardHead& head, const BundlePaths& bundle) {
    ctx.validate();
    RunOutcome outcome;
    outcome.encounters.resize(dataset.encounters.size());
    detail_pipeline::parallel_for_indices(
        dataset.encounters.size(), ctx.workers, [&](std::size_t i) {
            auto art = summarize_encounter(ctx, dataset.encounters[i]);
            if (!art.failed) {
                try {
                    art.prediction = predict(ctx, art.encounter_id, art.aggregated, head,
                                             dataset.spec);
                } catch (const std::exception& e) {
                    art.failed = true;
                    art.error = e.what();
                }
            }
            outcome.encounters[i] = std::move(art);
        });
    for (const auto& art : outcome.encounters)
        if (art.failed) ++outcome.failures;
    write_bundle(ctx, bundle, outcome);
    return outcome;
}

} // namespace moma
