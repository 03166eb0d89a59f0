#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <sys/wait.h>

#include "moma/orchestrator.hpp"
#include "support/util.hpp"

using namespace moma;

namespace {

// Minimal valid run configuration document: one task, two mock agents, no
// specialists. Tests mutate copies of this to probe individual fields.
nlohmann::json minimal_config_json() {
    nlohmann::json j;
    j["dataset"] = "corpus.jsonl";
    j["task"]["name"] = "severity";
    j["task"]["kind"] = "multiclass";
    j["task"]["classes"] = nlohmann::json::array({severity_class_names()});
    j["pipeline"]["aggregator"]["agent_id"] = "agg";
    j["pipeline"]["predictor_agent_id"] = "pred";
    nlohmann::json agg;
    agg["agent_id"] = "agg";
    nlohmann::json pred;
    pred["agent_id"] = "pred";
    pred["embedding_dim"] = 8;
    j["agents"] = nlohmann::json::array({agg, pred});
    return j;
}

std::string thrown_message(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "<no exception>";
}

std::map<std::string, std::string> slurp_dir(const std::filesystem::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        out[e.path().filename().string()] = read_text_file(e.path());
    return out;
}

nlohmann::json read_log(const RunConfig& cfg, const std::string& command) {
    return nlohmann::json::parse(
        read_text_file(cfg.output_dir / "logs" / (command + "_log.json")));
}

} // namespace

TEST_CASE("run config: minimal document gets documented defaults", "[orchestrator]") {
    RunConfig cfg = run_config_from_json(minimal_config_json());

    CHECK(cfg.seed == 0);
    CHECK(cfg.dataset_path == "corpus.jsonl");
    CHECK(cfg.task.name == "severity");
    CHECK(cfg.task.kind == TaskKind::multiclass);
    REQUIRE(cfg.task.subtask_names.size() == 1);
    CHECK(cfg.task.subtask_names[0] == "severity");

    CHECK(cfg.pipeline.specialists.empty());
    CHECK_FALSE(cfg.pipeline.text_specialist.has_value());
    CHECK(cfg.pipeline.aggregator.agent_id == "agg");
    CHECK(cfg.pipeline.head_id == "head");
    CHECK(cfg.pipeline.separator == "\n\n");
    CHECK(cfg.pipeline.fixed_timestamp.empty());

    REQUIRE(cfg.agents.size() == 2);
    const AgentConfig& agg = cfg.agents[0];
    CHECK(agg.backend == BackendKind::mock);
    CHECK(agg.model_name == "agg"); // defaults to the agent id
    CHECK(agg.temperature == 0.0);
    CHECK(agg.max_tokens == 512);
    CHECK(agg.max_retries == 3);
    CHECK(agg.requests_in_flight_limit == 4);
    CHECK(agg.backoff_base_s == 0.5);
    CHECK(agg.mock_behavior == "echo");
    CHECK(agg.mock_embedder == "hash");

    CHECK(cfg.train.max_steps == 4500);
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.train.learning_rate == 1e-4);
    CHECK(cfg.train.weight_decay == 0.01);
    CHECK(cfg.train.seed == 0); // inherited from the run seed
    CHECK(cfg.train.loss_kind == loss_kind_for(TaskKind::multiclass));
    CHECK(cfg.train.hidden_width == 0);

    CHECK(cfg.bootstrap.replicates == 1000);
    CHECK(cfg.bootstrap.ci_level == 0.95);
    CHECK(cfg.bootstrap.seed == 0);
    CHECK(cfg.bootstrap.max_redraws == 100);
    CHECK(cfg.bootstrap.min_subgroup_size == 10);

    CHECK(cfg.metrics.empty());
    CHECK(cfg.subgroup_axes == std::vector<std::string>{"sex", "race"});
    CHECK_FALSE(cfg.split_cutoff.has_value());
    CHECK(cfg.cache_dir == "cache");
    CHECK(cfg.output_dir == "out");
    CHECK(cfg.workers == 4);
    CHECK(cfg.transcript_path.empty());
    CHECK(cfg.templates.empty());
    CHECK(cfg.config_digest.empty());
}

TEST_CASE("run config: explicit fields override defaults", "[orchestrator]") {
    nlohmann::json j = minimal_config_json();
    j["seed"] = 42;
    j["workers"] = 2;
    j["metrics"] = {"micro_f1"};
    j["subgroup_axes"] = {"sex"};
    j["split"]["cutoff"] = "2024-10-01";
    j["cache_dir"] = "/var/cache/moma";
    j["output_dir"] = "runs/a";
    j["transcript"] = "calls.jsonl";
    j["pipeline"]["head_id"] = "severity_head";
    j["pipeline"]["separator"] = " | ";
    j["pipeline"]["fixed_timestamp"] = "2025-01-01T00:00:00Z";
    j["pipeline"]["modality_mask"] = {"image"};
    nlohmann::json rule;
    rule["match"] = "image";
    rule["agent_id"] = "agg";
    rule["template_id"] = "guideline:image_specialist";
    j["pipeline"]["specialists"] = nlohmann::json::array({rule});
    j["agents"][1]["model_name"] = "embedder-v2";
    j["agents"][1]["temperature"] = 0.3;
    j["train"]["max_steps"] = 100;
    j["train"]["loss_kind"] = "categorical_ce";
    j["bootstrap"]["replicates"] = 64;
    j["bootstrap"]["seed"] = 9;
    nlohmann::json tpl;
    tpl["template_id"] = "wrap";
    tpl["body"] = "A{{x}}B";
    j["templates"] = nlohmann::json::array({tpl});

    RunConfig cfg = run_config_from_json(j);
    CHECK(cfg.seed == 42);
    CHECK(cfg.workers == 2);
    CHECK(cfg.metrics == std::vector<std::string>{"micro_f1"});
    CHECK(cfg.subgroup_axes == std::vector<std::string>{"sex"});
    REQUIRE(cfg.split_cutoff.has_value());
    CHECK(cfg.split_cutoff->year == 2024);
    CHECK(cfg.split_cutoff->month == 10);
    CHECK(cfg.split_cutoff->day == 1);
    CHECK(cfg.cache_dir == "/var/cache/moma");
    CHECK(cfg.output_dir == "runs/a");
    CHECK(cfg.transcript_path == "calls.jsonl");
    CHECK(cfg.pipeline.head_id == "severity_head");
    CHECK(cfg.pipeline.separator == " | ");
    CHECK(cfg.pipeline.modality_mask == std::set<std::string>{"image"});
    REQUIRE(cfg.pipeline.specialists.size() == 1);
    CHECK(cfg.pipeline.specialists[0].match == "image");
    CHECK(cfg.pipeline.specialists[0].template_id == "guideline:image_specialist");
    CHECK(cfg.agents[1].model_name == "embedder-v2");
    CHECK(cfg.agents[1].temperature == 0.3);
    CHECK(cfg.train.max_steps == 100);
    // train seed falls back to the run seed, bootstrap seed was explicit
    CHECK(cfg.train.seed == 42);
    CHECK(cfg.bootstrap.seed == 9);
    CHECK(cfg.bootstrap.replicates == 64);
    REQUIRE(cfg.templates.size() == 1);
    CHECK(cfg.templates[0].template_id == "wrap");
    CHECK(cfg.templates[0].required_placeholders == std::set<std::string>{"x"});
}

TEST_CASE("run config: errors name the offending field", "[orchestrator]") {
    auto drop = [](const std::string& key) {
        nlohmann::json j = minimal_config_json();
        j.erase(key);
        return j;
    };
    CHECK_THROWS_WITH(run_config_from_json(drop("dataset")),
                      "config: missing required field 'dataset'");
    CHECK_THROWS_WITH(run_config_from_json(drop("task")),
                      "config: missing required field 'task'");
    CHECK_THROWS_WITH(run_config_from_json(drop("pipeline")),
                      "config: missing required field 'pipeline'");
    CHECK_THROWS_WITH(run_config_from_json(drop("agents")),
                      "config: missing required field 'agents'");
    CHECK_THROWS_AS(run_config_from_json(drop("dataset")), ConfigError);

    nlohmann::json j = minimal_config_json();
    j["dataset"] = 5;
    CHECK_THROWS_WITH(run_config_from_json(j),
                      Catch::Matchers::ContainsSubstring(
                          "config: field 'dataset' has the wrong type"));

    j = minimal_config_json();
    j["task"].erase("name");
    CHECK_THROWS_WITH(run_config_from_json(j), "task: missing required field 'name'");

    j = minimal_config_json();
    j["pipeline"].erase("predictor_agent_id");
    CHECK_THROWS_WITH(run_config_from_json(j),
                      "pipeline: missing required field 'predictor_agent_id'");

    j = minimal_config_json();
    j["pipeline"].erase("aggregator");
    CHECK_THROWS_WITH(run_config_from_json(j),
                      "aggregator: missing required field 'agent_id'");

    j = minimal_config_json();
    nlohmann::json rule;
    rule["agent_id"] = "agg";
    j["pipeline"]["specialists"] = nlohmann::json::array({rule});
    CHECK_THROWS_WITH(run_config_from_json(j),
                      "specialist rule: missing required field 'match'");

    j = minimal_config_json();
    j["agents"][0]["backend"] = "llama";
    CHECK_THROWS_WITH(run_config_from_json(j),
                      "agent 'agg': backend must be 'mock' or 'remote', got 'llama'");

    j = minimal_config_json();
    j["split"] = nlohmann::json::object();
    CHECK_THROWS_WITH(run_config_from_json(j), "split: missing required field 'cutoff'");

    j = minimal_config_json();
    j["workers"] = 0;
    CHECK_THROWS_WITH(run_config_from_json(j), "config: workers must be >= 1");

    // dangling agent reference is caught by whole-config validation
    j = minimal_config_json();
    j["pipeline"]["predictor_agent_id"] = "ghost";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    CHECK_THROWS_WITH(run_config_from_json(j),
                      Catch::Matchers::ContainsSubstring("ghost"));

    // a remote agent must carry an endpoint
    j = minimal_config_json();
    j["agents"][0]["backend"] = "remote";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    CHECK_THROWS_WITH(run_config_from_json(j),
                      Catch::Matchers::ContainsSubstring("endpoint_url"));
}

TEST_CASE("run config: relative paths resolve against the config directory",
          "[orchestrator]") {
    nlohmann::json j = minimal_config_json();
    j["cache_dir"] = "c";
    j["output_dir"] = "/abs/out";
    RunConfig cfg = run_config_from_json(j, "/etc/moma");
    CHECK(cfg.dataset_path == std::filesystem::path("/etc/moma/corpus.jsonl"));
    CHECK(cfg.cache_dir == std::filesystem::path("/etc/moma/c"));
    CHECK(cfg.output_dir == std::filesystem::path("/abs/out")); // absolute wins

    // without a base directory paths pass through untouched
    RunConfig bare = run_config_from_json(j);
    CHECK(bare.dataset_path == std::filesystem::path("corpus.jsonl"));
}

TEST_CASE("run config: template files load through the front-matter format",
          "[orchestrator]") {
    moma_test::TempDir tmp("config-tpl");
    write_text_file(tmp / "wrap.tpl",
                    "---\ntemplate_id: wrap\nplaceholders: x\n---\nA{{x}}B");
    nlohmann::json j = minimal_config_json();
    nlohmann::json tpl;
    tpl["file"] = "wrap.tpl";
    j["templates"] = nlohmann::json::array({tpl});

    RunConfig cfg = run_config_from_json(j, tmp.path());
    REQUIRE(cfg.templates.size() == 1);
    CHECK(cfg.templates[0].template_id == "wrap");
    CHECK(cfg.templates[0].body == "A{{x}}B");

    // declared/body mismatch in the file surfaces as a template error
    write_text_file(tmp / "bad.tpl",
                    "---\ntemplate_id: bad\nplaceholders: x, y\n---\nA{{x}}B");
    tpl["file"] = "bad.tpl";
    j["templates"] = nlohmann::json::array({tpl});
    CHECK_THROWS_AS(run_config_from_json(j, tmp.path()), TemplateError);
}

TEST_CASE("load_run_config: digest, path resolution, parse failures", "[orchestrator]") {
    moma_test::TempDir tmp("config-load");
    nlohmann::json j = minimal_config_json();
    std::string content = j.dump(2) + "\n";
    write_text_file(tmp / "run.json", content);

    RunConfig cfg = load_run_config(tmp / "run.json");
    CHECK(cfg.dataset_path == tmp.path() / "corpus.jsonl");
    CHECK(cfg.cache_dir == tmp.path() / "cache");
    CHECK(cfg.output_dir == tmp.path() / "out");
    CHECK(cfg.config_digest == detail::sha256_hex(content));

    write_text_file(tmp / "broken.json", "{nope");
    CHECK_THROWS_AS(load_run_config(tmp / "broken.json"), ConfigError);
    CHECK_THROWS_WITH(load_run_config(tmp / "broken.json"),
                      Catch::Matchers::ContainsSubstring("invalid JSON"));

    CHECK_THROWS_AS(load_run_config(tmp / "missing.json"), ConfigError);
}

TEST_CASE("head checkpoint path and split helpers", "[orchestrator]") {
    RunConfig cfg;
    cfg.output_dir = "runs/x";
    CHECK(detail_orchestrator::head_checkpoint_path(cfg) ==
          std::filesystem::path("runs/x/head.json"));
    cfg.pipeline.head_id = "mortality_head";
    CHECK(detail_orchestrator::head_checkpoint_path(cfg) ==
          std::filesystem::path("runs/x/mortality_head.json"));

    // no cutoff: both sides see the whole dataset
    auto ds = moma_test::synthetic_corpus({.n = 8});
    CHECK(detail_orchestrator::dev_split(ds, std::nullopt).encounters.size() == 8);
    CHECK(detail_orchestrator::test_split(ds, std::nullopt).encounters.size() == 8);
    auto dev = detail_orchestrator::dev_split(ds, Date{2024, 2, 1});
    auto test = detail_orchestrator::test_split(ds, Date{2024, 2, 1});
    CHECK(dev.encounters.size() + test.encounters.size() == 8);
}

TEST_CASE("ablated_config: suffixed output, shared cache, masked pipeline",
          "[orchestrator]") {
    auto ds = moma_test::synthetic_corpus({.n = 4});
    moma_test::TempDir tmp("ablate-cfg");
    RunConfig cfg = moma_test::synthetic_run_config(tmp.path(), ds);

    RunConfig ab = ablated_config(cfg, "image");
    CHECK(ab.output_dir == std::filesystem::path(cfg.output_dir.string() + "-ablated"));
    CHECK(ab.cache_dir == cfg.cache_dir);
    CHECK(ab.pipeline.modality_mask.count("image") == 0);
    CHECK(ab.pipeline.modality_mask.count("table") == 1);
    // the source config keeps its mask
    CHECK(cfg.pipeline.modality_mask.count("image") == 1);

    CHECK_THROWS_AS(ablated_config(cfg, "audio"), ConfigError);
}

TEST_CASE("load_predictions: JSONL parsing and line-accurate errors", "[orchestrator]") {
    moma_test::TempDir tmp("preds");
    PredictionResult a;
    a.encounter_id = "enc0";
    a.logits = {{0.2, -0.1, 0.05}};
    a.pred = {0};
    PredictionResult b = a;
    b.encounter_id = "enc1";
    b.pred = {2};
    b.prob = 0.75;

    auto path = tmp / "predictions.jsonl";
    write_text_file(path, prediction_to_json(a).dump() + "\n\n" +
                              prediction_to_json(b).dump() + "\n");
    auto preds = load_predictions(path);
    REQUIRE(preds.size() == 2); // blank line skipped
    CHECK(preds[0].encounter_id == "enc0");
    CHECK(preds[1].encounter_id == "enc1");
    CHECK(preds[1].pred == std::vector<int>{2});
    REQUIRE(preds[1].prob.has_value());
    CHECK(*preds[1].prob == 0.75);

    write_text_file(path, prediction_to_json(a).dump() + "\n{not json\n");
    CHECK_THROWS_AS(load_predictions(path), ValidationError);
    CHECK_THROWS_WITH(load_predictions(path),
                      Catch::Matchers::ContainsSubstring(path.string() + ":2:"));

    auto missing = tmp / "nowhere.jsonl";
    std::string msg = thrown_message([&] { (void)load_predictions(missing); });
    CHECK(msg.find("missing prerequisite: predictions file") != std::string::npos);
    CHECK(msg.find("(run `moma predict` first)") != std::string::npos);
}

TEST_CASE("build_eval_input: joins predictions with labels and demographics",
          "[orchestrator]") {
    Dataset ds;
    ds.spec = moma_test::severity_task();
    for (int i = 0; i < 3; ++i) {
        Encounter enc;
        enc.encounter_id = "enc" + std::to_string(i);
        enc.labels["severity"] = i;
        enc.demographics.sex = i == 1 ? Sex::female : Sex::male;
        ds.encounters.push_back(std::move(enc));
    }
    PredictionResult p2;
    p2.encounter_id = "enc2";
    p2.logits = {{0.5, -0.2, 1.0}};
    p2.pred = {2};
    PredictionResult p0 = p2;
    p0.encounter_id = "enc0";
    p0.pred = {0};

    // rows follow prediction order, not dataset order
    EvalInput in = build_eval_input(ds, {p2, p0});
    REQUIRE(in.size() == 2);
    CHECK(in.encounter_ids == std::vector<std::string>{"enc2", "enc0"});
    CHECK(in.labels[0] == std::vector<int>{2});
    CHECK(in.labels[1] == std::vector<int>{0});
    CHECK(in.preds[0] == std::vector<int>{2});
    CHECK(in.demographics[1].sex == Sex::male);
    // multiclass probabilities are the softmax of the stored logits
    Vec expected = softmax({0.5, -0.2, 1.0});
    for (std::size_t k = 0; k < 3; ++k)
        CHECK(in.probs[0][0][k] == Catch::Approx(expected[k]).margin(1e-15));

    PredictionResult ghost = p0;
    ghost.encounter_id = "nobody";
    CHECK_THROWS_WITH(build_eval_input(ds, {ghost}),
                      "predictions reference unknown encounter 'nobody'");

    PredictionResult lopsided = p0;
    lopsided.logits.push_back({0.0});
    CHECK_THROWS_WITH(build_eval_input(ds, {lopsided}),
                      "prediction for 'enc0' has wrong subtask count");

    // binary tasks expand the single logit into a two-column distribution
    Dataset bin;
    bin.spec = TaskSpec::make("mortality", TaskKind::binary, {{"alive", "dead"}});
    Encounter enc;
    enc.encounter_id = "enc0";
    enc.labels["mortality"] = 1;
    bin.encounters.push_back(enc);
    PredictionResult bp;
    bp.encounter_id = "enc0";
    bp.logits = {{0.3}};
    bp.pred = {1};
    EvalInput bin_in = build_eval_input(bin, {bp});
    double sig = sigmoid(0.3);
    CHECK(bin_in.probs[0][0][0] == Catch::Approx(1.0 - sig).margin(1e-15));
    CHECK(bin_in.probs[0][0][1] == Catch::Approx(sig).margin(1e-15));
}

TEST_CASE("command flow: summarize, train, predict, evaluate, ablate",
          "[orchestrator][flow]") {
    moma_test::TempDir tmp("orch-flow");
    auto ds = moma_test::synthetic_corpus({.n = 60});
    RunConfig cfg = moma_test::synthetic_run_config(tmp.path(), ds);
    cfg.transcript_path = (tmp / "transcript.jsonl").string();
    // micro/macro F1 stay defined for any label draw, so the flow is
    // deterministic regardless of which classes land on the test side
    cfg.metrics = {"micro_f1", "macro_f1"};
    // serial execution makes backend call counts exact: concurrent encounters
    // sharing a cache key would otherwise race to fill it
    cfg.workers = 1;

    auto [dev, test] = temporal_split(ds, *cfg.split_cutoff);
    const std::size_t n_dev = dev.encounters.size();
    const std::size_t n_test = test.encounters.size();
    REQUIRE(n_dev > 0);
    REQUIRE(n_test > 0);
    REQUIRE(n_dev + n_test == 60);

    // ---- summarize -------------------------------------------------------
    REQUIRE(cmd_summarize(cfg) == 0);
    BundlePaths bundle{cfg.output_dir};
    auto aggregated = slurp_dir(bundle.aggregated_dir());
    CHECK(aggregated.size() == 60);
    CHECK(aggregated.count("enc00000.txt") == 1);
    // the vision mock surfaced the filename marker into the summary
    CHECK(aggregated.at("enc00000.txt").find("Observed marker: marker_sev") !=
          std::string::npos);

    nlohmann::json slog = read_log(cfg, "summarize");
    CHECK(slog.at("command") == "summarize");
    CHECK(slog.at("config_digest") == "unconfigured"); // built in memory, not from a file
    CHECK(slog.at("version") == version_string());
    CHECK(slog.at("seed") == 7);
    // Image prompts embed the per-encounter file path, so each costs a call.
    // The lab table only takes five distinct serializations and the cache
    // dedupes the rest. The aggregator echoes its prompt verbatim, so the
    // number of distinct aggregated bodies equals its number of cache misses.
    std::set<std::string> distinct_bodies;
    for (const auto& [name, body] : aggregated) distinct_bodies.insert(body);
    CHECK(slog.at("backend_calls") == 60 + 5 + distinct_bodies.size());
    CHECK(slog.at("embedding_calls") == 0);
    CHECK(slog.at("n_encounters") == 60);
    CHECK(slog.at("failures") == 0);
    CHECK(std::filesystem::file_size(cfg.transcript_path) > 0);

    // ---- train -----------------------------------------------------------
    REQUIRE(cmd_train(cfg) == 0);
    auto ckpt_path = detail_orchestrator::head_checkpoint_path(cfg);
    REQUIRE(std::filesystem::exists(ckpt_path));
    nlohmann::json ckpt = nlohmann::json::parse(read_text_file(ckpt_path));
    CHECK(ckpt.at("task_name") == "severity");
    CHECK(ckpt.at("embedding_agent") == "pred");

    nlohmann::json tlog = read_log(cfg, "train");
    CHECK(tlog.at("command") == "train");
    CHECK(tlog.at("n_train") == n_dev);
    CHECK(tlog.at("backend_calls") == 0); // embeddings only
    CHECK(tlog.at("embedding_calls") == n_dev);
    nlohmann::json history =
        nlohmann::json::parse(read_text_file(cfg.output_dir / "loss_history.json"));
    REQUIRE(history.is_array());
    REQUIRE(history.size() > 0);
    CHECK(tlog.at("steps") == history.size());
    CHECK(tlog.at("final_loss") == history.back());
    // the image marker determines the label, so the head should fit well
    CHECK(history.back().get<double>() < 1.0);

    // ---- predict ---------------------------------------------------------
    REQUIRE(cmd_predict(cfg) == 0);
    auto preds = load_predictions(bundle.predictions_file());
    REQUIRE(preds.size() == n_test);
    for (std::size_t i = 0; i < n_test; ++i)
        CHECK(preds[i].encounter_id == test.encounters[i].encounter_id);

    nlohmann::json plog = read_log(cfg, "predict");
    CHECK(plog.at("n_test") == n_test);
    CHECK(plog.at("backend_calls") == 0); // summaries all came from cache
    CHECK(plog.at("embedding_calls") == n_test);
    CHECK(plog.at("failures") == 0);

    // ---- evaluate --------------------------------------------------------
    REQUIRE(cmd_evaluate(cfg) == 0);
    nlohmann::json report =
        nlohmann::json::parse(read_text_file(cfg.output_dir / "report.json"));
    CHECK(report.at("task") == "severity");
    CHECK(report.at("n_encounters") == n_test);
    const auto& overall = report.at("subtasks").at(0).at("overall");
    REQUIRE(overall.contains("micro_f1"));
    double micro = overall.at("micro_f1").at("point").get<double>();
    CHECK(micro >= 0.8); // markers make the test side nearly separable
    CHECK(overall.at("micro_f1").contains("cell"));
    std::string text_report = read_text_file(cfg.output_dir / "report.txt");
    CHECK(text_report.find("task: severity  (n=" + std::to_string(n_test) + ")") !=
          std::string::npos);

    nlohmann::json elog = read_log(cfg, "evaluate");
    CHECK(elog.at("n_evaluated") == n_test);
    CHECK(elog.at("metrics") == nlohmann::json(cfg.metrics));
    CHECK(elog.at("backend_calls") == 0);
    CHECK(elog.at("embedding_calls") == 0);

    // ---- rerun hits the cache and reproduces the artifacts ---------------
    REQUIRE(cmd_summarize(cfg) == 0);
    CHECK(read_log(cfg, "summarize").at("backend_calls") == 0);
    CHECK(slurp_dir(bundle.aggregated_dir()) == aggregated);

    // ---- prerequisites are enforced per output directory ------------------
    RunConfig fresh = cfg;
    fresh.output_dir = tmp / "out-fresh";
    std::string msg = thrown_message([&] { (void)cmd_train(fresh); });
    CHECK(msg.find("missing prerequisite: aggregated summary") != std::string::npos);
    CHECK(msg.find("(run `moma summarize` first)") != std::string::npos);
    msg = thrown_message([&] { (void)cmd_predict(fresh); });
    CHECK(msg.find("missing prerequisite: head checkpoint") != std::string::npos);
    CHECK(msg.find("(run `moma train` first)") != std::string::npos);
    msg = thrown_message([&] { (void)cmd_evaluate(fresh); });
    CHECK(msg.find("(run `moma predict` first)") != std::string::npos);

    // ---- degenerate splits fail loudly ------------------------------------
    RunConfig all_test = cfg;
    all_test.split_cutoff = Date{2000, 1, 1}; // nothing lands on the dev side
    CHECK_THROWS_WITH(cmd_train(all_test),
                      "train: no encounters on the development side of the split");
    RunConfig all_dev = cfg; // head exists, so predict reaches the split check
    all_dev.split_cutoff = Date{2030, 1, 1};
    CHECK_THROWS_WITH(cmd_predict(all_dev),
                      "predict: no encounters on the test side of the split");

    // ---- ablate chains the full flow under <out>-ablated -------------------
    std::string report_before = read_text_file(cfg.output_dir / "report.json");
    REQUIRE(cmd_ablate(cfg, "image") == 0);
    RunConfig ab = ablated_config(cfg, "image");
    REQUIRE(std::filesystem::exists(ab.output_dir / "report.json"));
    // dropping images removes the marker text from every ablated summary
    auto ab_aggregated = slurp_dir(BundlePaths{ab.output_dir}.aggregated_dir());
    CHECK(ab_aggregated.size() == 60);
    for (const auto& [name, body] : ab_aggregated)
        CHECK(body.find("Observed marker") == std::string::npos);
    // table summaries were already cached; only aggregation calls out again
    std::set<std::string> ab_bodies;
    for (const auto& [name, body] : ab_aggregated) ab_bodies.insert(body);
    CHECK(read_log(ab, "summarize").at("backend_calls") == ab_bodies.size());
    // the primary run's artifacts are untouched
    CHECK(read_text_file(cfg.output_dir / "report.json") == report_before);

    CHECK_THROWS_AS(cmd_ablate(cfg, "audio"), ConfigError);
}

#ifndef MOMA_CLI_BIN
#define MOMA_CLI_BIN ""
#endif

namespace {

int run_cli(const std::string& args, const std::filesystem::path& capture) {
    std::string cmd = std::string("'") + MOMA_CLI_BIN + "' " + args + " >'" +
                      capture.string() + "' 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status >= 0);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("cli: exit codes separate config errors from run failures",
          "[orchestrator][cli]") {
    std::string bin = MOMA_CLI_BIN;
    if (bin.empty() || !std::filesystem::exists(bin)) {
        WARN("CLI binary not built; skipping CLI exit-code checks");
        return;
    }
    moma_test::TempDir tmp("cli");
    auto capture = tmp / "capture.txt";

    CHECK(run_cli("--version", capture) == 0);
    CHECK(!read_text_file(capture).empty());

    // parse-level failures come from the argument parser, not our mapping
    CHECK(run_cli("", capture) != 0);                        // subcommand required
    CHECK(run_cli("summarize --config /does/not/exist.json", capture) != 0);

    // config errors map to 2
    write_text_file(tmp / "broken.json", "{nope");
    CHECK(run_cli("summarize --config '" + (tmp / "broken.json").string() + "'",
                  capture) == 2);
    CHECK(read_text_file(capture).find("config error:") != std::string::npos);

    nlohmann::json dangling = minimal_config_json();
    dangling["pipeline"]["predictor_agent_id"] = "ghost";
    write_text_file(tmp / "dangling.json", dangling.dump(2) + "\n");
    CHECK(run_cli("summarize --config '" + (tmp / "dangling.json").string() + "'",
                  capture) == 2);

    // a real corpus and config for the happy path
    auto ds = moma_test::synthetic_corpus({.n = 6});
    write_text_file(tmp / "corpus.jsonl", serialize_dataset(ds));
    nlohmann::json j;
    j["seed"] = 7;
    j["dataset"] = "corpus.jsonl";
    j["task"]["name"] = "severity";
    j["task"]["kind"] = "multiclass";
    j["task"]["classes"] = nlohmann::json::array({severity_class_names()});
    nlohmann::json img, lab;
    img["match"] = "image";
    img["agent_id"] = "img_spec";
    lab["match"] = "table";
    lab["agent_id"] = "lab_spec";
    j["pipeline"]["specialists"] = nlohmann::json::array({img, lab});
    j["pipeline"]["aggregator"]["agent_id"] = "agg";
    j["pipeline"]["predictor_agent_id"] = "pred";
    j["pipeline"]["fixed_timestamp"] = "2025-01-01T00:00:00Z";
    nlohmann::json a1, a2, a3, a4;
    a1["agent_id"] = "img_spec";
    a1["mock_behavior"] = "attachment_summary";
    a2["agent_id"] = "lab_spec";
    a3["agent_id"] = "agg";
    a4["agent_id"] = "pred";
    a4["mock_embedder"] = "token_bag";
    a4["embedding_dim"] = 64;
    j["agents"] = nlohmann::json::array({a1, a2, a3, a4});
    j["train"]["max_steps"] = 50;
    j["train"]["batch_size"] = 4;
    j["train"]["learning_rate"] = 0.05;
    j["bootstrap"]["replicates"] = 50;
    j["metrics"] = {"micro_f1"};
    j["subgroup_axes"] = nlohmann::json::array();
    j["workers"] = 2;
    std::string config_text = j.dump(2) + "\n";
    write_text_file(tmp / "run.json", config_text);
    std::string cfg_arg = " --config '" + (tmp / "run.json").string() + "'";

    // running stages out of order is a run failure, not a config error
    CHECK(run_cli("train" + cfg_arg, capture) == 1);
    CHECK(read_text_file(capture).find("missing prerequisite") != std::string::npos);

    CHECK(run_cli("summarize" + cfg_arg, capture) == 0);
    CHECK(run_cli("train" + cfg_arg, capture) == 0);
    CHECK(run_cli("predict" + cfg_arg, capture) == 0);
    CHECK(run_cli("evaluate" + cfg_arg, capture) == 0);
    REQUIRE(std::filesystem::exists(tmp / "out/report.txt"));

    // run logs carry the digest of the exact config bytes
    nlohmann::json slog =
        nlohmann::json::parse(read_text_file(tmp / "out/logs/summarize_log.json"));
    CHECK(slog.at("config_digest") == detail::sha256_hex(config_text));

    // --out redirects the bundle without touching the config file
    CHECK(run_cli("summarize" + cfg_arg + " --out '" + (tmp / "alt").string() + "'",
                  capture) == 0);
    CHECK(std::filesystem::exists(tmp / "alt/logs/summarize_log.json"));

    // ablate validates its --drop argument through the same config mapping
    CHECK(run_cli("ablate" + cfg_arg + " --drop audio", capture) == 2);
    CHECK(run_cli("ablate" + cfg_arg, capture) != 0); // --drop is required
}
