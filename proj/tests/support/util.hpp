#pragma once

// Shared test helpers: scratch directories and synthetic corpora.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moma/config.hpp"
#include "moma/detail/rng.hpp"
#include "moma/encounter.hpp"

namespace moma_test {

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int attempt = 0;; ++attempt) {
            auto candidate = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                                     std::to_string(counter_++) + "-" + std::to_string(attempt));
            std::error_code ec;
            if (std::filesystem::create_directories(candidate, ec) && !ec) {
                path_ = candidate;
                return;
            }
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

inline moma::TaskSpec severity_task() {
    return moma::TaskSpec::make("severity", moma::TaskKind::multiclass,
                                {moma::severity_class_names()});
}

// Synthetic corpus whose label is decodable only from the image modality:
// the image filename stem carries a per-class marker token that the
// attachment-describing mock surfaces into the summary text. Clinical notes
// are filler chosen independently of the label, and the lab table is
// constant noise. Timestamps spread across 2024 for temporal splitting.
struct CorpusSpec {
    std::size_t n = 600;
    std::uint64_t seed = 41;
    // approximate class mass for the 3 severity classes
    double p0 = 0.5;
    double p1 = 0.3;
};

inline moma::Dataset synthetic_corpus(const CorpusSpec& cs) {
    using namespace moma;
    Dataset ds;
    ds.spec = severity_task();
    static const char* fillers[3] = {
        "Patient arrived after a fall at home. Vitals stable on arrival. "
        "Denies loss of consciousness. Observation continued overnight.",
        "Transfer from outside facility following a vehicle collision. "
        "Primary survey completed. Secondary survey unremarkable.",
        "Walk-in presentation with chest wall pain. No respiratory distress. "
        "Analgesia provided and serial exams performed.",
    };
    for (std::size_t i = 0; i < cs.n; ++i) {
        Encounter enc;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "enc%05zu", i);
        enc.encounter_id = idbuf;
        // label stream independent of the filler/date streams
        double u = static_cast<double>(detail::derive_seed(cs.seed, i) >> 11) * 0x1.0p-53;
        int label = u < cs.p0 ? 0 : (u < cs.p0 + cs.p1 ? 1 : 2);
        enc.labels["severity"] = label;
        std::uint64_t f = detail::derive_seed(cs.seed + 1, i);
        enc.text_docs.push_back({"ed_note", fillers[f % 3]});
        ModalityPayload img;
        img.modality_id = "cxr";
        img.kind = ModalityKind::image;
        img.image_ref = "scans/" + enc.encounter_id + "/marker_sev" + std::to_string(label) + ".png";
        enc.modalities.push_back(std::move(img));
        ModalityPayload labs;
        labs.modality_id = "labs";
        labs.kind = ModalityKind::table;
        labs.table_rows.push_back(
            {"hematocrit", 40.0 + static_cast<double>(i % 5), "%", "2024-01-01T00:00"});
        enc.modalities.push_back(std::move(labs));
        // day capped at 28 so every month stays valid
        int doy = static_cast<int>((i * 7) % 360);
        enc.timestamp = Date{2024, 1 + doy / 30, 1 + doy % 28};
        enc.demographics.sex = (f >> 8) % 2 == 0 ? Sex::female : Sex::male;
        enc.demographics.race = (f >> 16) % 3 == 0 ? "White" : "Black or African American";
        enc.demographics.age = 20 + static_cast<int>((f >> 24) % 60);
        ds.encounters.push_back(std::move(enc));
    }
    return ds;
}

// Run configuration wiring the synthetic corpus through mock agents: the
// image specialist surfaces the filename marker, the lab specialist and
// aggregator echo their inputs, and the predictor embeds with the token-bag
// embedder so the marker token is linearly recoverable.
inline moma::RunConfig synthetic_run_config(const std::filesystem::path& root,
                                            const moma::Dataset& ds) {
    using namespace moma;
    RunConfig cfg;
    cfg.seed = 7;
    cfg.task = ds.spec;
    cfg.dataset_path = root / "corpus.jsonl";
    write_text_file(cfg.dataset_path, serialize_dataset(ds));
    cfg.cache_dir = root / "cache";
    cfg.output_dir = root / "out";
    cfg.split_cutoff = Date{2024, 10, 1};
    cfg.workers = 4;

    AgentConfig img;
    img.agent_id = "img_spec";
    img.model_name = "mock-vision";
    img.mock_behavior = "attachment_summary";
    AgentConfig lab;
    lab.agent_id = "lab_spec";
    lab.model_name = "mock-lab";
    lab.mock_behavior = "echo";
    AgentConfig agg;
    agg.agent_id = "agg";
    agg.model_name = "mock-agg";
    agg.mock_behavior = "echo";
    AgentConfig pred;
    pred.agent_id = "pred";
    pred.model_name = "mock-embed";
    pred.mock_behavior = "echo";
    pred.mock_embedder = "token_bag";
    pred.embedding_dim = 256;
    cfg.agents = {img, lab, agg, pred};

    cfg.pipeline.specialists = {{"image", "img_spec", ""}, {"table", "lab_spec", ""}};
    cfg.pipeline.aggregator = {"agg", ""};
    cfg.pipeline.predictor_agent_id = "pred";
    cfg.pipeline.fixed_timestamp = "2025-01-01T00:00:00Z";

    cfg.train.max_steps = 500;
    cfg.train.batch_size = 32;
    cfg.train.learning_rate = 0.05;
    cfg.train.seed = 7;
    cfg.train.loss_kind = LossKind::categorical_ce;
    cfg.bootstrap.replicates = 200;
    cfg.bootstrap.seed = 7;
    return cfg;
}

} // namespace moma_test
