#pragma once

// Encounter-level data model: JSONL ingestion with validation, canonical
// serialization, temporal splitting, and the AIS-to-severity label mapping.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "moma/core.hpp"

namespace moma {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Task declaration

enum class TaskKind { binary, multiclass, multitask };

inline std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::binary: return "binary";
        case TaskKind::multiclass: return "multiclass";
        case TaskKind::multitask: return "multitask";
    }
    return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
    if (s == "binary") return TaskKind::binary;
    if (s == "multiclass") return TaskKind::multiclass;
    if (s == "multitask") return TaskKind::multitask;
    throw ConfigError("unknown task kind: " + s);
}

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::multiclass;
    // One class-name list per subtask; exactly one list unless multitask.
    std::vector<std::vector<std::string>> classes;
    // Label keys in data files. Defaults to {name} for single-subtask specs
    // and "<name>.<i>" per subtask for multitask specs.
    std::vector<std::string> subtask_names;

    std::size_t num_subtasks() const { return classes.size(); }

    void validate() const {
        if (name.empty()) throw ConfigError("task name must be nonempty");
        if (classes.empty()) throw ConfigError("task '" + name + "' declares no classes");
        switch (kind) {
            case TaskKind::binary:
                if (classes.size() != 1 || classes[0].size() != 2)
                    throw ConfigError("binary task '" + name + "' must declare exactly 2 classes");
                break;
            case TaskKind::multiclass:
                if (classes.size() != 1 || classes[0].size() < 2)
                    throw ConfigError("multiclass task '" + name +
                                      "' must declare one subtask with >= 2 classes");
                break;
            case TaskKind::multitask:
                if (classes.size() < 2)
                    throw ConfigError("multitask task '" + name + "' needs >= 2 subtasks");
                for (const auto& c : classes)
                    if (c.size() < 2)
                        throw ConfigError("multitask task '" + name +
                                          "': every subtask needs >= 2 classes");
                break;
        }
        if (subtask_names.size() != classes.size())
            throw ConfigError("task '" + name + "': subtask_names must match subtask count");
    }

    static TaskSpec make(std::string name, TaskKind kind,
                         std::vector<std::vector<std::string>> classes,
                         std::vector<std::string> subtask_names = {}) {
        TaskSpec spec;
        spec.name = std::move(name);
        spec.kind = kind;
        spec.classes = std::move(classes);
        if (subtask_names.empty()) {
            if (spec.classes.size() == 1) {
                subtask_names = {spec.name};
            } else {
                for (std::size_t i = 0; i < spec.classes.size(); ++i)
                    subtask_names.push_back(spec.name + "." + std::to_string(i));
            }
        }
        spec.subtask_names = std::move(subtask_names);
        spec.validate();
        return spec;
    }
};

// ---------------------------------------------------------------------------
// Encounter payloads

struct TextDoc {
    std::string kind;     // e.g. ed_note, radiology_report, other
    std::string content;  // may be empty

    friend bool operator==(const TextDoc&, const TextDoc&) = default;
};

struct LabRow {
    std::string name;
    double value = 0.0;
    std::string unit;
    std::string taken_at;

    friend bool operator==(const LabRow&, const LabRow&) = default;
};

enum class ModalityKind { image, table };

inline std::string to_string(ModalityKind k) {
    return k == ModalityKind::image ? "image" : "table";
}

struct ModalityPayload {
    std::string modality_id;
    ModalityKind kind = ModalityKind::image;
    std::string image_ref;           // set when kind == image
    std::vector<LabRow> table_rows;  // set when kind == table

    friend bool operator==(const ModalityPayload&, const ModalityPayload&) = default;
};

enum class Sex { female, male, other_unknown };

inline std::string to_string(Sex s) {
    switch (s) {
        case Sex::female: return "female";
        case Sex::male: return "male";
        case Sex::other_unknown: return "other/unknown";
    }
    return "?";
}

struct Demographics {
    Sex sex = Sex::other_unknown;
    std::string race = "unknown";
    std::optional<int> age;

    friend bool operator==(const Demographics&, const Demographics&) = default;
};

struct Encounter {
    std::string encounter_id;
    std::optional<Date> timestamp;
    std::vector<TextDoc> text_docs;
    std::vector<ModalityPayload> modalities;
    std::map<std::string, int> labels;  // subtask name -> class index
    Demographics demographics;

    friend bool operator==(const Encounter&, const Encounter&) = default;
};

struct Dataset {
    TaskSpec spec;
    std::vector<Encounter> encounters;

    std::size_t size() const { return encounters.size(); }
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_encounter(const Encounter& enc, const TaskSpec& spec) {
    const std::string where = "encounter '" + enc.encounter_id + "'";
    if (enc.encounter_id.empty()) throw ValidationError("encounter_id must be nonempty");
    std::set<std::string> seen_ids;
    for (const auto& m : enc.modalities) {
        if (m.modality_id.empty())
            throw ValidationError(where + ": modality_id must be nonempty");
        if (!seen_ids.insert(m.modality_id).second)
            throw ValidationError(where + ": duplicate modality_id '" + m.modality_id + "'");
        const bool has_image = !m.image_ref.empty();
        const bool has_table = !m.table_rows.empty();
        if (m.kind == ModalityKind::image && (!has_image || has_table))
            throw ValidationError(where + ": modality '" + m.modality_id +
                                  "' of kind image must set image_ref only");
        if (m.kind == ModalityKind::table && (has_image || !has_table))
            throw ValidationError(where + ": modality '" + m.modality_id +
                                  "' of kind table must set table_rows only");
        for (const auto& row : m.table_rows) {
            if (row.name.empty())
                throw ValidationError(where + ": lab row with empty name in '" + m.modality_id + "'");
            if (!std::isfinite(row.value))
                throw ValidationError(where + ": non-finite lab value for '" + row.name + "'");
        }
    }
    for (std::size_t s = 0; s < spec.num_subtasks(); ++s) {
        const std::string& key = spec.subtask_names[s];
        auto it = enc.labels.find(key);
        if (it == enc.labels.end())
            throw ValidationError(where + ": missing label for field 'labels." + key + "'");
        if (it->second < 0 || static_cast<std::size_t>(it->second) >= spec.classes[s].size())
            throw ValidationError(where + ": label index " + std::to_string(it->second) +
                                  " out of range for field 'labels." + key + "' (" +
                                  std::to_string(spec.classes[s].size()) + " classes)");
    }
    for (const auto& [key, idx] : enc.labels) {
        (void)idx;
        if (std::find(spec.subtask_names.begin(), spec.subtask_names.end(), key) ==
            spec.subtask_names.end())
            throw ValidationError(where + ": label key '" + key + "' not declared by task '" +
                                  spec.name + "'");
    }
    if (enc.demographics.age && (*enc.demographics.age < 0 || *enc.demographics.age > 130))
        throw ValidationError(where + ": field 'demographics.age' out of range [0,130]");
}

// ---------------------------------------------------------------------------
// JSON (de)serialization

inline Sex sex_from_string(const std::string& s) {
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "female" || lower == "f") return Sex::female;
    if (lower == "male" || lower == "m") return Sex::male;
    // Incomplete demographics are expected in practice; unknown values fold
    // into other/unknown instead of failing the load.
    return Sex::other_unknown;
}

inline json encounter_to_json(const Encounter& enc) {
    json j;
    j["encounter_id"] = enc.encounter_id;
    if (enc.timestamp) j["timestamp"] = enc.timestamp->to_string();
    j["text_docs"] = json::array();
    for (const auto& d : enc.text_docs) j["text_docs"].push_back({{"kind", d.kind}, {"content", d.content}});
    j["modalities"] = json::array();
    for (const auto& m : enc.modalities) {
        json jm{{"modality_id", m.modality_id}, {"kind", to_string(m.kind)}};
        if (m.kind == ModalityKind::image) {
            jm["image_ref"] = m.image_ref;
        } else {
            json rows = json::array();
            for (const auto& r : m.table_rows)
                rows.push_back({{"name", r.name}, {"value", r.value}, {"unit", r.unit}, {"taken_at", r.taken_at}});
            jm["table_rows"] = std::move(rows);
        }
        j["modalities"].push_back(std::move(jm));
    }
    j["labels"] = json::object();
    for (const auto& [k, v] : enc.labels) j["labels"][k] = v;
    json demo{{"sex", to_string(enc.demographics.sex)}, {"race", enc.demographics.race}};
    if (enc.demographics.age) demo["age"] = *enc.demographics.age;
    j["demographics"] = std::move(demo);
    return j;
}

inline Encounter encounter_from_json(const json& j, const TaskSpec& spec) {
    auto require = [&](const char* field) -> const json& {
        if (!j.contains(field))
            throw ValidationError(std::string("missing required field '") + field + "'");
        return j.at(field);
    };
    Encounter enc;
    enc.encounter_id = require("encounter_id").get<std::string>();
    const std::string where = "encounter '" + enc.encounter_id + "'";
    if (j.contains("timestamp")) {
        auto d = Date::parse(j.at("timestamp").get<std::string>());
        if (!d) throw ValidationError(where + ": field 'timestamp' is not a valid YYYY-MM-DD date");
        enc.timestamp = *d;
    } else {
        throw ValidationError(where + ": missing required field 'timestamp'");
    }
    for (const auto& jd : require("text_docs")) {
        TextDoc doc;
        doc.kind = jd.value("kind", "other");
        doc.content = jd.value("content", "");
        enc.text_docs.push_back(std::move(doc));
    }
    for (const auto& jm : require("modalities")) {
        ModalityPayload m;
        if (!jm.contains("modality_id"))
            throw ValidationError(where + ": missing required field 'modalities[].modality_id'");
        m.modality_id = jm.at("modality_id").get<std::string>();
        const std::string kind = jm.value("kind", "");
        if (kind == "image") {
            m.kind = ModalityKind::image;
        } else if (kind == "table") {
            m.kind = ModalityKind::table;
        } else {
            throw ValidationError(where + ": field 'modalities[].kind' must be image or table, got '" +
                                  kind + "'");
        }
        m.image_ref = jm.value("image_ref", "");
        if (jm.contains("table_rows")) {
            for (const auto& jr : jm.at("table_rows")) {
                LabRow row;
                if (!jr.contains("name") || !jr.contains("value"))
                    throw ValidationError(where + ": lab rows require 'name' and 'value'");
                row.name = jr.at("name").get<std::string>();
                row.value = jr.at("value").get<double>();
                row.unit = jr.value("unit", "");
                row.taken_at = jr.value("taken_at", "");
                m.table_rows.push_back(std::move(row));
            }
        }
        enc.modalities.push_back(std::move(m));
    }
    for (const auto& [key, jv] : require("labels").items()) {
        auto subtask = std::find(spec.subtask_names.begin(), spec.subtask_names.end(), key);
        if (subtask == spec.subtask_names.end())
            throw ValidationError(where + ": label key '" + key + "' not declared by task '" +
                                  spec.name + "'");
        const auto s = static_cast<std::size_t>(subtask - spec.subtask_names.begin());
        if (jv.is_number_integer()) {
            enc.labels[key] = jv.get<int>();
        } else if (jv.is_string()) {
            // String labels resolve against the declared class names at load time.
            const auto& names = spec.classes[s];
            auto it = std::find(names.begin(), names.end(), jv.get<std::string>());
            if (it == names.end())
                throw ValidationError(where + ": unknown class name '" + jv.get<std::string>() +
                                      "' for field 'labels." + key + "'");
            enc.labels[key] = static_cast<int>(it - names.begin());
        } else {
            throw ValidationError(where + ": field 'labels." + key + "' must be an int or class name");
        }
    }
    if (j.contains("demographics")) {
        const auto& jd = j.at("demographics");
        enc.demographics.sex = sex_from_string(jd.value("sex", ""));
        enc.demographics.race = jd.value("race", "unknown");
        if (jd.contains("age")) enc.demographics.age = jd.at("age").get<int>();
    }
    validate_encounter(enc, spec);
    return enc;
}

// ---------------------------------------------------------------------------
// Dataset operations

inline Dataset load_dataset_from_string(const std::string& content, const TaskSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    std::set<std::string> ids;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        std::size_t nl = content.find('\n', pos);
        std::string line = content.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? content.size() + 1 : nl + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": JSON parse error: " + e.what());
        }
        Encounter enc;
        try {
            enc = encounter_from_json(j, spec);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const json::exception& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(enc.encounter_id).second)
            throw ValidationError("line " + std::to_string(line_no) + ": duplicate encounter_id '" +
                                  enc.encounter_id + "'");
        ds.encounters.push_back(std::move(enc));
    }
    return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, const TaskSpec& spec) {
    if (!std::filesystem::exists(path)) throw ConfigError("dataset file not found: " + path.string());
    return load_dataset_from_string(read_text_file(path), spec);
}

// Canonical JSONL form: sorted keys, integer label indices, one line per
// encounter. load_dataset of this output reproduces the dataset exactly.
inline std::string serialize_dataset(const Dataset& ds) {
    std::string out;
    for (const auto& enc : ds.encounters) {
        out += encounter_to_json(enc).dump();
        out += '\n';
    }
    return out;
}

// Development half gets timestamps strictly before the cutoff; the cutoff
// date itself belongs to the test half.
inline std::pair<Dataset, Dataset> temporal_split(const Dataset& ds, const Date& cutoff) {
    Dataset dev{ds.spec, {}};
    Dataset test{ds.spec, {}};
    for (const auto& enc : ds.encounters) {
        if (!enc.timestamp)
            throw ValidationError("encounter '" + enc.encounter_id +
                                  "' has no timestamp; temporal split requires one");
        (*enc.timestamp < cutoff ? dev : test).encounters.push_back(enc);
    }
    return {std::move(dev), std::move(test)};
}

// ---------------------------------------------------------------------------
// AIS (0-6) to three-way severity class index.

inline const std::vector<std::string>& severity_class_names() {
    static const std::vector<std::string> names{"Negative", "Moderate", "Serious"};
    return names;
}

inline int map_ais_to_severity(int ais) {
    if (ais < 0 || ais > 6) throw ValidationError("AIS score out of range [0,6]: " + std::to_string(ais));
    if (ais == 0) return 0;  // Negative
    if (ais <= 2) return 1;  // Moderate
    return 2;                // Serious
}

} // namespace moma
