#pragma once

// Prompt templates with {{placeholder}} substitution, guideline-driven
// template builders for the three agent roles, and file loading with a
// small front-matter header. Substitution is single-pass: bound values are
// inserted literally and never re-expanded.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "moma/core.hpp"

namespace moma {

class TemplateError : public Error {
public:
    explicit TemplateError(const std::string& msg) : Error(msg) {}
};

struct PromptTemplate {
    std::string template_id;
    std::string body;
    std::set<std::string> required_placeholders;

    friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

namespace detail_prompt {

inline bool placeholder_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Finds the next "{{name}}" marker at or after `from`. Returns npos when none.
inline std::size_t find_marker(const std::string& body, std::size_t from, std::string& name,
                               std::size_t& marker_len) {
    for (std::size_t at = body.find("{{", from); at != std::string::npos;
         at = body.find("{{", at + 1)) {
        std::size_t p = at + 2;
        std::size_t start = p;
        while (p < body.size() && placeholder_char(body[p])) ++p;
        if (p > start && p + 1 < body.size() && body[p] == '}' && body[p + 1] == '}') {
            name = body.substr(start, p - start);
            marker_len = p + 2 - at;
            return at;
        }
    }
    return std::string::npos;
}

} // namespace detail_prompt

inline std::set<std::string> scan_placeholders(const std::string& body) {
    std::set<std::string> names;
    std::string name;
    std::size_t len = 0;
    for (std::size_t at = detail_prompt::find_marker(body, 0, name, len); at != std::string::npos;
         at = detail_prompt::find_marker(body, at + len, name, len))
        names.insert(name);
    return names;
}

// Placeholder set is derived from the body, so the marker/name invariant
// holds by construction.
inline PromptTemplate make_template(std::string template_id, std::string body) {
    PromptTemplate t;
    t.template_id = std::move(template_id);
    t.required_placeholders = scan_placeholders(body);
    t.body = std::move(body);
    return t;
}

inline PromptTemplate make_template_checked(std::string template_id, std::string body,
                                            const std::set<std::string>& declared) {
    auto scanned = scan_placeholders(body);
    if (scanned != declared) {
        std::string msg = "template '" + template_id + "': declared placeholders {";
        for (const auto& n : declared) msg += n + ",";
        msg += "} do not match body markers {";
        for (const auto& n : scanned) msg += n + ",";
        msg += "}";
        throw TemplateError(msg);
    }
    PromptTemplate t;
    t.template_id = std::move(template_id);
    t.body = std::move(body);
    t.required_placeholders = scanned;
    return t;
}

// Byte-exact single-pass substitution. Bindings must cover the required
// placeholders exactly; values containing "{{...}}" stay literal.
inline std::string render(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& bindings) {
    for (const auto& [name, value] : bindings) {
        (void)value;
        if (!tmpl.required_placeholders.count(name))
            throw TemplateError("template '" + tmpl.template_id + "': extra binding '" + name + "'");
    }
    std::string out;
    out.reserve(tmpl.body.size());
    std::size_t pos = 0;
    std::string name;
    std::size_t len = 0;
    for (std::size_t at = detail_prompt::find_marker(tmpl.body, pos, name, len);
         at != std::string::npos; at = detail_prompt::find_marker(tmpl.body, pos, name, len)) {
        out.append(tmpl.body, pos, at - pos);
        auto it = bindings.find(name);
        if (it == bindings.end())
            throw TemplateError("template '" + tmpl.template_id + "': missing binding '" + name + "'");
        out += it->second;
        pos = at + len;
    }
    out.append(tmpl.body, pos, std::string::npos);
    return out;
}

// Renders using a context superset: exactly the required placeholders are
// pulled from `context`, extra context keys are ignored.
inline std::string render_from_context(const PromptTemplate& tmpl,
                                       const std::map<std::string, std::string>& context) {
    std::map<std::string, std::string> bindings;
    for (const auto& name : tmpl.required_placeholders) {
        auto it = context.find(name);
        if (it == context.end())
            throw TemplateError("template '" + tmpl.template_id +
                                "': no context value for placeholder '" + name + "'");
        bindings[name] = it->second;
    }
    return render(tmpl, bindings);
}

// ---------------------------------------------------------------------------
// Guideline-driven builders

enum class AgentRole { text_specialist, nontext_specialist, aggregator };

inline std::string to_string(AgentRole r) {
    switch (r) {
        case AgentRole::text_specialist: return "text_specialist";
        case AgentRole::nontext_specialist: return "nontext_specialist";
        case AgentRole::aggregator: return "aggregator";
    }
    return "?";
}

inline std::size_t required_step_count(AgentRole r) {
    switch (r) {
        case AgentRole::text_specialist: return 6;
        case AgentRole::nontext_specialist: return 3;
        case AgentRole::aggregator: return 4;
    }
    return 0;
}

struct GuidelineStep {
    std::string title;
    std::string instruction;
};

struct GuidelineSpec {
    AgentRole role = AgentRole::text_specialist;
    std::vector<GuidelineStep> steps;
};

// Canonical step lists for each role.
inline GuidelineSpec default_guideline(AgentRole role) {
    GuidelineSpec spec;
    spec.role = role;
    switch (role) {
        case AgentRole::text_specialist:
            spec.steps = {
                {"Identify Relevant Points",
                 "Read the entire note carefully and highlight any direct mentions related to the "
                 "primary focus."},
                {"Apply Specified Criteria",
                 "Compare the details you noted against the stated thresholds or findings."},
                {"Incorporate Additional Patient Attributes",
                 "Look for coexisting conditions or factors that might explain or overlap with the "
                 "primary findings."},
                {"Maintain Clarity and Flow",
                 "Present the findings as one coherent summary: definitive evidence first, then "
                 "borderline or uncertain items, then confounders."},
                {"Professional Language and Confidentiality",
                 "Use objective, clinical terminology. Omit Protected Health Information (PHI) and "
                 "avoid speculation."},
                {"Final Structured Review",
                 "Conclude with a succinct overview of confirmed evidence, partial or absent "
                 "findings, and relevant confounders. If no direct evidence is found, explicitly "
                 "state that no direct evidence is found."},
            };
            break;
        case AgentRole::nontext_specialist:
            spec.steps = {
                {"Identify Relevant Indicators",
                 "Scan for direct measures relevant to the outcome and key values linked to the "
                 "condition under review."},
                {"Evaluate Indirect Evidence",
                 "Check secondary or indirect measures and note whether they indirectly suggest "
                 "the issue at hand."},
                {"Summarize Concisely",
                 "Create a short, clear overview highlighting the most pertinent findings. Stay "
                 "professional and exclude unnecessary speculation."},
            };
            break;
        case AgentRole::aggregator:
            spec.steps = {
                {"Gather Key Points from Agent-Generated Summaries",
                 "Collect all relevant findings from each summary, such as clinical observations, "
                 "lab findings, or imaging results."},
                {"Handle Contradicted Information",
                 "If the reports contradict each other, do not let automatically generated "
                 "information overwrite established confirmed evidence."},
                {"Exclude Confounding Information",
                 "Exclude any details that have an alternative cause not relevant to the goal."},
                {"Create a Unified Summary",
                 "Generate a comprehensive summary integrating the agent-generated reports from "
                 "all modalities for the prediction task."},
            };
            break;
    }
    return spec;
}

inline std::string input_placeholder_for(AgentRole role) {
    switch (role) {
        case AgentRole::text_specialist: return "clinical_text";
        case AgentRole::nontext_specialist: return "modality_data";
        case AgentRole::aggregator: return "clinical_and_summaries";
    }
    return "input";
}

// Builds a role prompt whose sections follow the guideline step order.
// Recognized task_context keys: "role_description", "task", "criteria".
// Specialist roles always get an explicit PHI-exclusion sentence.
inline PromptTemplate build_from_guideline(const GuidelineSpec& spec,
                                           const std::map<std::string, std::string>& task_context) {
    if (spec.steps.size() != required_step_count(spec.role))
        throw TemplateError("guideline for role " + to_string(spec.role) + " must have " +
                            std::to_string(required_step_count(spec.role)) + " steps, got " +
                            std::to_string(spec.steps.size()));
    std::string body;
    auto ctx = [&](const char* key) {
        auto it = task_context.find(key);
        return it == task_context.end() ? std::string() : it->second;
    };
    if (auto role_desc = ctx("role_description"); !role_desc.empty())
        body += "You are " + role_desc + ".\n";
    if (auto task = ctx("task"); !task.empty()) body += "Task: " + task + "\n";
    if (auto criteria = ctx("criteria"); !criteria.empty()) body += "Criteria: " + criteria + "\n";
    body += "\nFollow these steps to complete the task:\n";
    for (std::size_t i = 0; i < spec.steps.size(); ++i) {
        body += "\n" + std::to_string(i + 1) + ". " + spec.steps[i].title + "\n";
        if (!spec.steps[i].instruction.empty()) body += "   " + spec.steps[i].instruction + "\n";
    }
    if (spec.role != AgentRole::aggregator)
        body += "\nDo not include any Protected Health Information (PHI) in your response. Do not "
                "guess or infer beyond what the input directly supports.\n";
    body += "\n{{" + input_placeholder_for(spec.role) + "}}";
    return make_template("guideline_" + to_string(spec.role), std::move(body));
}

// ---------------------------------------------------------------------------
// Template files: a small front-matter header, then the body.
//
//   ---
//   template_id: my_template
//   placeholders: a, b
//   ---
//   body text with {{a}} and {{b}}

inline PromptTemplate parse_template_file(const std::string& content, const std::string& origin) {
    const std::string fence = "---\n";
    if (content.rfind(fence, 0) != 0)
        throw TemplateError("template file " + origin + ": missing front-matter '---' header");
    std::size_t end = content.find("\n---\n", fence.size() - 1);
    if (end == std::string::npos)
        throw TemplateError("template file " + origin + ": unterminated front-matter header");
    std::string header = content.substr(fence.size(), end - fence.size() + 1);
    std::string body = content.substr(end + 5);
    std::string id;
    std::set<std::string> declared;
    std::size_t pos = 0;
    while (pos < header.size()) {
        std::size_t nl = header.find('\n', pos);
        if (nl == std::string::npos) nl = header.size();
        std::string line = header.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        auto colon = line.find(':');
        if (colon == std::string::npos)
            throw TemplateError("template file " + origin + ": bad header line '" + line + "'");
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 1);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (key == "template_id") {
            id = trim(value);
        } else if (key == "placeholders") {
            std::size_t p = 0;
            while (p <= value.size()) {
                auto comma = value.find(',', p);
                std::string item = trim(value.substr(p, comma == std::string::npos ? std::string::npos
                                                                                   : comma - p));
                if (!item.empty()) declared.insert(item);
                if (comma == std::string::npos) break;
                p = comma + 1;
            }
        } else {
            throw TemplateError("template file " + origin + ": unknown header key '" + key + "'");
        }
    }
    if (id.empty()) throw TemplateError("template file " + origin + ": template_id is required");
    return make_template_checked(id, std::move(body), declared);
}

inline PromptTemplate load_template_file(const std::filesystem::path& path) {
    return parse_template_file(read_text_file(path), path.string());
}

} // namespace moma
