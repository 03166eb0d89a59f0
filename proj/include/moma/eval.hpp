#pragma once

// Bootstrap confidence intervals, subgroup reports, and paired significance
// testing. Replicates draw from counter-based per-replicate seeds, so serial
// and parallel evaluation (and different subgroups at the same replicate
// index) share resampling streams. Undefined-metric replicates are redrawn
// from the same stream within a reported budget.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "moma/core.hpp"
#include "moma/detail/rng.hpp"
#include "moma/encounter.hpp"
#include "moma/metrics.hpp"

namespace moma {

struct BootstrapConfig {
    int replicates = 1000;
    double ci_level = 0.95;
    std::uint64_t seed = 0;
    int max_redraws = 100; // total across the run
    int min_subgroup_size = 10;

    void validate() const {
        if (replicates < 1) throw ConfigError("bootstrap: replicates must be >= 1");
        if (!(ci_level > 0.0 && ci_level < 1.0))
            throw ConfigError("bootstrap: ci_level must lie in (0, 1)");
        if (max_redraws < 0) throw ConfigError("bootstrap: max_redraws must be >= 0");
        if (min_subgroup_size < 1) throw ConfigError("bootstrap: min_subgroup_size must be >= 1");
    }
};

// Per-encounter evaluation rows, parallel arrays joined on encounter order.
struct EvalInput {
    TaskSpec task;
    std::vector<std::string> encounter_ids;
    std::vector<std::vector<int>> labels; // [instance][subtask]
    std::vector<std::vector<int>> preds;  // [instance][subtask]
    std::vector<std::vector<Vec>> probs;  // [instance][subtask][class]
    std::vector<Demographics> demographics;

    std::size_t size() const { return encounter_ids.size(); }

    void validate() const {
        task.validate();
        std::size_t n = encounter_ids.size();
        if (labels.size() != n || preds.size() != n || probs.size() != n ||
            demographics.size() != n)
            throw ValidationError("eval input: parallel arrays differ in length");
        std::size_t n_sub = task.classes.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i].size() != n_sub || preds[i].size() != n_sub ||
                probs[i].size() != n_sub)
                throw ValidationError("eval input: row " + std::to_string(i) +
                                      " has wrong subtask count");
            for (std::size_t s = 0; s < n_sub; ++s) {
                auto n_classes = task.classes[s].size();
                if (probs[i][s].size() != n_classes)
                    throw ValidationError("eval input: row " + std::to_string(i) +
                                          " probability width != class count");
                double sum = 0.0;
                for (double p : probs[i][s]) {
                    if (!(p >= 0.0 && p <= 1.0))
                        throw ValidationError("eval input: probability outside [0,1] at row " +
                                              std::to_string(i));
                    sum += p;
                }
                (void)sum;
            }
        }
    }
};

// Metric value over a subset of rows for one subtask. Binary scores are the
// positive-class probability.
inline double compute_metric(const EvalInput& in, std::size_t subtask, const std::string& metric,
                             const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ValidationError("metric '" + metric + "': empty index set");
    int num_classes = static_cast<int>(in.task.classes[subtask].size());
    std::vector<int> y, p;
    y.reserve(idx.size());
    p.reserve(idx.size());
    for (auto i : idx) {
        y.push_back(in.labels[i][subtask]);
        p.push_back(in.preds[i][subtask]);
    }
    if (metric == "macro_f1") return macro_f1(y, p, num_classes);
    if (metric == "micro_f1") return micro_f1(y, p, num_classes);
    if (metric == "f1_binary") return f1_binary(y, p);
    if (metric == "auroc" || metric == "aupr") {
        Vec s;
        s.reserve(idx.size());
        for (auto i : idx) s.push_back(in.probs[i][subtask].back());
        return metric == "auroc" ? auroc(y, s) : aupr(y, s);
    }
    if (metric == "macro_auroc") {
        std::vector<Vec> rows;
        rows.reserve(idx.size());
        for (auto i : idx) rows.push_back(in.probs[i][subtask]);
        return macro_auroc(y, rows, num_classes);
    }
    throw ConfigError("unknown metric '" + metric + "'");
}

inline std::vector<std::string> default_metrics(TaskKind kind) {
    if (kind == TaskKind::binary) return {"auroc", "aupr", "f1_binary"};
    return {"macro_f1", "micro_f1", "macro_auroc"};
}

struct BootstrapResult {
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int redraws_used = 0;
    Vec replicate_values;
};

namespace detail_eval {

// Empirical quantile with linear interpolation on the sorted sample.
inline double quantile_sorted(const Vec& sorted, double q) {
    if (sorted.empty()) throw ValidationError("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    double h = q * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

} // namespace detail_eval

// Percentile bootstrap over rows [0, n). `metric_on` evaluates the metric on
// an index multiset and throws MetricUndefinedError when the resample is
// degenerate; such replicates are redrawn from the replicate's own stream.
inline BootstrapResult bootstrap_ci(std::size_t n,
                                    const std::function<double(const std::vector<std::size_t>&)>&
                                        metric_on,
                                    const BootstrapConfig& cfg) {
    cfg.validate();
    if (n == 0) throw ValidationError("bootstrap: empty sample");
    BootstrapResult result;
    std::vector<std::size_t> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    result.point = metric_on(identity); // undefined on the full sample propagates
    result.replicate_values.reserve(static_cast<std::size_t>(cfg.replicates));
    std::vector<std::size_t> sample(n);
    for (int r = 0; r < cfg.replicates; ++r) {
        std::mt19937_64 rng(detail::derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        for (;;) {
            for (std::size_t i = 0; i < n; ++i) sample[i] = detail::next_index(rng, n);
            try {
                result.replicate_values.push_back(metric_on(sample));
                break;
            } catch (const MetricUndefinedError&) {
                if (result.redraws_used >= cfg.max_redraws)
                    throw MetricUndefinedError(
                        "bootstrap: redraw budget exhausted after " +
                        std::to_string(result.redraws_used) +
                        " redraws (metric repeatedly undefined on resamples)");
                ++result.redraws_used;
            }
        }
    }
    Vec sorted = result.replicate_values;
    std::sort(sorted.begin(), sorted.end());
    double alpha = 1.0 - cfg.ci_level;
    result.ci_low = detail_eval::quantile_sorted(sorted, alpha / 2.0);
    result.ci_high = detail_eval::quantile_sorted(sorted, 1.0 - alpha / 2.0);
    return result;
}

// ---------------------------------------------------------------------------
// Paired t-test across shared replicate indices

struct PairedTTestResult {
    double t_stat = 0.0;
    double p_value = 1.0;
    long dof = 0;
};

// Two-sided paired t-test. Zero-variance differences return p=1.0 when the
// mean difference is 0 (all pairs identical) and p=0.0 otherwise.
inline PairedTTestResult paired_t_test(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ValidationError("paired t-test: length mismatch");
    if (a.size() < 2) throw ValidationError("paired t-test: needs at least 2 pairs");
    std::size_t n = a.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    PairedTTestResult res;
    res.dof = static_cast<long>(n) - 1;
    double var = ss / static_cast<double>(res.dof);
    if (var == 0.0) {
        res.t_stat = 0.0;
        res.p_value = mean == 0.0 ? 1.0 : 0.0;
        return res;
    }
    res.t_stat = mean / std::sqrt(var / static_cast<double>(n));
    boost::math::students_t dist(static_cast<double>(res.dof));
    res.p_value = 2.0 * boost::math::cdf(dist, -std::abs(res.t_stat));
    return res;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricEntry {
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int redraws_used = 0;
};

struct SubgroupEntry {
    std::string axis;  // "sex" or "race"
    std::string group; // e.g. "female", "white"
    std::size_t n = 0;
    bool small_group = false; // below min_subgroup_size; excluded from t-tests
    std::map<std::string, MetricEntry> metrics;
};

struct SignificanceEntry {
    std::string axis;
    std::string metric;
    std::string group_a;
    std::string group_b;
    double t_stat = 0.0;
    double p_value = 1.0;
    long dof = 0;
    bool skipped = false;
    std::string note;
};

struct SubtaskReport {
    std::string subtask;
    std::map<std::string, MetricEntry> overall;
    std::vector<SubgroupEntry> subgroups;
    std::vector<SignificanceEntry> significance;
};

struct MetricReport {
    std::string task_name;
    std::size_t n_encounters = 0;
    BootstrapConfig bootstrap;
    std::vector<SubtaskReport> subtasks;
};

namespace detail_eval {

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

} // namespace detail_eval

// Subgroup membership along the two reported axes. Race is binarized to
// white / non-white (case-insensitive match on "white"); sex groups are
// female and male, with other/unknown left out of the axis.
inline std::map<std::string, std::vector<std::size_t>> subgroup_indices(
    const std::vector<Demographics>& demographics, const std::string& axis) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < demographics.size(); ++i) {
        const auto& d = demographics[i];
        if (axis == "sex") {
            if (d.sex == Sex::female) groups["female"].push_back(i);
            else if (d.sex == Sex::male) groups["male"].push_back(i);
        } else if (axis == "race") {
            groups[detail_eval::lower(d.race) == "white" ? "white" : "non-white"].push_back(i);
        } else {
            throw ConfigError("unknown subgroup axis '" + axis + "'");
        }
    }
    return groups;
}

inline MetricEntry to_entry(const BootstrapResult& r) {
    return MetricEntry{r.point, r.ci_low, r.ci_high, r.redraws_used};
}

// Full evaluation: overall CIs per metric and subtask, subgroup breakdowns
// along the requested axes, and paired t-tests between subgroup pairs across
// shared bootstrap replicate indices. Small subgroups are flagged and
// excluded from significance testing; metric-undefined subgroups are
// reported with a note instead of failing the run.
inline MetricReport evaluate(const EvalInput& in, const std::vector<std::string>& metrics,
                             const std::vector<std::string>& axes, const BootstrapConfig& cfg) {
    in.validate();
    cfg.validate();
    MetricReport report;
    report.task_name = in.task.name;
    report.n_encounters = in.size();
    report.bootstrap = cfg;
    for (std::size_t s = 0; s < in.task.classes.size(); ++s) {
        SubtaskReport sub;
        sub.subtask = in.task.subtask_names[s];
        std::vector<std::size_t> all(in.size());
        std::iota(all.begin(), all.end(), 0);
        std::map<std::string, Vec> overall_replicates;
        for (const auto& metric : metrics) {
            auto res = bootstrap_ci(
                in.size(),
                [&](const std::vector<std::size_t>& idx) {
                    return compute_metric(in, s, metric, idx);
                },
                cfg);
            sub.overall[metric] = to_entry(res);
            overall_replicates[metric] = std::move(res.replicate_values);
        }
        for (const auto& axis : axes) {
            auto groups = subgroup_indices(in.demographics, axis);
            if (groups.empty())
                throw ValidationError("subgroup axis '" + axis + "' has no populated groups");
            // replicate vectors for eligible groups, keyed (group, metric)
            std::map<std::string, std::map<std::string, Vec>> replicate_store;
            for (const auto& [group, idx] : groups) {
                SubgroupEntry entry;
                entry.axis = axis;
                entry.group = group;
                entry.n = idx.size();
                entry.small_group = idx.size() < static_cast<std::size_t>(cfg.min_subgroup_size);
                for (const auto& metric : metrics) {
                    try {
                        auto res = bootstrap_ci(
                            idx.size(),
                            [&](const std::vector<std::size_t>& sample) {
                                std::vector<std::size_t> mapped(sample.size());
                                for (std::size_t i = 0; i < sample.size(); ++i)
                                    mapped[i] = idx[sample[i]];
                                return compute_metric(in, s, metric, mapped);
                            },
                            cfg);
                        entry.metrics[metric] = to_entry(res);
                        if (!entry.small_group)
                            replicate_store[group][metric] = std::move(res.replicate_values);
                    } catch (const MetricUndefinedError&) {
                        // subgroup too skewed for this metric; leave the cell out
                    }
                }
                sub.subgroups.push_back(std::move(entry));
            }
            // pairwise significance across groups sharing replicate indices
            std::vector<std::string> names;
            for (const auto& [group, idx] : groups) names.push_back(group);
            for (std::size_t a = 0; a < names.size(); ++a) {
                for (std::size_t b = a + 1; b < names.size(); ++b) {
                    for (const auto& metric : metrics) {
                        SignificanceEntry sig;
                        sig.axis = axis;
                        sig.metric = metric;
                        sig.group_a = names[a];
                        sig.group_b = names[b];
                        auto ra = replicate_store.find(names[a]);
                        auto rb = replicate_store.find(names[b]);
                        bool have_a = ra != replicate_store.end() && ra->second.count(metric);
                        bool have_b = rb != replicate_store.end() && rb->second.count(metric);
                        if (!have_a || !have_b) {
                            sig.skipped = true;
                            sig.note = "excluded: subgroup below minimum size or metric undefined";
                        } else {
                            auto t = paired_t_test(ra->second.at(metric), rb->second.at(metric));
                            sig.t_stat = t.t_stat;
                            sig.p_value = t.p_value;
                            sig.dof = t.dof;
                        }
                        sub.significance.push_back(std::move(sig));
                    }
                }
            }
        }
        report.subtasks.push_back(std::move(sub));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Rendering

// "0.834 (0.806,0.861)": three decimals, one space before the interval, no
// space after the comma.
inline std::string format_metric_cell(double point, double lo, double hi) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f (%.3f,%.3f)", point, lo, hi);
    return buf;
}

inline nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json subtasks = nlohmann::json::array();
    for (const auto& sub : report.subtasks) {
        nlohmann::json overall = nlohmann::json::object();
        for (const auto& [metric, e] : sub.overall)
            overall[metric] = {{"point", e.point},
                               {"ci_low", e.ci_low},
                               {"ci_high", e.ci_high},
                               {"redraws_used", e.redraws_used},
                               {"cell", format_metric_cell(e.point, e.ci_low, e.ci_high)}};
        nlohmann::json groups = nlohmann::json::array();
        for (const auto& g : sub.subgroups) {
            nlohmann::json metrics = nlohmann::json::object();
            for (const auto& [metric, e] : g.metrics)
                metrics[metric] = {{"point", e.point},
                                   {"ci_low", e.ci_low},
                                   {"ci_high", e.ci_high},
                                   {"redraws_used", e.redraws_used},
                                   {"cell", format_metric_cell(e.point, e.ci_low, e.ci_high)}};
            groups.push_back({{"axis", g.axis},
                              {"group", g.group},
                              {"n", g.n},
                              {"small_group", g.small_group},
                              {"metrics", metrics}});
        }
        nlohmann::json sigs = nlohmann::json::array();
        for (const auto& t : sub.significance) {
            nlohmann::json row{{"axis", t.axis},       {"metric", t.metric},
                               {"group_a", t.group_a}, {"group_b", t.group_b},
                               {"skipped", t.skipped}};
            if (t.skipped) {
                row["note"] = t.note;
            } else {
                row["t_stat"] = t.t_stat;
                row["p_value"] = t.p_value;
                row["dof"] = t.dof;
            }
            sigs.push_back(std::move(row));
        }
        subtasks.push_back({{"subtask", sub.subtask},
                            {"overall", overall},
                            {"subgroups", groups},
                            {"significance", sigs}});
    }
    return {{"task", report.task_name},
            {"n_encounters", report.n_encounters},
            {"bootstrap",
             {{"replicates", report.bootstrap.replicates},
              {"ci_level", report.bootstrap.ci_level},
              {"seed", report.bootstrap.seed},
              {"min_subgroup_size", report.bootstrap.min_subgroup_size}}},
            {"subtasks", subtasks}};
}

// Aligned text table, one row per scope (overall / subgroup), one column per
// metric, cells in the "point (lo,hi)" convention.
inline std::string report_to_text(const MetricReport& report,
                                  const std::vector<std::string>& metrics) {
    std::string out;
    out += "task: " + report.task_name + "  (n=" + std::to_string(report.n_encounters) + ")\n";
    for (const auto& sub : report.subtasks) {
        out += "\nsubtask: " + sub.subtask + "\n";
        std::vector<std::vector<std::string>> rows;
        std::vector<std::string> header{"scope"};
        for (const auto& m : metrics) header.push_back(m);
        rows.push_back(header);
        auto add_row = [&](const std::string& scope,
                           const std::map<std::string, MetricEntry>& entries, bool flagged) {
            std::vector<std::string> row{flagged ? scope + " *" : scope};
            for (const auto& m : metrics) {
                auto it = entries.find(m);
                row.push_back(it == entries.end()
                                  ? "-"
                                  : format_metric_cell(it->second.point, it->second.ci_low,
                                                       it->second.ci_high));
            }
            rows.push_back(std::move(row));
        };
        add_row("overall", sub.overall, false);
        for (const auto& g : sub.subgroups)
            add_row(g.axis + "/" + g.group + " (n=" + std::to_string(g.n) + ")", g.metrics,
                    g.small_group);
        std::vector<std::size_t> widths(rows[0].size(), 0);
        for (const auto& row : rows)
            for (std::size_t c = 0; c < row.size(); ++c)
                widths[c] = std::max(widths[c], row[c].size());
        for (const auto& row : rows) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                out += row[c];
                if (c + 1 < row.size()) out += std::string(widths[c] - row[c].size() + 2, ' ');
            }
            out += "\n";
        }
        bool any_sig = false;
        for (const auto& t : sub.significance) {
            if (t.skipped) continue;
            if (!any_sig) {
                out += "\npaired t-tests (replicate-paired, two-sided):\n";
                any_sig = true;
            }
            char buf[160];
            std::snprintf(buf, sizeof(buf), "  %s %s vs %s [%s]: t=%.4f p=%.4g (dof=%ld)\n",
                          t.axis.c_str(), t.group_a.c_str(), t.group_b.c_str(), t.metric.c_str(),
                          t.t_stat, t.p_value, t.dof);
            out += buf;
        }
        for (const auto& t : sub.significance) {
            if (!t.skipped) continue;
            out += "  " + t.axis + " " + t.group_a + " vs " + t.group_b + " [" + t.metric +
                   "]: " + t.note + "\n";
        }
        bool any_small = false;
        for (const auto& g : sub.subgroups) any_small = any_small || g.small_group;
        if (any_small) out += "\n* below minimum subgroup size; excluded from significance tests\n";
    }
    return out;
}

inline std::string format_metric_cell(const MetricEntry& e) {
    return format_metric_cell(e.point, e.ci_low, e.ci_high);
}

} // namespace moma
