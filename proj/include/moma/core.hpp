#pragma once

#include <atomic>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unistd.h>
#include <vector>

namespace moma {

// Base class for every error this library throws. Subclasses carry the
// category the CLI maps onto exit codes (config errors exit 2, runtime
// failures exit 1).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration or bad input schema, detected before any work runs.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Dataset content violates a declared invariant (names the offending
// encounter/field in the message).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// A backend call failed. `retryable` distinguishes transient transport
// faults from hard protocol/auth failures.
class BackendError : public Error {
public:
    BackendError(const std::string& msg, bool retryable_, int http_status_ = 0)
        : Error(msg), retryable(retryable_), http_status(http_status_) {}
    bool retryable;
    int http_status;
};

// A metric has no defined value on the given sample (e.g. AUROC on a
// single-class input).
class MetricUndefinedError : public Error {
public:
    explicit MetricUndefinedError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Calendar date (day resolution). ISO-8601 "YYYY-MM-DD" in files.

struct Date {
    int year = 0;
    int month = 0;
    int day = 0;

    friend bool operator==(const Date&, const Date&) = default;
    friend auto operator<=>(const Date& a, const Date& b) {
        if (auto c = a.year <=> b.year; c != 0) return c;
        if (auto c = a.month <=> b.month; c != 0) return c;
        return a.day <=> b.day;
    }

    bool valid() const {
        static constexpr int days_in[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
        if (year < 1 || month < 1 || month > 12 || day < 1) return false;
        int dmax = days_in[month - 1];
        bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
        if (month == 2 && leap) dmax = 29;
        return day <= dmax;
    }

    std::string to_string() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
        return buf;
    }

    static std::optional<Date> parse(const std::string& s) {
        if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i == 4 || i == 7) continue;
            if (s[i] < '0' || s[i] > '9') return std::nullopt;
        }
        Date d{std::stoi(s.substr(0, 4)), std::stoi(s.substr(5, 2)), std::stoi(s.substr(8, 2))};
        if (!d.valid()) return std::nullopt;
        return d;
    }
};

// ---------------------------------------------------------------------------
// Small file helpers shared by the loaders and the artifact writers.

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

// Writes via a temp file + rename so concurrent writers of the same
// content-addressed key never expose a torn file. The temp name must be
// unique per call, not per path: two threads flushing the same key would
// otherwise share a temp file and one rename would find it gone.
inline void write_text_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    static std::atomic<std::uint64_t> seq{0};
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(seq.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write file: " + tmp.string());
        out << content;
    }
    fs::rename(tmp, path);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    write_text_file_atomic(path, content);
}

} // namespace moma
