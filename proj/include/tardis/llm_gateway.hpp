#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/error.hpp"
#include "tardis/hash.hpp"
#include "tardis/io.hpp"

namespace tardis {

struct GenerationRequest {
    std::string prompt;
    double temperature = 1.0;
    double repetition_penalty = 1.15;
    int max_tokens = 512;
    std::vector<std::string> stop;
    std::string request_tag; // stage/class/round, for audit and mock matching
};

struct GenerationResponse {
    std::string raw_text;
    std::string backend_id;
    int64_t latency_ms = 0;
    std::string request_tag;
};

class TextBackend {
public:
    virtual ~TextBackend() = default;
    virtual std::string id() const = 0;
    virtual GenerationResponse complete(const GenerationRequest& req) = 0;
};

/// Deterministic canned backend for hermetic tests and offline runs.
///
/// Rules are matched in insertion order; the first hit wins. A rule matches
/// the exact sha256 of the prompt, the exact request tag, or a request-tag
/// glob ('*' wildcards). Response text may use substitution tokens:
///   %HASH%  first 12 hex chars of the prompt sha256
///   %TAG%   the full request tag
///   %CLASS% second '/'-separated tag segment
///   %IDX%   third '/'-separated tag segment
/// so one rule can produce prompt-dependent yet reproducible output.
class ScriptedMockBackend : public TextBackend {
public:
    enum class Match { prompt_sha256, tag_exact, tag_glob };

    struct Rule {
        Match match = Match::tag_glob;
        std::string pattern;
        std::string text;
    };

    explicit ScriptedMockBackend(bool strict = true) : strict_(strict) {}

    std::string id() const override { return "mock"; }

    void add_rule(Rule rule) { rules_.push_back(std::move(rule)); }
    void add_prompt_rule(const std::string& prompt, std::string text) {
        rules_.push_back({Match::prompt_sha256, sha256_hex(prompt), std::move(text)});
    }
    void add_tag_rule(std::string tag, std::string text) {
        rules_.push_back({Match::tag_exact, std::move(tag), std::move(text)});
    }
    void add_glob_rule(std::string pattern, std::string text) {
        rules_.push_back({Match::tag_glob, std::move(pattern), std::move(text)});
    }

    GenerationResponse complete(const GenerationRequest& req) override {
        std::string prompt_hash = sha256_hex(req.prompt);
        for (const auto& rule : rules_) {
            bool hit = false;
            switch (rule.match) {
                case Match::prompt_sha256: hit = (rule.pattern == prompt_hash); break;
                case Match::tag_exact: hit = (rule.pattern == req.request_tag); break;
                case Match::tag_glob: hit = glob_match(rule.pattern, req.request_tag); break;
            }
            if (!hit) continue;
            return {substitute(rule.text, prompt_hash, req.request_tag), id(), 0, req.request_tag};
        }
        if (strict_)
            throw backend_error("strict mock: no rule matches request_tag '" + req.request_tag + "'",
                                /*retryable=*/false);
        return {"", id(), 0, req.request_tag};
    }

    // JSONL: {"match": "prompt_sha256"|"tag"|"tag_glob", "pattern": ..., "text": ...}
    static ScriptedMockBackend from_script_file(const std::filesystem::path& path, bool strict = true) {
        ScriptedMockBackend backend(strict);
        std::string content = read_file(path);
        for_each_line(content, [&](std::string_view line, size_t line_no) {
            if (trim(line).empty()) return;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("match") || !j.contains("pattern") ||
                !j.contains("text"))
                fail(errc::parse, path.string() + ": line " + std::to_string(line_no) +
                                      ": expected {match, pattern, text}");
            std::string m = j["match"].get<std::string>();
            Match match;
            if (m == "prompt_sha256") match = Match::prompt_sha256;
            else if (m == "tag") match = Match::tag_exact;
            else if (m == "tag_glob") match = Match::tag_glob;
            else fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": unknown match kind '" + m + "'");
            backend.add_rule({match, j["pattern"].get<std::string>(), j["text"].get<std::string>()});
        });
        return backend;
    }

    static bool glob_match(std::string_view pattern, std::string_view text) {
        size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
        while (t < text.size()) {
            if (p < pattern.size() && (pattern[p] == text[t])) {
                ++p; ++t;
            } else if (p < pattern.size() && pattern[p] == '*') {
                star = p++;
                mark = t;
            } else if (star != std::string_view::npos) {
                p = star + 1;
                t = ++mark;
            } else {
                return false;
            }
        }
        while (p < pattern.size() && pattern[p] == '*') ++p;
        return p == pattern.size();
    }

private:
    static std::string substitute(std::string text, const std::string& prompt_hash,
                                  const std::string& tag) {
        auto segments = split(tag, '/');
        replace_all(text, "%HASH%", prompt_hash.substr(0, 12));
        replace_all(text, "%TAG%", tag);
        replace_all(text, "%CLASS%", segments.size() > 1 ? segments[1] : "");
        replace_all(text, "%IDX%", segments.size() > 2 ? segments[2] : "");
        return text;
    }

    static void replace_all(std::string& s, std::string_view from, std::string_view to) {
        size_t pos = 0;
        while ((pos = s.find(from, pos)) != std::string::npos) {
            s.replace(pos, from.size(), to);
            pos += to.size();
        }
    }

    std::vector<Rule> rules_;
    bool strict_;
};

struct AuditEntry {
    std::string request_tag;
    std::string prompt_hash;
    std::string raw_text_hash;
    int64_t latency_ms = 0;
    int attempt = 1;
};

/// Append-only JSONL log of every backend request/response pair, including
/// failed attempts. The pipeline manifest cross-checks its call accounting
/// against this file.
class AuditLog {
public:
    AuditLog() = default;
    explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}

    void append(const AuditEntry& e) {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.push_back(e);
        if (path_.empty()) return;
        if (!out_.is_open()) {
            if (path_.has_parent_path()) {
                std::error_code ec;
                std::filesystem::create_directories(path_.parent_path(), ec);
            }
            out_.open(path_, std::ios::binary | std::ios::app);
            if (!out_) fail(errc::io, "cannot open audit log: " + path_.string());
        }
        nlohmann::ordered_json j;
        j["request_tag"] = e.request_tag;
        j["prompt_hash"] = e.prompt_hash;
        j["raw_text_hash"] = e.raw_text_hash;
        j["latency_ms"] = e.latency_ms;
        j["attempt"] = e.attempt;
        out_ << j.dump() << '\n';
        out_.flush();
    }

    std::vector<AuditEntry> entries() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_;
    }

    size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.size();
    }

    static std::vector<AuditEntry> read_file(const std::filesystem::path& path) {
        std::vector<AuditEntry> out;
        std::string content = tardis::read_file(path);
        for_each_line(content, [&](std::string_view line, size_t) {
            if (trim(line).empty()) return;
            nlohmann::json j = nlohmann::json::parse(line);
            out.push_back({j["request_tag"].get<std::string>(), j["prompt_hash"].get<std::string>(),
                           j["raw_text_hash"].get<std::string>(), j["latency_ms"].get<int64_t>(),
                           j["attempt"].get<int>()});
        });
        return out;
    }

private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::vector<AuditEntry> entries_;
    std::ofstream out_;
};

struct RetryPolicy {
    int max_attempts = 3;
    int backoff_ms = 250; // doubled per attempt; 0 in tests
};

// Decoding parameters applied to every request the pipeline issues.
struct GenerationProfile {
    double temperature = 1.0;
    double repetition_penalty = 1.15;
    int max_tokens = 512;
};

/// Front door for all completions: retries transient failures with
/// exponential backoff and records every attempt in the audit log.
class Gateway {
public:
    Gateway(std::shared_ptr<TextBackend> backend, RetryPolicy retry = {}, AuditLog* audit = nullptr,
            GenerationProfile profile = {})
        : backend_(std::move(backend)), retry_(retry), audit_(audit), profile_(profile) {}

    GenerationRequest make_request(std::string prompt, std::string tag) const {
        GenerationRequest req;
        req.prompt = std::move(prompt);
        req.request_tag = std::move(tag);
        req.temperature = profile_.temperature;
        req.repetition_penalty = profile_.repetition_penalty;
        req.max_tokens = profile_.max_tokens;
        return req;
    }

    GenerationResponse complete(const GenerationRequest& req) {
        if (req.prompt.empty()) fail(errc::precondition, "complete: empty prompt");
        if (req.repetition_penalty < 1.0)
            fail(errc::precondition, "complete: repetition_penalty must be >= 1.0");
        std::string prompt_hash = sha256_hex(req.prompt);
        int attempt = 0;
        for (;;) {
            ++attempt;
            auto started = std::chrono::steady_clock::now();
            try {
                GenerationResponse resp = backend_->complete(req);
                ++calls_;
                record(req, prompt_hash, sha256_hex(resp.raw_text), resp.latency_ms, attempt);
                return resp;
            } catch (const backend_error& e) {
                auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - started)
                                   .count();
                record(req, prompt_hash, "", elapsed, attempt);
                if (!e.retryable() || attempt >= retry_.max_attempts)
                    throw backend_error("request '" + req.request_tag + "' failed after " +
                                            std::to_string(attempt) + " attempt(s): " + e.what(),
                                        e.retryable());
                if (retry_.backoff_ms > 0)
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(retry_.backoff_ms << (attempt - 1)));
            }
        }
    }

    size_t calls() const { return calls_; }
    AuditLog* audit() const { return audit_; }

private:
    void record(const GenerationRequest& req, const std::string& prompt_hash,
                const std::string& text_hash, int64_t latency_ms, int attempt) {
        if (audit_) audit_->append({req.request_tag, prompt_hash, text_hash, latency_ms, attempt});
    }

    std::shared_ptr<TextBackend> backend_;
    RetryPolicy retry_;
    AuditLog* audit_;
    GenerationProfile profile_;
    size_t calls_ = 0;
};

namespace detail {

inline std::vector<std::string> lowercase_words(std::string_view s) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

// True when the line reproduces >= 80% of the preamble's distinct words --
// models sometimes answer by restating the instruction before the list.
inline bool echoes_preamble(std::string_view line, const std::vector<std::string>& preamble_words) {
    if (preamble_words.size() < 5) return false;
    auto line_words = lowercase_words(line);
    std::set<std::string> have(line_words.begin(), line_words.end());
    std::set<std::string> distinct(preamble_words.begin(), preamble_words.end());
    size_t hit = 0;
    for (const auto& w : distinct)
        if (have.count(w)) ++hit;
    return static_cast<double>(hit) >= 0.8 * static_cast<double>(distinct.size());
}

inline std::string strip_item_decoration(std::string_view raw) {
    std::string item = trim(raw);
    if (item.size() >= 2) {
        char a = item.front(), b = item.back();
        if ((a == '"' && b == '"') || (a == '\'' && b == '\''))
            item = trim(std::string_view(item).substr(1, item.size() - 2));
    }
    return item;
}

} // namespace detail

/// Extracts up to expected_k items from a free-form completion. Lines
/// starting with "N.", "N)", "-" or a bullet are items; their marker,
/// surrounding quotes and outer whitespace are stripped. Without any
/// markers, every non-empty line counts. Lines that mostly echo the prompt
/// preamble (first non-empty prompt line) are dropped. Under-production is
/// the caller's shortfall to report, not an error.
inline std::vector<std::string> parse_enumerated_items(const std::string& raw, size_t expected_k,
                                                       const std::string& prompt = "") {
    std::vector<std::string> preamble_words;
    if (!prompt.empty()) {
        for_each_line(prompt, [&](std::string_view line, size_t) {
            if (preamble_words.empty() && !trim(line).empty())
                preamble_words = detail::lowercase_words(line);
        });
    }

    std::vector<std::string> markered;
    std::vector<std::string> plain;
    for_each_line(raw, [&](std::string_view line, size_t) {
        std::string t = trim(line);
        if (t.empty()) return;

        std::string_view rest;
        bool has_marker = false;
        if (t[0] == '-' || t.rfind("\xe2\x80\xa2", 0) == 0) { // '-' or U+2022
            rest = std::string_view(t).substr(t[0] == '-' ? 1 : 3);
            has_marker = true;
        } else {
            size_t d = 0;
            while (d < t.size() && d < 3 && std::isdigit(static_cast<unsigned char>(t[d]))) ++d;
            if (d > 0 && d < t.size() && (t[d] == '.' || t[d] == ')')) {
                rest = std::string_view(t).substr(d + 1);
                has_marker = true;
            }
        }

        std::string item = detail::strip_item_decoration(has_marker ? rest : t);
        if (item.empty()) return;
        if (detail::echoes_preamble(item, preamble_words)) return;
        (has_marker ? markered : plain).push_back(std::move(item));
    });

    std::vector<std::string>& items = markered.empty() ? plain : markered;
    if (items.size() > expected_k) items.resize(expected_k);
    return items;
}

} // namespace tardis
