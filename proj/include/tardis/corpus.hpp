#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/error.hpp"
#include "tardis/hash.hpp"
#include "tardis/io.hpp"
#include "tardis/rng.hpp"

namespace tardis {

// Reserved label for predictions that match no dataset class. Datasets may
// never declare it, which is validated at ingest.
inline constexpr const char* kOodSentinel = "__ood__";

struct LabeledExample {
    std::string id;
    std::string text;
    std::string label;

    bool operator==(const LabeledExample&) const = default;
};

struct Dataset {
    std::string name;
    std::vector<std::string> classes; // sorted, distinct
    std::vector<LabeledExample> examples;

    bool operator==(const Dataset&) const = default;

    bool has_class(const std::string& label) const {
        return std::binary_search(classes.begin(), classes.end(), label);
    }

    std::vector<const LabeledExample*> examples_of(const std::string& label) const {
        std::vector<const LabeledExample*> out;
        for (const auto& ex : examples)
            if (ex.label == label) out.push_back(&ex);
        return out;
    }

    std::vector<std::string> texts_of(const std::string& label) const {
        std::vector<std::string> out;
        for (const auto& ex : examples)
            if (ex.label == label) out.push_back(ex.text);
        return out;
    }

    const LabeledExample* find(const std::string& id) const {
        for (const auto& ex : examples)
            if (ex.id == id) return &ex;
        return nullptr;
    }
};

struct SeedSelection {
    size_t shots_per_class = 0;
    int64_t rng_seed = 0;
    std::vector<std::string> selected_ids;
};

enum class DatasetFormat { jsonl, csv };

inline DatasetFormat parse_format(std::string_view name) {
    if (name == "jsonl") return DatasetFormat::jsonl;
    if (name == "csv") return DatasetFormat::csv;
    fail(errc::config, "unknown dataset format '" + std::string(name) + "' (expected jsonl|csv)");
}

namespace detail {

// Deterministic id from (row index, content hash); stable across loads of
// the same file when the input carries no explicit ids.
inline std::string make_example_id(size_t row, const std::string& text, const std::string& label) {
    char prefix[16];
    std::snprintf(prefix, sizeof(prefix), "%06zu-", row);
    return std::string(prefix) + sha256_hex(text + "\x1f" + label).substr(0, 12);
}

// RFC 4180-ish single-record parser; `line` excludes the newline. Returns
// false when the record continues on the next line (embedded newline in a
// quoted field) -- rejected by the loader to keep ingest line-oriented.
inline bool parse_csv_record(std::string_view line, std::vector<std::string>& fields) {
    fields.clear();
    std::string cur;
    bool in_quotes = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (in_quotes) return false;
    fields.push_back(cur);
    return true;
}

inline void finalize_dataset(Dataset& d, const warning_sink& warnings) {
    std::set<std::string> class_set;
    std::set<std::string> ids;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& ex : d.examples) {
        class_set.insert(ex.label);
        if (!ids.insert(ex.id).second)
            fail(errc::integrity, "duplicate example id '" + ex.id + "' in " + d.name);
        if (!seen.insert({ex.text, ex.label}).second)
            warn(warnings, "duplicate (text, label) row retained: \"" + ex.text + "\" / " + ex.label);
    }
    d.classes.assign(class_set.begin(), class_set.end());
}

} // namespace detail

inline Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            const warning_sink& warnings = stderr_warnings()) {
    std::string content = read_file(path);
    Dataset d;
    d.name = path.stem().string();

    auto add_row = [&](size_t line_no, std::string text, std::string label, std::string id) {
        text = trim(text);
        label = trim(label);
        if (text.empty())
            fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": empty text");
        if (label.empty())
            fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": empty label");
        if (label == kOodSentinel)
            fail(errc::parse, path.string() + ": line " + std::to_string(line_no) +
                                  ": label collides with reserved sentinel " + kOodSentinel);
        if (id.empty()) id = detail::make_example_id(d.examples.size(), text, label);
        d.examples.push_back({std::move(id), std::move(text), std::move(label)});
    };

    if (format == DatasetFormat::jsonl) {
        for_each_line(content, [&](std::string_view line, size_t line_no) {
            if (trim(line).empty()) return;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": invalid JSON object");
            if (!j.contains("text") || !j["text"].is_string() || !j.contains("label") ||
                !j["label"].is_string())
                fail(errc::parse, path.string() + ": line " + std::to_string(line_no) +
                                      ": expected string fields \"text\" and \"label\"");
            std::string id;
            if (j.contains("id")) {
                if (!j["id"].is_string())
                    fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": \"id\" must be a string");
                id = j["id"].get<std::string>();
            }
            add_row(line_no, j["text"].get<std::string>(), j["label"].get<std::string>(), id);
        });
    } else {
        bool saw_header = false;
        std::vector<std::string> fields;
        for_each_line(content, [&](std::string_view line, size_t line_no) {
            if (!saw_header) {
                if (!detail::parse_csv_record(line, fields) || fields.size() < 2 ||
                    trim(fields[0]) != "text" || trim(fields[1]) != "label")
                    fail(errc::parse, path.string() + ": line 1: CSV header must be \"text,label\"");
                saw_header = true;
                return;
            }
            if (trim(line).empty()) return;
            if (!detail::parse_csv_record(line, fields))
                fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": unterminated quoted field");
            if (fields.size() < 2)
                fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": expected text,label");
            add_row(line_no, fields[0], fields[1], "");
        });
        if (!saw_header) fail(errc::parse, path.string() + ": empty file (missing CSV header)");
    }

    if (d.examples.empty()) fail(errc::parse, path.string() + ": empty dataset");
    detail::finalize_dataset(d, warnings);
    return d;
}

/// Per-class uniform sampling without replacement; a pure function of
/// (dataset content, shots, rng_seed). Classes smaller than `shots` keep
/// all their examples and emit a warning.
inline SeedSelection sample_seed(const Dataset& d, size_t shots, int64_t rng_seed,
                                 const warning_sink& warnings = stderr_warnings()) {
    if (shots < 1) fail(errc::precondition, "shots must be >= 1");
    SeedSelection sel;
    sel.shots_per_class = shots;
    sel.rng_seed = rng_seed;
    for (const auto& cls : d.classes) {
        auto pool = d.examples_of(cls);
        if (pool.empty()) fail(errc::precondition, "class '" + cls + "' has no examples");
        std::vector<size_t> order(pool.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        RngStream rng(static_cast<uint64_t>(rng_seed), "sample_seed/" + cls);
        rng.shuffle(order);
        size_t take = std::min(shots, pool.size());
        if (take < shots)
            warn(warnings, "class '" + cls + "' has only " + std::to_string(pool.size()) +
                               " examples; requested " + std::to_string(shots) + " shots");
        for (size_t i = 0; i < take; ++i) sel.selected_ids.push_back(pool[order[i]]->id);
    }
    return sel;
}

inline Dataset apply_selection(const Dataset& d, const SeedSelection& sel) {
    Dataset out;
    out.name = d.name;
    std::set<std::string> wanted(sel.selected_ids.begin(), sel.selected_ids.end());
    for (const auto& ex : d.examples)
        if (wanted.count(ex.id)) out.examples.push_back(ex);
    detail::finalize_dataset(out, nullptr);
    return out;
}

// JSONL, one object per line, fields text/label/id, LF endings. Byte-stable
// for a given dataset; round-trips through load_dataset with ids preserved.
inline std::string dataset_to_jsonl(const Dataset& d) {
    std::string out;
    for (const auto& ex : d.examples) {
        nlohmann::ordered_json j;
        j["text"] = ex.text;
        j["label"] = ex.label;
        j["id"] = ex.id;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& path) {
    write_file(path, dataset_to_jsonl(d));
}

} // namespace tardis
