#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/corpus.hpp"
#include "tardis/error.hpp"
#include "tardis/llm_gateway.hpp"
#include "tardis/prompt_forge.hpp"

namespace tardis {

struct ClassDescription {
    std::string class_name;
    std::string text;
    std::vector<std::string> source_seed_ids;
};

enum class Method { SEG, CEG };

inline const char* method_name(Method m) { return m == Method::SEG ? "SEG" : "CEG"; }
inline Method parse_method(std::string_view s) {
    if (s == "SEG") return Method::SEG;
    if (s == "CEG") return Method::CEG;
    fail(errc::parse, "unknown method '" + std::string(s) + "'");
}

struct SparkThought {
    enum class Origin { seg, ceg };

    std::string class_name;
    std::string text;
    Origin origin_kind = Origin::seg;
    std::string origin; // seg: source seed id; ceg: ambiguous class name
    int round = 0;

    bool operator==(const SparkThought&) const = default;
};

struct GenerationRecord {
    std::string text;
    std::string target_class;
    Method method = Method::SEG;
    SparkThought spark;
    std::string prompt_hash;
    int round = 0;
    bool shortfall = false;

    bool operator==(const GenerationRecord&) const = default;
};

inline nlohmann::ordered_json to_json(const SparkThought& s) {
    return {{"class", s.class_name},
            {"text", s.text},
            {"origin_kind", s.origin_kind == SparkThought::Origin::seg ? "seg" : "ceg"},
            {"origin", s.origin},
            {"round", s.round}};
}

inline SparkThought spark_from_json(const nlohmann::json& j) {
    SparkThought s;
    s.class_name = j.at("class").get<std::string>();
    s.text = j.at("text").get<std::string>();
    s.origin_kind = j.at("origin_kind").get<std::string>() == "seg" ? SparkThought::Origin::seg
                                                                    : SparkThought::Origin::ceg;
    s.origin = j.at("origin").get<std::string>();
    s.round = j.at("round").get<int>();
    return s;
}

inline nlohmann::ordered_json to_json(const GenerationRecord& r) {
    return {{"text", r.text},        {"target_class", r.target_class},
            {"method", method_name(r.method)}, {"spark", to_json(r.spark)},
            {"prompt_hash", r.prompt_hash},    {"round", r.round},
            {"shortfall", r.shortfall}};
}

inline GenerationRecord record_from_json(const nlohmann::json& j) {
    GenerationRecord r;
    r.text = j.at("text").get<std::string>();
    r.target_class = j.at("target_class").get<std::string>();
    r.method = parse_method(j.at("method").get<std::string>());
    r.spark = spark_from_json(j.at("spark"));
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    r.round = j.at("round").get<int>();
    r.shortfall = j.at("shortfall").get<bool>();
    return r;
}

template <class T>
inline void write_jsonl_records(const std::filesystem::path& path, const std::vector<T>& records) {
    std::string out;
    for (const auto& r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    write_file(path, out);
}

inline std::vector<GenerationRecord> read_generation_records(const std::filesystem::path& path) {
    std::vector<GenerationRecord> out;
    for_each_line(read_file(path), [&](std::string_view line, size_t line_no) {
        if (trim(line).empty()) return;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": invalid JSON");
        out.push_back(record_from_json(j));
    });
    return out;
}

namespace seg {

struct Config {
    int ideas_per_seed = 5; // spark thoughts requested per seed example
    int k = 5;              // examples requested per generation call
    int rounds = 50;        // generation calls per class
    std::string tag_prefix = "seg";
};

/// One backend call over all seed texts of the class; the first non-empty
/// response line becomes the description. The description conditions every
/// later spark-thought call, so an empty answer is an error.
inline ClassDescription generate_class_description(const std::string& class_name,
                                                   const std::vector<const LabeledExample*>& seeds,
                                                   Gateway& gateway, const PromptContext& prompts,
                                                   const std::string& tag_prefix = "seg") {
    if (seeds.empty()) fail(errc::precondition, "generate_class_description: no seeds for " + class_name);
    std::vector<std::string> seed_texts;
    std::vector<std::string> seed_ids;
    for (const auto* ex : seeds) {
        if (ex->label != class_name)
            fail(errc::precondition, "seed " + ex->id + " is labeled " + ex->label + ", not " + class_name);
        seed_texts.push_back(ex->text);
        seed_ids.push_back(ex->id);
    }

    auto req = gateway.make_request(
        prompts.render(template_id::class_description,
                       {{"target_class_name", class_name}, {"target_seed_data", seed_texts}}),
        tag_prefix + ".describe/" + class_name);
    auto resp = gateway.complete(req);

    std::string text;
    for_each_line(resp.raw_text, [&](std::string_view line, size_t) {
        if (text.empty()) {
            std::string t = trim(line);
            if (!t.empty()) text = std::move(t);
        }
    });
    if (text.empty())
        fail(errc::backend, "empty class description for '" + class_name + "'");
    return {class_name, text, std::move(seed_ids)};
}

/// One call per seed example; parsed ideas are accumulated verbatim --
/// duplicates and near-duplicates are kept, filtering is someone else's
/// job. Zero parsed items is a recorded shortfall, not an error.
inline std::vector<SparkThought> generate_spark_thoughts(const std::string& class_name,
                                                         const ClassDescription& desc,
                                                         const LabeledExample& seed,
                                                         int ideas_per_seed, Gateway& gateway,
                                                         const PromptContext& prompts,
                                                         const std::string& tag_prefix = "seg") {
    if (desc.class_name != class_name || seed.label != class_name)
        fail(errc::precondition, "generate_spark_thoughts: class/description/seed mismatch");
    if (ideas_per_seed < 1) fail(errc::precondition, "ideas_per_seed must be >= 1");

    auto req = gateway.make_request(prompts.render(template_id::contextualizing_text,
                                                   {{"data", class_name},
                                                    {"class_description", desc.text},
                                                    {"target_seed_example", seed.text}}),
                                    tag_prefix + ".spark/" + class_name + "/" + seed.id);
    auto resp = gateway.complete(req);

    auto items = parse_enumerated_items(resp.raw_text, static_cast<size_t>(ideas_per_seed), req.prompt);
    std::vector<SparkThought> out;
    for (const auto& item : items)
        out.push_back({class_name, item, SparkThought::Origin::seg, seed.id, 0});
    return out;
}

inline std::vector<GenerationRecord> generate_examples(const LabeledExample& seed,
                                                       const SparkThought& spark, int k,
                                                       Gateway& gateway, const PromptContext& prompts,
                                                       int round = 0,
                                                       const std::string& tag_prefix = "seg") {
    if (spark.class_name != seed.label)
        fail(errc::precondition, "generate_examples: spark class != seed label");
    if (k < 1) fail(errc::precondition, "k must be >= 1");

    auto req = gateway.make_request(prompts.render(template_id::seg_generate,
                                                   {{"target_class", seed.label},
                                                    {"target_seed_example", seed.text},
                                                    {"contextualizing_text", spark.text}}),
                                    tag_prefix + ".generate/" + seed.label + "/" + std::to_string(round));
    auto resp = gateway.complete(req);
    std::string prompt_hash = sha256_hex(req.prompt);

    auto items = parse_enumerated_items(resp.raw_text, static_cast<size_t>(k), req.prompt);
    bool shortfall = items.size() < static_cast<size_t>(k);
    std::vector<GenerationRecord> out;
    for (const auto& item : items)
        out.push_back({item, seed.label, Method::SEG, spark, prompt_hash, round, shortfall});
    return out;
}

struct ClassResult {
    ClassDescription description;
    std::vector<SparkThought> sparks;
    std::vector<GenerationRecord> records;
    int calls = 0;
    int shortfall_calls = 0;
};

/// Full SEG pass for one class: describe once, spark per seed, then spend
/// the per-class call budget round-robin over (seed, spark) pairs. Records
/// come back in call order, so output is deterministic for a deterministic
/// backend.
inline ClassResult run_class(const Dataset& seed_data, const std::string& class_name,
                             const Config& cfg, Gateway& gateway, const PromptContext& prompts) {
    auto seeds = seed_data.examples_of(class_name);
    ClassResult result;
    result.description =
        generate_class_description(class_name, seeds, gateway, prompts, cfg.tag_prefix);
    result.calls += 1;

    struct Pair {
        const LabeledExample* seed;
        size_t spark_index;
    };
    std::vector<Pair> pairs;
    for (const auto* ex : seeds) {
        auto sparks = generate_spark_thoughts(class_name, result.description, *ex,
                                              cfg.ideas_per_seed, gateway, prompts, cfg.tag_prefix);
        result.calls += 1;
        if (sparks.empty()) result.shortfall_calls += 1;
        for (size_t i = 0; i < sparks.size(); ++i) {
            result.sparks.push_back(sparks[i]);
            pairs.push_back({ex, result.sparks.size() - 1});
        }
    }
    if (pairs.empty()) return result; // nothing to condition on; recorded as shortfalls

    for (int call = 0; call < cfg.rounds; ++call) {
        const Pair& p = pairs[static_cast<size_t>(call) % pairs.size()];
        auto records = generate_examples(*p.seed, result.sparks[p.spark_index], cfg.k, gateway,
                                         prompts, call, cfg.tag_prefix);
        result.calls += 1;
        if (records.size() < static_cast<size_t>(cfg.k)) result.shortfall_calls += 1;
        for (auto& r : records) result.records.push_back(std::move(r));
    }
    return result;
}

} // namespace seg
} // namespace tardis
