#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/ceg.hpp"
#include "tardis/class_adaptation.hpp"
#include "tardis/corpus.hpp"
#include "tardis/embedding.hpp"
#include "tardis/error.hpp"
#include "tardis/http_backends.hpp"
#include "tardis/llm_gateway.hpp"
#include "tardis/metrics.hpp"
#include "tardis/prompt_forge.hpp"
#include "tardis/seg.hpp"

namespace tardis {

enum class Stage { ingest, similarity, seg, ceg, merge, adapt, metrics, export_ };

inline const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages = {Stage::ingest, Stage::similarity, Stage::seg,
                                              Stage::ceg,    Stage::merge,      Stage::adapt,
                                              Stage::metrics, Stage::export_};
    return stages;
}

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::ingest:     return "ingest";
        case Stage::similarity: return "similarity";
        case Stage::seg:        return "seg";
        case Stage::ceg:        return "ceg";
        case Stage::merge:      return "merge";
        case Stage::adapt:      return "adapt";
        case Stage::metrics:    return "metrics";
        case Stage::export_:    return "export";
    }
    return "?";
}

inline Stage parse_stage(std::string_view name) {
    for (Stage s : all_stages())
        if (name == stage_name(s)) return s;
    fail(errc::config, "unknown stage '" + std::string(name) + "'");
}

struct BackendConfig {
    std::string kind = "mock"; // mock | http
    std::string script;        // mock: JSONL rule file
    bool strict = true;
    std::string url;           // http: base url
    std::string path = "/v1/chat/completions";
    std::string model;
    int retries = 3;
    int backoff_ms = 250;
    int timeout_sec = 120;
};

struct ProviderConfig {
    std::string kind = "local"; // local | http
    std::string url;
    std::string path = "/v1/embeddings";
    std::string model;
    size_t batch_size = 128;
    size_t max_in_flight = 1;
    int retries = 3;
};

struct TemplateConfig {
    std::string dir = "templates";
    std::string domain = "banking";
    std::string domain_text; // bound to {domain} for the generic set
};

struct RunConfig {
    size_t shots = 5;
    bool sample = true;       // false: the input file already is the seed set
    int rounds_per_class = 0; // 0 resolves to 50, or 25 in 2-shot settings
    int k = 5;
    int n_ambiguous = 5;
    int ideas_per_seed = 5;
    int m_shots = 10;
    double repetition_penalty = 1.15;
    double temperature = 1.0;
    int max_tokens = 512;
    int64_t rng_seed = 0;
    std::vector<Method> methods = {Method::SEG, Method::CEG};
    size_t per_class_budget = 0; // 0 = keep everything
    bool include_seeds = true;
    std::vector<std::string> target_classes; // empty = all classes
    size_t aps_pair_budget = 200000;
    std::string cache_path; // empty = <run_dir>/embedding_cache.jsonl
    BackendConfig backend;
    ProviderConfig provider;
    TemplateConfig templates;

    int resolved_rounds() const {
        if (rounds_per_class > 0) return rounds_per_class;
        return shots == 2 ? 25 : 50;
    }

    void validate() const {
        if (sample && shots < 1) fail(errc::config, "shots must be >= 1");
        if (k < 1) fail(errc::config, "k must be >= 1");
        if (n_ambiguous < 1) fail(errc::config, "n_ambiguous must be >= 1");
        if (ideas_per_seed < 1) fail(errc::config, "ideas_per_seed must be >= 1");
        if (m_shots < 1) fail(errc::config, "m_shots must be >= 1");
        if (rounds_per_class < 0) fail(errc::config, "rounds_per_class must be >= 1");
        if (repetition_penalty < 1.0) fail(errc::config, "repetition_penalty must be >= 1.0");
        if (temperature < 0.0) fail(errc::config, "temperature must be >= 0");
        if (max_tokens < 1) fail(errc::config, "max_tokens must be >= 1");
        if (methods.empty()) fail(errc::config, "methods must not be empty");
        if (backend.kind != "mock" && backend.kind != "http")
            fail(errc::config, "backend.kind must be mock|http");
        if (provider.kind != "local" && provider.kind != "http")
            fail(errc::config, "provider.kind must be local|http");
        if (backend.kind == "http" && backend.url.empty())
            fail(errc::config, "backend.url required for http backend");
        if (provider.kind == "http" && provider.url.empty())
            fail(errc::config, "provider.url required for http provider");
        if (backend.kind == "mock" && backend.script.empty())
            fail(errc::config, "backend.script required for mock backend");
    }

    bool has_method(Method m) const {
        return std::find(methods.begin(), methods.end(), m) != methods.end();
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["shots"] = c.shots;
    j["sample"] = c.sample;
    j["rounds_per_class"] = c.rounds_per_class;
    j["k"] = c.k;
    j["n_ambiguous"] = c.n_ambiguous;
    j["ideas_per_seed"] = c.ideas_per_seed;
    j["m_shots"] = c.m_shots;
    j["repetition_penalty"] = c.repetition_penalty;
    j["temperature"] = c.temperature;
    j["max_tokens"] = c.max_tokens;
    j["rng_seed"] = c.rng_seed;
    std::vector<std::string> methods;
    for (Method m : c.methods) methods.push_back(method_name(m));
    j["methods"] = methods;
    j["per_class_budget"] = c.per_class_budget;
    j["include_seeds"] = c.include_seeds;
    j["target_classes"] = c.target_classes;
    j["aps_pair_budget"] = c.aps_pair_budget;
    j["cache_path"] = c.cache_path;
    j["backend"] = {{"kind", c.backend.kind},     {"script", c.backend.script},
                    {"strict", c.backend.strict}, {"url", c.backend.url},
                    {"path", c.backend.path},     {"model", c.backend.model},
                    {"retries", c.backend.retries}, {"backoff_ms", c.backend.backoff_ms},
                    {"timeout_sec", c.backend.timeout_sec}};
    j["provider"] = {{"kind", c.provider.kind},
                     {"url", c.provider.url},
                     {"path", c.provider.path},
                     {"model", c.provider.model},
                     {"batch_size", c.provider.batch_size},
                     {"max_in_flight", c.provider.max_in_flight},
                     {"retries", c.provider.retries}};
    j["templates"] = {{"dir", c.templates.dir},
                      {"domain", c.templates.domain},
                      {"domain_text", c.templates.domain_text}};
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("shots", c.shots);
    get("sample", c.sample);
    get("rounds_per_class", c.rounds_per_class);
    get("k", c.k);
    get("n_ambiguous", c.n_ambiguous);
    get("ideas_per_seed", c.ideas_per_seed);
    get("m_shots", c.m_shots);
    get("repetition_penalty", c.repetition_penalty);
    get("temperature", c.temperature);
    get("max_tokens", c.max_tokens);
    get("rng_seed", c.rng_seed);
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    get("per_class_budget", c.per_class_budget);
    get("include_seeds", c.include_seeds);
    get("target_classes", c.target_classes);
    get("aps_pair_budget", c.aps_pair_budget);
    get("cache_path", c.cache_path);
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        auto getb = [&](const char* key, auto& field) {
            if (b.contains(key)) field = b.at(key).get<std::decay_t<decltype(field)>>();
        };
        getb("kind", c.backend.kind);
        getb("script", c.backend.script);
        getb("strict", c.backend.strict);
        getb("url", c.backend.url);
        getb("path", c.backend.path);
        getb("model", c.backend.model);
        getb("retries", c.backend.retries);
        getb("backoff_ms", c.backend.backoff_ms);
        getb("timeout_sec", c.backend.timeout_sec);
    }
    if (j.contains("provider")) {
        const auto& p = j.at("provider");
        auto getp = [&](const char* key, auto& field) {
            if (p.contains(key)) field = p.at(key).get<std::decay_t<decltype(field)>>();
        };
        getp("kind", c.provider.kind);
        getp("url", c.provider.url);
        getp("path", c.provider.path);
        getp("model", c.provider.model);
        getp("batch_size", c.provider.batch_size);
        getp("max_in_flight", c.provider.max_in_flight);
        getp("retries", c.provider.retries);
    }
    if (j.contains("templates")) {
        const auto& t = j.at("templates");
        auto gett = [&](const char* key, auto& field) {
            if (t.contains(key)) field = t.at(key).get<std::decay_t<decltype(field)>>();
        };
        gett("dir", c.templates.dir);
        gett("domain", c.templates.domain);
        gett("domain_text", c.templates.domain_text);
    }
    return c;
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object())
        fail(errc::config, "config file is not a JSON object: " + path.string());
    return config_from_json(j);
}

struct StageArtifact {
    std::string stage;
    std::string path; // run-dir relative
    std::string sha256;
    size_t records = 0;
};

struct RunManifest {
    nlohmann::ordered_json config_snapshot;
    std::string config_hash;
    nlohmann::ordered_json dataset_info;
    std::vector<StageArtifact> artifacts;
    nlohmann::ordered_json counts = nlohmann::ordered_json::object();
    nlohmann::ordered_json backend_calls = nlohmann::ordered_json::object();
    nlohmann::ordered_json timings_ms = nlohmann::ordered_json::object(); // isolated; not part of determinism
    std::string last_completed_stage;

    const StageArtifact* find_artifact(const std::string& path) const {
        for (const auto& a : artifacts)
            if (a.path == path) return &a;
        return nullptr;
    }

    std::vector<const StageArtifact*> artifacts_of(Stage s) const {
        std::vector<const StageArtifact*> out;
        for (const auto& a : artifacts)
            if (a.stage == stage_name(s)) out.push_back(&a);
        return out;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["config"] = config_snapshot;
        j["config_hash"] = config_hash;
        j["dataset"] = dataset_info;
        j["stages"] = nlohmann::ordered_json::array();
        for (const auto& a : artifacts)
            j["stages"].push_back({{"stage", a.stage},
                                   {"path", a.path},
                                   {"sha256", a.sha256},
                                   {"records", a.records}});
        j["counts"] = counts;
        j["backend_calls"] = backend_calls;
        j["last_completed_stage"] = last_completed_stage;
        j["timings_ms"] = timings_ms;
        return j;
    }

    static RunManifest from_json(const nlohmann::ordered_json& j) {
        RunManifest m;
        m.config_snapshot = j.at("config");
        m.config_hash = j.at("config_hash").get<std::string>();
        m.dataset_info = j.at("dataset");
        for (const auto& a : j.at("stages"))
            m.artifacts.push_back({a.at("stage").get<std::string>(), a.at("path").get<std::string>(),
                                   a.at("sha256").get<std::string>(),
                                   a.at("records").get<size_t>()});
        m.counts = j.at("counts");
        m.backend_calls = j.at("backend_calls");
        m.timings_ms = j.value("timings_ms", nlohmann::ordered_json::object());
        m.last_completed_stage = j.at("last_completed_stage").get<std::string>();
        return m;
    }

    void save(const std::filesystem::path& run_dir) const {
        write_file(run_dir / "manifest.json", to_json().dump(2) + "\n");
    }

    static RunManifest load(const std::filesystem::path& run_dir) {
        // ordered parse keeps counts/backend_calls in their written order so
        // a resumed manifest serializes byte-identically to a fresh one
        return from_json(nlohmann::ordered_json::parse(read_file(run_dir / "manifest.json")));
    }
};

namespace pipeline {

inline std::shared_ptr<TextBackend> make_backend(const BackendConfig& cfg) {
    if (cfg.kind == "mock") {
        return std::make_shared<ScriptedMockBackend>(
            ScriptedMockBackend::from_script_file(cfg.script, cfg.strict));
    }
    HttpEndpoint endpoint{cfg.url, cfg.path, cfg.model, cfg.timeout_sec};
    return std::make_shared<OpenAiChatBackend>(std::move(endpoint));
}

inline std::shared_ptr<EmbeddingProvider> make_provider(const ProviderConfig& cfg) {
    if (cfg.kind == "local") return std::make_shared<LocalHashedEmbedder>();
    HttpEndpoint endpoint{cfg.url, cfg.path, cfg.model, 120};
    return std::make_shared<OpenAiEmbeddingProvider>(std::move(endpoint), cfg.batch_size);
}

/// Everything a run needs, wired from the config. Owns the gateway, the
/// embedder (with its persistent cache), the template set and the audit log.
struct Runtime {
    RunConfig config;
    std::filesystem::path run_dir;
    TemplateSet template_set;
    PromptContext prompts;
    std::shared_ptr<EmbeddingCache> cache;
    std::unique_ptr<CachingEmbedder> embedder;
    std::unique_ptr<AuditLog> audit;
    std::unique_ptr<Gateway> gateway;

    Runtime(RunConfig cfg, std::filesystem::path dir) : config(std::move(cfg)), run_dir(std::move(dir)) {
        config.validate();
        std::filesystem::create_directories(run_dir);
        template_set = load_template_set(config.templates.dir, config.templates.domain);
        prompts = PromptContext{&template_set, config.templates.domain_text, stderr_warnings()};
        std::filesystem::path cache_file = config.cache_path.empty()
                                               ? run_dir / "embedding_cache.jsonl"
                                               : std::filesystem::path(config.cache_path);
        cache = std::make_shared<EmbeddingCache>(cache_file);
        embedder = std::make_unique<CachingEmbedder>(make_provider(config.provider), cache,
                                                     config.provider.max_in_flight,
                                                     config.provider.retries);
        audit = std::make_unique<AuditLog>(run_dir / "audit.jsonl");
        gateway = std::make_unique<Gateway>(
            make_backend(config.backend),
            RetryPolicy{config.backend.retries, config.backend.backoff_ms}, audit.get(),
            GenerationProfile{config.temperature, config.repetition_penalty, config.max_tokens});
    }

    std::vector<std::string> targets(const Dataset& seed) const {
        if (config.target_classes.empty()) return seed.classes;
        for (const auto& cls : config.target_classes)
            if (!seed.has_class(cls))
                fail(errc::config, "target class '" + cls + "' not in dataset");
        return config.target_classes;
    }
};

namespace detail {

class StageClock {
public:
    StageClock() : start_(std::chrono::steady_clock::now()) {}
    int64_t elapsed_ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline StageArtifact record_artifact(RunManifest& manifest, const std::filesystem::path& run_dir,
                                     Stage stage, const std::string& filename, size_t records) {
    StageArtifact a{stage_name(stage), filename, sha256_file(run_dir / filename), records};
    // replace any previous artifact entry for the same file (resume path)
    for (auto& existing : manifest.artifacts) {
        if (existing.path == filename) {
            existing = a;
            return a;
        }
    }
    manifest.artifacts.push_back(a);
    return a;
}

inline void drop_artifacts_from(RunManifest& manifest, Stage from) {
    auto order = [](const std::string& name) {
        for (size_t i = 0; i < all_stages().size(); ++i)
            if (name == stage_name(all_stages()[i])) return i;
        return all_stages().size();
    };
    size_t threshold = order(stage_name(from));
    std::vector<StageArtifact> keep;
    for (auto& a : manifest.artifacts)
        if (order(a.stage) < threshold) keep.push_back(a);
    manifest.artifacts = std::move(keep);
}

// Uniform without-replacement subsample that preserves input order.
inline std::vector<GenerationRecord> subsample(const std::vector<GenerationRecord>& records,
                                               size_t want, RngStream& rng) {
    if (records.size() <= want) return records;
    std::vector<size_t> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(want);
    std::sort(idx.begin(), idx.end());
    std::vector<GenerationRecord> out;
    out.reserve(want);
    for (size_t i : idx) out.push_back(records[i]);
    return out;
}

} // namespace detail

/// Concatenates SEG and CEG records class by class. A per-class budget
/// splits equally across the methods present; leftover capacity from an
/// under-producing method goes to the other.
inline std::vector<GenerationRecord> merge_records(const std::vector<GenerationRecord>& seg_records,
                                                   const std::vector<GenerationRecord>& ceg_records,
                                                   const std::vector<std::string>& classes,
                                                   size_t per_class_budget, uint64_t rng_seed) {
    std::vector<GenerationRecord> merged;
    for (const auto& cls : classes) {
        std::vector<GenerationRecord> seg_cls, ceg_cls;
        for (const auto& r : seg_records)
            if (r.target_class == cls) seg_cls.push_back(r);
        for (const auto& r : ceg_records)
            if (r.target_class == cls) ceg_cls.push_back(r);

        if (per_class_budget == 0) {
            for (auto& r : seg_cls) merged.push_back(std::move(r));
            for (auto& r : ceg_cls) merged.push_back(std::move(r));
            continue;
        }

        size_t methods_present = (seg_cls.empty() ? 0 : 1) + (ceg_cls.empty() ? 0 : 1);
        if (methods_present == 0) continue;
        size_t seg_share = 0, ceg_share = 0;
        if (methods_present == 1) {
            (seg_cls.empty() ? ceg_share : seg_share) = per_class_budget;
        } else {
            seg_share = per_class_budget / 2;
            ceg_share = per_class_budget - seg_share;
            // redistribute capacity a method cannot fill
            if (seg_cls.size() < seg_share) {
                ceg_share += seg_share - seg_cls.size();
                seg_share = seg_cls.size();
            }
            if (ceg_cls.size() < ceg_share) {
                size_t spare = ceg_share - ceg_cls.size();
                ceg_share = ceg_cls.size();
                seg_share = std::min(seg_cls.size(), seg_share + spare);
            }
        }
        RngStream seg_rng(rng_seed, "merge/" + cls + "/SEG");
        RngStream ceg_rng(rng_seed, "merge/" + cls + "/CEG");
        for (auto& r : detail::subsample(seg_cls, seg_share, seg_rng)) merged.push_back(std::move(r));
        for (auto& r : detail::subsample(ceg_cls, ceg_share, ceg_rng)) merged.push_back(std::move(r));
    }
    return merged;
}

/// Final training file: augmented texts labeled with their target classes,
/// then the seed data appended (optional but default).
inline Dataset export_dataset(const std::vector<AlignmentRecord>& alignments, const Dataset& seed,
                              bool include_seeds) {
    Dataset out;
    out.name = seed.name + "-augmented";
    size_t index = 0;
    for (const auto& rec : alignments) {
        char prefix[16];
        std::snprintf(prefix, sizeof(prefix), "aug-%06zu-", index++);
        std::string id = std::string(prefix) +
                         sha256_hex(rec.final_text + "\x1f" + rec.original.target_class).substr(0, 8);
        out.examples.push_back({std::move(id), rec.final_text, rec.original.target_class});
    }
    if (include_seeds)
        for (const auto& ex : seed.examples) out.examples.push_back(ex);
    tardis::detail::finalize_dataset(out, nullptr);
    return out;
}

struct StageData {
    Dataset seed;
    std::optional<ClassSimilarityMatrix> similarity;
    std::vector<SparkThought> sparks;
    std::vector<GenerationRecord> seg_records;
    std::vector<GenerationRecord> ceg_records;
    std::vector<GenerationRecord> merged;
    std::vector<AlignmentRecord> alignments;
    ceg::DiscriminativeCache disc_cache;
};

namespace detail {

inline void run_stages(Runtime& rt, RunManifest& manifest, StageData& data, Stage from) {
    const RunConfig& cfg = rt.config;
    auto stage_index = [](Stage s) {
        for (size_t i = 0; i < all_stages().size(); ++i)
            if (all_stages()[i] == s) return i;
        return size_t(0);
    };
    auto should_run = [&](Stage s) { return stage_index(s) >= stage_index(from); };
    size_t calls_before = rt.gateway->calls();
    auto note_calls = [&](Stage s) {
        size_t now = rt.gateway->calls();
        manifest.backend_calls[stage_name(s)] = now - calls_before;
        calls_before = now;
    };

    if (should_run(Stage::similarity)) {
        StageClock clock;
        data.similarity = ceg::class_similarity(data.seed, *rt.embedder);
        write_file(rt.run_dir / "similarity.json", ceg::to_json(*data.similarity).dump(2) + "\n");
        record_artifact(manifest, rt.run_dir, Stage::similarity, "similarity.json",
                        data.similarity->classes.size());
        manifest.timings_ms[stage_name(Stage::similarity)] = clock.elapsed_ms();
        note_calls(Stage::similarity);
        manifest.last_completed_stage = stage_name(Stage::similarity);
        manifest.save(rt.run_dir);
    }

    auto targets = rt.targets(data.seed);

    if (should_run(Stage::seg) && cfg.has_method(Method::SEG)) {
        StageClock clock;
        data.sparks.clear();
        data.seg_records.clear();
        int shortfalls = 0;
        seg::Config seg_cfg{cfg.ideas_per_seed, cfg.k, cfg.resolved_rounds(), "seg"};
        for (const auto& cls : targets) {
            auto result = seg::run_class(data.seed, cls, seg_cfg, *rt.gateway, rt.prompts);
            shortfalls += result.shortfall_calls;
            for (auto& s : result.sparks) data.sparks.push_back(std::move(s));
            for (auto& r : result.records) data.seg_records.push_back(std::move(r));
        }
        write_jsonl_records(rt.run_dir / "spark_thoughts.jsonl", data.sparks);
        write_jsonl_records(rt.run_dir / "seg_generated.jsonl", data.seg_records);
        record_artifact(manifest, rt.run_dir, Stage::seg, "spark_thoughts.jsonl", data.sparks.size());
        record_artifact(manifest, rt.run_dir, Stage::seg, "seg_generated.jsonl",
                        data.seg_records.size());
        manifest.counts["seg_records"] = data.seg_records.size();
        manifest.counts["seg_shortfall_calls"] = shortfalls;
        manifest.timings_ms[stage_name(Stage::seg)] = clock.elapsed_ms();
        note_calls(Stage::seg);
        manifest.last_completed_stage = stage_name(Stage::seg);
        manifest.save(rt.run_dir);
    }

    if (should_run(Stage::ceg) && cfg.has_method(Method::CEG)) {
        StageClock clock;
        data.ceg_records.clear();
        data.disc_cache = ceg::DiscriminativeCache{};
        nlohmann::ordered_json ambiguous = nlohmann::ordered_json::object();
        int shortfalls = 0;
        ceg::Config ceg_cfg{cfg.k, cfg.n_ambiguous, cfg.resolved_rounds(),
                            static_cast<uint64_t>(cfg.rng_seed), "ceg"};
        for (const auto& cls : targets) {
            auto result = ceg::run_class(data.seed, cls, *data.similarity, ceg_cfg, *rt.gateway,
                                         rt.prompts, data.disc_cache);
            shortfalls += result.shortfall_calls;
            nlohmann::ordered_json members = nlohmann::ordered_json::array();
            for (const auto& [name, sim] : result.ambiguous.members)
                members.push_back({{"class", name}, {"similarity", sim}});
            ambiguous[cls] = members;
            for (auto& r : result.records) data.ceg_records.push_back(std::move(r));
        }
        write_file(rt.run_dir / "ambiguous.json",
                   nlohmann::ordered_json{{"n", cfg.n_ambiguous}, {"per_class", ambiguous}}.dump(2) +
                       "\n");
        data.disc_cache.save_jsonl(rt.run_dir / "discriminative.jsonl");
        write_jsonl_records(rt.run_dir / "ceg_generated.jsonl", data.ceg_records);
        record_artifact(manifest, rt.run_dir, Stage::ceg, "ambiguous.json", targets.size());
        record_artifact(manifest, rt.run_dir, Stage::ceg, "discriminative.jsonl",
                        data.disc_cache.entries().size());
        record_artifact(manifest, rt.run_dir, Stage::ceg, "ceg_generated.jsonl",
                        data.ceg_records.size());
        manifest.counts["ceg_records"] = data.ceg_records.size();
        manifest.counts["ceg_shortfall_calls"] = shortfalls;
        manifest.timings_ms[stage_name(Stage::ceg)] = clock.elapsed_ms();
        note_calls(Stage::ceg);
        manifest.last_completed_stage = stage_name(Stage::ceg);
        manifest.save(rt.run_dir);
    }

    if (should_run(Stage::merge)) {
        StageClock clock;
        data.merged = merge_records(data.seg_records, data.ceg_records, targets,
                                    cfg.per_class_budget, static_cast<uint64_t>(cfg.rng_seed));
        write_jsonl_records(rt.run_dir / "merged.jsonl", data.merged);
        record_artifact(manifest, rt.run_dir, Stage::merge, "merged.jsonl", data.merged.size());
        manifest.counts["merged"] = data.merged.size();
        manifest.timings_ms[stage_name(Stage::merge)] = clock.elapsed_ms();
        note_calls(Stage::merge);
        manifest.last_completed_stage = stage_name(Stage::merge);
        manifest.save(rt.run_dir);
    }

    if (should_run(Stage::adapt)) {
        StageClock clock;
        CaSummary summary;
        ca::Config ca_cfg{cfg.m_shots, "ca"};
        data.alignments = ca::adapt_all(data.merged, data.seed, ca_cfg, *rt.gateway, *rt.embedder,
                                        rt.prompts, data.disc_cache, &summary);
        write_jsonl_records(rt.run_dir / "aligned.jsonl", data.alignments);
        record_artifact(manifest, rt.run_dir, Stage::adapt, "aligned.jsonl", data.alignments.size());
        manifest.counts["aligned"] = summary.aligned;
        manifest.counts["misaligned"] = summary.misaligned;
        manifest.counts["modified"] = summary.modified;
        manifest.counts["modification_failed"] = summary.modification_failed;
        manifest.timings_ms[stage_name(Stage::adapt)] = clock.elapsed_ms();
        note_calls(Stage::adapt);
        manifest.last_completed_stage = stage_name(Stage::adapt);
        manifest.save(rt.run_dir);
    }

    if (should_run(Stage::metrics)) {
        StageClock clock;
        metrics::ApsOptions aps_opt{cfg.aps_pair_budget, static_cast<uint64_t>(cfg.rng_seed)};
        nlohmann::ordered_json report;
        report["seed_aps"] = to_json(metrics::aps_report(data.seed.examples, *rt.embedder, "seed",
                                                         aps_opt, nullptr));
        std::vector<LabeledExample> augmented;
        for (const auto& rec : data.alignments)
            augmented.push_back({"", rec.final_text, rec.original.target_class});
        std::set<std::string> aug_classes;
        for (const auto& ex : augmented) aug_classes.insert(ex.label);
        if (!augmented.empty()) {
            nlohmann::ordered_json aug;
            auto intra = metrics::intra_class_aps(augmented, *rt.embedder, aps_opt, nullptr);
            aug["per_class_intra"] = intra;
            if (!intra.empty()) {
                double sum = 0.0;
                for (const auto& [_, v] : intra) sum += v;
                aug["intra_mean"] = sum / static_cast<double>(intra.size());
            }
            if (aug_classes.size() >= 2)
                aug["inter_mean"] = metrics::inter_class_aps(augmented, *rt.embedder, aps_opt);
            report["augmented_aps"] = aug;
        }
        write_file(rt.run_dir / "metrics.json", report.dump(2) + "\n");
        record_artifact(manifest, rt.run_dir, Stage::metrics, "metrics.json", 1);
        manifest.timings_ms[stage_name(Stage::metrics)] = clock.elapsed_ms();
        note_calls(Stage::metrics);
        manifest.last_completed_stage = stage_name(Stage::metrics);
        manifest.save(rt.run_dir);
    }

    if (should_run(Stage::export_)) {
        StageClock clock;
        Dataset out = export_dataset(data.alignments, data.seed, cfg.include_seeds);
        write_dataset(out, rt.run_dir / "augmented.jsonl");
        record_artifact(manifest, rt.run_dir, Stage::export_, "augmented.jsonl", out.examples.size());
        manifest.counts["exported"] = out.examples.size();
        manifest.timings_ms[stage_name(Stage::export_)] = clock.elapsed_ms();
        note_calls(Stage::export_);
        manifest.last_completed_stage = stage_name(Stage::export_);
        size_t total = 0;
        for (const auto& [key, v] : manifest.backend_calls.items())
            if (key != "total") total += v.get<size_t>();
        manifest.backend_calls["total"] = total;
        manifest.save(rt.run_dir);
    }
}

} // namespace detail

/// Runs ingest through export into run_dir. Every artifact is a function of
/// (dataset bytes, config, backend script); wall-clock timings live only in
/// the manifest's timings_ms object.
inline RunManifest run_full_pipeline(const RunConfig& cfg, const std::filesystem::path& dataset_path,
                                     DatasetFormat format, const std::filesystem::path& run_dir) {
    Runtime rt(cfg, run_dir);
    RunManifest manifest;
    manifest.config_snapshot = to_json(cfg);
    manifest.config_hash = sha256_hex(manifest.config_snapshot.dump());

    StageData data;
    {
        detail::StageClock clock;
        Dataset full = load_dataset(dataset_path, format);
        if (cfg.sample) {
            auto selection = sample_seed(full, cfg.shots, cfg.rng_seed);
            data.seed = apply_selection(full, selection);
        } else {
            data.seed = full;
        }
        write_dataset(data.seed, run_dir / "seed.jsonl");
        detail::record_artifact(manifest, run_dir, Stage::ingest, "seed.jsonl",
                                data.seed.examples.size());
        manifest.dataset_info = {{"name", data.seed.name},
                                 {"classes", data.seed.classes.size()},
                                 {"examples", data.seed.examples.size()}};
        manifest.timings_ms[stage_name(Stage::ingest)] = clock.elapsed_ms();
        manifest.backend_calls[stage_name(Stage::ingest)] = 0;
        manifest.last_completed_stage = stage_name(Stage::ingest);
        manifest.save(run_dir);
    }

    write_file(run_dir / "config.json", to_json(cfg).dump(2) + "\n");
    detail::run_stages(rt, manifest, data, Stage::similarity);
    return manifest;
}

/// Re-executes from from_stage using the artifacts already in run_dir.
/// Refuses to resume when any earlier artifact's hash does not match the
/// manifest.
inline RunManifest resume_stage(const std::filesystem::path& run_dir, Stage from) {
    if (from == Stage::ingest)
        fail(errc::config, "resume from 'ingest' is a fresh run; use run instead");
    RunConfig cfg = load_config_file(run_dir / "config.json");
    RunManifest manifest = RunManifest::load(run_dir);

    auto stage_index = [](const std::string& name) {
        for (size_t i = 0; i < all_stages().size(); ++i)
            if (name == stage_name(all_stages()[i])) return i;
        return all_stages().size();
    };
    size_t from_index = stage_index(stage_name(from));

    for (const auto& a : manifest.artifacts) {
        if (stage_index(a.stage) >= from_index) continue;
        std::filesystem::path file = run_dir / a.path;
        if (!std::filesystem::exists(file))
            fail(errc::integrity, "cannot resume: missing artifact " + a.path);
        std::string actual = sha256_file(file);
        if (actual != a.sha256)
            fail(errc::integrity, "cannot resume: artifact hash mismatch for " + a.path);
    }

    Runtime rt(cfg, run_dir);
    StageData data;
    data.seed = load_dataset(run_dir / "seed.jsonl", DatasetFormat::jsonl, nullptr);
    if (from_index > stage_index("similarity") &&
        std::filesystem::exists(run_dir / "similarity.json"))
        data.similarity = ceg::matrix_from_json(
            nlohmann::json::parse(read_file(run_dir / "similarity.json")));
    if (from_index > stage_index("seg") && std::filesystem::exists(run_dir / "seg_generated.jsonl"))
        data.seg_records = read_generation_records(run_dir / "seg_generated.jsonl");
    if (from_index > stage_index("ceg")) {
        if (std::filesystem::exists(run_dir / "ceg_generated.jsonl"))
            data.ceg_records = read_generation_records(run_dir / "ceg_generated.jsonl");
        if (std::filesystem::exists(run_dir / "discriminative.jsonl"))
            data.disc_cache.load_jsonl(run_dir / "discriminative.jsonl");
    }
    if (from_index > stage_index("merge") && std::filesystem::exists(run_dir / "merged.jsonl"))
        data.merged = read_generation_records(run_dir / "merged.jsonl");
    if (from_index > stage_index("adapt") && std::filesystem::exists(run_dir / "aligned.jsonl"))
        data.alignments = read_alignment_records(run_dir / "aligned.jsonl");

    detail::drop_artifacts_from(manifest, from);
    detail::run_stages(rt, manifest, data, from);
    return manifest;
}

} // namespace pipeline
} // namespace tardis
