#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/corpus.hpp"
#include "tardis/embedding.hpp"
#include "tardis/error.hpp"
#include "tardis/llm_gateway.hpp"
#include "tardis/prompt_forge.hpp"
#include "tardis/rng.hpp"
#include "tardis/seg.hpp"

namespace tardis {

struct ClassSimilarityMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<double>> values; // symmetric; diagonal = intra-class mean pair similarity
    std::string provider_id;
    std::string model_id;

    size_t index_of(const std::string& cls) const {
        auto it = std::find(classes.begin(), classes.end(), cls);
        if (it == classes.end()) fail(errc::precondition, "class '" + cls + "' not in similarity matrix");
        return static_cast<size_t>(it - classes.begin());
    }

    double at(const std::string& t, const std::string& c) const {
        return values[index_of(t)][index_of(c)];
    }
};

struct AmbiguousClassSet {
    std::string target;
    std::vector<std::pair<std::string, double>> members; // descending similarity
    size_t n = 0;
};

struct DiscriminativeText {
    std::string target;
    std::string contrast;
    std::string text;
};

namespace ceg {

struct Config {
    int k = 5;
    int n_ambiguous = 5;
    int rounds = 50; // generation calls per class, round-robin over ambiguous classes
    uint64_t rng_seed = 0;
    std::string tag_prefix = "ceg";
};

/// Mean cosine over all cross-class example pairs, for every class pair.
/// Off-diagonal entries are computed once per unordered pair, so the matrix
/// is symmetric by construction. The diagonal stores the intra-class mean
/// pair similarity for reuse by metrics; selection never reads it.
inline ClassSimilarityMatrix class_similarity(const Dataset& seed, CachingEmbedder& embedder) {
    if (seed.classes.empty()) fail(errc::precondition, "class_similarity: empty dataset");

    std::vector<std::string> texts;
    for (const auto& ex : seed.examples) texts.push_back(ex.text);
    auto vectors = embedder.embed_texts(texts);

    std::map<std::string, std::vector<const EmbeddingVector*>> by_class;
    for (size_t i = 0; i < seed.examples.size(); ++i)
        by_class[seed.examples[i].label].push_back(&vectors[i]);

    const size_t n = seed.classes.size();
    ClassSimilarityMatrix m;
    m.classes = seed.classes;
    m.provider_id = embedder.provider().provider_id();
    m.model_id = embedder.provider().model_id();
    m.values.assign(n, std::vector<double>(n, 0.0));

    for (size_t t = 0; t < n; ++t) {
        const auto& dt = by_class.at(m.classes[t]);
        // diagonal: mean over unordered distinct pairs; 1.0 for singletons
        if (dt.size() < 2) {
            m.values[t][t] = 1.0;
        } else {
            double sum = 0.0;
            size_t pairs = 0;
            for (size_t i = 0; i < dt.size(); ++i)
                for (size_t j = i + 1; j < dt.size(); ++j) {
                    sum += cosine(*dt[i], *dt[j]);
                    ++pairs;
                }
            m.values[t][t] = sum / static_cast<double>(pairs);
        }
        for (size_t c = t + 1; c < n; ++c) {
            const auto& dc = by_class.at(m.classes[c]);
            double sum = 0.0;
            for (const auto* a : dt)
                for (const auto* b : dc) sum += cosine(*a, *b);
            double sim = sum / (static_cast<double>(dt.size()) * static_cast<double>(dc.size()));
            m.values[t][c] = sim;
            m.values[c][t] = sim;
        }
    }
    return m;
}

/// Top-n non-target classes by similarity to the target, ties broken by
/// class name ascending.
inline AmbiguousClassSet select_ambiguous_classes(const ClassSimilarityMatrix& sim,
                                                  const std::string& target, size_t n = 5) {
    if (n < 1) fail(errc::precondition, "select_ambiguous_classes: n must be >= 1");
    size_t t = sim.index_of(target);
    if (sim.classes.size() == 1)
        fail(errc::precondition, "select_ambiguous_classes: no contrast class exists");

    AmbiguousClassSet out;
    out.target = target;
    out.n = n;
    std::vector<std::pair<std::string, double>> others;
    for (size_t c = 0; c < sim.classes.size(); ++c)
        if (c != t) others.emplace_back(sim.classes[c], sim.values[t][c]);
    std::sort(others.begin(), others.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (others.size() > n) others.resize(n);
    out.members = std::move(others);
    return out;
}

/// Memoized per ordered (target, contrast) pair: CA reuses the exact text
/// CEG generated, so the cache key must be order-sensitive.
class DiscriminativeCache {
public:
    std::optional<DiscriminativeText> lookup(const std::string& target,
                                             const std::string& contrast) const {
        auto it = cache_.find({target, contrast});
        if (it == cache_.end()) return std::nullopt;
        return it->second;
    }

    void insert(const DiscriminativeText& d) { cache_.insert({{d.target, d.contrast}, d}); }

    std::vector<DiscriminativeText> entries() const {
        std::vector<DiscriminativeText> out;
        for (const auto& [_, d] : cache_) out.push_back(d);
        return out;
    }

    void load_jsonl(const std::filesystem::path& path) {
        for_each_line(read_file(path), [&](std::string_view line, size_t) {
            if (trim(line).empty()) return;
            nlohmann::json j = nlohmann::json::parse(line);
            insert({j.at("target").get<std::string>(), j.at("contrast").get<std::string>(),
                    j.at("text").get<std::string>()});
        });
    }

    void save_jsonl(const std::filesystem::path& path) const {
        std::string out;
        for (const auto& [_, d] : cache_) {
            nlohmann::ordered_json j{{"target", d.target}, {"contrast", d.contrast}, {"text", d.text}};
            out += j.dump();
            out += '\n';
        }
        write_file(path, out);
    }

private:
    std::map<std::pair<std::string, std::string>, DiscriminativeText> cache_;
};

inline DiscriminativeText generate_discriminative_text(
    const std::string& target, const std::vector<std::string>& target_seed_texts,
    const std::string& contrast, const std::vector<std::string>& contrast_seed_texts,
    Gateway& gateway, const PromptContext& prompts, DiscriminativeCache& cache,
    const std::string& tag_prefix = "ceg") {
    if (target == contrast) fail(errc::precondition, "discriminative text needs two distinct classes");
    if (target_seed_texts.empty() || contrast_seed_texts.empty())
        fail(errc::precondition, "discriminative text needs seed examples for both classes");
    if (auto hit = cache.lookup(target, contrast)) return *hit;

    auto req = gateway.make_request(prompts.render(template_id::discriminative_text,
                                                   {{"target_class_name", target},
                                                    {"target_seed_data", target_seed_texts},
                                                    {"ambiguous_class_name", contrast},
                                                    {"ambiguous_seed_data", contrast_seed_texts}}),
                                    tag_prefix + ".disc/" + target + "/" + contrast);
    auto resp = gateway.complete(req);

    std::string text;
    for_each_line(resp.raw_text, [&](std::string_view line, size_t) {
        if (text.empty()) {
            std::string t = trim(line);
            if (!t.empty()) text = std::move(t);
        }
    });
    if (text.empty())
        fail(errc::backend, "empty discriminative text for (" + target + ", " + contrast + ")");

    DiscriminativeText out{target, contrast, text};
    cache.insert(out);
    return out;
}

/// Drops one or two random examples (never below one survivor) and permutes
/// the rest; the prompt context varies between rounds while staying a
/// subset of real seed data.
inline std::vector<LabeledExample> diversify_prompt_context(
    const std::vector<LabeledExample>& seeds, RngStream& rng) {
    if (seeds.empty()) fail(errc::precondition, "diversify_prompt_context: empty seed list");
    uint64_t r = 1 + rng.uniform_below(2);          // {1, 2}
    r = std::min<uint64_t>(r, seeds.size() - 1);    // keep at least one
    std::vector<LabeledExample> out = seeds;
    rng.shuffle(out);
    out.resize(seeds.size() - static_cast<size_t>(r));
    return out;
}

inline std::vector<GenerationRecord> generate_examples(
    const std::string& target, const std::string& contrast, const DiscriminativeText& disc,
    const Dataset& seed, int k, Gateway& gateway, const PromptContext& prompts, RngStream& rng,
    int round = 0, const std::string& tag_prefix = "ceg") {
    if (disc.target != target || disc.contrast != contrast)
        fail(errc::precondition, "discriminative text does not match (target, contrast)");
    if (k < 1) fail(errc::precondition, "k must be >= 1");

    auto copy_examples = [&](const std::string& cls) {
        std::vector<LabeledExample> out;
        for (const auto* ex : seed.examples_of(cls)) out.push_back(*ex);
        if (out.empty()) fail(errc::precondition, "no seed examples for class '" + cls + "'");
        return out;
    };
    auto target_ctx = diversify_prompt_context(copy_examples(target), rng);
    auto contrast_ctx = diversify_prompt_context(copy_examples(contrast), rng);

    auto texts_of = [](const std::vector<LabeledExample>& v) {
        std::vector<std::string> out;
        for (const auto& ex : v) out.push_back(ex.text);
        return out;
    };

    auto req = gateway.make_request(prompts.render(template_id::ceg_generate,
                                                   {{"target_class_name", target},
                                                    {"target_seed_data", texts_of(target_ctx)},
                                                    {"ambiguous_class_name", contrast},
                                                    {"ambiguous_seed_data", texts_of(contrast_ctx)},
                                                    {"discriminative_text", disc.text}}),
                                    tag_prefix + ".generate/" + target + "/" + std::to_string(round));
    auto resp = gateway.complete(req);
    std::string prompt_hash = sha256_hex(req.prompt);

    auto items = parse_enumerated_items(resp.raw_text, static_cast<size_t>(k), req.prompt);
    bool shortfall = items.size() < static_cast<size_t>(k);
    SparkThought spark{target, disc.text, SparkThought::Origin::ceg, contrast, round};
    std::vector<GenerationRecord> out;
    for (const auto& item : items)
        out.push_back({item, target, Method::CEG, spark, prompt_hash, round, shortfall});
    return out;
}

struct ClassResult {
    AmbiguousClassSet ambiguous;
    std::vector<GenerationRecord> records;
    int calls = 0; // generation calls only; discriminative calls tracked by the cache
    int shortfall_calls = 0;
};

/// CEG pass for one class: pick the n most similar classes, generate one
/// discriminative text per contrast (memoized), then spend the call budget
/// round-robin across contrasts. Each call gets its own RNG substream keyed
/// by (seed, class, round), so parallel schedules could never change the
/// output.
inline ClassResult run_class(const Dataset& seed, const std::string& class_name,
                             const ClassSimilarityMatrix& sim, const Config& cfg, Gateway& gateway,
                             const PromptContext& prompts, DiscriminativeCache& cache) {
    ClassResult result;
    result.ambiguous = select_ambiguous_classes(sim, class_name, static_cast<size_t>(cfg.n_ambiguous));

    auto target_texts = seed.texts_of(class_name);
    for (const auto& [contrast, _] : result.ambiguous.members)
        generate_discriminative_text(class_name, target_texts, contrast, seed.texts_of(contrast),
                                     gateway, prompts, cache, cfg.tag_prefix);

    for (int call = 0; call < cfg.rounds; ++call) {
        const auto& contrast =
            result.ambiguous.members[static_cast<size_t>(call) % result.ambiguous.members.size()].first;
        auto disc = cache.lookup(class_name, contrast);
        RngStream rng(cfg.rng_seed, cfg.tag_prefix + "/" + class_name + "/round=" + std::to_string(call));
        auto records = generate_examples(class_name, contrast, *disc, seed, cfg.k, gateway, prompts,
                                         rng, call, cfg.tag_prefix);
        result.calls += 1;
        if (records.size() < static_cast<size_t>(cfg.k)) result.shortfall_calls += 1;
        for (auto& r : records) result.records.push_back(std::move(r));
    }
    return result;
}

inline nlohmann::ordered_json to_json(const ClassSimilarityMatrix& m) {
    return {{"classes", m.classes},
            {"provider", m.provider_id},
            {"model", m.model_id},
            {"values", m.values}};
}

inline ClassSimilarityMatrix matrix_from_json(const nlohmann::json& j) {
    ClassSimilarityMatrix m;
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.provider_id = j.at("provider").get<std::string>();
    m.model_id = j.at("model").get<std::string>();
    m.values = j.at("values").get<std::vector<std::vector<double>>>();
    return m;
}

} // namespace ceg
} // namespace tardis
