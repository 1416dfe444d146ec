#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/corpus.hpp"
#include "tardis/error.hpp"
#include "tardis/hash.hpp"
#include "tardis/io.hpp"

namespace tardis {

struct EmbeddingVector {
    std::vector<double> values;
    std::string provider_id;
    std::string model_id;

    size_t dim() const { return values.size(); }
};

inline void check_compatible(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.provider_id != b.provider_id || a.model_id != b.model_id || a.dim() != b.dim())
        fail(errc::embedding, "incompatible embeddings: (" + a.provider_id + "," + a.model_id + "," +
                                  std::to_string(a.dim()) + ") vs (" + b.provider_id + "," +
                                  b.model_id + "," + std::to_string(b.dim()) + ")");
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    check_compatible(a, b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) fail(errc::embedding, "cosine undefined for zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string provider_id() const = 0;
    virtual std::string model_id() const = 0;
    virtual std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) = 0;
};

/// Deterministic offline embedder: character trigrams feature-hashed into a
/// 256-dim signed-count vector, L2-normalized. Not a sentence-transformer
/// stand-in quality-wise, but stable across runs and platforms, which is
/// what the retrieval/similarity tests need.
class LocalHashedEmbedder : public EmbeddingProvider {
public:
    static constexpr size_t kDim = 256;

    std::string provider_id() const override { return "local"; }
    std::string model_id() const override { return "ngram3-256"; }

    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

    static std::vector<double> embed_one(const std::string& text) {
        std::string norm = normalize(text);
        std::vector<double> v(kDim, 0.0);
        auto add_gram = [&](std::string_view g) {
            uint64_t h = fnv1a64(g);
            size_t idx = static_cast<size_t>(h % kDim);
            double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
            v[idx] += sign;
        };
        if (norm.size() < 3) {
            add_gram(norm);
        } else {
            for (size_t i = 0; i + 3 <= norm.size(); ++i) add_gram(std::string_view(norm).substr(i, 3));
        }
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 == 0.0) {
            // signed counts cancelled out; fall back to a whole-string bucket
            v.assign(kDim, 0.0);
            v[fnv1a64(norm) % kDim] = 1.0;
            n2 = 1.0;
        }
        double inv = 1.0 / std::sqrt(n2);
        for (double& x : v) x *= inv;
        return v;
    }

    static std::string normalize(const std::string& text) {
        std::string out;
        bool pending_space = false;
        for (char c : trim(text)) {
            unsigned char u = static_cast<unsigned char>(c);
            if (std::isspace(u)) {
                pending_space = true;
                continue;
            }
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(u)));
        }
        return out;
    }
};

/// Persistent append-only embedding cache, one JSON record per line:
/// {"key": <sha256 of text>, "model": ..., "provider": ..., "vector": [...]}.
/// Corrupt lines are skipped with a warning so a torn write never poisons
/// later runs.
class EmbeddingCache {
public:
    EmbeddingCache() = default;

    explicit EmbeddingCache(std::filesystem::path path, const warning_sink& warnings = stderr_warnings())
        : path_(std::move(path)) {
        if (path_.empty() || !std::filesystem::exists(path_)) return;
        std::string content = read_file(path_);
        for_each_line(content, [&](std::string_view line, size_t line_no) {
            if (trim(line).empty()) return;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("key") || !j.contains("vector") ||
                !j.contains("model") || !j.contains("provider") || !j["vector"].is_array()) {
                warn(warnings, path_.string() + ": skipping corrupt cache entry at line " +
                                   std::to_string(line_no));
                return;
            }
            std::vector<double> vec;
            for (const auto& x : j["vector"]) {
                if (!x.is_number()) {
                    warn(warnings, path_.string() + ": skipping corrupt cache entry at line " +
                                       std::to_string(line_no));
                    return;
                }
                vec.push_back(x.get<double>());
            }
            entries_[composite_key(j["provider"].get<std::string>(), j["model"].get<std::string>(),
                                   j["key"].get<std::string>())] = std::move(vec);
        });
    }

    static std::string text_key(const std::string& text) { return sha256_hex(text); }

    bool lookup(const std::string& provider, const std::string& model, const std::string& text,
                std::vector<double>& out) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(composite_key(provider, model, text_key(text)));
        if (it == entries_.end()) return false;
        out = it->second;
        return true;
    }

    void store(const std::string& provider, const std::string& model, const std::string& text,
               const std::vector<double>& vec) {
        std::lock_guard<std::mutex> lock(mu_);
        std::string key = text_key(text);
        auto [it, inserted] = entries_.try_emplace(composite_key(provider, model, key), vec);
        if (!inserted) return; // identical by determinism; keep first
        if (path_.empty()) return;
        nlohmann::ordered_json j;
        j["key"] = key;
        j["model"] = model;
        j["provider"] = provider;
        j["vector"] = vec;
        if (!appender_.is_open()) {
            if (path_.has_parent_path()) {
                std::error_code ec;
                std::filesystem::create_directories(path_.parent_path(), ec);
            }
            appender_.open(path_, std::ios::binary | std::ios::app);
            if (!appender_) fail(errc::io, "cannot open cache for append: " + path_.string());
        }
        appender_ << j.dump() << '\n';
        appender_.flush();
    }

    size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.size();
    }

private:
    static std::string composite_key(const std::string& provider, const std::string& model,
                                     const std::string& key) {
        return provider + "\x1f" + model + "\x1f" + key;
    }

    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::map<std::string, std::vector<double>> entries_;
    std::ofstream appender_;
};

/// Provider wrapper that consults the cache first and batches misses to the
/// underlying provider. `max_in_flight` > 1 splits misses across async
/// chunks; results are reassembled in input order either way.
class CachingEmbedder {
public:
    CachingEmbedder(std::shared_ptr<EmbeddingProvider> provider,
                    std::shared_ptr<EmbeddingCache> cache = std::make_shared<EmbeddingCache>(),
                    size_t max_in_flight = 1, int retries = 3)
        : provider_(std::move(provider)), cache_(std::move(cache)),
          max_in_flight_(std::max<size_t>(1, max_in_flight)), retries_(std::max(1, retries)) {}

    std::vector<EmbeddingVector> embed_texts(const std::vector<std::string>& texts) {
        if (texts.empty()) fail(errc::precondition, "embed_texts: no texts given");
        const std::string pid = provider_->provider_id();
        const std::string mid = provider_->model_id();

        std::vector<EmbeddingVector> out(texts.size());
        std::vector<std::string> miss_texts; // distinct texts absent from the cache
        std::vector<size_t> miss_positions;  // first position of each miss, for error reports
        std::map<std::string, size_t> miss_index;
        for (size_t i = 0; i < texts.size(); ++i) {
            std::vector<double> vec;
            if (cache_->lookup(pid, mid, texts[i], vec) || miss_index.count(texts[i])) continue;
            miss_index[texts[i]] = miss_texts.size();
            miss_texts.push_back(texts[i]);
            miss_positions.push_back(i);
        }

        if (!miss_texts.empty()) {
            auto vectors = fetch_with_retries(miss_texts, miss_positions);
            if (vectors.size() != miss_texts.size())
                fail(errc::embedding, "provider returned " + std::to_string(vectors.size()) +
                                          " vectors for " + std::to_string(miss_texts.size()) + " texts");
            fetches_ += miss_texts.size();
            for (size_t k = 0; k < miss_texts.size(); ++k) {
                if (vectors[k].empty()) fail(errc::embedding, "provider returned empty vector");
                for (double x : vectors[k])
                    if (!std::isfinite(x)) fail(errc::embedding, "provider returned non-finite value");
                cache_->store(pid, mid, miss_texts[k], vectors[k]);
            }
        }

        for (size_t i = 0; i < texts.size(); ++i) {
            std::vector<double> vec;
            if (!cache_->lookup(pid, mid, texts[i], vec))
                fail(errc::embedding, "cache lost a just-stored vector"); // unreachable
            out[i] = {std::move(vec), pid, mid};
        }

        for (const auto& v : out) {
            if (expected_dim_ == 0) expected_dim_ = v.dim();
            if (v.dim() != expected_dim_)
                fail(errc::embedding, "dimension mismatch vs. cache: " + std::to_string(v.dim()) +
                                          " vs expected " + std::to_string(expected_dim_));
        }
        return out;
    }

    EmbeddingVector embed_one(const std::string& text) { return embed_texts({text})[0]; }

    size_t provider_fetches() const { return fetches_.load(); }
    const EmbeddingProvider& provider() const { return *provider_; }

private:
    std::vector<std::vector<double>> fetch_with_retries(const std::vector<std::string>& texts,
                                                        const std::vector<size_t>& positions) {
        for (int attempt = 1;; ++attempt) {
            try {
                return fetch(texts);
            } catch (const std::exception& e) {
                if (attempt < retries_) continue;
                std::string indices;
                for (size_t i = 0; i < positions.size(); ++i) {
                    if (i) indices += ",";
                    if (i == 8) {
                        indices += "...";
                        break;
                    }
                    indices += std::to_string(positions[i]);
                }
                fail(errc::embedding, "provider failed after " + std::to_string(attempt) +
                                          " attempt(s) for batch indices [" + indices +
                                          "]: " + e.what());
            }
        }
    }

    std::vector<std::vector<double>> fetch(const std::vector<std::string>& texts) {
        if (max_in_flight_ <= 1 || texts.size() <= 1) return provider_->embed_batch(texts);
        size_t chunk = (texts.size() + max_in_flight_ - 1) / max_in_flight_;
        std::vector<std::future<std::vector<std::vector<double>>>> futs;
        for (size_t start = 0; start < texts.size(); start += chunk) {
            size_t end = std::min(texts.size(), start + chunk);
            std::vector<std::string> part(texts.begin() + start, texts.begin() + end);
            futs.push_back(std::async(std::launch::async,
                                      [this, part = std::move(part)]() { return provider_->embed_batch(part); }));
        }
        std::vector<std::vector<double>> all;
        for (auto& f : futs) {
            auto part = f.get();
            for (auto& v : part) all.push_back(std::move(v));
        }
        return all;
    }

    std::shared_ptr<EmbeddingProvider> provider_;
    std::shared_ptr<EmbeddingCache> cache_;
    size_t max_in_flight_;
    int retries_;
    std::atomic<size_t> fetches_{0};
    std::atomic<size_t> expected_dim_{0};
};

struct ScoredExample {
    LabeledExample example;
    double similarity = 0.0;
};

/// Top-m pool examples by cosine to the query, most similar first, ties
/// broken by example id ascending. m > |pool| returns the whole pool.
inline std::vector<ScoredExample> retrieve_similar(const std::string& query, const Dataset& pool,
                                                   size_t m, CachingEmbedder& embedder) {
    if (pool.examples.empty()) fail(errc::precondition, "retrieve_similar: empty pool");
    if (m < 1) fail(errc::precondition, "retrieve_similar: m must be >= 1");

    std::vector<std::string> texts;
    texts.reserve(pool.examples.size() + 1);
    texts.push_back(query);
    for (const auto& ex : pool.examples) texts.push_back(ex.text);
    auto vectors = embedder.embed_texts(texts);

    std::vector<ScoredExample> scored;
    scored.reserve(pool.examples.size());
    for (size_t i = 0; i < pool.examples.size(); ++i)
        scored.push_back({pool.examples[i], cosine(vectors[0], vectors[i + 1])});

    std::sort(scored.begin(), scored.end(), [](const ScoredExample& a, const ScoredExample& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.example.id < b.example.id;
    });
    if (scored.size() > m) scored.resize(m);
    return scored;
}

} // namespace tardis
