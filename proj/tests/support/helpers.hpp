#pragma once

// Shared fixtures and independent oracles. Oracle implementations stay
// deliberately separate from the library code paths they check: plain
// double loops, map-based feature counting, re-derived sampling.

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tardis/corpus.hpp"
#include "tardis/embedding.hpp"
#include "tardis/llm_gateway.hpp"
#include "tardis/prompt_forge.hpp"
#include "tardis/rng.hpp"

namespace testsupport {

inline std::filesystem::path test_data_dir() { return TARDIS_TEST_DATA_DIR; }
inline std::filesystem::path template_dir() { return TARDIS_TEMPLATE_DIR; }

// Unique scratch directory under the build tree.
inline std::filesystem::path fresh_dir(const std::string& hint) {
    static int counter = 0;
    auto dir = std::filesystem::temp_directory_path() /
               ("tardis-test-" + hint + "-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline tardis::Dataset make_dataset(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& per_class,
    const std::string& name = "fixture") {
    tardis::Dataset d;
    d.name = name;
    size_t row = 0;
    for (const auto& [label, texts] : per_class) {
        for (const auto& text : texts) {
            char prefix[16];
            std::snprintf(prefix, sizeof(prefix), "%06zu-", row++);
            d.examples.push_back({std::string(prefix) + label, text, label});
        }
    }
    std::set<std::string> classes;
    for (const auto& ex : d.examples) classes.insert(ex.label);
    d.classes.assign(classes.begin(), classes.end());
    return d;
}

// ---- oracles ----

inline double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Independent re-derivation of the local embedder's feature map: collect
// trigram counts in a map, then scatter into the hashed vector.
inline std::vector<double> oracle_local_embed(const std::string& text) {
    std::string norm;
    {
        std::string trimmed = tardis::trim(text);
        bool space = false;
        for (char c : trimmed) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                space = true;
                continue;
            }
            if (space && !norm.empty()) norm.push_back(' ');
            space = false;
            norm.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    std::map<std::string, int> grams;
    if (norm.size() < 3) {
        grams[norm] += 1;
    } else {
        for (size_t i = 0; i + 3 <= norm.size(); ++i) grams[norm.substr(i, 3)] += 1;
    }
    std::vector<double> v(256, 0.0);
    for (const auto& [g, count] : grams) {
        uint64_t h = tardis::fnv1a64(g);
        double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
        v[h % 256] += sign * count;
    }
    double n2 = 0;
    for (double x : v) n2 += x * x;
    if (n2 == 0) {
        v.assign(256, 0.0);
        v[tardis::fnv1a64(norm) % 256] = 1.0;
        n2 = 1.0;
    }
    for (double& x : v) x /= std::sqrt(n2);
    return v;
}

// Eq-style brute force: embed every example with the provided function and
// average cosine over the full cross product.
inline double oracle_pair_similarity(const std::vector<std::vector<double>>& left,
                                     const std::vector<std::vector<double>>& right) {
    double sum = 0;
    for (const auto& a : left)
        for (const auto& b : right) sum += oracle_cosine(a, b);
    return sum / (static_cast<double>(left.size()) * static_cast<double>(right.size()));
}

// ---- providers and backends for fixtures ----

/// Provider that returns pre-assigned vectors per exact text.
class FixedProvider : public tardis::EmbeddingProvider {
public:
    explicit FixedProvider(std::map<std::string, std::vector<double>> by_text,
                           std::string model = "fixed")
        : by_text_(std::move(by_text)), model_(std::move(model)) {}

    std::string provider_id() const override { return "test"; }
    std::string model_id() const override { return model_; }

    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override {
        std::vector<std::vector<double>> out;
        for (const auto& t : texts) {
            auto it = by_text_.find(t);
            if (it == by_text_.end()) throw std::runtime_error("FixedProvider: no vector for " + t);
            out.push_back(it->second);
        }
        return out;
    }

private:
    std::map<std::string, std::vector<double>> by_text_;
    std::string model_;
};

/// Wraps a provider, scaling every vector by a constant factor. With a
/// power-of-two factor the scaling is exact in IEEE arithmetic.
class ScaledProvider : public tardis::EmbeddingProvider {
public:
    ScaledProvider(std::shared_ptr<tardis::EmbeddingProvider> inner, double factor)
        : inner_(std::move(inner)), factor_(factor) {}

    std::string provider_id() const override { return inner_->provider_id(); }
    std::string model_id() const override { return inner_->model_id() + "-scaled"; }

    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override {
        auto out = inner_->embed_batch(texts);
        for (auto& v : out)
            for (double& x : v) x *= factor_;
        return out;
    }

private:
    std::shared_ptr<tardis::EmbeddingProvider> inner_;
    double factor_;
};

/// Counts how many texts reach the underlying provider.
class CountingProvider : public tardis::EmbeddingProvider {
public:
    explicit CountingProvider(std::shared_ptr<tardis::EmbeddingProvider> inner)
        : inner_(std::move(inner)) {}

    std::string provider_id() const override { return inner_->provider_id(); }
    std::string model_id() const override { return inner_->model_id(); }

    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override {
        calls_ += 1;
        texts_seen_ += texts.size();
        return inner_->embed_batch(texts);
    }

    size_t calls() const { return calls_; }
    size_t texts_seen() const { return texts_seen_; }

private:
    std::shared_ptr<tardis::EmbeddingProvider> inner_;
    size_t calls_ = 0;
    size_t texts_seen_ = 0;
};

/// Fails with a retryable error n times, then delegates.
class FlakyBackend : public tardis::TextBackend {
public:
    FlakyBackend(std::shared_ptr<tardis::TextBackend> inner, int failures)
        : inner_(std::move(inner)), failures_left_(failures) {}

    std::string id() const override { return "flaky"; }

    tardis::GenerationResponse complete(const tardis::GenerationRequest& req) override {
        if (failures_left_ > 0) {
            --failures_left_;
            throw tardis::backend_error("injected transient failure", /*retryable=*/true);
        }
        return inner_->complete(req);
    }

private:
    std::shared_ptr<tardis::TextBackend> inner_;
    int failures_left_;
};

// Cooperative mock: answers every stage with well-formed output, k items per
// generation call, the target class for every verification.
inline std::shared_ptr<tardis::ScriptedMockBackend> cooperative_mock(int k = 5) {
    auto mock = std::make_shared<tardis::ScriptedMockBackend>(true);
    mock->add_glob_rule("seg.describe/*", "Requests in the %CLASS% category.");
    std::string ideas;
    for (int i = 1; i <= 5; ++i)
        ideas += std::to_string(i) + ". idea " + std::to_string(i) + " %HASH%\n";
    mock->add_glob_rule("seg.spark/*", ideas);
    std::string items;
    for (int i = 1; i <= k; ++i)
        items += std::to_string(i) + ". sample " + std::to_string(i) + " %HASH%\n";
    mock->add_glob_rule("seg.generate/*", items);
    mock->add_glob_rule("ceg.disc/*", "They differ in focus (%HASH%).");
    mock->add_glob_rule("ceg.generate/*", items);
    mock->add_glob_rule("ca.verify/*", "%CLASS%");
    mock->add_glob_rule("ca.modify/*", "rewritten for %CLASS% %HASH%");
    return mock;
}

inline tardis::TemplateSet load_templates(const std::string& domain = "banking") {
    return tardis::load_template_set(template_dir(), domain);
}

} // namespace testsupport
