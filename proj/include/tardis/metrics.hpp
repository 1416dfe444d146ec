#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/class_adaptation.hpp"
#include "tardis/corpus.hpp"
#include "tardis/embedding.hpp"
#include "tardis/error.hpp"
#include "tardis/rng.hpp"

namespace tardis {

struct ApsReport {
    std::map<std::string, double> per_class_intra;
    double intra_mean = 0.0; // mean over classes with >= 2 examples
    double inter_mean = 0.0;
    std::string dataset_tag;
    bool sampled = false; // true when any pair loop hit the budget
};

struct ConfusionReport {
    double tp = 0.0, fp = 0.0, fn = 0.0, tn = 0.0; // proportions, sum to 1
    size_t total = 0;
};

struct ProxyEvalReport {
    double accuracy = 0.0;
    std::map<std::string, double> per_class_accuracy;
    size_t n_test = 0;
    std::string classifier = "nearest-centroid";
};

namespace metrics {

struct ApsOptions {
    size_t pair_budget = 200000; // pairs above this are sampled, seeded
    uint64_t rng_seed = 0;
};

namespace detail {

// Mean cosine over the pair set (i, j): either full enumeration or, above
// the budget, a seeded uniform sample of pairs.
inline double mean_pair_cosine(const std::vector<const EmbeddingVector*>& left,
                               const std::vector<const EmbeddingVector*>& right,
                               bool same_set, const ApsOptions& opt, const std::string& scope,
                               bool* sampled_out = nullptr) {
    const size_t n = left.size(), m = right.size();
    const size_t total = same_set ? n * (n - 1) / 2 : n * m;
    if (total == 0) fail(errc::precondition, "mean_pair_cosine: no pairs");

    double sum = 0.0;
    if (opt.pair_budget == 0 || total <= opt.pair_budget) {
        if (same_set) {
            for (size_t i = 0; i < n; ++i)
                for (size_t j = i + 1; j < n; ++j) sum += cosine(*left[i], *left[j]);
        } else {
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) sum += cosine(*left[i], *right[j]);
        }
        return sum / static_cast<double>(total);
    }

    if (sampled_out) *sampled_out = true;
    RngStream rng(opt.rng_seed, "aps/" + scope);
    for (size_t draw = 0; draw < opt.pair_budget; ++draw) {
        size_t i, j;
        if (same_set) {
            i = static_cast<size_t>(rng.uniform_below(n));
            j = static_cast<size_t>(rng.uniform_below(n - 1));
            if (j >= i) ++j;
        } else {
            i = static_cast<size_t>(rng.uniform_below(n));
            j = static_cast<size_t>(rng.uniform_below(m));
        }
        sum += cosine(*left[i], same_set ? *left[j] : *right[j]);
    }
    return sum / static_cast<double>(opt.pair_budget);
}

inline std::map<std::string, std::vector<const EmbeddingVector*>> embed_by_class(
    const std::vector<LabeledExample>& examples, CachingEmbedder& embedder,
    std::vector<EmbeddingVector>& storage) {
    if (examples.empty()) fail(errc::precondition, "no examples to embed");
    std::vector<std::string> texts;
    for (const auto& ex : examples) texts.push_back(ex.text);
    storage = embedder.embed_texts(texts);
    std::map<std::string, std::vector<const EmbeddingVector*>> by_class;
    for (size_t i = 0; i < examples.size(); ++i)
        by_class[examples[i].label].push_back(&storage[i]);
    return by_class;
}

} // namespace detail

/// Per-class mean cosine over all unordered within-class pairs. Classes
/// with fewer than two examples are excluded with a warning.
inline std::map<std::string, double> intra_class_aps(const std::vector<LabeledExample>& examples,
                                                     CachingEmbedder& embedder,
                                                     const ApsOptions& opt = {},
                                                     const warning_sink& warnings = stderr_warnings(),
                                                     bool* sampled_out = nullptr) {
    std::vector<EmbeddingVector> storage;
    auto by_class = detail::embed_by_class(examples, embedder, storage);
    std::map<std::string, double> out;
    for (const auto& [cls, vecs] : by_class) {
        if (vecs.size() < 2) {
            warn(warnings, "intra_class_aps: class '" + cls + "' has < 2 examples; excluded");
            continue;
        }
        out[cls] = detail::mean_pair_cosine(vecs, vecs, /*same_set=*/true, opt, "intra/" + cls,
                                            sampled_out);
    }
    return out;
}

/// Mean cosine over all cross-class pairs.
inline double inter_class_aps(const std::vector<LabeledExample>& examples,
                              CachingEmbedder& embedder, const ApsOptions& opt = {},
                              bool* sampled_out = nullptr) {
    std::vector<EmbeddingVector> storage;
    auto by_class = detail::embed_by_class(examples, embedder, storage);
    if (by_class.size() < 2) fail(errc::precondition, "inter_class_aps: need >= 2 classes");

    // flatten class pairs; budget applies per class pair
    double sum = 0.0;
    size_t total_pairs = 0;
    bool over_budget = false;
    std::vector<std::string> classes;
    for (const auto& [cls, _] : by_class) classes.push_back(cls);
    // distribute the budget across class pairs proportionally by pair count
    size_t grand_total = 0;
    for (size_t a = 0; a < classes.size(); ++a)
        for (size_t b = a + 1; b < classes.size(); ++b)
            grand_total += by_class[classes[a]].size() * by_class[classes[b]].size();
    if (opt.pair_budget != 0 && grand_total > opt.pair_budget) over_budget = true;

    for (size_t a = 0; a < classes.size(); ++a) {
        for (size_t b = a + 1; b < classes.size(); ++b) {
            const auto& va = by_class[classes[a]];
            const auto& vb = by_class[classes[b]];
            size_t pair_count = va.size() * vb.size();
            ApsOptions local = opt;
            if (over_budget) {
                double share = static_cast<double>(pair_count) / static_cast<double>(grand_total);
                local.pair_budget = std::max<size_t>(
                    1, static_cast<size_t>(share * static_cast<double>(opt.pair_budget)));
            } else {
                local.pair_budget = 0; // full enumeration
            }
            size_t used = over_budget ? std::min(local.pair_budget, pair_count) : pair_count;
            double mean = detail::mean_pair_cosine(va, vb, /*same_set=*/false, local,
                                                   "inter/" + classes[a] + "/" + classes[b],
                                                   sampled_out);
            sum += mean * static_cast<double>(used);
            total_pairs += used;
        }
    }
    if (over_budget && sampled_out) *sampled_out = true;
    return sum / static_cast<double>(total_pairs);
}

inline ApsReport aps_report(const std::vector<LabeledExample>& examples, CachingEmbedder& embedder,
                            const std::string& tag, const ApsOptions& opt = {},
                            const warning_sink& warnings = stderr_warnings()) {
    ApsReport report;
    report.dataset_tag = tag;
    report.per_class_intra = intra_class_aps(examples, embedder, opt, warnings, &report.sampled);
    if (report.per_class_intra.empty())
        fail(errc::precondition, "aps_report: no class has >= 2 examples");
    double sum = 0.0;
    for (const auto& [_, v] : report.per_class_intra) sum += v;
    report.intra_mean = sum / static_cast<double>(report.per_class_intra.size());
    report.inter_mean = inter_class_aps(examples, embedder, opt, &report.sampled);
    return report;
}

/// Ground-truth interface for auditing the verifier. Implementations label
/// the record's final text.
class ReferenceLabeler {
public:
    virtual ~ReferenceLabeler() = default;
    virtual std::string label(const std::string& text) = 0;
};

class LookupLabeler : public ReferenceLabeler {
public:
    explicit LookupLabeler(std::map<std::string, std::string> by_text)
        : by_text_(std::move(by_text)) {}

    std::string label(const std::string& text) override {
        auto it = by_text_.find(text);
        if (it == by_text_.end()) fail(errc::precondition, "reference has no label for: " + text);
        return it->second;
    }

private:
    std::map<std::string, std::string> by_text_;
};

/// Nearest-centroid over embeddings: the desk-scale stand-in for a
/// classifier trained on full data.
class CentroidModel {
public:
    CentroidModel(const std::vector<LabeledExample>& train, CachingEmbedder& embedder)
        : embedder_(embedder) {
        if (train.empty()) fail(errc::precondition, "CentroidModel: empty training set");
        std::vector<std::string> texts;
        for (const auto& ex : train) texts.push_back(ex.text);
        auto vectors = embedder.embed_texts(texts);
        std::map<std::string, std::pair<std::vector<double>, size_t>> sums;
        for (size_t i = 0; i < train.size(); ++i) {
            auto& [sum, count] = sums[train[i].label];
            if (sum.empty()) sum.assign(vectors[i].dim(), 0.0);
            for (size_t d = 0; d < vectors[i].dim(); ++d) sum[d] += vectors[i].values[d];
            count += 1;
        }
        for (auto& [cls, sc] : sums) {
            auto& [sum, count] = sc;
            for (double& x : sum) x /= static_cast<double>(count);
            centroids_.push_back({{std::move(sum), vectors[0].provider_id, vectors[0].model_id}, cls});
        }
        // classes sorted by name so argmax ties resolve to the first
        std::sort(centroids_.begin(), centroids_.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
    }

    std::string predict(const std::string& text) const {
        auto vec = embedder_.embed_one(text);
        std::string best;
        double best_sim = -2.0;
        for (const auto& [centroid, cls] : centroids_) {
            double sim = cosine(vec, centroid);
            if (sim > best_sim) { // strict: earlier (name-ascending) class wins ties
                best_sim = sim;
                best = cls;
            }
        }
        return best;
    }

    std::vector<std::string> classes() const {
        std::vector<std::string> out;
        for (const auto& [_, cls] : centroids_) out.push_back(cls);
        return out;
    }

private:
    CachingEmbedder& embedder_;
    std::vector<std::pair<EmbeddingVector, std::string>> centroids_;
};

class CentroidLabeler : public ReferenceLabeler {
public:
    CentroidLabeler(const std::vector<LabeledExample>& train, CachingEmbedder& embedder)
        : model_(train, embedder) {}

    std::string label(const std::string& text) override { return model_.predict(text); }

private:
    CentroidModel model_;
};

/// Quadrants of verifier quality against the reference labeler:
///   TP  verifier aligned,    reference agrees with the target
///   FP  verifier aligned,    reference disagrees
///   FN  verifier misaligned, reference agrees
///   TN  verifier misaligned, reference disagrees
inline ConfusionReport confusion_accounting(const std::vector<AlignmentRecord>& alignments,
                                            ReferenceLabeler& reference) {
    if (alignments.empty()) fail(errc::precondition, "confusion_accounting: no records");
    size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& rec : alignments) {
        bool verifier_aligned = rec.verdict.status == Verdict::Status::aligned;
        bool reference_agrees = reference.label(rec.final_text) == rec.original.target_class;
        if (verifier_aligned && reference_agrees) ++tp;
        else if (verifier_aligned && !reference_agrees) ++fp;
        else if (!verifier_aligned && reference_agrees) ++fn;
        else ++tn;
    }
    const double total = static_cast<double>(alignments.size());
    return {static_cast<double>(tp) / total, static_cast<double>(fp) / total,
            static_cast<double>(fn) / total, static_cast<double>(tn) / total, alignments.size()};
}

inline ProxyEvalReport nearest_centroid_eval(const std::vector<LabeledExample>& train,
                                             const std::vector<LabeledExample>& test,
                                             CachingEmbedder& embedder) {
    if (test.empty()) fail(errc::precondition, "nearest_centroid_eval: empty test set");
    CentroidModel model(train, embedder);
    auto known = model.classes();
    for (const auto& ex : test)
        if (std::find(known.begin(), known.end(), ex.label) == known.end())
            fail(errc::precondition, "test label '" + ex.label + "' missing from training data");

    ProxyEvalReport report;
    report.n_test = test.size();
    std::map<std::string, std::pair<size_t, size_t>> per_class; // correct, total
    size_t correct = 0;
    for (const auto& ex : test) {
        bool ok = model.predict(ex.text) == ex.label;
        if (ok) ++correct;
        auto& [c, t] = per_class[ex.label];
        c += ok ? 1 : 0;
        t += 1;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    for (const auto& [cls, ct] : per_class)
        report.per_class_accuracy[cls] =
            static_cast<double>(ct.first) / static_cast<double>(ct.second);
    return report;
}

} // namespace metrics

inline nlohmann::ordered_json to_json(const ApsReport& r) {
    return {{"dataset_tag", r.dataset_tag}, {"per_class_intra", r.per_class_intra},
            {"intra_mean", r.intra_mean},   {"inter_mean", r.inter_mean},
            {"sampled", r.sampled}};
}

inline nlohmann::ordered_json to_json(const ConfusionReport& r) {
    return {{"proportions", {{"TP", r.tp}, {"FP", r.fp}, {"FN", r.fn}, {"TN", r.tn}}},
            {"total", r.total}};
}

inline nlohmann::ordered_json to_json(const ProxyEvalReport& r) {
    return {{"accuracy", r.accuracy},
            {"per_class_accuracy", r.per_class_accuracy},
            {"n_test", r.n_test},
            {"classifier", r.classifier}};
}

} // namespace tardis
