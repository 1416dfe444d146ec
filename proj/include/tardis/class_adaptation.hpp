#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tardis/ceg.hpp"
#include "tardis/corpus.hpp"
#include "tardis/embedding.hpp"
#include "tardis/error.hpp"
#include "tardis/llm_gateway.hpp"
#include "tardis/prompt_forge.hpp"
#include "tardis/seg.hpp"

namespace tardis {

struct VerificationShot {
    std::string text;
    std::string class_name;
    double similarity = 0.0;
};

struct Verdict {
    enum class Status { aligned, misaligned };

    Status status = Status::aligned;
    std::string predicted;      // class name or kOodSentinel
    std::string raw_prediction; // backend text, unprocessed
};

struct AlignmentFlags {
    bool verification_failed = false;
    bool modification_failed = false;
};

struct AlignmentRecord {
    GenerationRecord original;
    Verdict verdict;
    std::optional<std::string> modified_text;
    std::string final_text;
    bool modified = false;
    AlignmentFlags flags;
};

struct CaSummary {
    size_t aligned = 0;
    size_t misaligned = 0;
    size_t modified = 0;
    size_t modification_failed = 0;
};

namespace ca {

struct Config {
    int m_shots = 10; // retrieved demonstrations in the verification prompt
    std::string tag_prefix = "ca";
};

/// Few-shot verification prompt: the m seed examples most similar to the
/// text (across all classes, most similar first) as demonstrations, then
/// the query line awaiting a class name.
inline std::pair<std::string, std::vector<VerificationShot>> build_verification_prompt(
    const std::string& example_text, const Dataset& seed, size_t m, CachingEmbedder& embedder,
    const PromptContext& prompts) {
    if (seed.examples.empty()) fail(errc::precondition, "build_verification_prompt: empty seed data");
    if (m < 1) fail(errc::precondition, "build_verification_prompt: m must be >= 1");

    auto retrieved = retrieve_similar(example_text, seed, m, embedder);
    std::vector<VerificationShot> shots;
    std::string shot_lines;
    for (size_t i = 0; i < retrieved.size(); ++i) {
        shots.push_back({retrieved[i].example.text, retrieved[i].example.label,
                         retrieved[i].similarity});
        if (i > 0) shot_lines += '\n';
        shot_lines += "text: " + retrieved[i].example.text + " class: " + retrieved[i].example.label;
    }

    std::string prompt = prompts.render(template_id::verification,
                                        {{"shots", shot_lines}, {"target_text", example_text}});
    return {std::move(prompt), std::move(shots)};
}

/// First line of the raw prediction, resolved to a dataset class: exact
/// match, then case-insensitive match, then a unique prefix relation in
/// either direction; otherwise the OOD sentinel.
inline std::string resolve_predicted_class(const std::string& raw,
                                           const std::vector<std::string>& classes) {
    std::string first_line;
    for_each_line(raw, [&](std::string_view line, size_t) {
        if (first_line.empty()) {
            std::string t = trim(line);
            if (!t.empty()) first_line = std::move(t);
        }
    });
    if (first_line.empty()) return kOodSentinel;

    for (const auto& cls : classes)
        if (cls == first_line) return cls;

    std::string lowered = to_lower(first_line);
    for (const auto& cls : classes)
        if (to_lower(cls) == lowered) return cls;

    std::vector<const std::string*> prefix_hits;
    for (const auto& cls : classes) {
        std::string cl = to_lower(cls);
        if (lowered.rfind(cl, 0) == 0 || cl.rfind(lowered, 0) == 0) prefix_hits.push_back(&cls);
    }
    if (prefix_hits.size() == 1) return *prefix_hits[0];
    return kOodSentinel;
}

inline Verdict verify_example(const GenerationRecord& rec, const Dataset& seed, const Config& cfg,
                              Gateway& gateway, CachingEmbedder& embedder,
                              const PromptContext& prompts, const std::string& tag_suffix = "0") {
    if (!seed.has_class(rec.target_class))
        fail(errc::precondition, "verify_example: target class '" + rec.target_class +
                                     "' not in seed data");

    auto [prompt, shots] = build_verification_prompt(rec.text, seed,
                                                     static_cast<size_t>(cfg.m_shots), embedder,
                                                     prompts);
    auto req = gateway.make_request(std::move(prompt),
                                    cfg.tag_prefix + ".verify/" + rec.target_class + "/" + tag_suffix);
    auto resp = gateway.complete(req);

    Verdict v;
    v.raw_prediction = resp.raw_text;
    v.predicted = resolve_predicted_class(resp.raw_text, seed.classes);
    v.status = (v.predicted == rec.target_class) ? Verdict::Status::aligned
                                                 : Verdict::Status::misaligned;
    return v;
}

// Supplies the discriminative text s_{t,p} for a (target, predicted) pair;
// backed by the CEG cache with on-demand generation for uncached pairs.
using DiscriminativeLookup =
    std::function<DiscriminativeText(const std::string& target, const std::string& predicted)>;

/// Builds the lookup used during modification. Pairs already generated by
/// CEG come from the cache; an uncached real class costs one backend call;
/// the OOD sentinel has no seed examples to contrast against, so it gets a
/// deterministic generic framing instead.
inline DiscriminativeLookup make_discriminative_lookup(const Dataset& seed, Gateway& gateway,
                                                       const PromptContext& prompts,
                                                       ceg::DiscriminativeCache& cache,
                                                       const std::string& tag_prefix = "ca") {
    return [&seed, &gateway, &prompts, &cache, tag_prefix](const std::string& target,
                                                           const std::string& predicted) {
        if (predicted == kOodSentinel) {
            DiscriminativeText d{target, std::string(kOodSentinel),
                                 "The text must be a complete, natural example that clearly belongs "
                                 "to the class " + target + "."};
            if (!cache.lookup(target, predicted)) cache.insert(d);
            return d;
        }
        if (auto hit = cache.lookup(target, predicted)) return *hit;
        return ceg::generate_discriminative_text(target, seed.texts_of(target), predicted,
                                                 seed.texts_of(predicted), gateway, prompts, cache,
                                                 tag_prefix);
    };
}

/// Rewrites a misaligned example toward its target class. An empty
/// modification keeps the original text under a failure flag -- CA never
/// drops an example.
inline AlignmentRecord modify_example(const GenerationRecord& rec, const Verdict& verdict,
                                      const std::vector<std::string>& target_seed_texts,
                                      const DiscriminativeLookup& disc_lookup, Gateway& gateway,
                                      const PromptContext& prompts, const Config& cfg = {},
                                      const std::string& tag_suffix = "0") {
    if (verdict.status != Verdict::Status::misaligned)
        fail(errc::precondition, "modify_example: record is not misaligned");

    DiscriminativeText disc = disc_lookup(rec.target_class, verdict.predicted);

    auto req = gateway.make_request(prompts.render(template_id::modification,
                                                   {{"target_class", rec.target_class},
                                                    {"target_class_data", target_seed_texts},
                                                    {"discriminative_text", disc.text},
                                                    {"verification_result_class", verdict.predicted},
                                                    {"generated_example", rec.text}}),
                                    cfg.tag_prefix + ".modify/" + rec.target_class + "/" + tag_suffix);
    auto resp = gateway.complete(req);

    std::string new_text;
    for_each_line(resp.raw_text, [&](std::string_view line, size_t) {
        if (new_text.empty()) {
            std::string t = detail::strip_item_decoration(line);
            if (!t.empty()) new_text = std::move(t);
        }
    });

    AlignmentRecord out;
    out.original = rec;
    out.verdict = verdict;
    out.modified = true;
    if (new_text.empty()) {
        out.flags.modification_failed = true;
        out.modified_text = rec.text;
        out.final_text = rec.text;
    } else {
        out.modified_text = new_text;
        out.final_text = new_text;
    }
    return out;
}

/// Verify every record and modify the misaligned ones. Output order mirrors
/// input order and |output| == |input|: per-record failures are flagged on
/// the record, never dropped.
inline std::vector<AlignmentRecord> adapt_all(const std::vector<GenerationRecord>& records,
                                              const Dataset& seed, const Config& cfg,
                                              Gateway& gateway, CachingEmbedder& embedder,
                                              const PromptContext& prompts,
                                              ceg::DiscriminativeCache& disc_cache,
                                              CaSummary* summary = nullptr) {
    auto disc_lookup = make_discriminative_lookup(seed, gateway, prompts, disc_cache, cfg.tag_prefix);
    std::vector<AlignmentRecord> out;
    out.reserve(records.size());
    CaSummary counts;

    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        const std::string tag_suffix = std::to_string(i);

        Verdict verdict;
        bool verification_failed = false;
        try {
            verdict = verify_example(rec, seed, cfg, gateway, embedder, prompts, tag_suffix);
        } catch (const backend_error& e) {
            verification_failed = true;
            verdict.status = Verdict::Status::misaligned;
            verdict.predicted = kOodSentinel;
            verdict.raw_prediction = std::string("<verification failed: ") + e.what() + ">";
        }

        if (verdict.status == Verdict::Status::aligned) {
            counts.aligned += 1;
            AlignmentRecord rec_out;
            rec_out.original = rec;
            rec_out.verdict = verdict;
            rec_out.final_text = rec.text;
            rec_out.modified = false;
            out.push_back(std::move(rec_out));
            continue;
        }

        counts.misaligned += 1;
        AlignmentRecord rec_out;
        try {
            rec_out = modify_example(rec, verdict, seed.texts_of(rec.target_class), disc_lookup,
                                     gateway, prompts, cfg, tag_suffix);
        } catch (const backend_error& e) {
            rec_out.original = rec;
            rec_out.verdict = verdict;
            rec_out.modified = true;
            rec_out.modified_text = rec.text;
            rec_out.final_text = rec.text;
            rec_out.flags.modification_failed = true;
            (void)e;
        }
        rec_out.flags.verification_failed = verification_failed;
        counts.modified += 1;
        if (rec_out.flags.modification_failed) counts.modification_failed += 1;
        out.push_back(std::move(rec_out));
    }

    if (summary) *summary = counts;
    return out;
}

} // namespace ca

inline nlohmann::ordered_json to_json(const AlignmentRecord& r) {
    nlohmann::ordered_json j;
    j["original"] = to_json(r.original);
    j["verdict"] = {{"status", r.verdict.status == Verdict::Status::aligned ? "aligned" : "misaligned"},
                    {"predicted", r.verdict.predicted},
                    {"raw_prediction", r.verdict.raw_prediction}};
    j["modified"] = r.modified;
    if (r.modified_text) j["modified_text"] = *r.modified_text;
    j["final_text"] = r.final_text;
    j["flags"] = {{"verification_failed", r.flags.verification_failed},
                  {"modification_failed", r.flags.modification_failed}};
    return j;
}

inline AlignmentRecord alignment_from_json(const nlohmann::json& j) {
    AlignmentRecord r;
    r.original = record_from_json(j.at("original"));
    const auto& v = j.at("verdict");
    r.verdict.status = v.at("status").get<std::string>() == "aligned" ? Verdict::Status::aligned
                                                                      : Verdict::Status::misaligned;
    r.verdict.predicted = v.at("predicted").get<std::string>();
    r.verdict.raw_prediction = v.at("raw_prediction").get<std::string>();
    r.modified = j.at("modified").get<bool>();
    if (j.contains("modified_text")) r.modified_text = j.at("modified_text").get<std::string>();
    r.final_text = j.at("final_text").get<std::string>();
    r.flags.verification_failed = j.at("flags").at("verification_failed").get<bool>();
    r.flags.modification_failed = j.at("flags").at("modification_failed").get<bool>();
    return r;
}

inline std::vector<AlignmentRecord> read_alignment_records(const std::filesystem::path& path) {
    std::vector<AlignmentRecord> out;
    for_each_line(read_file(path), [&](std::string_view line, size_t line_no) {
        if (trim(line).empty()) return;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            fail(errc::parse, path.string() + ": line " + std::to_string(line_no) + ": invalid JSON");
        out.push_back(alignment_from_json(j));
    });
    return out;
}

} // namespace tardis
