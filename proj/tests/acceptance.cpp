// Acceptance suite: one criterion per function, one PASS/FAIL line each,
// nonzero exit if anything fails. Runs fully offline (scripted mock backend,
// local hashed embedder).

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/helpers.hpp"
#include "support/prompt_fixtures.hpp"
#include "tardis/pipeline.hpp"

using namespace tardis;
using namespace testsupport;

namespace {

struct failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void expect(bool cond, const std::string& msg) {
    if (!cond) throw failure(msg);
}

template <class T>
std::string str(const T& v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Random few-shot fixtures: <= 6 classes, <= 8 examples each, token-pool texts.
Dataset random_fixture(RngStream& rng, size_t max_classes = 6, size_t max_examples = 8) {
    static const std::vector<std::string> vocab = {
        "taxi", "cab",    "ride",   "airport", "station", "balance", "account", "money",
        "flight", "ticket", "train",  "weather", "forecast", "rain",    "music",   "play",
        "song",  "alarm",  "set",    "clock",   "order",   "food",    "pizza",   "deliver"};
    std::vector<std::pair<std::string, std::vector<std::string>>> spec;
    size_t n_classes = 2 + rng.uniform_below(max_classes - 1);
    for (size_t c = 0; c < n_classes; ++c) {
        std::vector<std::string> texts;
        size_t n = 1 + rng.uniform_below(max_examples);
        for (size_t i = 0; i < n; ++i) {
            std::string text;
            size_t words = 3 + rng.uniform_below(5);
            for (size_t w = 0; w < words; ++w) {
                if (w) text += ' ';
                text += vocab[rng.uniform_below(vocab.size())];
            }
            texts.push_back(text + " #" + std::to_string(c) + "-" + std::to_string(i));
        }
        spec.push_back({"class_" + std::to_string(c), texts});
    }
    return make_dataset(spec);
}

// ---- criteria ----

void eq1_oracle_equivalence() {
    double started = now_seconds();
    RngStream rng(1001, "acceptance/eq1");
    int fixtures = 0;
    for (int iter = 0; iter < 120; ++iter) {
        Dataset seed = random_fixture(rng);
        CachingEmbedder embedder(std::make_shared<LocalHashedEmbedder>());
        auto matrix = ceg::class_similarity(seed, embedder);
        for (size_t a = 0; a < seed.classes.size(); ++a) {
            for (size_t b = a + 1; b < seed.classes.size(); ++b) {
                std::vector<std::vector<double>> va, vb;
                for (const auto& ex : seed.examples) {
                    if (ex.label == seed.classes[a]) va.push_back(oracle_local_embed(ex.text));
                    if (ex.label == seed.classes[b]) vb.push_back(oracle_local_embed(ex.text));
                }
                double oracle = oracle_pair_similarity(va, vb);
                expect(std::abs(matrix.values[a][b] - oracle) <= 1e-9,
                       "matrix[" + str(a) + "][" + str(b) + "] differs from oracle by " +
                           str(std::abs(matrix.values[a][b] - oracle)));
                expect(std::abs(matrix.values[a][b] - matrix.values[b][a]) <= 1e-9,
                       "matrix asymmetry");
            }
        }
        ++fixtures;
    }
    double elapsed = now_seconds() - started;
    expect(fixtures >= 100, "need >= 100 fixtures, got " + str(fixtures));
    expect(elapsed < 5.0, "runtime " + str(elapsed) + "s exceeds 5s");
}

void ambiguous_class_selection() {
    RngStream rng(1002, "acceptance/ambiguous");
    for (int iter = 0; iter < 40; ++iter) {
        Dataset seed = random_fixture(rng);
        auto base = std::make_shared<LocalHashedEmbedder>();
        CachingEmbedder embedder(base);
        auto matrix = ceg::class_similarity(seed, embedder);
        // exact power-of-two scaling: cosine bits cannot move
        CachingEmbedder scaled_embedder(std::make_shared<ScaledProvider>(base, 4.0));
        auto scaled_matrix = ceg::class_similarity(seed, scaled_embedder);

        for (const auto& target : seed.classes) {
            size_t t = matrix.index_of(target);
            for (size_t n = 1; n < seed.classes.size(); ++n) {
                auto selected = ceg::select_ambiguous_classes(matrix, target, n);

                // oracle: sort non-target classes by (-sim, name)
                std::vector<std::pair<std::string, double>> expected;
                for (size_t c = 0; c < seed.classes.size(); ++c)
                    if (c != t) expected.push_back({seed.classes[c], matrix.values[t][c]});
                std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
                    if (a.second != b.second) return a.second > b.second;
                    return a.first < b.first;
                });
                expected.resize(std::min(n, expected.size()));

                expect(selected.members.size() == expected.size(), "selection size mismatch");
                for (size_t i = 0; i < expected.size(); ++i) {
                    expect(selected.members[i].first == expected[i].first,
                           "selection order differs from oracle at " + str(i));
                    expect(selected.members[i].first != target, "target leaked into selection");
                }

                auto rescaled = ceg::select_ambiguous_classes(scaled_matrix, target, n);
                for (size_t i = 0; i < expected.size(); ++i)
                    expect(rescaled.members[i].first == selected.members[i].first,
                           "selection not invariant under uniform rescaling");
            }
        }
    }

    // default n is 5 (best ablation setting)
    RngStream big_rng(1003, "acceptance/ambiguous-default");
    Dataset big = random_fixture(big_rng, 6, 8);
    while (big.classes.size() < 6) big = random_fixture(big_rng, 6, 8);
    CachingEmbedder embedder(std::make_shared<LocalHashedEmbedder>());
    auto matrix = ceg::class_similarity(big, embedder);
    auto defaulted = ceg::select_ambiguous_classes(matrix, big.classes[0]);
    expect(defaulted.members.size() == 5, "default n should select 5 classes");
}

void generation_cardinality() {
    double started = now_seconds();
    Dataset seed = make_dataset({{"taxi", {"taxi now", "call me a cab", "book a taxi home",
                                           "need a ride to town", "cab to the office"}},
                                 {"ticket", {"book a flight to rome", "train ticket for tomorrow",
                                             "reserve plane seats", "buy a bus ticket",
                                             "flight to berlin please"}}});
    auto set = load_templates("banking");
    PromptContext prompts{&set, "", nullptr};
    Gateway gateway(cooperative_mock(5));
    CachingEmbedder embedder(std::make_shared<LocalHashedEmbedder>());

    // default config: k=5, 50 rounds per class per method, n capped by |C|-1
    seg::Config seg_cfg{5, 5, 50, "seg"};
    auto seg_result = seg::run_class(seed, "taxi", seg_cfg, gateway, prompts);
    expect(seg_result.records.size() == 250,
           "expected 250 SEG records, got " + str(seg_result.records.size()));

    auto matrix = ceg::class_similarity(seed, embedder);
    ceg::DiscriminativeCache cache;
    // default n=5 caps at |C|-1 contrast classes
    ceg::Config ceg_cfg{5, 5, 50, 42, "ceg"};
    auto ceg_result = ceg::run_class(seed, "taxi", matrix, ceg_cfg, gateway, prompts, cache);
    expect(ceg_result.records.size() == 250,
           "expected 250 CEG records, got " + str(ceg_result.records.size()));

    double elapsed = now_seconds() - started;
    expect(elapsed < 10.0, "runtime " + str(elapsed) + "s exceeds 10s");
}

void diversification_rule() {
    std::vector<LabeledExample> five;
    for (int i = 0; i < 5; ++i)
        five.push_back({"id" + std::to_string(i), "text " + std::to_string(i), "a"});
    std::set<size_t> sizes;
    for (int i = 0; i < 10000; ++i) {
        RngStream rng(2024, "acceptance/div5/" + std::to_string(i));
        auto out = ceg::diversify_prompt_context(five, rng);
        expect(out.size() == 3 || out.size() == 4, "retained size " + str(out.size()));
        sizes.insert(out.size());
    }
    expect(sizes == std::set<size_t>{3, 4}, "both retained sizes must occur over 10000 draws");

    std::vector<LabeledExample> two = {{"i1", "one", "a"}, {"i2", "two", "a"}};
    for (int i = 0; i < 10000; ++i) {
        RngStream rng(2024, "acceptance/div2/" + std::to_string(i));
        expect(ceg::diversify_prompt_context(two, rng).size() == 1,
               "two seeds must always retain exactly one");
    }
}

void ca_contract() {
    Dataset seed = make_dataset({{"taxi", {"taxi now", "call me a cab", "need a ride"}},
                                 {"ticket", {"book a flight", "train ticket", "plane seats"}}});
    auto set = load_templates("banking");
    PromptContext prompts{&set, "", nullptr};

    // 40 scripted-misaligned of 100: half predicted as the other class, half OOD
    auto mock = std::make_shared<ScriptedMockBackend>(true);
    std::set<size_t> misaligned_idx;
    for (size_t i = 0; i < 100; ++i) {
        if (i % 5 == 0 || i % 5 == 2) {
            misaligned_idx.insert(i);
            mock->add_tag_rule("ca.verify/taxi/" + std::to_string(i),
                               (i % 10 < 5) ? "ticket" : "no idea, gibberish");
        }
    }
    expect(misaligned_idx.size() == 40, "fixture should script 40 misalignments");
    mock->add_glob_rule("ca.verify/*", "%CLASS%");
    mock->add_glob_rule("ca.disc/*", "Taxis are rides, tickets are reservations.");
    mock->add_glob_rule("ca.modify/*", "modified for %CLASS% (%IDX%)");
    Gateway gateway(mock);
    CachingEmbedder embedder(std::make_shared<LocalHashedEmbedder>());
    ceg::DiscriminativeCache cache; // empty: every pair resolves on demand

    std::vector<GenerationRecord> records;
    for (size_t i = 0; i < 100; ++i) {
        SparkThought spark{"taxi", "idea", SparkThought::Origin::seg, "000000-taxi", 0};
        records.push_back({"generated text " + std::to_string(i), "taxi", Method::SEG, spark,
                           sha256_hex("p" + std::to_string(i)), 0, false});
    }

    CaSummary summary;
    auto out = ca::adapt_all(records, seed, ca::Config{3, "ca"}, gateway, embedder, prompts, cache,
                             &summary);
    expect(out.size() == 100, "adapt_all must preserve cardinality");
    expect(summary.modified == 40, "expected 40 modified, got " + str(summary.modified));
    expect(summary.aligned == 60, "expected 60 aligned, got " + str(summary.aligned));

    size_t untouched = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        expect(out[i].original.target_class == "taxi", "label drifted off target");
        if (!out[i].modified) {
            expect(out[i].final_text == records[i].text, "aligned record not byte-identical");
            ++untouched;
        } else {
            expect(out[i].verdict.predicted != "taxi", "modified record was not misaligned");
        }
    }
    expect(untouched == 60, "expected 60 pass-throughs, got " + str(untouched));

    // OOD predictions routed to on-demand discriminative framing; the
    // in-class pair was generated on demand through the backend
    expect(cache.lookup("taxi", kOodSentinel).has_value(),
           "OOD prediction did not create an on-demand discriminative text");
    expect(cache.lookup("taxi", "ticket").has_value(),
           "uncached (taxi, ticket) pair was not generated on demand");
}

void confusion_accounting_criterion() {
    std::vector<AlignmentRecord> records;
    std::map<std::string, std::string> truth;
    int i = 0;
    auto add = [&](bool verifier_aligned, bool reference_agrees) {
        AlignmentRecord r;
        std::string text = "q" + std::to_string(i++);
        SparkThought spark{"taxi", "idea", SparkThought::Origin::seg, "s", 0};
        r.original = {text, "taxi", Method::SEG, spark, "h", 0, false};
        r.verdict.status = verifier_aligned ? Verdict::Status::aligned : Verdict::Status::misaligned;
        r.verdict.predicted = verifier_aligned ? "taxi" : "ticket";
        r.final_text = text;
        r.modified = !verifier_aligned;
        truth[text] = reference_agrees ? "taxi" : "ticket";
        records.push_back(r);
    };
    for (int n = 0; n < 5; ++n) add(true, true);
    for (int n = 0; n < 5; ++n) add(true, false);
    for (int n = 0; n < 5; ++n) add(false, true);
    for (int n = 0; n < 5; ++n) add(false, false);

    metrics::LookupLabeler reference(truth);
    auto report = metrics::confusion_accounting(records, reference);
    expect(std::abs(report.tp + report.fp + report.fn + report.tn - 1.0) <= 1e-9,
           "proportions must sum to 1");
    for (auto [name, value] : {std::pair<const char*, double>{"TP", report.tp},
                               {"FP", report.fp},
                               {"FN", report.fn},
                               {"TN", report.tn}})
        expect(std::abs(value - 0.25) <= 1e-12,
               std::string(name) + " expected 0.25, got " + str(value));
    expect(report.total == 20, "total mismatch");
}

void aps_direction() {
    // near-duplicate seeds vs lexically varied augmentation, two disjoint
    // vocabulary families
    std::vector<LabeledExample> seed = {
        {"s1", "book a taxi to the station", "taxi"},
        {"s2", "book a taxi to the airport", "taxi"},
        {"s3", "book a taxi to the hotel", "taxi"},
        {"s4", "what is the weather forecast today", "weather"},
        {"s5", "what is the weather forecast tomorrow", "weather"},
        {"s6", "what is the weather forecast tonight", "weather"},
    };
    std::vector<LabeledExample> augmented = {
        {"a1", "can you book a cab ride for me downtown right now", "taxi"},
        {"a2", "can you hail me a taxi to the station quickly", "taxi"},
        {"a3", "i want to order a car to drive me to the hotel", "taxi"},
        {"a4", "book a taxi to the station", "taxi"},
        {"a5", "can you tell me if it will rain this afternoon", "weather"},
        {"a6", "can you check if a storm is coming this week", "weather"},
        {"a7", "i want to know how cold it gets tonight", "weather"},
        {"a8", "what is the weather forecast today", "weather"},
    };
    CachingEmbedder embedder(std::make_shared<LocalHashedEmbedder>());
    auto seed_report = metrics::aps_report(seed, embedder, "seed", {}, nullptr);
    auto aug_report = metrics::aps_report(augmented, embedder, "augmented", {}, nullptr);
    expect(aug_report.intra_mean < seed_report.intra_mean,
           "intra APS should drop: seed " + str(seed_report.intra_mean) + " vs augmented " +
               str(aug_report.intra_mean));
    expect(std::abs(aug_report.inter_mean - seed_report.inter_mean) < 0.05,
           "inter APS moved by " +
               str(std::abs(aug_report.inter_mean - seed_report.inter_mean)));
}

void proxy_evaluation() {
    // 4 separable vocabulary clusters; augmented paraphrases widen each class
    // the way a cooperative generation round would
    std::vector<LabeledExample> seeds = {
        {"s1", "taxi cab ride", "taxi"},          {"s2", "hail taxi cab", "taxi"},
        {"s3", "weather forecast rain", "weather"}, {"s4", "forecast storm weather", "weather"},
        {"s5", "play music song", "music"},        {"s6", "song music volume", "music"},
        {"s7", "order pizza food", "food"},        {"s8", "food delivery pizza", "food"},
    };
    std::vector<LabeledExample> augmented = {
        {"a1", "book me a taxi cab for a quick ride downtown", "taxi"},
        {"a2", "please hail a cab driver to take me home", "taxi"},
        {"a3", "is the weather forecast calling for rain or storm", "weather"},
        {"a4", "what does the forecast say about snow and wind", "weather"},
        {"a5", "play my favorite song and turn up the music", "music"},
        {"a6", "start the music playlist with a happy song", "music"},
        {"a7", "order a large pizza with extra cheese for delivery", "food"},
        {"a8", "get food delivered tonight maybe pizza or pasta", "food"},
    };
    std::vector<LabeledExample> test = {
        {"t1", "take me downtown in a cab please driver", "taxi"},
        {"t2", "hail me a quick taxi ride home", "taxi"},
        {"t3", "will it rain or snow says the forecast", "weather"},
        {"t4", "storm and wind in the weather forecast", "weather"},
        {"t5", "turn up the song on my playlist", "music"},
        {"t6", "play some happy music for me", "music"},
        {"t7", "deliver a cheese pizza for dinner tonight", "food"},
        {"t8", "get me pasta or pizza food delivered", "food"},
    };
    CachingEmbedder embedder(std::make_shared<LocalHashedEmbedder>());
    auto seed_only = metrics::nearest_centroid_eval(seeds, test, embedder);

    auto train = seeds;
    train.insert(train.end(), augmented.begin(), augmented.end());
    auto with_aug = metrics::nearest_centroid_eval(train, test, embedder);

    expect(with_aug.accuracy >= seed_only.accuracy,
           "augmentation hurt the proxy classifier: " + str(with_aug.accuracy) + " < " +
               str(seed_only.accuracy));
}

void end_to_end_determinism() {
    auto dir = fresh_dir("acceptance-e2e");

    auto dataset = make_dataset({{"balance", {"what is my balance", "how much money do i have",
                                              "show my current balance", "balance after purchase"}},
                                 {"taxi", {"taxi now", "call me a cab", "book a taxi home",
                                           "need a ride to town"}},
                                 {"ticket", {"book a flight to rome", "train ticket for tomorrow",
                                             "reserve plane seats", "buy a bus ticket"}}},
                                "fixture3");
    auto dataset_path = dir / "fixture3.jsonl";
    write_dataset(dataset, dataset_path);

    nlohmann::ordered_json rules = nlohmann::ordered_json::array();
    auto add = [&](const std::string& pattern, const std::string& text) {
        rules.push_back({{"match", "tag_glob"}, {"pattern", pattern}, {"text", text}});
    };
    std::string five;
    for (int i = 1; i <= 5; ++i) five += std::to_string(i) + ". sample " + std::to_string(i) + " %HASH%\n";
    add("seg.describe/*", "Requests in the %CLASS% category.");
    add("seg.spark/*", "1. idea a %HASH%\n2. idea b %HASH%\n3. idea c %HASH%\n4. idea d %HASH%\n5. idea e %HASH%");
    add("seg.generate/*", five);
    add("ceg.disc/*", "They differ in focus (%HASH%).");
    add("ceg.generate/*", five);
    add("ca.verify/*", "%CLASS%");
    add("ca.disc/*", "They differ in focus (%HASH%).");
    add("ca.modify/*", "rewritten for %CLASS% %HASH%");
    std::string script;
    for (const auto& rule : rules) script += rule.dump() + "\n";
    auto script_path = dir / "script.jsonl";
    write_file(script_path, script);

    RunConfig cfg;
    cfg.shots = 2;
    cfg.rounds_per_class = 4;
    cfg.n_ambiguous = 2;
    cfg.m_shots = 3;
    cfg.rng_seed = 42;
    cfg.backend.kind = "mock";
    cfg.backend.script = script_path.string();
    cfg.templates.dir = template_dir().string();

    auto fresh =
        pipeline::run_full_pipeline(cfg, dataset_path, DatasetFormat::jsonl, dir / "run1");
    pipeline::run_full_pipeline(cfg, dataset_path, DatasetFormat::jsonl, dir / "run2");

    // byte-identical run dirs, timings excluded
    std::set<std::string> names1, names2;
    for (const auto& e : std::filesystem::directory_iterator(dir / "run1"))
        names1.insert(e.path().filename().string());
    for (const auto& e : std::filesystem::directory_iterator(dir / "run2"))
        names2.insert(e.path().filename().string());
    expect(names1 == names2, "run directories hold different files");
    for (const auto& name : names1) {
        if (name == "manifest.json") {
            auto m1 = nlohmann::json::parse(read_file(dir / "run1" / name));
            auto m2 = nlohmann::json::parse(read_file(dir / "run2" / name));
            m1.erase("timings_ms");
            m2.erase("timings_ms");
            expect(m1 == m2, "manifests differ beyond timings");
        } else {
            expect(read_file(dir / "run1" / name) == read_file(dir / "run2" / name),
                   "artifact differs between runs: " + name);
        }
    }

    // resume from CA reproduces the fresh stage hashes
    std::filesystem::remove(dir / "run1" / "aligned.jsonl");
    auto resumed = pipeline::resume_stage(dir / "run1", Stage::adapt);
    expect(resumed.artifacts.size() == fresh.artifacts.size(), "artifact count changed on resume");
    for (size_t i = 0; i < fresh.artifacts.size(); ++i) {
        expect(resumed.artifacts[i].path == fresh.artifacts[i].path, "artifact order changed");
        expect(resumed.artifacts[i].sha256 == fresh.artifacts[i].sha256,
               "stage hash changed on resume: " + fresh.artifacts[i].path);
    }
}

void prompt_fidelity() {
    for (const std::string domain : {"banking", "daily_life", "question_type"}) {
        auto set = load_template_set(template_dir(), domain);
        PromptContext ctx{&set, "", nullptr};
        for (template_id id : kAllTemplateIds) {
            auto rendered = ctx.render(id, golden_bindings(id));
            auto golden_path = test_data_dir() / "golden" / "prompts" /
                               (domain + "__" + std::string(template_id_name(id)) + ".txt");
            expect(std::filesystem::exists(golden_path), "missing golden: " + golden_path.string());
            expect(rendered == read_file(golden_path),
                   "rendered prompt deviates from golden: " + domain + "/" + template_id_name(id));
            auto anchor = to_lower(anchor_phrase(domain, id));
            expect(to_lower(rendered).find(anchor) != std::string::npos,
                   "anchor phrase missing in " + domain + "/" + template_id_name(id) + ": " + anchor);
        }
        // the verification prompt must end on the class-awaiting query line
        auto verification = ctx.render(template_id::verification,
                                       golden_bindings(template_id::verification));
        expect(verification.size() >= 6 && verification.substr(verification.size() - 6) == "class:",
               "verification prompt must end with 'class:'");
    }
}

} // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<void()> run;
    };
    const std::vector<Criterion> criteria = {
        {"eq1-oracle-equivalence", eq1_oracle_equivalence},
        {"ambiguous-class-selection", ambiguous_class_selection},
        {"generation-cardinality", generation_cardinality},
        {"diversification-rule", diversification_rule},
        {"ca-contract", ca_contract},
        {"confusion-accounting", confusion_accounting_criterion},
        {"aps-direction", aps_direction},
        {"proxy-evaluation", proxy_evaluation},
        {"end-to-end-determinism", end_to_end_determinism},
        {"prompt-fidelity", prompt_fidelity},
    };

    int failed = 0;
    for (const auto& criterion : criteria) {
        try {
            criterion.run();
            std::cout << "PASS " << criterion.name << "\n";
        } catch (const std::exception& e) {
            ++failed;
            std::cout << "FAIL " << criterion.name << ": " << e.what() << "\n";
        }
    }
    if (failed) std::cout << failed << " criterion(s) failed\n";
    return failed == 0 ? 0 : 1;
}
