// tardis: two-stage LLM text augmentation for few-shot classification.
//
// Subcommands cover the full pipeline (run/resume) and the individual
// stages (ingest, similarity, seg, ceg, adapt, metrics, eval) for working
// with intermediate artifacts directly.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "tardis/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tardis;

namespace {

// Flags layered over an optional --config file: file values first, then any
// flag the user actually passed on top.
class ConfigFlags {
public:
    explicit ConfigFlags(CLI::App* cmd) : cmd_(cmd) {
        cmd->add_option("--config", config_path_, "JSON config file (flags override file values)");

        add_flag_u64("--shots", [](RunConfig& c, uint64_t v) { c.shots = v; },
                     "seed examples per class (sampling)");
        add_flag_i("--rounds", [](RunConfig& c, int v) { c.rounds_per_class = v; },
                   "generation calls per class per method (default 50; 25 when --shots 2)");
        add_flag_i("--k", [](RunConfig& c, int v) { c.k = v; }, "examples requested per call");
        add_flag_i("--n-ambiguous", [](RunConfig& c, int v) { c.n_ambiguous = v; },
                   "ambiguous classes per target (CEG)");
        add_flag_i("--ideas-per-seed", [](RunConfig& c, int v) { c.ideas_per_seed = v; },
                   "spark thoughts per seed example (SEG)");
        add_flag_i("--m-shots", [](RunConfig& c, int v) { c.m_shots = v; },
                   "retrieved shots in the verification prompt");
        add_flag_d("--temperature", [](RunConfig& c, double v) { c.temperature = v; }, "sampling temperature");
        add_flag_d("--repetition-penalty", [](RunConfig& c, double v) { c.repetition_penalty = v; },
                   "repetition penalty sent to the backend");
        add_flag_i("--max-tokens", [](RunConfig& c, int v) { c.max_tokens = v; }, "completion token cap");
        add_flag_i64("--rng-seed", [](RunConfig& c, int64_t v) { c.rng_seed = v; }, "root RNG seed");
        add_flag_str("--methods", [](RunConfig& c, const std::string& v) {
            c.methods.clear();
            for (const auto& part : split(v, ','))
                if (!trim(part).empty()) c.methods.push_back(parse_method(trim(part)));
        }, "comma-separated subset of SEG,CEG");
        add_flag_u64("--budget", [](RunConfig& c, uint64_t v) { c.per_class_budget = v; },
                     "per-class cap on merged records (0 = unlimited)");
        add_flag_bool("--no-seeds", [](RunConfig& c, bool v) { c.include_seeds = !v; },
                      "export augmented data without appending seeds");
        add_flag_bool("--no-sample", [](RunConfig& c, bool v) { c.sample = !v; },
                      "treat the input file as the already-selected seed set");
        add_flag_vec("--target-class", [](RunConfig& c, const std::vector<std::string>& v) {
            c.target_classes = v;
        }, "restrict augmentation to these classes (repeatable)");
        add_flag_u64("--aps-pair-budget", [](RunConfig& c, uint64_t v) { c.aps_pair_budget = v; },
                     "max pairs per APS computation before sampling");

        add_flag_str("--backend", [](RunConfig& c, const std::string& v) { c.backend.kind = v; },
                     "text backend: mock|http");
        add_flag_str("--script", [](RunConfig& c, const std::string& v) { c.backend.script = v; },
                     "mock backend rule file (JSONL)");
        add_flag_bool("--mock-lenient", [](RunConfig& c, bool v) { c.backend.strict = !v; },
                      "unmatched mock requests return empty instead of failing");
        add_flag_str("--backend-url", [](RunConfig& c, const std::string& v) { c.backend.url = v; },
                     "chat backend base URL");
        add_flag_str("--backend-path", [](RunConfig& c, const std::string& v) { c.backend.path = v; },
                     "chat completions path");
        add_flag_str("--model", [](RunConfig& c, const std::string& v) { c.backend.model = v; },
                     "chat model name");
        add_flag_i("--retries", [](RunConfig& c, int v) { c.backend.retries = v; },
                   "attempts per request for transient failures");
        add_flag_i("--backoff-ms", [](RunConfig& c, int v) { c.backend.backoff_ms = v; },
                   "base retry backoff (doubled per attempt)");

        add_flag_str("--provider", [](RunConfig& c, const std::string& v) { c.provider.kind = v; },
                     "embedding provider: local|http");
        add_flag_str("--provider-url", [](RunConfig& c, const std::string& v) { c.provider.url = v; },
                     "embeddings base URL");
        add_flag_str("--provider-path", [](RunConfig& c, const std::string& v) { c.provider.path = v; },
                     "embeddings path");
        add_flag_str("--provider-model", [](RunConfig& c, const std::string& v) { c.provider.model = v; },
                     "embeddings model name");
        add_flag_u64("--max-in-flight", [](RunConfig& c, uint64_t v) { c.provider.max_in_flight = v; },
                     "parallel embedding fetches");
        add_flag_str("--cache", [](RunConfig& c, const std::string& v) { c.cache_path = v; },
                     "embedding cache file (default <run-dir>/embedding_cache.jsonl)");

        add_flag_str("--templates", [](RunConfig& c, const std::string& v) { c.templates.dir = v; },
                     "template directory (default ./templates or $TARDIS_TEMPLATES)");
        add_flag_str("--domain", [](RunConfig& c, const std::string& v) { c.templates.domain = v; },
                     "template domain: banking|daily_life|question_type|generic");
        add_flag_str("--domain-text", [](RunConfig& c, const std::string& v) { c.templates.domain_text = v; },
                     "subject text bound to {domain} for the generic domain");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path_.empty()) cfg = load_config_file(config_path_);
        if (cfg.templates.dir == "templates") {
            const char* env = std::getenv("TARDIS_TEMPLATES");
            if (env && *env) cfg.templates.dir = env;
        }
        for (const auto& [opt, apply] : appliers_)
            if (opt->count() > 0) apply(cfg);
        return cfg;
    }

private:
    template <class T, class Fn>
    void add_typed(const std::string& name, Fn fn, const std::string& help) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = cmd_->add_option(name, *value, help);
        appliers_.emplace_back(opt, [value, fn](RunConfig& c) { fn(c, *value); });
    }

    template <class Fn> void add_flag_u64(const std::string& n, Fn f, const std::string& h) { add_typed<uint64_t>(n, f, h); }
    template <class Fn> void add_flag_i(const std::string& n, Fn f, const std::string& h) { add_typed<int>(n, f, h); }
    template <class Fn> void add_flag_i64(const std::string& n, Fn f, const std::string& h) { add_typed<int64_t>(n, f, h); }
    template <class Fn> void add_flag_d(const std::string& n, Fn f, const std::string& h) { add_typed<double>(n, f, h); }
    template <class Fn> void add_flag_str(const std::string& n, Fn f, const std::string& h) { add_typed<std::string>(n, f, h); }
    template <class Fn> void add_flag_vec(const std::string& n, Fn f, const std::string& h) { add_typed<std::vector<std::string>>(n, f, h); }

    template <class Fn>
    void add_flag_bool(const std::string& name, Fn fn, const std::string& help) {
        auto value = std::make_shared<bool>(false);
        CLI::Option* opt = cmd_->add_flag(name, *value, help);
        appliers_.emplace_back(opt, [value, fn](RunConfig& c) { fn(c, *value); });
    }

    CLI::App* cmd_;
    std::string config_path_;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> appliers_;
};

int run_command(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == errc::config ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage LLM text augmentation (SEG/CEG generation + class adaptation)"};
    app.require_subcommand(1);

    // ---- ingest ----
    auto* ingest = app.add_subcommand("ingest", "load a dataset, sample few-shot seeds, write seed.jsonl");
    std::string in_path, in_format = "jsonl", out_dir;
    size_t ingest_shots = 5;
    int64_t ingest_seed = 0;
    bool ingest_no_sample = false;
    ingest->add_option("--input", in_path, "dataset file")->required();
    ingest->add_option("--format", in_format, "jsonl|csv");
    ingest->add_option("--shots", ingest_shots, "examples per class");
    ingest->add_option("--seed", ingest_seed, "sampling RNG seed");
    ingest->add_flag("--no-sample", ingest_no_sample, "keep the file as-is (pre-selected seeds)");
    ingest->add_option("--out", out_dir, "output directory")->required();

    // ---- similarity ----
    auto* similarity = app.add_subcommand("similarity", "compute the class similarity matrix of a seed file");
    std::string sim_seed_path, sim_out;
    similarity->add_option("--seed", sim_seed_path, "seed dataset (jsonl)")->required();
    similarity->add_option("--out", sim_out, "output JSON file")->required();
    ConfigFlags sim_flags(similarity);

    // ---- seg ----
    auto* seg_cmd = app.add_subcommand("seg", "semantic enrichment generation over a seed file");
    std::string seg_seed_path, seg_out_dir;
    seg_cmd->add_option("--seed", seg_seed_path, "seed dataset (jsonl)")->required();
    seg_cmd->add_option("--out", seg_out_dir, "output directory")->required();
    ConfigFlags seg_flags(seg_cmd);

    // ---- ceg ----
    auto* ceg_cmd = app.add_subcommand("ceg", "contrastive enrichment generation over a seed file");
    std::string ceg_seed_path, ceg_sim_path, ceg_out_dir;
    ceg_cmd->add_option("--seed", ceg_seed_path, "seed dataset (jsonl)")->required();
    ceg_cmd->add_option("--similarity", ceg_sim_path, "similarity matrix JSON (recomputed when omitted)");
    ceg_cmd->add_option("--out", ceg_out_dir, "output directory")->required();
    ConfigFlags ceg_flags(ceg_cmd);

    // ---- adapt ----
    auto* adapt_cmd = app.add_subcommand("adapt", "verify and modify generated records (class adaptation)");
    std::string adapt_seed_path, adapt_gen_path, adapt_disc_path, adapt_out;
    adapt_cmd->add_option("--seed", adapt_seed_path, "seed dataset (jsonl)")->required();
    adapt_cmd->add_option("--generated", adapt_gen_path, "generation records (jsonl)")->required();
    adapt_cmd->add_option("--discriminative", adapt_disc_path, "discriminative texts from CEG (jsonl)");
    adapt_cmd->add_option("--out", adapt_out, "aligned records output (jsonl)")->required();
    ConfigFlags adapt_flags(adapt_cmd);

    // ---- metrics ----
    auto* metrics_cmd = app.add_subcommand("metrics", "APS, confusion and proxy-eval reports");
    std::string met_seed_path, met_aug_path, met_report, met_aligned, met_reference, met_test;
    metrics_cmd->add_option("--seed", met_seed_path, "seed dataset (jsonl)")->required();
    metrics_cmd->add_option("--augmented", met_aug_path, "augmented dataset (jsonl)")->required();
    metrics_cmd->add_option("--report", met_report, "output report JSON")->required();
    metrics_cmd->add_option("--aligned", met_aligned, "alignment records for confusion accounting");
    metrics_cmd->add_option("--reference", met_reference, "reference training data for the confusion labeler");
    metrics_cmd->add_option("--test", met_test, "held-out test set for proxy evaluation");
    ConfigFlags metrics_flags(metrics_cmd);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "nearest-centroid proxy evaluation");
    std::string eval_train, eval_test, eval_report;
    eval_cmd->add_option("--train", eval_train, "training dataset (jsonl)")->required();
    eval_cmd->add_option("--test", eval_test, "test dataset (jsonl)")->required();
    eval_cmd->add_option("--report", eval_report, "output report JSON")->required();
    ConfigFlags eval_flags(eval_cmd);

    // ---- run ----
    auto* run_cmd = app.add_subcommand("run", "full pipeline: ingest through export");
    std::string run_input, run_format = "jsonl", run_out;
    run_cmd->add_option("--input", run_input, "dataset file")->required();
    run_cmd->add_option("--format", run_format, "jsonl|csv");
    run_cmd->add_option("--out", run_out, "run directory")->required();
    ConfigFlags run_flags(run_cmd);

    // ---- resume ----
    auto* resume_cmd = app.add_subcommand("resume", "re-execute a run directory from a stage onward");
    std::string resume_dir, resume_from;
    resume_cmd->add_option("--run-dir", resume_dir, "existing run directory")->required();
    resume_cmd->add_option("--from", resume_from, "first stage to re-execute")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2; // bad usage is a config error
    }

    if (ingest->parsed()) {
        return run_command([&] {
            Dataset full = load_dataset(in_path, parse_format(in_format));
            Dataset seed = full;
            nlohmann::ordered_json info{{"input", in_path},
                                        {"classes", full.classes.size()},
                                        {"examples", full.examples.size()}};
            if (!ingest_no_sample) {
                auto selection = sample_seed(full, ingest_shots, ingest_seed);
                seed = apply_selection(full, selection);
                info["shots"] = ingest_shots;
                info["rng_seed"] = ingest_seed;
                info["selected_ids"] = selection.selected_ids;
            }
            fs::create_directories(out_dir);
            write_dataset(seed, fs::path(out_dir) / "seed.jsonl");
            info["seed_examples"] = seed.examples.size();
            write_file(fs::path(out_dir) / "ingest.json", info.dump(2) + "\n");
            std::cout << "wrote " << (fs::path(out_dir) / "seed.jsonl").string() << " ("
                      << seed.examples.size() << " examples, " << seed.classes.size() << " classes)\n";
        });
    }

    if (similarity->parsed()) {
        return run_command([&] {
            RunConfig cfg = sim_flags.resolve();
            Dataset seed = load_dataset(sim_seed_path, DatasetFormat::jsonl);
            auto cache = std::make_shared<EmbeddingCache>(
                cfg.cache_path.empty() ? fs::path() : fs::path(cfg.cache_path));
            CachingEmbedder embedder(pipeline::make_provider(cfg.provider), cache,
                                     cfg.provider.max_in_flight);
            auto matrix = ceg::class_similarity(seed, embedder);
            write_file(sim_out, ceg::to_json(matrix).dump(2) + "\n");
            std::cout << "wrote " << sim_out << " (" << matrix.classes.size() << " classes)\n";
        });
    }

    auto stage_runtime = [&](ConfigFlags& flags, const std::string& out) {
        RunConfig cfg = flags.resolve();
        return std::make_unique<pipeline::Runtime>(cfg, fs::path(out));
    };

    if (seg_cmd->parsed()) {
        return run_command([&] {
            auto rt = stage_runtime(seg_flags, seg_out_dir);
            Dataset seed = load_dataset(seg_seed_path, DatasetFormat::jsonl);
            seg::Config scfg{rt->config.ideas_per_seed, rt->config.k, rt->config.resolved_rounds(), "seg"};
            std::vector<SparkThought> sparks;
            std::vector<GenerationRecord> records;
            for (const auto& cls : rt->targets(seed)) {
                auto result = seg::run_class(seed, cls, scfg, *rt->gateway, rt->prompts);
                for (auto& s : result.sparks) sparks.push_back(std::move(s));
                for (auto& r : result.records) records.push_back(std::move(r));
            }
            write_jsonl_records(fs::path(seg_out_dir) / "spark_thoughts.jsonl", sparks);
            write_jsonl_records(fs::path(seg_out_dir) / "seg_generated.jsonl", records);
            std::cout << "wrote " << records.size() << " SEG records\n";
        });
    }

    if (ceg_cmd->parsed()) {
        return run_command([&] {
            auto rt = stage_runtime(ceg_flags, ceg_out_dir);
            Dataset seed = load_dataset(ceg_seed_path, DatasetFormat::jsonl);
            ClassSimilarityMatrix matrix;
            if (!ceg_sim_path.empty())
                matrix = ceg::matrix_from_json(nlohmann::json::parse(read_file(ceg_sim_path)));
            else
                matrix = ceg::class_similarity(seed, *rt->embedder);
            ceg::Config ccfg{rt->config.k, rt->config.n_ambiguous, rt->config.resolved_rounds(),
                             static_cast<uint64_t>(rt->config.rng_seed), "ceg"};
            ceg::DiscriminativeCache cache;
            std::vector<GenerationRecord> records;
            for (const auto& cls : rt->targets(seed)) {
                auto result = ceg::run_class(seed, cls, matrix, ccfg, *rt->gateway, rt->prompts, cache);
                for (auto& r : result.records) records.push_back(std::move(r));
            }
            cache.save_jsonl(fs::path(ceg_out_dir) / "discriminative.jsonl");
            write_jsonl_records(fs::path(ceg_out_dir) / "ceg_generated.jsonl", records);
            std::cout << "wrote " << records.size() << " CEG records\n";
        });
    }

    if (adapt_cmd->parsed()) {
        return run_command([&] {
            fs::path out_parent = fs::path(adapt_out).parent_path();
            auto rt = stage_runtime(adapt_flags, out_parent.empty() ? "." : out_parent.string());
            Dataset seed = load_dataset(adapt_seed_path, DatasetFormat::jsonl);
            auto records = read_generation_records(adapt_gen_path);
            ceg::DiscriminativeCache cache;
            if (!adapt_disc_path.empty()) cache.load_jsonl(adapt_disc_path);
            CaSummary summary;
            ca::Config acfg{rt->config.m_shots, "ca"};
            auto aligned = ca::adapt_all(records, seed, acfg, *rt->gateway, *rt->embedder,
                                         rt->prompts, cache, &summary);
            write_jsonl_records(adapt_out, aligned);
            std::cout << "aligned=" << summary.aligned << " misaligned=" << summary.misaligned
                      << " modified=" << summary.modified
                      << " modification_failed=" << summary.modification_failed << "\n";
        });
    }

    if (metrics_cmd->parsed()) {
        return run_command([&] {
            RunConfig cfg = metrics_flags.resolve();
            Dataset seed = load_dataset(met_seed_path, DatasetFormat::jsonl);
            Dataset augmented = load_dataset(met_aug_path, DatasetFormat::jsonl);
            auto cache = std::make_shared<EmbeddingCache>(
                cfg.cache_path.empty() ? fs::path() : fs::path(cfg.cache_path));
            CachingEmbedder embedder(pipeline::make_provider(cfg.provider), cache,
                                     cfg.provider.max_in_flight);
            metrics::ApsOptions opt{cfg.aps_pair_budget, static_cast<uint64_t>(cfg.rng_seed)};

            nlohmann::ordered_json report;
            report["seed_aps"] = to_json(metrics::aps_report(seed.examples, embedder, "seed", opt));
            report["augmented_aps"] =
                to_json(metrics::aps_report(augmented.examples, embedder, "augmented", opt));

            if (!met_aligned.empty() && !met_reference.empty()) {
                auto alignments = read_alignment_records(met_aligned);
                Dataset reference = load_dataset(met_reference, DatasetFormat::jsonl);
                metrics::CentroidLabeler labeler(reference.examples, embedder);
                report["confusion"] = to_json(metrics::confusion_accounting(alignments, labeler));
            }
            if (!met_test.empty()) {
                Dataset test = load_dataset(met_test, DatasetFormat::jsonl);
                report["proxy_eval"] =
                    to_json(metrics::nearest_centroid_eval(augmented.examples, test.examples, embedder));
            }
            write_file(met_report, report.dump(2) + "\n");
            std::cout << "wrote " << met_report << "\n";
        });
    }

    if (eval_cmd->parsed()) {
        return run_command([&] {
            RunConfig cfg = eval_flags.resolve();
            Dataset train = load_dataset(eval_train, DatasetFormat::jsonl);
            Dataset test = load_dataset(eval_test, DatasetFormat::jsonl);
            auto cache = std::make_shared<EmbeddingCache>(
                cfg.cache_path.empty() ? fs::path() : fs::path(cfg.cache_path));
            CachingEmbedder embedder(pipeline::make_provider(cfg.provider), cache,
                                     cfg.provider.max_in_flight);
            auto report = metrics::nearest_centroid_eval(train.examples, test.examples, embedder);
            write_file(eval_report, to_json(report).dump(2) + "\n");
            std::cout << "accuracy=" << report.accuracy << " n_test=" << report.n_test << "\n";
        });
    }

    if (run_cmd->parsed()) {
        return run_command([&] {
            RunConfig cfg = run_flags.resolve();
            auto manifest =
                pipeline::run_full_pipeline(cfg, run_input, parse_format(run_format), run_out);
            std::cout << "run complete: " << run_out << " (last stage "
                      << manifest.last_completed_stage << ", "
                      << manifest.backend_calls.value("total", 0) << " backend calls)\n";
        });
    }

    if (resume_cmd->parsed()) {
        return run_command([&] {
            auto manifest = pipeline::resume_stage(resume_dir, parse_stage(resume_from));
            std::cout << "resume complete: " << resume_dir << " (last stage "
                      << manifest.last_completed_stage << ")\n";
        });
    }

    return 0;
}
