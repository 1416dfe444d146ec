#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "support/helpers.hpp"
#include "tardis/corpus.hpp"

using namespace tardis;
using testsupport::fresh_dir;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
    auto path = fresh_dir("corpus") / name;
    write_file(path, content);
    return path;
}

} // namespace

TEST_CASE("load_dataset parses two-line jsonl") {
    auto path = write_temp("two.jsonl",
                           R"({"text":"taxi now","label":"transport_taxi"})" "\n"
                           R"({"text":"book a flight","label":"transport_ticket"})" "\n");
    Dataset d = load_dataset(path, DatasetFormat::jsonl, nullptr);
    REQUIRE(d.examples.size() == 2);
    CHECK(d.classes == std::vector<std::string>{"transport_taxi", "transport_ticket"});
    CHECK(d.examples[0].text == "taxi now");
    CHECK(!d.examples[0].id.empty());
}

TEST_CASE("blank text names the offending line") {
    auto path = write_temp("blank.jsonl",
                           R"({"text":"ok","label":"a"})" "\n"
                           R"({"text":"   ","label":"a"})" "\n");
    try {
        load_dataset(path, DatasetFormat::jsonl, nullptr);
        FAIL("expected parse error");
    } catch (const error& e) {
        CHECK(e.code() == errc::parse);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("csv fixture loads 10 rows across 3 labels") {
    // hand-counted: 3 transport_taxi, 3 transport_ticket, 4 balance
    Dataset d = load_dataset(testsupport::test_data_dir() / "fixtures" / "intents10.csv",
                             DatasetFormat::csv, nullptr);
    CHECK(d.examples.size() == 10);
    CHECK(d.classes.size() == 3);
    CHECK(d.examples_of("balance").size() == 4);
    CHECK(d.examples_of("transport_taxi").size() == 3);
    CHECK(d.examples_of("transport_ticket").size() == 3);
    // quoted field keeps its comma
    CHECK(d.examples[9].text == "did my balance change, or not");
}

TEST_CASE("empty input is an empty-dataset error") {
    auto path = write_temp("empty.jsonl", "");
    CHECK_THROWS_AS(load_dataset(path, DatasetFormat::jsonl, nullptr), error);
}

TEST_CASE("duplicate (text,label) rows are retained with a warning") {
    auto path = write_temp("dup.jsonl",
                           R"({"text":"same","label":"a"})" "\n"
                           R"({"text":"same","label":"a"})" "\n");
    std::vector<std::string> warnings;
    Dataset d = load_dataset(path, DatasetFormat::jsonl,
                             [&](const std::string& w) { warnings.push_back(w); });
    CHECK(d.examples.size() == 2);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("duplicate") != std::string::npos);
}

TEST_CASE("reserved ood label is rejected at ingest") {
    auto path = write_temp("ood.jsonl", R"({"text":"x","label":"__ood__"})" "\n");
    CHECK_THROWS_AS(load_dataset(path, DatasetFormat::jsonl, nullptr), error);
}

TEST_CASE("csv header is mandatory") {
    auto path = write_temp("noheader.csv", "taxi now,transport_taxi\n");
    CHECK_THROWS_AS(load_dataset(path, DatasetFormat::csv, nullptr), error);
}

TEST_CASE("sample_seed selects all ids when shots equals class size") {
    auto d = testsupport::make_dataset({{"a", {"a1", "a2", "a3"}}, {"b", {"b1", "b2", "b3"}}});
    auto sel = sample_seed(d, 3, 7, nullptr);
    CHECK(sel.selected_ids.size() == 6);
    std::set<std::string> ids(sel.selected_ids.begin(), sel.selected_ids.end());
    for (const auto& ex : d.examples) CHECK(ids.count(ex.id) == 1);
}

TEST_CASE("sample_seed is deterministic and seed-sensitive") {
    std::vector<std::string> texts;
    for (int i = 0; i < 100; ++i) texts.push_back("example number " + std::to_string(i));
    auto d = testsupport::make_dataset({{"a", texts}, {"b", texts}});

    auto s1 = sample_seed(d, 5, 123, nullptr);
    auto s2 = sample_seed(d, 5, 123, nullptr);
    auto s3 = sample_seed(d, 5, 456, nullptr);
    CHECK(s1.selected_ids == s2.selected_ids);
    CHECK(s1.selected_ids != s3.selected_ids);
}

TEST_CASE("sample_seed matches an independent sampler oracle") {
    std::vector<std::string> texts;
    for (int i = 0; i < 40; ++i) texts.push_back("text " + std::to_string(i));
    auto d = testsupport::make_dataset({{"x", texts}, {"y", texts}});
    const int64_t seed = 2024;
    const size_t shots = 5;

    // oracle: per class, Fisher-Yates over positions with the same keyed
    // stream, take the first `shots`
    std::vector<std::string> expected;
    for (const auto& cls : d.classes) {
        auto pool = d.examples_of(cls);
        std::vector<size_t> order(pool.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        RngStream rng(static_cast<uint64_t>(seed), "sample_seed/" + cls);
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(rng.uniform_below(i));
            std::swap(order[i - 1], order[j]);
        }
        for (size_t i = 0; i < shots; ++i) expected.push_back(pool[order[i]]->id);
    }

    auto sel = sample_seed(d, shots, seed, nullptr);
    CHECK(sel.selected_ids == expected);
}

TEST_CASE("sampling keeps every class") {
    auto d = testsupport::make_dataset({{"a", {"a1", "a2"}}, {"b", {"b1", "b2", "b3"}}, {"c", {"c1"}}});
    std::vector<std::string> warnings;
    auto sel = sample_seed(d, 2, 5, [&](const std::string& w) { warnings.push_back(w); });
    Dataset seed = apply_selection(d, sel);
    CHECK(seed.classes == d.classes);
    CHECK(seed.examples_of("c").size() == 1); // undersized class kept whole
    CHECK(warnings.size() == 1);
}

TEST_CASE("write_dataset golden bytes") {
    Dataset d;
    d.name = "golden";
    d.examples = {{"t1", "taxi now", "transport_taxi"},
                  {"t2", "book a flight to rome", "transport_ticket"},
                  {"t3", "what is my balance", "balance"}};
    d.classes = {"balance", "transport_taxi", "transport_ticket"};
    auto path = fresh_dir("golden") / "out.jsonl";
    write_dataset(d, path);
    CHECK(read_file(path) == read_file(testsupport::test_data_dir() / "golden" / "write_dataset.jsonl"));
}

TEST_CASE("write/load round trip preserves ids and content") {
    auto d = testsupport::make_dataset({{"a", {"alpha one", "alpha two"}}, {"b", {"beta one"}}});
    auto path = fresh_dir("roundtrip") / "d.jsonl";
    write_dataset(d, path);
    Dataset back = load_dataset(path, DatasetFormat::jsonl, nullptr);
    back.name = d.name; // name comes from the file stem
    CHECK(back == d);
}

TEST_CASE("round trip holds for randomized datasets") {
    RngStream rng(31, "corpus-roundtrip");
    for (int iter = 0; iter < 25; ++iter) {
        std::vector<std::pair<std::string, std::vector<std::string>>> spec;
        size_t n_classes = 1 + rng.uniform_below(4);
        for (size_t c = 0; c < n_classes; ++c) {
            std::vector<std::string> texts;
            size_t n = 1 + rng.uniform_below(5);
            for (size_t i = 0; i < n; ++i)
                texts.push_back("text " + std::to_string(rng.next_u64() % 1000) + " class " +
                                std::to_string(c) + " item " + std::to_string(i));
            spec.push_back({"class_" + std::to_string(c), texts});
        }
        auto d = testsupport::make_dataset(spec, "rt");
        auto path = fresh_dir("rt") / "d.jsonl";
        write_dataset(d, path);
        Dataset back = load_dataset(path, DatasetFormat::jsonl, nullptr);
        back.name = d.name;
        REQUIRE(back == d);
    }
}

TEST_CASE("empty dataset writes an empty file that fails to load") {
    Dataset d;
    d.name = "none";
    auto path = fresh_dir("emptyds") / "d.jsonl";
    write_dataset(d, path);
    CHECK(read_file(path).empty());
    CHECK_THROWS_AS(load_dataset(path, DatasetFormat::jsonl, nullptr), error);
}
