#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "support/helpers.hpp"
#include "support/prompt_fixtures.hpp"
#include "tardis/prompt_forge.hpp"

using namespace tardis;
using namespace testsupport;

TEST_CASE("all built-in template sets are complete") {
    auto sets = builtin_template_sets(template_dir());
    REQUIRE(sets.size() == 4);
    for (const auto& set : sets) {
        INFO(set.domain);
        CHECK(set.complete());
        for (template_id id : kAllTemplateIds) CHECK(!set.get(id).body.empty());
    }
}

TEST_CASE("built-in sets keep their distinctive wording") {
    auto banking = load_templates("banking");
    CHECK(banking.get(template_id::seg_generate).body.find("Give me five new modified texts") !=
          std::string::npos);
    CHECK(banking.get(template_id::class_description).body.find("Describe this class in one sentence") !=
          std::string::npos);

    auto daily = load_templates("daily_life");
    CHECK(daily.get(template_id::ceg_generate).body.find("could be confused with an") !=
          std::string::npos);
    CHECK(daily.get(template_id::seg_generate).body.find("daily life") != std::string::npos);

    auto question = load_templates("question_type");
    CHECK(question.get(template_id::contextualizing_text).body.find("suggest five ideas") !=
          std::string::npos);
    CHECK(question.get(template_id::discriminative_text).body.find("Focus on the answer type") !=
          std::string::npos);
}

TEST_CASE("zero-placeholder template renders verbatim") {
    PromptTemplate t{template_id::class_description, "test", "no placeholders here."};
    CHECK(render(t, {}) == "no placeholders here.");
}

TEST_CASE("missing binding errors name the placeholder") {
    PromptTemplate t{template_id::class_description, "test", "class {target_class_name} :"};
    try {
        render(t, {});
        FAIL("expected error");
    } catch (const error& e) {
        CHECK(std::string(e.what()).find("target_class_name") != std::string::npos);
    }
}

TEST_CASE("empty binding values are rejected") {
    PromptTemplate t{template_id::class_description, "test", "class {target_class_name} :{target_seed_data}"};
    CHECK_THROWS_AS(render(t, {{"target_class_name", std::string("")},
                               {"target_seed_data", std::vector<std::string>{"x"}}}),
                    error);
    CHECK_THROWS_AS(render(t, {{"target_class_name", std::string("taxi")},
                               {"target_seed_data", std::vector<std::string>{}}}),
                    error);
}

TEST_CASE("unknown bindings only warn") {
    PromptTemplate t{template_id::class_description, "test", "just {target_class_name}"};
    std::vector<std::string> warnings;
    auto out = render(t, {{"target_class_name", std::string("x")}, {"spurious", std::string("y")}},
                      [&](const std::string& w) { warnings.push_back(w); });
    CHECK(out == "just x");
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("spurious") != std::string::npos);
}

TEST_CASE("list bindings render one item per line with a dash prefix") {
    PromptTemplate t{template_id::class_description, "test", "class :{target_seed_data}."};
    auto out = render(t, {{"target_seed_data", std::vector<std::string>{"one", "two"}}});
    CHECK(out == "class :\n- one\n- two.");
}

TEST_CASE("class_description render contains the instruction sentence") {
    auto set = load_templates("banking");
    PromptContext ctx{&set, "", nullptr};
    auto out = ctx.render(template_id::class_description,
                          {{"target_class_name", std::string("transport_taxi")},
                           {"target_seed_data", std::vector<std::string>{"taxi now"}}});
    CHECK(out.find("Describe this class in one sentence.") != std::string::npos);
    CHECK(out.find("transport_taxi") != std::string::npos);
    CHECK(out.find("\n- taxi now") != std::string::npos);
}

TEST_CASE("verification prompt ends with a class-awaiting query line") {
    auto set = load_templates("banking");
    PromptContext ctx{&set, "", nullptr};
    auto out = ctx.render(template_id::verification, golden_bindings(template_id::verification));
    // three shot lines plus the query line
    CHECK(std::count(out.begin(), out.end(), '\n') == 3);
    CHECK(out.substr(out.size() - 6) == "class:");
    CHECK(out.find("text: need a ride home class:") != std::string::npos);
}

TEST_CASE("render is pure: repeated renders are identical") {
    auto set = load_templates("daily_life");
    PromptContext ctx{&set, "", nullptr};
    for (template_id id : kAllTemplateIds) {
        auto a = ctx.render(id, golden_bindings(id));
        auto b = ctx.render(id, golden_bindings(id));
        CHECK(a == b);
    }
}

TEST_CASE("generic domain binds {domain} from the context") {
    auto set = load_templates("generic");
    PromptContext ctx{&set, "customer support", nullptr};
    auto out = ctx.render(template_id::seg_generate, golden_bindings(template_id::seg_generate));
    CHECK(out.find("about customer support") != std::string::npos);

    PromptContext missing{&set, "", nullptr};
    CHECK_THROWS_AS(missing.render(template_id::seg_generate,
                                   golden_bindings(template_id::seg_generate)),
                    error);
}

TEST_CASE("unknown placeholders in template files are rejected at load") {
    auto dir = fresh_dir("badtpl");
    std::filesystem::create_directories(dir / "bad");
    for (template_id id : kAllTemplateIds)
        write_file(dir / "bad" / (std::string(template_id_name(id)) + ".txt"), "ok body\n");
    write_file(dir / "bad" / "seg_generate.txt", "body with {unexpected_name}\n");
    CHECK_THROWS_AS(load_template_set(dir, "bad"), error);
}

TEST_CASE("golden files pin rendered prompts for every domain and id") {
    const bool update = std::getenv("TARDIS_UPDATE_GOLDENS") != nullptr;
    for (const auto& domain : builtin_domains()) {
        auto set = load_template_set(template_dir(), domain);
        PromptContext ctx{&set, domain == "generic" ? "customer support" : "", nullptr};
        for (template_id id : kAllTemplateIds) {
            auto rendered = ctx.render(id, golden_bindings(id));
            auto golden_path = test_data_dir() / "golden" / "prompts" /
                               (domain + "__" + template_id_name(id) + ".txt");
            if (update) {
                write_file(golden_path, rendered);
                continue;
            }
            INFO(domain << "/" << template_id_name(id));
            REQUIRE(std::filesystem::exists(golden_path));
            CHECK(rendered == read_file(golden_path));

            auto anchor = to_lower(anchor_phrase(domain, id));
            CHECK(to_lower(rendered).find(anchor) != std::string::npos);
        }
    }
}
