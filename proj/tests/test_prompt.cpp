#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>

#include "moma/detail/sha256.hpp"
#include "moma/presets.hpp"
#include "moma/prompt.hpp"
#include "support/util.hpp"

using namespace moma;

TEST_CASE("placeholder scan finds every marker", "[prompt]") {
    auto t = make_template("t", "a {{x}} b {{long_name2}} c {{x}}");
    CHECK(t.required_placeholders == std::set<std::string>{"x", "long_name2"});
    CHECK(make_template("t", "no markers").required_placeholders.empty());
    // malformed or empty markers are not placeholders
    CHECK(make_template("t", "{{}} {{a b}} {x} {{unclosed").required_placeholders.empty());
}

TEST_CASE("render substitutes byte-exactly", "[prompt]") {
    auto t = make_template("t", "pre {{a}} mid {{b}} post {{a}}");
    CHECK(render(t, {{"a", "A"}, {"b", ""}}) == "pre A mid  post A");

    SECTION("missing binding names the placeholder") {
        CHECK_THROWS_WITH(render(t, {{"a", "A"}}), Catch::Matchers::ContainsSubstring("'b'"));
    }
    SECTION("extra binding is an error") {
        CHECK_THROWS_AS(render(t, {{"a", "A"}, {"b", "B"}, {"c", "C"}}), TemplateError);
    }
    SECTION("single pass leaves marker-shaped values literal") {
        CHECK(render(t, {{"a", "{{b}}"}, {"b", "X"}}) == "pre {{b}} mid X post {{b}}");
    }
    SECTION("multibyte values survive") {
        CHECK(render(t, {{"a", "μg/dL\n"}, {"b", "\t"}}) == "pre μg/dL\n mid \t post μg/dL\n");
    }
}

TEST_CASE("render_from_context ignores extra keys but not missing ones", "[prompt]") {
    auto t = make_template("t", "only {{a}}");
    CHECK(render_from_context(t, {{"a", "1"}, {"unused", "2"}}) == "only 1");
    CHECK_THROWS_WITH(render_from_context(t, {{"unused", "2"}}),
                      Catch::Matchers::ContainsSubstring("'a'"));
}

TEST_CASE("checked construction compares declared and scanned sets", "[prompt]") {
    CHECK_NOTHROW(make_template_checked("t", "{{a}} {{b}}", {"a", "b"}));
    CHECK_THROWS_AS(make_template_checked("t", "{{a}}", {"a", "b"}), TemplateError);
    CHECK_THROWS_AS(make_template_checked("t", "{{a}} {{b}}", {"a"}), TemplateError);
}

TEST_CASE("guideline step counts are fixed per role", "[prompt]") {
    CHECK(required_step_count(AgentRole::text_specialist) == 6);
    CHECK(required_step_count(AgentRole::nontext_specialist) == 3);
    CHECK(required_step_count(AgentRole::aggregator) == 4);
    for (auto role : {AgentRole::text_specialist, AgentRole::nontext_specialist,
                      AgentRole::aggregator}) {
        auto g = default_guideline(role);
        CHECK(g.steps.size() == required_step_count(role));
        auto bad = g;
        bad.steps.pop_back();
        CHECK_THROWS_AS(build_from_guideline(bad, {}), TemplateError);
    }
}

TEST_CASE("guideline prompts carry role-specific structure", "[prompt]") {
    std::map<std::string, std::string> ctx{
        {"role_description", "an experienced trauma surgeon"},
        {"task", "grade injury severity"},
    };
    auto text = build_from_guideline(default_guideline(AgentRole::text_specialist), ctx);
    auto nontext = build_from_guideline(default_guideline(AgentRole::nontext_specialist), ctx);
    auto agg = build_from_guideline(default_guideline(AgentRole::aggregator), ctx);

    CHECK(text.required_placeholders == std::set<std::string>{"clinical_text"});
    CHECK(nontext.required_placeholders == std::set<std::string>{"modality_data"});
    CHECK(agg.required_placeholders == std::set<std::string>{"clinical_and_summaries"});

    // numbered sections in step order
    CHECK(text.body.find("1. Identify Relevant Points") != std::string::npos);
    CHECK(text.body.find("6. Final Structured Review") != std::string::npos);
    CHECK(text.body.find("1. Identify Relevant Points") <
          text.body.find("2. Apply Specified Criteria"));
    CHECK(nontext.body.find("3. Summarize Concisely") != std::string::npos);
    CHECK(agg.body.find("4. Create a Unified Summary") != std::string::npos);

    // conflict handling lives in the aggregator guideline
    CHECK(agg.body.find("contradict") != std::string::npos);

    // PHI exclusion for specialist roles only
    const std::string phi = "Protected Health Information (PHI) in your response";
    CHECK(text.body.find(phi) != std::string::npos);
    CHECK(nontext.body.find(phi) != std::string::npos);
    CHECK(agg.body.find(phi) == std::string::npos);

    CHECK(text.body.find("an experienced trauma surgeon") != std::string::npos);
    CHECK(text.template_id == "guideline_text_specialist");
}

TEST_CASE("preset catalog is pinned", "[prompt]") {
    auto names = preset_names();
    REQUIRE(names.size() == 8);

    // digests pin the preset bodies against accidental edits
    const std::map<std::string, std::string> digests{
        {"chest_aggregator", "c76a41619d91ee3d0e83c39fded342ad21969660f1a7ceac31d282d08f1e9256"},
        {"multitask_aggregator",
         "89ed74b11a6158eb95cf44ff499efddc1116bc144c2bcc6845e30a434ea0ee95"},
        {"alcohol_lab_specialist",
         "7ced21e31f1300f58e1e3df20632e18252ea62743eddb3c85cc332b331638a39"},
        {"alcohol_aggregator", "8791364ff1cbc08ca34ba1f276a198495e65507ce6c0e5716620d7804a99b616"},
        {"llava_summarize_multitask",
         "6e6146eed4ff382f56398fe7b79d5a32b206a598c182b34a31e408465400a097"},
        {"llava_summarize_chest",
         "8a1bdfbaee8ded5e3149e5aa759e394589edca3b07ae6d2a3ecbe8a0bf6428e9"},
        {"llava_classify_chest",
         "28bd52e45c39d0cf811cb8a1a4f43d2b6bd9b2f1725fe507cf0ea094d1617a5b"},
        {"llava_classify_multitask",
         "09cba2f12139ec81498c67dfbc12c8a9397f3e8add20617a266542b4c8081541"},
    };
    for (const auto& name : names) {
        INFO(name);
        auto t = preset(name);
        REQUIRE(digests.count(name) == 1);
        CHECK(detail::sha256_hex(t.body) == digests.at(name));
        CHECK(t.required_placeholders.size() == 1);
    }

    CHECK(preset("chest_aggregator").required_placeholders ==
          std::set<std::string>{"clinical_and_summaries"});
    CHECK(preset("alcohol_lab_specialist").required_placeholders ==
          std::set<std::string>{"modality_data"});
    CHECK(preset("llava_summarize_chest").required_placeholders ==
          std::set<std::string>{"clinical_notes"});
    CHECK(preset("llava_classify_chest").required_placeholders ==
          std::set<std::string>{"note_summary"});

    CHECK(preset("chest_aggregator").body.find("Abbreviated Injury Scale") != std::string::npos);
    CHECK_THROWS_WITH(preset("nope"), Catch::Matchers::ContainsSubstring("chest_aggregator"));
}

TEST_CASE("template files parse front-matter and verify declarations", "[prompt]") {
    moma_test::TempDir tmp("moma-prompt");
    auto good = tmp / "t.prompt";
    write_text_file(good, "---\ntemplate_id: my_t\nplaceholders: a, b\n---\nbody {{a}}/{{b}}\n");
    auto t = load_template_file(good);
    CHECK(t.template_id == "my_t");
    CHECK(t.body == "body {{a}}/{{b}}\n");
    CHECK(render(t, {{"a", "1"}, {"b", "2"}}) == "body 1/2\n");

    CHECK_THROWS_AS(parse_template_file("no header", "x"), TemplateError);
    CHECK_THROWS_AS(parse_template_file("---\ntemplate_id: t\n", "x"), TemplateError);
    CHECK_THROWS_AS(parse_template_file("---\nplaceholders: a\n---\n{{a}}", "x"), TemplateError);
    CHECK_THROWS_WITH(parse_template_file("---\ntemplate_id: t\nbogus: 1\n---\n", "x"),
                      Catch::Matchers::ContainsSubstring("bogus"));
    // declared/body mismatch caught at parse time
    CHECK_THROWS_AS(parse_template_file("---\ntemplate_id: t\nplaceholders: a\n---\n{{b}}", "x"),
                    TemplateError);
}
