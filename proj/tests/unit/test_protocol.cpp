// SPDX-License-Identifier: Apache-2.0

#include <tirgym/error.hpp>
#include <tirgym/protocol.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace tirgym;

namespace
{

Errc parse_error(std::string_view raw)
{
    try
    {
        (void)parse_turn(raw);
    }
    catch (const Error& e)
    {
        return e.code();
    }
    FAIL("parse succeeded for: " << raw);
    return Errc::InvalidRequest;
}

// structural equality with numbers compared by value, independent of canonical_json
bool same_value(const Json& a, const Json& b)
{
    if (a.is_number() && b.is_number())
        return a.get<double>() == b.get<double>();
    if (a.type() != b.type())
        return false;
    if (a.is_array())
    {
        if (a.size() != b.size())
            return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!same_value(a[i], b[i]))
                return false;
        return true;
    }
    if (a.is_object())
    {
        if (a.size() != b.size())
            return false;
        for (auto const& [k, v]: a.items())
            if (!b.contains(k) || !same_value(v, b[k]))
                return false;
        return true;
    }
    return a == b;
}

Json small_value(std::mt19937_64& rng, int depth)
{
    switch (rng() % (depth > 0 ? 4 : 6))
    {
    case 0:
        return static_cast<int>(rng() % 3);
    case 1:
        return static_cast<double>(rng() % 3) / (rng() % 2 ? 1.0 : 2.0);
    case 2:
        return rng() % 2 ? "a" : "b";
    case 3:
        return rng() % 2 == 0;
    case 4:
        return Json::array({ small_value(rng, depth + 1), small_value(rng, depth + 1) });
    default:
        return Json { { "n", small_value(rng, depth + 1) } };
    }
}

// an equal map written differently: integral doubles become integers and vice versa
Json respell(const Json& v)
{
    if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()))
        return static_cast<std::int64_t>(v.get<double>());
    if (v.is_number_integer())
        return static_cast<double>(v.get<std::int64_t>());
    if (v.is_array())
    {
        auto out = Json::array();
        for (auto const& e: v)
            out.push_back(respell(e));
        return out;
    }
    if (v.is_object())
    {
        auto out = Json::object();
        for (auto const& [k, e]: v.items())
            out[k] = respell(e);
        return out;
    }
    return v;
}

bool brute_force_repetition(const std::vector<std::string>& w, std::size_t window, std::size_t count)
{
    for (std::size_t i = 0; i + window * count <= w.size(); ++i)
    {
        bool all = true;
        for (std::size_t c = 1; c < count && all; ++c)
            for (std::size_t k = 0; k < window && all; ++k)
                all = w[i + k] == w[i + c * window + k];
        if (all)
            return true;
    }
    return false;
}

std::string join(const std::vector<std::string>& w)
{
    auto out = std::string {};
    for (auto const& s: w)
        out += (out.empty() ? "" : " ") + s;
    return out;
}

} // namespace

TEST_CASE("a tool-call turn parses into think and call", "[protocol]")
{
    auto t = parse_turn(R"(<think>zoom corner</think><tool_call>{"name":"image_zoom_in","arguments":{"bbox_2d":[0.75,0.0,0.98,0.25]}}</tool_call>)");
    CHECK(t.think == "zoom corner");
    REQUIRE(t.is_tool_call());
    CHECK(t.tool_call().name == "image_zoom_in");
    CHECK(t.tool_call().arguments == Json { { "bbox_2d", { 0.75, 0.0, 0.98, 0.25 } } });
}

TEST_CASE("an answer turn parses, whitespace between blocks allowed", "[protocol]")
{
    auto t = parse_turn("<think>done</think><answer>B</answer>");
    CHECK(t.think == "done");
    CHECK(t.answer().text == "B");
    CHECK(parse_turn("\n <think>done</think>\n\t<answer>B</answer>\n") == t);
}

TEST_CASE("each malformed turn maps to its error code", "[protocol]")
{
    CHECK(parse_error(R"(<think>x</think><tool_call>{"name":"t"}</tool_call><answer>B</answer>)") == Errc::MultipleActions);
    CHECK(parse_error("<think>x</think><answer>A</answer><answer>B</answer>") == Errc::MultipleActions);
    CHECK(parse_error("<answer>B</answer>") == Errc::MissingThink);
    CHECK(parse_error("<think>  </think><answer>B</answer>") == Errc::MissingThink);
    CHECK(parse_error("just text") == Errc::MissingThink);
    CHECK(parse_error("<think>x</think><tool_call>{not json}</tool_call>") == Errc::MalformedToolJson);
    CHECK(parse_error(R"(<think>x</think><tool_call>{"name":"Zoom-In","arguments":{}}</tool_call>)") == Errc::MalformedToolJson);
    CHECK(parse_error(R"(<think>x</think><tool_call>{"name":"t","arguments":[]}</tool_call>)") == Errc::MalformedToolJson);
    CHECK(parse_error(R"(<think>x</think><tool_call>{"name":"t","arguments":{},"extra":1}</tool_call>)") == Errc::MalformedToolJson);
    CHECK(parse_error("<think>x") == Errc::UnclosedTag);
    CHECK(parse_error("<think>x</think><answer>B") == Errc::UnclosedTag);
    CHECK(parse_error("<think>x</think>") == Errc::UnclosedTag);
    CHECK(parse_error("<think>x</think><answer>B</answer> trailing") == Errc::TrailingContent);
    CHECK(parse_error("hello <think>x</think><answer>B</answer>") == Errc::TrailingContent);
}

TEST_CASE("serialize is the inverse of parse", "[protocol]")
{
    auto turn = ParsedTurn { "look closer", ToolCall { "drugbank", Json { { "query", "metformin" } } } };
    CHECK(parse_turn(serialize_turn(turn)) == turn);
    auto answer = ParsedTurn { "sure", FinalAnswer { "B. X-Ray" } };
    CHECK(serialize_turn(answer) == "<think>sure</think><answer>B. X-Ray</answer>");
    CHECK(parse_turn(serialize_turn(answer)) == answer);
}

TEST_CASE("observations render inside obs tags and strip back", "[protocol]")
{
    CHECK(render_observation("Detected 1 box") == "<obs>Detected 1 box</obs>");
    for (auto s: { "", "plain", "multi\nline text", "  spaced  " })
        CHECK(strip_observation(render_observation(s)) == s);
    CHECK(strip_observation("untagged") == "untagged");
}

TEST_CASE("custom grammars change the tags", "[protocol]")
{
    auto g = GrammarConfig {};
    g.think_open = "[T]";
    g.think_close = "[/T]";
    g.answer_open = "[A]";
    g.answer_close = "[/A]";
    g.validate();
    auto t = parse_turn("[T]hmm[/T][A]C[/A]", g);
    CHECK(t.answer().text == "C");
    CHECK(serialize_turn(t, g) == "[T]hmm[/T][A]C[/A]");
    CHECK_THROWS_AS(parse_turn("<think>hmm</think><answer>C</answer>", g), Error);
}

TEST_CASE("grammar configs validate and load", "[protocol]")
{
    auto bad = GrammarConfig {};
    bad.answer_open = bad.think_open;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = GrammarConfig {};
    bad.repetition_window = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = GrammarConfig {};
    bad.repetition_count = 1;
    CHECK_THROWS_AS(bad.validate(), Error);

    auto loaded = GrammarConfig::load(std::string(TIRGYM_FIXTURES_DIR) + "/config/grammar.conf");
    CHECK(loaded.think_open == "<think>");
    CHECK(loaded.repetition_window == 8);
    auto again = GrammarConfig::from_config(loaded.to_config());
    CHECK(again.to_config().values() == loaded.to_config().values());
}

TEST_CASE("canonical call keys ignore key order and integral spelling", "[protocol]")
{
    auto key = [](const char* name, Json args) { return canonical_call_key(ToolCall { name, std::move(args) }); };
    CHECK(key("a", Json::parse(R"({"y":1,"x":2})")) == key("a", Json::parse(R"({"x":2,"y":1})")));
    CHECK(key("a", Json::parse(R"({"v":1.0})")) == key("a", Json::parse(R"({"v":1})")));
    CHECK(key("a", Json::object()) != key("b", Json::object()));
    CHECK(key("image_zoom_in", Json { { "bbox_2d", { 0.75, 0.0, 0.98, 0.25 } } })
          == R"(image_zoom_in {"bbox_2d":[0.75,0,0.98,0.25]})");
    CHECK(canonical_json(Json::parse(R"({"b":[1.5,-0.0,1e300],"a":"é"})")) == "{\"a\":\"é\",\"b\":[1.5,0,1e+300]}");
    CHECK_THROWS_AS(canonical_json(Json(std::nan(""))), Error);
    CHECK_THROWS_AS(canonical_json(Json::binary({ 1, 2 })), Error);
}

TEST_CASE("canonical keys agree with value equality over random argument maps", "[protocol]")
{
    auto rng = std::mt19937_64(1234);
    auto maps = std::vector<Json> {};
    for (int i = 0; i < 1000; ++i)
    {
        auto m = Json::object();
        for (auto const* k: { "x", "y", "z" })
            if (rng() % 2)
                m[k] = small_value(rng, 0);
        maps.push_back(m);
    }
    int mismatches = 0, collisions = 0, equal_pairs = 0;
    auto first_with_key = std::map<std::string, std::size_t> {};
    for (std::size_t i = 0; i < maps.size(); ++i)
    {
        auto const k = canonical_call_key(ToolCall { "t", maps[i] });
        mismatches += canonical_call_key(ToolCall { "t", respell(maps[i]) }) == k ? 0 : 1;
        auto [it, fresh] = first_with_key.emplace(k, i);
        if (!fresh)
        {
            ++equal_pairs;
            collisions += same_value(maps[it->second], maps[i]) ? 0 : 1;
        }
    }
    // value-equal maps never end up under different keys
    for (auto const& [k, i]: first_with_key)
        for (auto const& [k2, j]: first_with_key)
            if (i < j && same_value(maps[i], maps[j]))
                ++mismatches;
    CHECK(mismatches == 0);
    CHECK(collisions == 0);
    CHECK(equal_pairs > 0);
}

TEST_CASE("repetition detection on constructed and natural text", "[protocol]")
{
    auto g = GrammarConfig {};
    g.repetition_window = 4;
    g.repetition_count = 3;
    CHECK(detect_repetitive_generation("a b c d a b c d a b c d", g));
    CHECK_FALSE(detect_repetitive_generation("a b c d a b c d a b c", g));
    CHECK_FALSE(detect_repetitive_generation("a a a a a a a a a a a", g));
    CHECK(detect_repetitive_generation(join(std::vector<std::string>(24, "a"))));
    CHECK_FALSE(detect_repetitive_generation(join(std::vector<std::string>(23, "a"))));
    CHECK_FALSE(detect_repetitive_generation(""));

    auto text = read_text_file(std::string(TIRGYM_TEST_DATA_DIR) + "/natural_text.txt");
    auto words = std::vector<std::string> {};
    auto in = std::istringstream(text);
    for (std::string w; in >> w;)
        words.push_back(w);
    REQUIRE(words.size() >= 500);
    auto grams = std::set<std::vector<std::string>> {};
    for (std::size_t i = 0; i + 8 <= words.size(); ++i)
        grams.emplace(words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(i) + 8);
    CHECK(grams.size() == words.size() - 7);
    CHECK_FALSE(detect_repetitive_generation(text));
}

TEST_CASE("repetition detection matches a brute-force scan", "[protocol]")
{
    auto rng = std::mt19937_64(5);
    int positives = 0;
    for (int trial = 0; trial < 2000; ++trial)
    {
        auto words = std::vector<std::string> {};
        auto const vocab = 2 + rng() % 4;
        for (std::size_t i = 0, n = rng() % 40; i < n; ++i)
            words.push_back(std::string(1, static_cast<char>('a' + rng() % vocab)));
        if (rng() % 3 == 0 && words.size() >= 8)
        {
            auto at = rng() % (words.size() - 7);
            auto gram = std::vector<std::string>(words.begin() + static_cast<long>(at), words.begin() + static_cast<long>(at) + 8);
            auto copies = 2 + rng() % 2;
            for (std::size_t c = 0; c < copies; ++c)
                words.insert(words.begin() + static_cast<long>(at), gram.begin(), gram.end());
        }
        bool const expected = brute_force_repetition(words, 8, 3);
        positives += expected ? 1 : 0;
        INFO(join(words));
        CHECK(detect_repetitive_generation(join(words)) == expected);
    }
    CHECK(positives > 100);
}

TEST_CASE("tool names use lowercase letters, digits and underscores", "[protocol]")
{
    CHECK(is_valid_tool_name("image_zoom_in"));
    CHECK(is_valid_tool_name("sam2"));
    CHECK_FALSE(is_valid_tool_name(""));
    CHECK_FALSE(is_valid_tool_name("Zoom"));
    CHECK_FALSE(is_valid_tool_name("zoom-in"));
    CHECK_FALSE(is_valid_tool_name("zoom in"));
}
