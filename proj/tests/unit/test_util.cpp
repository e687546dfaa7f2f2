// SPDX-License-Identifier: Apache-2.0

#include <tirgym/error.hpp>
#include <tirgym/image.hpp>
#include <tirgym/util.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

using namespace tirgym;

TEST_CASE("trim and whitespace split", "[util]")
{
    CHECK(trim("  a b \n") == "a b");
    CHECK(trim(" \t ").empty());
    auto words = split_whitespace(" one\ttwo\n three ");
    REQUIRE(words.size() == 3);
    CHECK(words[2] == "three");
}

TEST_CASE("fnv1a64 matches published test vectors", "[util]")
{
    CHECK(fnv1a64(std::string_view("")) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64(std::string_view("foobar")) == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("key value config parses, serializes and rejects bad lines", "[util]")
{
    auto kv = KeyValueConfig::parse("# comment\n a.b = 1 \nname=x = y\n\nflag = true\nratio = 0.25\n");
    CHECK(kv.get_int("a.b", 0) == 1);
    CHECK(kv.get_or("name", "") == "x = y");
    CHECK(kv.get_bool("flag", false));
    CHECK(kv.get_double("ratio", 0) == 0.25);
    CHECK(kv.get_int("missing", 7) == 7);
    CHECK(KeyValueConfig::parse(kv.serialize()).values() == kv.values());
    CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign"), Error);
    CHECK_THROWS_AS(KeyValueConfig::parse(" = value"), Error);
}

TEST_CASE("atomic writes replace the whole file", "[util]")
{
    auto path = std::filesystem::path(TIRGYM_SCRATCH_DIR) / "atomic.txt";
    write_file_atomic(path, "first");
    write_file_atomic(path, "second");
    CHECK(read_text_file(path) == "second");
    CHECK_FALSE(std::filesystem::exists(path.string() + ".partial"));
    CHECK_THROWS_AS(read_text_file(path.string() + ".missing"), Error);
}

TEST_CASE("error codes have stable names", "[util]")
{
    CHECK(errc_name(Errc::MalformedToolJson) == "MalformedToolJson");
    CHECK(errc_from_name("EpisodeAlreadyDone") == Errc::EpisodeAlreadyDone);
    CHECK_FALSE(errc_from_name("NoSuchCode").has_value());
    auto e = Error(Errc::UnknownTool, "ghost");
    CHECK(e.code() == Errc::UnknownTool);
    CHECK(e.detail() == "ghost");
}

TEST_CASE("pnm encode and decode round-trip", "[util]")
{
    auto rng = std::mt19937(3);
    for (int channels: { 1, 3 })
    {
        auto img = Image(17, 9, channels);
        for (auto& p: img.pixels)
            p = static_cast<std::uint8_t>(rng());
        CHECK(decode_pnm(encode_pnm(img)) == img);
    }
    auto junk = std::vector<std::uint8_t> { 'P', '9', '\n' };
    CHECK_THROWS_AS(decode_pnm(junk), Error);
}

TEST_CASE("fractional boxes map to rounded pixel edges", "[util]")
{
    auto r = bbox_to_pixels({ 0.75, 0.0, 0.98, 0.25 }, 256, 256);
    REQUIRE(r);
    CHECK(*r == PixelRect { 192, 0, 251, 64 });
    CHECK(bbox_to_pixels({ 0, 0, 1, 1 }, 40, 30) == PixelRect { 0, 0, 40, 30 });
    CHECK_FALSE(bbox_to_pixels({ 0.5, 0.5, 0.4, 0.9 }, 100, 100));
    CHECK_FALSE(bbox_to_pixels({ -0.1, 0, 0.5, 0.5 }, 100, 100));
    CHECK_FALSE(bbox_to_pixels({ 0.5, 0.5, 0.501, 0.9 }, 100, 100));
    CHECK_FALSE(bbox_to_pixels({ 0, 0, NAN, 1 }, 100, 100));

    // oracle: independent rounding over random boxes
    auto rng = std::mt19937_64(8);
    auto unit = std::uniform_real_distribution<double>(0.0, 1.0);
    for (int i = 0; i < 1000; ++i)
    {
        double a = unit(rng), b = unit(rng), c = unit(rng), d = unit(rng);
        auto box = std::array<double, 4> { std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d) };
        int const w = 1 + static_cast<int>(rng() % 500), h = 1 + static_cast<int>(rng() % 500);
        int x0 = static_cast<int>(std::floor(box[0] * w + 0.5)), y0 = static_cast<int>(std::floor(box[1] * h + 0.5));
        int x1 = static_cast<int>(std::floor(box[2] * w + 0.5)), y1 = static_cast<int>(std::floor(box[3] * h + 0.5));
        auto got = bbox_to_pixels(box, w, h);
        if (x1 - x0 >= 1 && y1 - y0 >= 1 && box[0] < box[2] && box[1] < box[3])
        {
            REQUIRE(got);
            CHECK(*got == PixelRect { x0, y0, x1, y1 });
        }
        else
        {
            CHECK_FALSE(got);
        }
    }
}

TEST_CASE("crop, upscale and enhancement filters", "[util]")
{
    auto img = Image(4, 3, 1);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x)
            img.at(x, y) = static_cast<std::uint8_t>(10 * y + x);
    auto c = crop(img, PixelRect { 1, 1, 3, 3 });
    CHECK(c.width == 2);
    CHECK(c.height == 2);
    CHECK(c.at(0, 0) == 11);
    CHECK(c.at(1, 1) == 22);

    auto up = upscale_nearest(c, 3);
    CHECK(up.width == 6);
    CHECK(up.at(5, 5) == 22);
    CHECK(up.at(2, 0) == 11);

    auto s = stretch_contrast(img);
    CHECK(s.at(0, 0) == 0);
    CHECK(s.at(3, 2) == 255);

    auto b = brighten(img);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(b.pixels[i] == std::lround(255.0 * std::sqrt(img.pixels[i] / 255.0)));

    auto flat = Image(5, 5, 1);
    std::fill(flat.pixels.begin(), flat.pixels.end(), 77);
    CHECK(box_blur3(flat) == flat);
}

TEST_CASE("image store addresses content by hash", "[util]")
{
    auto store = ImageStore {};
    auto img = Image(2, 2, 1);
    auto h1 = store.put_image(img);
    auto h2 = store.put_image(img);
    CHECK(h1 == h2);
    CHECK(h1.starts_with("cas/"));
    REQUIRE(store.get(h1));
    CHECK(decode_pnm(*store.get(h1)) == img);
    CHECK_FALSE(store.get("cas/none.pnm"));

    auto disk = ImageStore(TIRGYM_FIXTURES_DIR);
    REQUIRE(disk.contains("images/case1_chest.pgm"));
    auto chest = decode_pnm(*disk.get("images/case1_chest.pgm"));
    CHECK(chest.width == 256);
    CHECK(chest.height == 256);
    CHECK_FALSE(disk.contains("../tasks.jsonl"));
}
