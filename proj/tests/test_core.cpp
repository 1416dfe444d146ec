#include <catch2/catch_amalgamated.hpp>

#include "support/helpers.hpp"
#include "tardis/hash.hpp"
#include "tardis/io.hpp"
#include "tardis/rng.hpp"

using namespace tardis;

TEST_CASE("sha256 matches FIPS test vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    // exercise multi-block input
    std::string million(1000000, 'a');
    CHECK(sha256_hex(million) == "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("rng substreams are deterministic and scope-separated") {
    RngStream a(42, "stage/classA/round=0");
    RngStream b(42, "stage/classA/round=0");
    RngStream c(42, "stage/classA/round=1");
    std::vector<uint64_t> va, vb, vc;
    for (int i = 0; i < 8; ++i) {
        va.push_back(a.next_u64());
        vb.push_back(b.next_u64());
        vc.push_back(c.next_u64());
    }
    CHECK(va == vb);
    CHECK(va != vc);
}

TEST_CASE("uniform_below stays in range and covers values") {
    RngStream rng(7, "range");
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 2000; ++i) {
        uint64_t v = rng.uniform_below(5);
        REQUIRE(v < 5);
        seen[v] += 1;
    }
    for (int count : seen) CHECK(count > 0);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7};
    RngStream r1(99, "shuffle");
    RngStream r2(99, "shuffle");
    auto a = v, b = v;
    r1.shuffle(a);
    r2.shuffle(b);
    CHECK(a == b);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
}

TEST_CASE("for_each_line handles LF, CRLF and missing trailing newline") {
    std::vector<std::string> lines;
    for_each_line("a\r\nb\nc", [&](std::string_view line, size_t) { lines.emplace_back(line); });
    CHECK(lines == std::vector<std::string>{"a", "b", "c"});

    lines.clear();
    for_each_line("x\n\ny\n", [&](std::string_view line, size_t) { lines.emplace_back(line); });
    CHECK(lines == std::vector<std::string>{"x", "", "y"});
}

TEST_CASE("trim and split") {
    CHECK(trim("  spaced out \t\n") == "spaced out");
    CHECK(trim("") == "");
    CHECK(split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
    CHECK(split("single", ',') == std::vector<std::string>{"single"});
}

TEST_CASE("read/write round trip") {
    auto dir = testsupport::fresh_dir("io");
    auto path = dir / "nested" / "file.txt";
    write_file(path, "payload\n");
    CHECK(read_file(path) == "payload\n");
    CHECK_THROWS_AS(read_file(dir / "missing.txt"), error);
}
