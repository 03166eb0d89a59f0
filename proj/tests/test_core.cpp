#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>

#include "moma/core.hpp"
#include "moma/detail/rng.hpp"
#include "moma/detail/sha256.hpp"
#include "support/util.hpp"

using namespace moma;

TEST_CASE("sha256 matches published vectors", "[core]") {
    CHECK(detail::sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(detail::sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(detail::sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    CHECK(detail::sha256_hex(std::string(1000000, 'a')) ==
          "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
    // 55/56/64 byte messages exercise both padding branches
    CHECK(detail::sha256_hex(std::string(55, 'x')) != detail::sha256_hex(std::string(56, 'x')));
    CHECK(detail::sha256_hex(std::string(64, 'x')).size() == 64);
}

TEST_CASE("date parsing accepts ISO-8601 and rejects garbage", "[core]") {
    auto d = Date::parse("2024-02-29");
    REQUIRE(d.has_value());
    CHECK(d->year == 2024);
    CHECK(d->month == 2);
    CHECK(d->day == 29);
    CHECK(d->to_string() == "2024-02-29");

    CHECK_FALSE(Date::parse("2023-02-29").has_value()); // not a leap year
    CHECK_FALSE(Date::parse("1900-02-29").has_value()); // century rule
    CHECK(Date::parse("2000-02-29").has_value());       // 400-year rule
    CHECK_FALSE(Date::parse("2024-13-01").has_value());
    CHECK_FALSE(Date::parse("2024-00-10").has_value());
    CHECK_FALSE(Date::parse("2024-04-31").has_value());
    CHECK_FALSE(Date::parse("2024/04/30").has_value());
    CHECK_FALSE(Date::parse("24-04-30").has_value());
    CHECK_FALSE(Date::parse("2024-4-30").has_value());
    CHECK_FALSE(Date::parse("2024-04-3O").has_value()); // letter O
    CHECK_FALSE(Date::parse("").has_value());
}

TEST_CASE("date ordering is lexicographic on (y, m, d)", "[core]") {
    Date a{2023, 12, 31};
    Date b{2024, 1, 1};
    Date c{2024, 1, 2};
    CHECK(a < b);
    CHECK(b < c);
    CHECK(a < c);
    CHECK(a == a);
    CHECK(b <= b);
    CHECK(c > b);
}

TEST_CASE("derived seeds are deterministic and well spread", "[core]") {
    CHECK(detail::derive_seed(42, 7) == detail::derive_seed(42, 7));
    std::set<std::uint64_t> seen;
    for (std::uint64_t base : {0ull, 1ull, 42ull})
        for (std::uint64_t idx = 0; idx < 100; ++idx) seen.insert(detail::derive_seed(base, idx));
    CHECK(seen.size() == 300);
}

TEST_CASE("uniform doubles stay in range and reproduce", "[core]") {
    std::mt19937_64 a(detail::splitmix64(9));
    std::mt19937_64 b(detail::splitmix64(9));
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double x = detail::next_uniform(a, -2.0, 3.0);
        CHECK(x >= -2.0);
        CHECK(x < 3.0);
        sum += x;
        REQUIRE(x == detail::next_uniform(b, -2.0, 3.0));
    }
    CHECK(sum / 10000.0 == Catch::Approx(0.5).margin(0.1));
}

TEST_CASE("next_index covers the range", "[core]") {
    std::mt19937_64 rng(1);
    std::set<std::size_t> seen;
    for (int i = 0; i < 200; ++i) {
        auto k = detail::next_index(rng, 7);
        REQUIRE(k < 7);
        seen.insert(k);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("atomic file write round-trips and creates directories", "[core]") {
    moma_test::TempDir tmp("moma-core");
    auto path = tmp / "a/b/c.txt";
    write_text_file_atomic(path, "hello\nworld\n");
    CHECK(read_text_file(path) == "hello\nworld\n");
    write_text_file_atomic(path, "shorter");
    CHECK(read_text_file(path) == "shorter");
    CHECK_THROWS_AS(read_text_file(tmp / "missing.txt"), Error);
}
