#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "mdiqds/keyfile.hpp"
#include "mdiqds/rng.hpp"

using namespace mdiqds;

namespace {

std::string temp_path(const char* name) {
    return std::string("keyfile_test_") + name + ".bin";
}

}  // namespace

TEST_CASE("key file round-trip at awkward bit lengths") {
    SplitRng rng(2024);
    for (std::size_t n : {std::size_t(1), std::size_t(8), std::size_t(65),
                          std::size_t(1000)}) {
        const std::string path = temp_path("roundtrip");
        Bitstring bits = Bitstring::random(n, rng);
        write_key_file(path, bits);
        Bitstring back = read_key_file(path);
        CHECK(back == bits);
        std::remove(path.c_str());
    }
}

TEST_CASE("key file rejects corruption") {
    const std::string path = temp_path("corrupt");
    SplitRng rng(9);
    write_key_file(path, Bitstring::random(128, rng));

    SECTION("missing file") {
        CHECK_THROWS_AS(read_key_file(path + ".nope"), KeyFileError);
    }
    SECTION("bad magic") {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.put('X');
        f.close();
        CHECK_THROWS_AS(read_key_file(path), KeyFileError);
    }
    SECTION("bad version") {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(4);
        f.put(char(9));
        f.close();
        CHECK_THROWS_AS(read_key_file(path), KeyFileError);
    }
    SECTION("truncated payload") {
        // rewrite with a header claiming more bits than the file holds
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(8);
        std::uint64_t huge = 1 << 20;
        f.write(reinterpret_cast<const char*>(&huge), 8);
        f.close();
        CHECK_THROWS_AS(read_key_file(path), KeyFileError);
    }
    std::remove(path.c_str());
}

TEST_CASE("vault sequential take tracks consumption") {
    SplitRng rng(15);
    Bitstring pool = Bitstring::random(1000, rng);
    OtpVault vault(pool);
    CHECK(vault.size() == 1000);
    CHECK(vault.consumed() == 0);
    CHECK(vault.remaining() == 1000);

    Bitstring a = vault.take(100);
    CHECK(a == pool.window(0, 100));
    Bitstring b = vault.take(200);
    CHECK(b == pool.window(100, 200));
    CHECK(vault.consumed() == 300);
    CHECK(vault.remaining() == 700);
    CHECK(vault.ledger().size() == 2);
}

TEST_CASE("vault refuses reuse from either side") {
    SplitRng rng(16);
    OtpVault vault(Bitstring::random(1000, rng));
    vault.take_at(100, 100);  // holds [100, 200)
    CHECK_THROWS_AS(vault.take_at(150, 10), OtpReuseError);
    CHECK_THROWS_AS(vault.take_at(50, 60), OtpReuseError);   // tail overlaps
    CHECK_THROWS_AS(vault.take_at(199, 1), OtpReuseError);
    CHECK_THROWS_AS(vault.take_at(100, 100), OtpReuseError);
    // adjacent ranges are fine
    CHECK_NOTHROW(vault.take_at(0, 100));
    CHECK_NOTHROW(vault.take_at(200, 100));
    CHECK(vault.consumed() == 300);
}

TEST_CASE("vault refuses to run past the end") {
    SplitRng rng(17);
    OtpVault vault(Bitstring::random(64, rng));
    CHECK_THROWS_AS(vault.take(65), OtpExhaustedError);
    vault.take(64);
    CHECK_THROWS_AS(vault.take(1), OtpExhaustedError);
    CHECK(vault.remaining() == 0);
}

TEST_CASE("sequential take resumes after explicit ranges") {
    SplitRng rng(18);
    Bitstring pool = Bitstring::random(500, rng);
    OtpVault vault(pool);
    vault.take(10);          // [0, 10)
    vault.take_at(300, 50);  // pushes the high-water mark to 350
    Bitstring next = vault.take(10);
    CHECK(next == pool.window(350, 10));
}
