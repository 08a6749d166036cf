// SPDX-License-Identifier: Apache-2.0
#include "qmimo/io.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace qmimo;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / name; }

io::ArrayContainer sample() {
    io::ArrayContainer c;
    c.kind = "sample";
    c.meta = {{"note", "x"}, {"n", 3}};
    c.put("a", Tensor({2, 3}, (Eigen::VectorXd(6) << 1, 2, 3, 4, 5, 6).finished()));
    BasicTensor<std::complex<double>> z({2});
    z[0] = {1.0, -2.0};
    z[1] = {0.5, 0.25};
    c.put_complex("z", z);
    return c;
}

}  // namespace

TEST_CASE("FNV-1a reference values", "[io]") {
    CHECK(io::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(io::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(io::fnv1a64("foobar") == 0x85944171f73967e8ULL);
    CHECK(io::hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("container round trip", "[io]") {
    const auto path = scratch("qmimo_io_roundtrip.bin").string();
    sample().save(path);
    const auto c = io::ArrayContainer::load(path, "sample");
    CHECK(c.kind == "sample");
    CHECK(c.meta.at("n") == 3);
    CHECK(c.get("a").shape() == Shape{2, 3});
    CHECK(c.get("a").data() == sample().get("a").data());
    CHECK(c.get_complex("z")[0] == std::complex<double>(1.0, -2.0));
    CHECK(c.names() == std::vector<std::string>{"a", "z"});
    CHECK_THROWS_AS(c.get("missing"), io::FormatError);
    CHECK_THROWS_AS(c.get("z"), io::FormatError);
    CHECK_THROWS_AS(io::ArrayContainer::load(path, "other"), io::FormatError);
    fs::remove(path);
}

TEST_CASE("saving is byte-stable", "[io]") {
    const auto p1 = scratch("qmimo_io_a.bin").string(), p2 = scratch("qmimo_io_b.bin").string();
    sample().save(p1);
    sample().save(p2);
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("corruption is detected", "[io]") {
    const auto path = scratch("qmimo_io_corrupt.bin").string();
    sample().save(path);
    const auto size = fs::file_size(path);
    for (std::uintmax_t offset : {std::uintmax_t(30), size - 3}) {
        sample().save(path);
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(std::streamoff(offset));
        char ch;
        f.get(ch);
        f.seekp(std::streamoff(offset));
        f.put(char(ch ^ 0x01));
        f.close();
        CHECK_THROWS_AS(io::ArrayContainer::load(path), io::FormatError);
    }
    fs::resize_file(path, size / 2);
    CHECK_THROWS_AS(io::ArrayContainer::load(path), io::FormatError);
    std::ofstream(path) << "not a container";
    CHECK_THROWS_AS(io::ArrayContainer::load(path), io::FormatError);
    fs::remove(path);
}
