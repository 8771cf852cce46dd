#include <fstream>

#include <doctest.h>

#include "helpers.hpp"
#include "sqlrl/cell.hpp"
#include "sqlrl/digest.hpp"

using namespace sqlrl;
using testutil::TempDir;

TEST_CASE("canonical cell encoding") {
    const double tol = 1e-6;
    CHECK(canonical_cell(Cell{}, tol) == "N;");
    CHECK(canonical_cell(Cell{int64_t{42}}, tol) == canonical_cell(Cell{42.0000000001}, tol));
    CHECK(canonical_cell(Cell{int64_t{42}}, tol) != canonical_cell(Cell{42.5}, tol));
    CHECK(canonical_cell(Cell{std::string("42")}, tol) !=
          canonical_cell(Cell{int64_t{42}}, tol));
    // tolerance scales with magnitude
    CHECK(canonical_cell(Cell{1e12 + 100.0}, tol) == canonical_cell(Cell{int64_t{1000000000100}}, tol));
    // text is byte-exact
    CHECK(canonical_cell(Cell{std::string("a;b")}, tol) !=
          canonical_cell(Cell{std::string("a")}, tol));
    // blobs compare by digest and size
    Cell b1 = BlobDigest{"aa11", 4};
    Cell b2 = BlobDigest{"aa11", 4};
    Cell b3 = BlobDigest{"aa12", 4};
    CHECK(canonical_cell(b1, tol) == canonical_cell(b2, tol));
    CHECK(canonical_cell(b1, tol) != canonical_cell(b3, tol));
}

TEST_CASE("display strings") {
    CHECK(display_cell(Cell{}) == "NULL");
    CHECK(display_cell(Cell{int64_t{-7}}) == "-7");
    CHECK(display_cell(Cell{std::string("hi")}) == "hi");
    CHECK(display_cell(Cell{2.5}) == "2.5");
}

TEST_CASE("sha256 matches the published test vector") {
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(short_digest(sha256_hex("abc")).size() < 64);

    TempDir tmp;
    const std::string path = tmp.sub("blob.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "abc";
    }
    CHECK(sha256_file(path) == sha256_hex("abc"));
    CHECK_THROWS(sha256_file(tmp.sub("missing.bin")));
}
