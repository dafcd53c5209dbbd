#include <doctest.h>

#include <cstring>

#include "specpool/errors.hpp"
#include "specpool/smat.hpp"
#include "test_helpers.hpp"

using namespace specpool;

TEST_CASE("smat round-trips matrices bit-exactly") {
  const auto dir = testutil::fresh_dir("smat_roundtrip");
  Eigen::MatrixXd m(2, 3);
  m << 0.1 + 0.2, -0.0, 1e-308, std::nextafter(1.0, 2.0), -3.5, 1.0 / 3.0;
  Eigen::MatrixXd empty(0, 4);
  const auto path = dir / "test.smat";
  write_smat(path, {{"m", m}, {"empty", empty}});

  const SmatFile file = read_smat(path);
  REQUIRE(file.has("m"));
  REQUIRE(file.has("empty"));
  const Eigen::MatrixXd& back = file.get("m");
  REQUIRE(back.rows() == 2);
  REQUIRE(back.cols() == 3);
  CHECK(std::memcmp(back.data(), m.data(), sizeof(double) * 6) == 0);
  CHECK(file.get("empty").rows() == 0);
  CHECK(file.get("empty").cols() == 4);

  // Byte-identical re-serialization.
  CHECK(to_smat_bytes(file.entries) == to_smat_bytes({{"m", m}, {"empty", empty}}));
}

TEST_CASE("smat rejects a bad magic") {
  std::string bytes = to_smat_bytes({{"m", Eigen::MatrixXd::Zero(1, 1)}});
  bytes[0] = 'X';
  try {
    read_smat_bytes(bytes);
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == "BadMagic");
  }
}

TEST_CASE("smat rejects truncated payloads and trailing bytes") {
  const std::string bytes = to_smat_bytes({{"m", testutil::random_matrix(4, 4, 1)}});
  SUBCASE("short payload") {
    // 4x4 declared but one double missing.
    const std::string cut = bytes.substr(0, bytes.size() - 8);
    try {
      read_smat_bytes(cut);
      FAIL("expected TruncatedPayload");
    } catch (const Error& e) {
      CHECK(e.code() == "TruncatedPayload");
    }
  }
  SUBCASE("trailing garbage") {
    try {
      read_smat_bytes(bytes + "junk");
      FAIL("expected TruncatedPayload");
    } catch (const Error& e) {
      CHECK(e.code() == "TruncatedPayload");
    }
  }
}

TEST_CASE("smat rejects duplicate names on write") {
  try {
    to_smat_bytes({{"m", Eigen::MatrixXd::Zero(1, 1)}, {"m", Eigen::MatrixXd::Zero(1, 1)}});
    FAIL("expected DuplicateName");
  } catch (const Error& e) {
    CHECK(e.code() == "DuplicateName");
  }
}
