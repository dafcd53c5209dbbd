#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "specpool/errors.hpp"
#include "specpool/operators.hpp"
#include "test_helpers.hpp"

using namespace specpool;

TEST_CASE("vertex_areas: unit right triangle gives 1/6 per vertex") {
  const Mesh tri = testutil::make_single_triangle({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
  const MassDiagonal areas = vertex_areas(tri);
  for (int i = 0; i < 3; ++i) CHECK(areas[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("vertex_areas: regular tetrahedron edge 1 gives sqrt(3)/4 per vertex") {
  const Mesh tet = testutil::make_tetrahedron(1.0);
  const MassDiagonal areas = vertex_areas(tet);
  const Eigen::VectorXd oracle = testutil::vertex_areas_oracle(tet);
  for (int i = 0; i < 4; ++i) {
    CHECK(areas[i] == doctest::Approx(std::sqrt(3.0) / 4.0).epsilon(1e-12));
    CHECK(areas[i] == doctest::Approx(oracle[i]).epsilon(1e-14));
  }
}

TEST_CASE("vertex_areas: icosphere masses sum to the total surface area") {
  const Mesh sphere = testutil::make_icosphere(2);
  const MassDiagonal areas = vertex_areas(sphere);
  const double total = total_surface_area(sphere);
  CHECK(std::abs(areas.sum() - total) <= 1e-9 * total);
  CHECK((areas.array() > 0.0).all());
}

TEST_CASE("vertex_areas rejects collinear triangles") {
  const Mesh bad = testutil::make_single_triangle({0, 0, 0}, {1, 0, 0}, {2, 0, 0});
  try {
    vertex_areas(bad);
    FAIL("expected ZeroAreaFace");
  } catch (const Error& e) {
    CHECK(e.code() == "ZeroAreaFace");
  }
}

TEST_CASE("cotangent_stiffness: square diagonal edge has weight zero") {
  const Mesh square = testutil::make_unit_square();
  const StiffnessMatrix w = cotangent_stiffness(square);
  // Both angles opposite the diagonal (0,2) are right angles; cot(90) = 0.
  CHECK(w.coeff(0, 2) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(w.coeff(2, 0) == doctest::Approx(0.0).epsilon(1e-15));
  // The boundary edges see one 45-degree opposite angle each: -cot(45)/2.
  CHECK(w.coeff(0, 1) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("cotangent_stiffness: equilateral triangle weights are -1/(2 sqrt 3)") {
  const Mesh tri = testutil::make_single_triangle({0, 0, 0}, {1, 0, 0},
                                                  {0.5, std::sqrt(3.0) / 2.0, 0});
  const StiffnessMatrix w = cotangent_stiffness(tri);
  const double expected = -1.0 / (2.0 * std::sqrt(3.0));
  CHECK(w.coeff(0, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(w.coeff(1, 2) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(w.coeff(2, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cotangent_stiffness rows sum to zero and the matrix is symmetric PSD") {
  const Mesh blob = testutil::make_blob(2);
  const StiffnessMatrix w = cotangent_stiffness(blob);
  const Eigen::MatrixXd wd(w);

  const double max_abs = wd.cwiseAbs().maxCoeff();
  CHECK((wd - wd.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * max_abs);
  CHECK((wd * Eigen::VectorXd::Ones(wd.rows())).cwiseAbs().maxCoeff() <= 1e-9 * max_abs);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(wd, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() >= -1e-9 * std::max(1.0, es.eigenvalues().maxCoeff()));
}

TEST_CASE("operators are equivariant under vertex relabeling") {
  const Mesh blob = testutil::make_blob(1);
  const auto [permuted, perm] = testutil::permute_mesh(blob, 7, "blob_perm");
  const StiffnessMatrix w = cotangent_stiffness(blob);
  const StiffnessMatrix wp = cotangent_stiffness(permuted);
  const MassDiagonal m = vertex_areas(blob);
  const MassDiagonal mp = vertex_areas(permuted);

  const Eigen::MatrixXd wd(w), wpd(wp);
  for (Eigen::Index i = 0; i < blob.vertex_count(); ++i) {
    CHECK(mp[perm[static_cast<std::size_t>(i)]] == doctest::Approx(m[i]).epsilon(1e-13));
    for (Eigen::Index j = 0; j < blob.vertex_count(); ++j)
      CHECK(wpd(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) ==
            doctest::Approx(wd(i, j)).epsilon(1e-12));
  }
}

TEST_CASE("quality report counts boundary and non-manifold edges and clamps") {
  SUBCASE("single triangle: three boundary edges") {
    const Mesh tri = testutil::make_single_triangle({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
    MeshQuality q;
    cotangent_stiffness(tri, &q);
    CHECK(q.boundary_edges == 3);
    CHECK(q.nonmanifold_edges == 0);
  }
  SUBCASE("three faces sharing one edge: non-manifold") {
    Eigen::MatrixX3d v(5, 3);
    v << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, -1, 0;
    Eigen::MatrixX3i f(3, 3);
    f << 0, 1, 2, 0, 1, 3, 0, 1, 4;
    const Mesh fan = make_mesh(v, f, "fan");
    MeshQuality q;
    cotangent_stiffness(fan, &q);
    CHECK(q.nonmanifold_edges == 1);
  }
  SUBCASE("sliver triangle clamps its cotangent") {
    const Mesh sliver =
        testutil::make_single_triangle({0, 0, 0}, {1, 0, 0}, {0.5, 1e-9, 0});
    MeshQuality q;
    cotangent_stiffness(sliver, &q);
    CHECK(q.clamped_cotangents >= 1);
  }
}
