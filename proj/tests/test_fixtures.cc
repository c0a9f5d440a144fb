#include "doctest.h"
#include "tightcap/fixtures.h"
#include "tightcap/metrics.h"

using namespace tightcap;

TEST_CASE("fixture clothing gap and joints") {
  FixtureSpec spec;
  spec.pose = "A";
  const Fixture fx = make_fixture(spec);
  CHECK(fx.scan.num_vertices() == fx.body.num_vertices());
  CHECK(fx.scan.faces == fx.body.faces);
  CHECK(fx.joints.size() == synthetic_joint_names().size());
  double sum = 0;
  int n = 0;
  for (int i = 0; i < fx.body.num_vertices(); ++i) {
    const double gap = (fx.scan.vertex(i) - fx.body.vertex(i)).norm();
    CHECK(gap == doctest::Approx(fx.gap[i]).epsilon(1e-9));
    if (fx.body_garment[i] == static_cast<int>(Garment::body)) continue;
    sum += gap;
    ++n;
  }
  CHECK(sum / n == doctest::Approx(0.03).epsilon(0.05));
  // Same gap as a Metro surface distance over the garment regions.
  std::vector<bool> dressed(static_cast<size_t>(fx.body.num_vertices()));
  for (int i = 0; i < fx.body.num_vertices(); ++i) dressed[i] = fx.body_garment[i] != static_cast<int>(Garment::body);
  const MetricReport m = hausdorff_metrics(submesh(fx.scan, dressed), submesh(fx.body, dressed), 1.0);
  CHECK(m.mean == doctest::Approx(0.03).epsilon(0.05));
  // Head vertices stay bare.
  const Vec3 head = fx.joints.at("head");
  for (int i = 0; i < fx.body.num_vertices(); ++i)
    if ((fx.body.vertex(i) - head).norm() < 0.05) CHECK(fx.gap[i] < 1e-6);
}

TEST_CASE("named poses move the expected limbs") {
  const auto rest = generate_synthetic_template(SynthSpec{}).rig;
  const auto t = joint_map(named_pose(rest, "T"));
  const auto a = joint_map(named_pose(rest, "A"));
  const auto w = joint_map(named_pose(rest, "W"));
  CHECK(a.at("wrist_l").z() < t.at("wrist_l").z() - 0.2);
  CHECK(a.at("wrist_r").z() < t.at("wrist_r").z() - 0.2);
  CHECK((w.at("ankle_l") - t.at("ankle_l")).norm() > 0.05);
  CHECK((a.at("neck") - t.at("neck")).norm() < 1e-12);
  CHECK_THROWS_AS(named_pose(rest, "Q"), ArgumentError);
  FixtureSpec bad;
  bad.offset = -1;
  CHECK_THROWS_AS(make_fixture(bad), ArgumentError);
}

TEST_CASE("zero offset fixture is the body") {
  FixtureSpec spec;
  spec.offset = 0;
  const Fixture fx = make_fixture(spec);
  CHECK((fx.scan.vertices - fx.body.vertices).cwiseAbs().maxCoeff() == 0.0);
}
