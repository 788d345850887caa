#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_support.hpp"
#include "xconst/analysis.hpp"
#include "xconst/error.hpp"

using namespace xconst;

namespace {

RepresentationSet set_of(std::vector<std::vector<std::vector<double>>> groups) {
  RepresentationSet r;
  r.groups = std::move(groups);
  return r;
}

}  // namespace

TEST_CASE("PCA on three 2-D points matches a hand eigen-solve") {
  const std::vector<std::vector<double>> pts = {{0.0, 0.0}, {2.0, 1.0}, {1.0, 3.0}};
  // Mean (1, 4/3); sample covariance with n - 1 = 2.
  const double mx = 1.0, my = 4.0 / 3.0;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : pts) {
    sxx += (p[0] - mx) * (p[0] - mx) / 2;
    sxy += (p[0] - mx) * (p[1] - my) / 2;
    syy += (p[1] - my) * (p[1] - my) / 2;
  }
  const double tr = sxx + syy, det = sxx * syy - sxy * sxy;
  const double l1 = tr / 2 + std::sqrt(tr * tr / 4 - det), l2 = tr / 2 - std::sqrt(tr * tr / 4 - det);
  // Eigenvector of l1: (sxy, l1 - sxx), normalized, largest-magnitude entry positive.
  double vx = sxy, vy = l1 - sxx;
  const double nrm = std::hypot(vx, vy);
  vx /= nrm;
  vy /= nrm;
  if ((std::abs(vx) >= std::abs(vy) ? vx : vy) < 0) {
    vx = -vx;
    vy = -vy;
  }
  const auto r = pca_project(pts, 2);
  CHECK(std::abs(r.components[0][0] - vx) < 1e-8);
  CHECK(std::abs(r.components[0][1] - vy) < 1e-8);
  CHECK(std::abs(r.explained[0] - l1 / tr) < 1e-8);
  CHECK(std::abs(r.explained[1] - l2 / tr) < 1e-8);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(r.coordinates[i][0] - ((pts[i][0] - mx) * vx + (pts[i][1] - my) * vy)) < 1e-8);
  }
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("PCA properties") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  // Points on a line in 5-D.
  std::vector<double> dir(5), base(5);
  for (double& x : dir) x = n(rng);
  for (double& x : base) x = n(rng);
  std::vector<std::vector<double>> line;
  for (int i = 0; i < 20; ++i) {
    const double t = n(rng);
    std::vector<double> p(5);
    for (int j = 0; j < 5; ++j) p[j] = base[j] + t * dir[j];
    line.push_back(p);
  }
  const auto r = pca_project(line, 2);
  CHECK(r.explained[0] >= 1.0 - 1e-9);

  std::vector<std::vector<double>> cloud;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> p(6);
    for (int j = 0; j < 6; ++j) p[j] = n(rng) * (j + 1);
    cloud.push_back(p);
  }
  const auto c = pca_project(cloud, 3);
  CHECK(c.explained[0] >= c.explained[1]);
  CHECK(c.explained[1] >= c.explained[2]);
  CHECK(c.explained[0] + c.explained[1] + c.explained[2] <= 1.0 + 1e-9);
  for (const auto& comp : c.components) {
    double s = 0.0, big = 0.0;
    for (double x : comp) {
      s += x * x;
      if (std::abs(x) > std::abs(big)) big = x;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(big > 0.0);
  }

  const auto same = pca_project({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}, 2);
  CHECK(same.degenerate);
  CHECK(same.total_variance == 0.0);
  CHECK_THROWS_AS(pca_project({{1, 2}, {3, 4}}, 2), DataError);
}

TEST_CASE("alignment score bounds") {
  CHECK(std::abs(alignment_score(set_of({{{1, 2}, {1, 2}, {1, 2}}})).score) < 1e-12);
  CHECK(alignment_score(set_of({{{1, 0, 0}, {0, 2, 0}, {0, 0, 3}}})).score == doctest::Approx(1.0));
  CHECK(alignment_score(set_of({{{1, 1}, {-2, -2}}})).score == doctest::Approx(2.0));
  const auto z = alignment_score(set_of({{{0, 0}, {1, 0}}}));
  CHECK(z.score == 1.0);
  CHECK(z.zero_norm == 1);
  CHECK_THROWS_AS(alignment_score(set_of({{{1, 0}}})), DataError);
}

TEST_CASE("alignment score invariances") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<std::vector<double>>> groups(10, std::vector<std::vector<double>>(4, std::vector<double>(2)));
  for (auto& g : groups) {
    for (auto& v : g) {
      for (double& x : v) x = n(rng);
    }
  }
  const double base = alignment_score(set_of(groups)).score;
  auto rotated = groups;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (auto& g : rotated) {
    for (auto& v : g) v = {3.5 * (c * v[0] - s * v[1]), 3.5 * (s * v[0] + c * v[1])};
  }
  CHECK(alignment_score(set_of(rotated)).score == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("representation collection") {
  const auto suite = build_language_suite(3, 8, 0, 2);
  const auto p = init_model(testing::tiny_config(suite.vocab_size(), 16, 2, 1, 40), 3);
  const auto multi = sample_concept_corpus(suite, 5, {2, 4}, 9);
  const auto reps = collect_representations(p, suite, multi, Strategy::kTDec, 2, true);
  CHECK(reps.num_groups() == 5);
  CHECK(reps.num_languages() == 3);
  for (const auto& g : reps.groups) {
    for (const auto& v : g) CHECK(v.size() == 16);
  }
  const auto again = collect_representations(p, suite, multi, Strategy::kTDec, 2, true);
  CHECK(again.groups == reps.groups);
  CHECK_THROWS_AS(collect_representations(p, suite, {}, Strategy::kTDec, 2, true), DataError);

  std::vector<std::vector<double>> flat;
  for (const auto& g : reps.groups) flat.insert(flat.end(), g.begin(), g.end());
  const auto pca = pca_project(flat, 2);
  std::ostringstream csv;
  write_coordinates_csv(csv, reps, pca);
  const std::string text = csv.str();
  CHECK(text.rfind("group_id,lang,x,y\n0,0,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 15);
}
