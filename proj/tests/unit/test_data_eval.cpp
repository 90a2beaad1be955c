#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "awb/dataset.hpp"
#include "awb/errors.hpp"
#include "awb/retrieval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace awb;
namespace fs = std::filesystem;

namespace {

FeatureMatrix random_matrix(RngStream& r, std::size_t rows, std::size_t dim) {
  FeatureMatrix m(rows, dim);
  for (auto& v : m.values) v = r.normal();
  return m;
}

std::vector<SyntheticDomainSpec> two_domains(std::size_t ids = 6, std::size_t views = 10) {
  SyntheticDomainSpec s;
  s.n_identities = ids;
  s.views_per_identity = views;
  s.query_fraction = 0.1;
  s.gallery_fraction = 0.4;
  s.identity_stream = 1;
  SyntheticDomainSpec t = s;
  t.name = "target";
  t.identity_stream = 2;
  t.transform.color_shift = {0.12, -0.04, -0.10};
  t.transform.contrast = 0.8;
  t.transform.blur_radius = 1;
  t.transform.background_seed = 23;
  return {s, t};
}

double pixel_distance(const ImageRecord& a, const ImageRecord& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = double(a.pixels[i]) - double(b.pixels[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("hand-computed average precision") {
  FeatureMatrix q(1, 2), g(4, 2);
  q.values = {1.0, 0.0};
  g.values = {1.0, 0.0, 0.9, 0.1, 0.5, 0.5, 0.0, 1.0};
  const auto m = evaluate_retrieval(q, {1}, g, {1, 2, 1, 3});
  CHECK(m.mAP == (1.0 + 2.0 / 3.0) / 2.0);
  CHECK(m.mAP == doctest::Approx(0.8333333333333334).epsilon(1e-15));
  CHECK(m.cmc1 == 1.0);
  CHECK(m.evaluated == 1);
}

TEST_CASE("retrieval matches the brute-force oracle") {
  RngStream r(1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t nq = 1 + r.uniform_int(20), ng = 1 + r.uniform_int(50), d = 1 + r.uniform_int(6),
                      ids = 1 + r.uniform_int(8);
    const auto q = random_matrix(r, nq, d), g = random_matrix(r, ng, d);
    std::vector<std::size_t> qid(nq), gid(ng);
    for (auto& v : qid) v = r.uniform_int(ids);
    for (auto& v : gid) v = r.uniform_int(ids);
    const auto got = evaluate_retrieval(q, qid, g, gid);
    const auto want = awb::test::brute_force_retrieval(q, qid, g, gid);
    REQUIRE(got.evaluated == want.evaluated);
    REQUIRE(got.skipped == want.skipped);
    REQUIRE(std::abs(got.mAP - want.mAP) <= 1e-10);
    REQUIRE(std::abs(got.cmc1 - want.cmc1) <= 1e-10);
    REQUIRE(std::abs(got.cmc5 - want.cmc5) <= 1e-10);
    REQUIRE(std::abs(got.cmc10 - want.cmc10) <= 1e-10);
    REQUIRE(got.cmc1 <= got.cmc5);
    REQUIRE(got.cmc5 <= got.cmc10);
    REQUIRE((got.mAP >= 0.0 && got.cmc10 <= 1.0));
  }
}

TEST_CASE("positive rescaling leaves the metrics unchanged") {
  RngStream r(2, 2);
  for (int trial = 0; trial < 50; ++trial) {
    auto q = random_matrix(r, 10, 4), g = random_matrix(r, 30, 4);
    std::vector<std::size_t> qid(10), gid(30);
    for (auto& v : qid) v = r.uniform_int(5);
    for (auto& v : gid) v = r.uniform_int(5);
    const auto base = evaluate_retrieval(q, qid, g, gid);
    for (double s : {0.25, 8.0}) {
      auto qs = q, gs = g;
      for (auto& v : qs.values) v *= s;
      for (auto& v : gs.values) v *= s;
      const auto m = evaluate_retrieval(qs, qid, gs, gid);
      CHECK(m.mAP == base.mAP);
      CHECK(m.cmc1 == base.cmc1);
      CHECK(m.cmc10 == base.cmc10);
    }
  }
}

TEST_CASE("exact copies with unique identities give mAP 1") {
  RngStream r(3, 3);
  const auto q = random_matrix(r, 12, 5);
  std::vector<std::size_t> ids(12);
  for (std::size_t i = 0; i < 12; ++i) ids[i] = i;
  const auto m = evaluate_retrieval(q, ids, q, ids);
  CHECK(m.mAP == 1.0);
  CHECK(m.cmc1 == 1.0);
}

TEST_CASE("queries without a relevant item are skipped") {
  FeatureMatrix q(2, 1), g(2, 1);
  q.values = {1.0, 2.0};
  g.values = {1.0, -1.0};
  const auto m = evaluate_retrieval(q, {0, 9}, g, {0, 1});
  CHECK(m.evaluated == 1);
  CHECK(m.skipped == 1);
  CHECK(m.mAP == 1.0);
  CHECK_THROWS_AS(evaluate_retrieval(q, {0}, g, {0, 1}), std::invalid_argument);
}

TEST_CASE("ties keep gallery order") {
  FeatureMatrix g(3, 2);
  g.values = {0.0, 1.0, 1.0, 0.0, 1.0, 0.0};
  const double q[2] = {1.0, 0.0};
  CHECK(rank_gallery(q, l2_normalized(g)) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("generation is deterministic and splits are per identity") {
  const auto specs = two_domains();
  const auto a = generate_dataset(specs, 5), b = generate_dataset(specs, 5);
  REQUIRE(a.images.size() == 120);
  for (std::size_t i = 0; i < a.images.size(); ++i) REQUIRE(a.images[i].pixels == b.images[i].pixels);
  const auto c = generate_dataset(specs, 6);
  CHECK(a.images[0].pixels != c.images[0].pixels);

  const auto q = a.select("target", Split::query), g = a.select("target", Split::gallery),
             t = a.select("target", Split::train);
  CHECK(q.size() == 6);   // 1 of 10 views per identity
  CHECK(g.size() == 24);  // 4 of 10
  CHECK(t.size() == 30);
  std::set<std::size_t> qs(q.begin(), q.end()), qids, gids;
  for (auto i : g) CHECK(qs.count(i) == 0);
  for (auto i : q) qids.insert(a.images[i].identity);
  for (auto i : g) gids.insert(a.images[i].identity);
  CHECK(qids == gids);
  for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].image_id == i);
}

TEST_CASE("equal transforms and populations give identical domains") {
  auto specs = two_domains();
  specs[1].transform = specs[0].transform;
  specs[1].identity_stream = specs[0].identity_stream;
  const auto d = generate_dataset(specs, 5);
  const std::size_t half = d.images.size() / 2;
  for (std::size_t i = 0; i < half; ++i) REQUIRE(d.images[i].pixels == d.images[half + i].pixels);
}

TEST_CASE("identities are separable in pixel space") {
  auto specs = two_domains(10, 10);
  const auto d = generate_dataset(specs, 9);
  RngStream r(4, 4);
  const auto src = d.select("source", Split::train);
  double intra = 0.0, inter = 0.0;
  std::size_t ni = 0, ne = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto& a = d.images[src[r.uniform_int(src.size())]];
    const auto& b = d.images[src[r.uniform_int(src.size())]];
    if (&a == &b) continue;
    if (a.identity == b.identity) {
      intra += pixel_distance(a, b);
      ++ni;
    } else {
      inter += pixel_distance(a, b);
      ++ne;
    }
  }
  // Same-identity pairs are rare under uniform draws; add them explicitly.
  for (std::size_t i = 0; i + 1 < src.size(); ++i) {
    if (d.images[src[i]].identity == d.images[src[i + 1]].identity) {
      intra += pixel_distance(d.images[src[i]], d.images[src[i + 1]]);
      ++ni;
    }
  }
  REQUIRE(ni > 0);
  REQUIRE(ne > 0);
  CHECK(inter / double(ne) > intra / double(ni));
}

TEST_CASE("dataset directory round trip and errors") {
  const auto dir = fs::temp_directory_path() / "awb_test_dataset";
  fs::remove_all(dir);
  const auto d = generate_dataset(two_domains(3, 10), 5);
  write_dataset(d, dir.string());
  const auto back = read_dataset(dir.string());
  REQUIRE(back.images.size() == d.images.size());
  CHECK(back.height == d.height);
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    CHECK(back.images[i].pixels == d.images[i].pixels);
    CHECK(back.images[i].identity == d.images[i].identity);
    CHECK(back.images[i].split == d.images[i].split);
    CHECK(back.images[i].domain == d.images[i].domain);
  }
  std::ifstream manifest(dir / "manifest.tsv");
  std::string line;
  std::getline(manifest, line);
  CHECK(std::count(line.begin(), line.end(), '\t') == 4);
  CHECK(line.rfind("0\t", 0) == 0);
  manifest.close();
  std::ofstream(dir / "manifest.tsv", std::ios::app) << "bad line\n";
  CHECK_THROWS_AS(read_dataset(dir.string()), DataError);
  CHECK_THROWS_AS(read_dataset((dir / "nowhere").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("image batches are normalized") {
  Dataset d;
  d.height = 1;
  d.width = 2;
  ImageRecord rec;
  rec.pixels = {0, 255, 0, 255, 0, 255};
  d.images.push_back(rec);
  const auto b = image_batch(d, {0});
  CHECK(b.shape() == Shape{1, 3, 1, 2});
  CHECK(b.at(0) == -2.0f);
  CHECK(b.at(1) == 2.0f);
}

TEST_CASE("split names") {
  CHECK(parse_split("gallery") == Split::gallery);
  CHECK(to_string(Split::query) == "query");
  CHECK_THROWS(parse_split("holdout"));
}
