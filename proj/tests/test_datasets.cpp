#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmvi/datasets.hpp"
#include "dmvi/errors.hpp"

using namespace dmvi;
using namespace dmvi::data;

TEST_CASE("generate: same seed, same digest; different seed, different digest") {
  for (auto kind : {DatasetKind::kSprites, DatasetKind::kGrid2d, DatasetKind::kRings}) {
    DatasetParams p;
    p.n = 200;
    const auto a = generate(kind, p, 5), b = generate(kind, p, 5), c = generate(kind, p, 6);
    CHECK(digest(a.data) == digest(b.data));
    CHECK(digest(a.data) != digest(c.data));
    CHECK(a.labels == b.labels);
    CHECK(a.size() == 200);
    CHECK(a.name == dataset_name(kind));
    CHECK(parse_dataset(a.name) == kind);
  }
  CHECK_THROWS_AS(parse_dataset("mnist"), ConfigError);
}

TEST_CASE("sprites: binary pixels, in-bounds strokes, three shapes") {
  DatasetParams p;
  p.n = 600;
  const auto d = generate(DatasetKind::kSprites, p, 1);
  CHECK(d.item_shape == Shape{12, 12});
  CHECK(d.dim() == 144);
  std::vector<int> per_label(3, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    double on = 0.0;
    for (double v : d.data.row_span(i)) {
      CHECK((v == 0.0 || v == 1.0));
      on += v;
    }
    // A bar of arm 2..4 lights 3..9 pixels, a cross up to 17.
    CHECK(on >= 3);
    CHECK(on <= 17);
    ++per_label[d.labels[i]];
  }
  for (int c : per_label) CHECK(c > 150);
}

TEST_CASE("grid2d: 25 modes with equal weight") {
  DatasetParams p;
  p.n = 10000;
  p.noise_std = 0.05;
  const auto d = generate(DatasetKind::kGrid2d, p, 2);
  std::vector<int> counts(25, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int gx = static_cast<int>(std::lround((d.data(i, 0) + 4.0) / 2.0));
    const int gy = static_cast<int>(std::lround((d.data(i, 1) + 4.0) / 2.0));
    REQUIRE(gx >= 0);
    REQUIRE(gx < 5);
    REQUIRE(gy >= 0);
    REQUIRE(gy < 5);
    CHECK(gx * 5 + gy == static_cast<int>(d.labels[i]));
    ++counts[gx * 5 + gy];
  }
  const double p0 = 1.0 / 25.0, sigma = std::sqrt(p0 * (1 - p0) / 10000.0);
  for (int c : counts) CHECK(std::abs(c / 10000.0 - p0) <= 4 * sigma);
}

TEST_CASE("rings: radii cluster at 1, 2, 3") {
  DatasetParams p;
  p.n = 3000;
  p.noise_std = 0.02;
  const auto d = generate(DatasetKind::kRings, p, 3);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = std::hypot(d.data(i, 0), d.data(i, 1));
    CHECK(std::abs(r - (1.0 + d.labels[i])) < 0.15);
  }
}

TEST_CASE("generate: contract errors") {
  DatasetParams p;
  p.n = 0;
  CHECK_THROWS_AS(generate(DatasetKind::kGrid2d, p, 0), ContractError);
  p.n = 4;
  p.image_size = 3;
  CHECK_THROWS_AS(generate(DatasetKind::kSprites, p, 0), ContractError);
}

TEST_CASE("parse_idx: two 2x2 items") {
  const std::vector<std::uint8_t> bytes{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                        0, 255, 51, 102, 1, 2, 3, 4};
  const auto d = parse_idx(bytes);
  CHECK(d.data.shape() == Shape{2, 2, 2});
  CHECK(d.item_shape == Shape{2, 2});
  CHECK(d.size() == 2);
  CHECK(d.data[1] == 1.0);
  CHECK(d.data[2] == 0.2);
  CHECK(d.matrix().shape() == Shape{2, 4});
}

TEST_CASE("parse_idx: malformed input names the problem and offset") {
  SUBCASE("wrong magic") {
    const std::vector<std::uint8_t> bytes{0x1f, 0x8b, 0x08, 0x03, 0, 0, 0, 1};
    try {
      parse_idx(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("0x1f 0x8b 0x08 0x03") != std::string::npos);
      CHECK(msg.find("expected 0x00 0x00 0x08") != std::string::npos);
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("empty") {
    try {
      parse_idx({});
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("truncated payload") {
    const std::vector<std::uint8_t> bytes{0, 0, 8, 1, 0, 0, 0, 5, 1, 2};
    try {
      parse_idx(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("expected 5 bytes, found 2") != std::string::npos);
      CHECK(e.offset() == bytes.size());
    }
  }
  CHECK_THROWS_AS(parse_idx({0, 0, 8, 0}), ParseError);
  CHECK_THROWS_AS(parse_idx({0, 0, 8, 2, 0, 0, 0, 1, 0, 0}), ParseError);
  CHECK_THROWS_AS(parse_idx({0, 0, 8, 1, 0, 0, 0, 0}), ParseError);
}

TEST_CASE("load_idx: file round trip and missing file") {
  const auto path = std::filesystem::temp_directory_path() / "dmvi_test_items.idx";
  {
    std::ofstream f(path, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 2, 0, 0, 0, 3, 0, 0, 0, 1, 10, 20, 30};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  const auto d = load_idx(path);
  CHECK(d.data.shape() == Shape{3, 1});
  CHECK(d.data[2] == doctest::Approx(30.0 / 255.0));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_idx(path), IoError);
}

TEST_CASE("digest covers shape as well as values") {
  const Tensor a = Tensor::matrix(2, 3, 1.0), b = Tensor::matrix(3, 2, 1.0);
  CHECK(digest(a) != digest(b));
  Tensor c = a;
  c[5] = std::nextafter(1.0, 2.0);
  CHECK(digest(a) != digest(c));
  CHECK(digest(a) == digest(Tensor::matrix(2, 3, 1.0)));
  // FNV-1a reference value for "a".
  const char s = 'a';
  CHECK(fnv1a64(&s, 1) == 0xaf63dc4c8601ec8cULL);
}
