#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pjat/error.hpp"
#include "pjat/heatmap.hpp"

using namespace pjat;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "pjat_test_heatmap";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gaussian ground truth peaks at 1 on an integral center") {
  const auto h = render_gaussian_gt({20, 30}, 3.0, {64, 64});
  CHECK(h.at(20, 30) == 1.0);
  const auto peak = argmax_point(h);
  CHECK(peak.point == Vec2{20, 30});
  CHECK(peak.value == 1.0);
}

TEST_CASE("gaussian value one sigma from the center") {
  const double sigma = 3.0;
  const auto h = render_gaussian_gt({10, 10}, sigma, {32, 32});
  // exp(-0.5) evaluated independently
  CHECK(h.at(13, 10) == doctest::Approx(0.6065306597126334).epsilon(1e-15));
  CHECK(h.at(10, 7) == doctest::Approx(0.6065306597126334).epsilon(1e-15));
}

TEST_CASE("gaussian is radially symmetric and strictly decreasing along grid rays") {
  const auto h = render_gaussian_gt({16, 16}, 2.5, {33, 33});
  CHECK(h.at(13, 16) == h.at(19, 16));
  CHECK(h.at(16, 12) == h.at(16, 20));
  CHECK(h.at(13, 12) == h.at(19, 20));
  CHECK(h.at(12, 13) == h.at(13, 12));
  for (int dx : {-1, 0, 1}) {
    for (int dy : {-1, 0, 1}) {
      if (dx == 0 && dy == 0) continue;
      for (int k = 0; k < 15; ++k) {
        const double a = h.at(16 + k * dx, 16 + k * dy);
        const double b = h.at(16 + (k + 1) * dx, 16 + (k + 1) * dy);
        CHECK(b < a);
      }
    }
  }
}

TEST_CASE("argmax of a rendered gaussian is the nearest pixel for random centers") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 47.0);
  std::uniform_real_distribution<double> s(0.5, 6.0);
  for (int i = 0; i < 200; ++i) {
    const Vec2 c{u(rng), u(rng)};
    const auto peak = argmax_point(render_gaussian_gt(c, s(rng), {48, 48}));
    CHECK(peak.point[0] == std::round(c[0]));
    CHECK(peak.point[1] == std::round(c[1]));
  }
}

TEST_CASE("gaussian center outside the grid is rejected") {
  CHECK_THROWS_AS(render_gaussian_gt({64, 3}, 3.0, {64, 64}), DataError);
  CHECK_THROWS_AS(render_gaussian_gt({-0.5, 3}, 3.0, {64, 64}), DataError);
  CHECK_THROWS_AS(render_gaussian_gt({3, 3}, 0.0, {64, 64}), DataError);
}

TEST_CASE("argmax examples") {
  Heatmap h({16, 8});
  h.at(7, 3) = 0.25;
  const auto p = argmax_point(h);
  CHECK(p.point == Vec2{7, 3});
  CHECK(p.value == 0.25);

  const auto flat = argmax_point(Heatmap({5, 5}, 0.3));
  CHECK(flat.point == Vec2{0, 0});

  Heatmap tie({4, 4});
  tie.at(3, 0) = 1.0;
  tie.at(0, 1) = 1.0;
  CHECK(argmax_point(tie).point == Vec2{3, 0});
}

TEST_CASE("pgm quantization and header") {
  Heatmap h({64, 64});
  h.at(0, 0) = 1.0;
  h.at(1, 0) = 0.0;
  h.at(2, 0) = 0.5;
  const auto path = temp_path("q.pgm");
  write_pgm(h, path);
  const auto bytes = slurp(path);
  const std::string header = "P5\n64 64\n255\n";
  REQUIRE(bytes.size() == header.size() + 64 * 64);
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 128);
}

TEST_CASE("pgm round trip stays within quantization error") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Heatmap h({23, 17});
  for (auto& v : h.values()) v = u(rng);
  const auto path = temp_path("rt.pgm");
  write_pgm(h, path);
  const auto back = read_pgm(path);
  REQUIRE(back.dims() == h.dims());
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(std::abs(back.values()[i] - h.values()[i]) <= 1.0 / 510.0 + 1e-12);
}

TEST_CASE("csv overlay is full precision with header") {
  Heatmap h({2, 1});
  h.at(0, 0) = 0.1;
  h.at(1, 0) = 1.0 / 3.0;
  const auto path = temp_path("h.csv");
  overlay_csv(h, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "x,y,value");
  std::getline(in, line);
  CHECK(line == "0,0,0.10000000000000001");
  std::getline(in, line);
  CHECK(std::stod(line.substr(4)) == 1.0 / 3.0);
}

TEST_CASE("writing to an unwritable path fails with a data error") {
  CHECK_THROWS_AS(write_pgm(Heatmap({2, 2}), "/nonexistent-dir/x.pgm"), DataError);
}
