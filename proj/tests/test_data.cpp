#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "dib/data.hpp"
#include "dib/errors.hpp"
#include "temp_dir.hpp"

using namespace dib;

namespace {

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void dump(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Hand-assembled IDX pair: `count` images of rows x cols, pixel = fill(i, p).
struct IdxPair {
  std::vector<unsigned char> images;
  std::vector<unsigned char> labels;
};

IdxPair make_idx(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                 const std::function<unsigned char(std::uint32_t, std::uint32_t)>& fill) {
  IdxPair p;
  put32(p.images, 0x00000803);
  put32(p.images, count);
  put32(p.images, rows);
  put32(p.images, cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::uint32_t k = 0; k < rows * cols; ++k) {
      p.images.push_back(fill(i, k));
    }
  }
  put32(p.labels, 0x00000801);
  put32(p.labels, count);
  for (std::uint32_t i = 0; i < count; ++i) {
    p.labels.push_back(static_cast<unsigned char>(i % 10));
  }
  return p;
}

data::Dataset ramp(std::size_t n) {
  data::Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), 3);
  ds.labels.resize(n);
  ds.num_classes = 10;
  for (std::size_t i = 0; i < n; ++i) {
    ds.features.row(static_cast<Eigen::Index>(i)).setConstant(static_cast<float>(i) / n);
    ds.labels[i] = static_cast<int>(i % 10);
  }
  return ds;
}

}  // namespace

TEST_CASE("IDX loader normalizes pixels and flattens images") {
  TempDir tmp;
  const auto pair = make_idx(2, 28, 28, [](std::uint32_t i, std::uint32_t k) {
    return static_cast<unsigned char>(i == 0 ? 255 : k % 256);
  });
  dump(tmp / "img", pair.images);
  dump(tmp / "lbl", pair.labels);
  const auto ds = data::load_mnist_idx(tmp / "img", tmp / "lbl");
  CHECK(ds.size() == 2);
  CHECK(ds.dim() == 784);
  CHECK(ds.num_classes == 10);
  CHECK(ds.features(0, 0) == 1.0f);
  CHECK(ds.features(0, 783) == 1.0f);
  CHECK(ds.features(1, 0) == 0.0f);
  CHECK(ds.features(1, 7) == doctest::Approx(7.0 / 255.0).epsilon(1e-7));
  CHECK(ds.labels == std::vector<int>{0, 1});
  CHECK(ds.features.minCoeff() >= 0.0f);
  CHECK(ds.features.maxCoeff() <= 1.0f);
}

TEST_CASE("IDX loader error taxonomy") {
  TempDir tmp;
  const auto pair = make_idx(3, 2, 2, [](std::uint32_t, std::uint32_t k) {
    return static_cast<unsigned char>(k * 60);
  });
  dump(tmp / "img", pair.images);
  dump(tmp / "lbl", pair.labels);

  SUBCASE("labels file carrying the image magic") {
    dump(tmp / "bad", pair.images);
    CHECK_THROWS_AS(data::load_mnist_idx(tmp / "img", tmp / "bad"), FormatError);
  }
  SUBCASE("image file carrying the label magic") {
    CHECK_THROWS_AS(data::load_mnist_idx(tmp / "lbl", tmp / "lbl"), FormatError);
  }
  SUBCASE("count mismatch") {
    const auto other = make_idx(2, 2, 2, [](std::uint32_t, std::uint32_t) { return 0; });
    dump(tmp / "lbl2", other.labels);
    CHECK_THROWS_AS(data::load_mnist_idx(tmp / "img", tmp / "lbl2"), ConsistencyError);
  }
  SUBCASE("truncated payload") {
    auto cut = pair.images;
    cut.resize(cut.size() - 3);
    dump(tmp / "cut", cut);
    CHECK_THROWS_AS(data::load_mnist_idx(tmp / "cut", tmp / "lbl"), IoError);
  }
  SUBCASE("truncated header") {
    dump(tmp / "stub", {0, 0, 8});
    CHECK_THROWS_AS(data::load_mnist_idx(tmp / "stub", tmp / "lbl"), IoError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(data::load_mnist_idx(tmp / "nope", tmp / "lbl"), IoError);
  }
}

TEST_CASE("IDX writers round-trip through the loader") {
  TempDir tmp;
  RowMatrixF f(3, 4);
  f << 0, 1, 0.5f, 0.25f, 1, 1, 1, 1, 0, 0, 0, 0;
  const std::vector<int> y{3, 1, 4};
  data::write_idx_images(tmp / "i", f, 2, 2);
  data::write_idx_labels(tmp / "l", y);
  const auto ds = data::load_mnist_idx(tmp / "i", tmp / "l");
  CHECK(ds.labels == y);
  CHECK((ds.features - f).cwiseAbs().maxCoeff() <= 0.5f / 255.0f + 1e-7f);
  CHECK_THROWS_AS(data::write_idx_images(tmp / "x", f, 3, 3), ArgumentError);
}

TEST_CASE("split is a seeded disjoint partition") {
  const auto ds = ramp(100);
  const auto [train, val] = data::split(ds, 20, 7);
  CHECK(train.size() == 80);
  CHECK(val.size() == 20);

  std::multiset<float> seen;
  for (Eigen::Index i = 0; i < train.features.rows(); ++i) seen.insert(train.features(i, 0));
  for (Eigen::Index i = 0; i < val.features.rows(); ++i) seen.insert(val.features(i, 0));
  std::multiset<float> all;
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) all.insert(ds.features(i, 0));
  CHECK(seen == all);

  const auto [train2, val2] = data::split(ds, 20, 7);
  CHECK(train2.features == train.features);
  CHECK(val2.labels == val.labels);
  const auto [train3, val3] = data::split(ds, 20, 8);
  CHECK(train3.features != train.features);

  CHECK_THROWS_AS(data::split(ds, 0, 1), ArgumentError);
  CHECK_THROWS_AS(data::split(ds, 100, 1), ArgumentError);
}

TEST_CASE("batch_indices: remainder policy, coverage, determinism") {
  SUBCASE("50000 samples of 100") {
    CHECK(data::batch_indices(50000, 100, 0, 0).size() == 500);
  }
  SUBCASE("10 samples of 3 drop one") {
    const auto b = data::batch_indices(10, 3, 1, 0);
    REQUIRE(b.size() == 3);
    std::set<std::size_t> used;
    for (const auto& batch : b) {
      CHECK(batch.size() == 3);
      used.insert(batch.begin(), batch.end());
    }
    CHECK(used.size() == 9);
    CHECK(*used.rbegin() < 10);
  }
  SUBCASE("reproducible per (seed, epoch), reshuffled across epochs") {
    CHECK(data::batch_indices(64, 8, 5, 3) == data::batch_indices(64, 8, 5, 3));
    CHECK(data::batch_indices(64, 8, 5, 3) != data::batch_indices(64, 8, 5, 4));
    CHECK(data::batch_indices(64, 8, 5, 3) != data::batch_indices(64, 8, 6, 3));
  }
  CHECK_THROWS_AS(data::batch_indices(10, 1, 0, 0), ArgumentError);
}

TEST_CASE("batches carry one-hot rows summing to one") {
  const auto ds = ramp(25);
  const auto bs = data::batches(ds, 4, 2, 0);
  CHECK(bs.size() == 6);
  for (const auto& b : bs) {
    CHECK(b.size() == 4);
    CHECK(b.labels_onehot.cols() == 10);
    for (Eigen::Index i = 0; i < b.labels_onehot.rows(); ++i) {
      CHECK(b.labels_onehot.row(i).sum() == 1.0f);
      CHECK(b.labels_onehot(i, b.labels[static_cast<std::size_t>(i)]) == 1.0f);
    }
  }
}

TEST_CASE("correlated Gaussian pairs") {
  auto corr = [](const data::CorrelatedPair& p) {
    const auto x = p.x.array() - p.x.mean();
    const auto y = p.y.array() - p.y.mean();
    return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
  };
  const std::size_t n = 512;
  const auto indep = data::synth_correlated_gaussian(n, 0.0, 11);
  CHECK(std::abs(corr(indep)) < 3.0 / std::sqrt(static_cast<double>(n)));
  const auto strong = data::synth_correlated_gaussian(n, 0.9, 11);
  CHECK(corr(strong) >= 0.85);
  CHECK(corr(strong) <= 0.95);
  CHECK(data::synth_correlated_gaussian(n, 0.9, 11).x == strong.x);
  CHECK_THROWS_AS(data::synth_correlated_gaussian(n, 1.0, 0), ArgumentError);
  CHECK_THROWS_AS(data::synth_correlated_gaussian(3, 0.5, 0), ArgumentError);
}

TEST_CASE("Dataset::validate catches broken invariants") {
  auto ds = ramp(5);
  CHECK_NOTHROW(ds.validate());
  ds.labels[0] = 10;
  CHECK_THROWS_AS(ds.validate(), ConsistencyError);
  ds = ramp(5);
  ds.features(1, 1) = 1.5f;
  CHECK_THROWS_AS(ds.validate(), ConsistencyError);
}
