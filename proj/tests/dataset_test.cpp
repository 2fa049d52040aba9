#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "slidemask/dataset.hpp"
#include "slidemask/error.hpp"
#include "slidemask/raster_ops.hpp"
#include "slidemask/rng.hpp"

using namespace slidemask;
namespace fs = std::filesystem;

namespace {

Image noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image im(w, h, 3);
  for (auto& v : im.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  return im;
}

Mask box_mask(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(w, h, 1, 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(x, y) = 1;
  return m;
}

std::size_t boundary_edges(const Mask& m) {
  std::size_t n = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y)) continue;
      n += (x == 0 || !m.at(x - 1, y)) + (x + 1 == m.width() || !m.at(x + 1, y)) +
           (y == 0 || !m.at(x, y - 1)) + (y + 1 == m.height() || !m.at(x, y + 1));
    }
  return n;
}

std::vector<std::string> make_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("img_" + std::to_string(1000 + i));
  return ids;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slidemask_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(ResizeImage, SameSizeIsBitIdentical) {
  const Image im = noise_image(512, 512, 3);
  EXPECT_EQ(resize_image(im), im);
}

TEST(ResizeImage, ConstantColorStaysConstant) {
  Image im(1024, 768, 3);
  for (int y = 0; y < 768; ++y)
    for (int x = 0; x < 1024; ++x) {
      im.at(x, y, 0) = 131;
      im.at(x, y, 1) = 97;
      im.at(x, y, 2) = 54;
    }
  const Image out = resize_image(im);
  ASSERT_EQ(out.width(), 512);
  ASSERT_EQ(out.height(), 512);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x) {
      ASSERT_EQ(out.at(x, y, 0), 131);
      ASSERT_EQ(out.at(x, y, 1), 97);
      ASSERT_EQ(out.at(x, y, 2), 54);
    }
}

TEST(ResizeImage, CheckerboardUpscaleMatchesHandWeights) {
  Image im(2, 2, 1);
  im.at(0, 0) = 0;
  im.at(1, 0) = 255;
  im.at(0, 1) = 255;
  im.at(1, 1) = 0;
  // Half-pixel centers put output samples at source offsets {0, .25, .75, 1}
  // along each axis (outer samples clamp). v = 255 * ((1-ay) ax + ay (1-ax)),
  // rounded half up.
  const int expected[4][4] = {
      {0, 64, 191, 255},
      {64, 96, 159, 191},
      {191, 159, 96, 64},
      {255, 191, 64, 0},
  };
  const Image out = resize_image(im, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_EQ(out.at(x, y), expected[y][x]) << x << "," << y;
}

TEST(AugmentPair, IdentityConfigIsNoOp) {
  const Image im = noise_image(40, 30, 1);
  const std::vector<Mask> masks = {box_mask(40, 30, 3, 4, 20, 25), box_mask(40, 30, 25, 2, 39, 10)};
  auto cfg = AugmentationConfig::identity();
  cfg.copies = 3;
  const auto out = augment_pair(im, masks, cfg, 99);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& p : out) {
    EXPECT_EQ(p.image, im);
    EXPECT_EQ(p.masks, masks);
  }
}

TEST(AugmentPair, FlipMirrorsImageAndMasksTogether) {
  const Image im = noise_image(17, 9, 2);
  const std::vector<Mask> masks = {box_mask(17, 9, 1, 1, 6, 8)};
  auto cfg = AugmentationConfig::identity();
  cfg.horizontal_flip = 1.0;
  const auto out = augment_pair(im, masks, cfg, 5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].transform.flip);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 17; ++x) {
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out[0].image.at(x, y, c), im.at(16 - x, y, c));
      ASSERT_EQ(out[0].masks[0].at(x, y), masks[0].at(16 - x, y));
    }
  EXPECT_EQ(count_set(out[0].masks[0]), count_set(masks[0]));
}

TEST(AugmentPair, FixedSeedsAreDeterministic) {
  const Image im = noise_image(64, 48, 3);
  const std::vector<Mask> masks = {box_mask(64, 48, 10, 10, 40, 30)};
  auto cfg = AugmentationConfig::identity();
  cfg.rotation_range = 10.0;
  cfg.seed = 42;
  const auto a = augment_pair(im, masks, cfg, 7);
  const auto b = augment_pair(im, masks, cfg, 7);
  EXPECT_EQ(a[0].image, b[0].image);
  EXPECT_EQ(a[0].masks, b[0].masks);
  EXPECT_NE(a[0].transform.rotation_deg, 0.0);
  const auto c = augment_pair(im, masks, cfg, 8);
  EXPECT_NE(c[0].transform.rotation_deg, a[0].transform.rotation_deg);
}

TEST(AugmentPair, RigidTransformsKeepMaskCountAndBoundArea) {
  const Image im = noise_image(64, 64, 4);
  const std::vector<Mask> masks = {box_mask(64, 64, 20, 18, 44, 40), box_mask(64, 64, 5, 5, 12, 9)};
  AugmentationConfig cfg = AugmentationConfig::identity();
  cfg.rotation_range = 15.0;
  cfg.shift_range = 0.1;
  cfg.copies = 8;
  const auto out = augment_pair(im, masks, cfg, 11);
  for (const auto& p : out) {
    ASSERT_EQ(p.masks.size(), masks.size());
    for (std::size_t k = 0; k < masks.size(); ++k) {
      for (auto v : p.masks[k].pixels()) ASSERT_LE(v, 1);
      EXPECT_LE(count_set(p.masks[k]), count_set(masks[k]) + boundary_edges(masks[k]));
    }
  }
}

TEST(AugmentPair, DimensionMismatchIsContractError) {
  const Image im = noise_image(10, 10, 5);
  try {
    augment_pair(im, {Mask(9, 10, 1)}, AugmentationConfig{}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(AugmentPair, ReflectFillKeepsFrameCovered) {
  Image im(16, 16, 1, 200);
  auto cfg = AugmentationConfig::identity();
  cfg.rotation_range = 30;
  cfg.fill_mode = FillMode::reflect;
  const auto out = augment_pair(im, {}, cfg, 3);
  for (auto v : out[0].image.pixels()) ASSERT_EQ(v, 200);
}

TEST(MakeSplit, PaperSetSizes) {
  const auto set_a = make_split(make_ids(160), {101, 28, 31}, 7, "A");
  EXPECT_EQ(set_a.train.size(), 101u);
  EXPECT_EQ(set_a.validation.size(), 28u);
  EXPECT_EQ(set_a.test.size(), 31u);
  EXPECT_NO_THROW(set_a.validate());

  const auto set_b = make_split(make_ids(121), {62, 28, 31}, 7, "B");
  EXPECT_EQ(set_b.train.size(), 62u);
  EXPECT_EQ(set_b.validation.size(), 28u);
  EXPECT_EQ(set_b.test.size(), 31u);
  EXPECT_NO_THROW(set_b.validate());
}

TEST(MakeSplit, CountMismatchReportsBothNumbers) {
  try {
    make_split(make_ids(10), {5, 3, 3}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::split);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("11"), std::string::npos);
    EXPECT_NE(msg.find("10"), std::string::npos);
  }
}

TEST(MakeSplit, ReproducibleAndInputOrderIndependent) {
  auto ids = make_ids(50);
  const auto a = make_split(ids, {30, 10, 10}, 123);
  std::reverse(ids.begin(), ids.end());
  const auto b = make_split(ids, {30, 10, 10}, 123);
  EXPECT_EQ(a, b);
  const auto c = make_split(ids, {30, 10, 10}, 124);
  EXPECT_NE(a.train, c.train);
}

TEST(MakeSplit, FrozenSequenceForSeed) {
  // Pinned so a change to the shuffle or the random source is caught.
  const auto m = make_split(make_ids(6), {2, 2, 2}, 99);
  EXPECT_EQ(m.train, (std::vector<std::string>{"img_1001", "img_1005"}));
  EXPECT_EQ(m.validation, (std::vector<std::string>{"img_1000", "img_1003"}));
  EXPECT_EQ(m.test, (std::vector<std::string>{"img_1002", "img_1004"}));
}

TEST(MakeSplit, StratifiedKeepsBothClassesInEverySplit) {
  const auto ids = make_ids(24);
  std::map<std::string, bool> strata;
  for (std::size_t i = 0; i < ids.size(); ++i) strata[ids[i]] = i % 3 == 0;  // 8 positives
  const auto m = make_split(ids, {12, 6, 6}, 5, "toy", &strata);
  EXPECT_TRUE(m.stratified);
  m.validate();
  for (const auto* list : {&m.train, &m.validation, &m.test}) {
    int pos = 0;
    for (const auto& id : *list) pos += strata.at(id);
    EXPECT_GT(pos, 0);
    EXPECT_LT(pos, static_cast<int>(list->size()));
  }
}

TEST(Manifest, RoundTripAndValidation) {
  const auto dir = temp_dir("manifest");
  const auto m = make_split(make_ids(160), {101, 28, 31}, 7, "A");
  write_manifest(m, (dir / "m.json").string());
  EXPECT_EQ(read_manifest((dir / "m.json").string()), m);

  EXPECT_THROW(
      {
        try {
          read_manifest((dir / "absent.json").string());
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::not_found);
          throw;
        }
      },
      Error);

  auto overlap = m;
  overlap.test.push_back(overlap.train.front());
  try {
    manifest_from_json(manifest_to_json(overlap));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_NE(std::string(e.what()).find(overlap.train.front()), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Manifest, RemovedIdIsReportedAsCoverageViolation) {
  const auto m = make_split(make_ids(20), {10, 5, 5}, 3);
  // Hand-edit the serialized document: drop the first training id.
  std::string text = manifest_to_json(m);
  const std::string victim = m.train.front();
  const std::string needle = "\"" + victim + "\"";
  const auto last = text.rfind(needle);  // occurrence inside "train"
  ASSERT_NE(last, std::string::npos);
  const auto line_start = text.rfind('\n', last);
  const auto line_end = text.find('\n', last);
  text.erase(line_start, line_end - line_start);

  // Set-difference oracle: the one id in dataset_ids missing from the splits.
  std::set<std::string> assigned(m.train.begin() + 1, m.train.end());
  assigned.insert(m.validation.begin(), m.validation.end());
  assigned.insert(m.test.begin(), m.test.end());
  std::vector<std::string> missing;
  for (const auto& id : m.dataset_ids)
    if (!assigned.count(id)) missing.push_back(id);
  ASSERT_EQ(missing, std::vector<std::string>{victim});

  try {
    manifest_from_json(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_NE(std::string(e.what()).find("coverage"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(missing.front()), std::string::npos);
  }
}
