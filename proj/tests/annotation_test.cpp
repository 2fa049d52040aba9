#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "oracles.hpp"
#include "slidemask/annotation.hpp"
#include "slidemask/error.hpp"

using namespace slidemask;

namespace {

const std::string kData = SLIDEMASK_TEST_DATA;

std::string one_polygon_doc(const std::string& cls, const std::string& xs = "[10,50,50,10]",
                            const std::string& ys = "[10,10,40,40]") {
  return R"({"a.png1": {"filename": "a.png", "size": 1, "file_attributes": {"width": 64, "height": 48},
    "regions": [{"shape_attributes": {"name": "polygon", "all_points_x": )" +
         xs + R"(, "all_points_y": )" + ys + R"(}, "region_attributes": {"class": ")" + cls + R"("}}]}})";
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::io;
}

Region region_of(std::vector<Point> pts, ClassLabel label = ClassLabel::landslide) {
  return Region{Polygon{std::move(pts)}, label};
}

}  // namespace

TEST(ParseVia, MinimalDocument) {
  const auto images = parse_via(one_polygon_doc("Landslide"));
  ASSERT_EQ(images.size(), 1u);
  EXPECT_EQ(images[0].image_id, "a");
  EXPECT_EQ(images[0].width, 64);
  EXPECT_EQ(images[0].height, 48);
  ASSERT_EQ(images[0].regions.size(), 1u);
  EXPECT_EQ(images[0].regions[0].label, ClassLabel::landslide);
  EXPECT_EQ(images[0].regions[0].polygon.vertices.size(), 4u);
  EXPECT_TRUE(images[0].has_landslide());
}

TEST(ParseVia, UnknownClassIsTaxonomyError) {
  try {
    parse_via(one_polygon_doc("Road"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::taxonomy);
    EXPECT_NE(std::string(e.what()).find("Road"), std::string::npos);
  }
}

TEST(ParseVia, TwoVertexPolygonIsDegenerate) {
  EXPECT_EQ(kind_of([] { parse_via(one_polygon_doc("Landslide", "[1,5]", "[1,5]")); }), ErrorKind::degenerate);
}

TEST(ParseVia, MalformedDocumentsNameTheEntry) {
  EXPECT_EQ(kind_of([] { parse_via("{ not json"); }), ErrorKind::parse);
  try {
    parse_via(R"({"broken.jpg7": {"size": 7, "regions": []}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("broken.jpg7"), std::string::npos);
  }
  EXPECT_EQ(kind_of([] {
              parse_via(R"({"c.png1": {"filename": "c.png", "file_attributes": {"width": 9, "height": 9},
                "regions": [{"shape_attributes": {"name": "circle", "cx": 3, "cy": 3, "r": 2},
                             "region_attributes": {"class": "Landslide"}}]}})");
            }),
            ErrorKind::parse);
}

TEST(ParseVia, MissingDimensionsUseResolver) {
  const std::string doc = R"({"x.jpg1": {"filename": "x.jpg", "size": 1, "regions": []}})";
  EXPECT_EQ(kind_of([&] { parse_via(doc); }), ErrorKind::parse);
  ViaParseOptions opts;
  opts.resolve_size = [](const std::string& f) -> std::optional<ImageSize> {
    if (f == "x.jpg") return ImageSize{300, 200};
    return std::nullopt;
  };
  const auto images = parse_via(doc, opts);
  ASSERT_EQ(images.size(), 1u);
  EXPECT_EQ(images[0].width, 300);
  EXPECT_TRUE(images[0].regions.empty());
}

TEST(ParseVia, ClassNamesAreCaseAndWhitespaceInsensitive) {
  EXPECT_EQ(parse_label("Water body"), ClassLabel::water_body);
  EXPECT_EQ(parse_label("  water   BODY "), ClassLabel::water_body);
  EXPECT_EQ(parse_label("WaterBody"), ClassLabel::water_body);
  EXPECT_EQ(parse_label("Buildings"), ClassLabel::building);
  EXPECT_EQ(parse_label("background"), ClassLabel::background);
  EXPECT_THROW(parse_label("Roads"), Error);
}

TEST(ParseVia, ProjectFixtureMatchesHandCount) {
  // Hand count of tests/data/via_project.json: hill_01 has 3 regions
  // (Landslide, Vegetation, Background), hill_02 has 4 (Landslide, Water
  // body, Building, Vegetation as a rect), hill_03 has none.
  const auto images = parse_via_file(kData + "/via_project.json");
  ASSERT_EQ(images.size(), 3u);
  EXPECT_EQ(images[0].image_id, "hill_01");
  EXPECT_EQ(images[0].regions.size(), 3u);
  EXPECT_EQ(images[1].regions.size(), 4u);
  EXPECT_EQ(images[2].regions.size(), 0u);
  std::map<ClassLabel, int> per_label;
  std::size_t total = 0;
  for (const auto& im : images)
    for (const auto& r : im.regions) {
      ++per_label[r.label];
      ++total;
    }
  EXPECT_EQ(total, 7u);
  EXPECT_EQ(per_label[ClassLabel::landslide], 2);
  EXPECT_EQ(per_label[ClassLabel::vegetation], 2);
  EXPECT_EQ(per_label[ClassLabel::water_body], 1);
  EXPECT_EQ(per_label[ClassLabel::building], 1);
  EXPECT_EQ(per_label[ClassLabel::background], 1);
  // closing vertex repeated in the Background polygon is dropped
  EXPECT_EQ(images[0].regions[2].polygon.vertices.size(), 4u);
}

TEST(ParseVia, CsvExportAgreesWithProjectSave) {
  const auto json_images = parse_via_file(kData + "/via_project.json");
  const auto csv_images = parse_via_file(kData + "/via_export.csv");
  EXPECT_EQ(json_images, csv_images);
}

TEST(ParseVia, WriteViaRoundTrips) {
  const auto images = parse_via_file(kData + "/via_project.json");
  EXPECT_EQ(parse_via(write_via(images)), images);
}

TEST(RasterizeMask, FullFrameRectangleIsAllOnes) {
  const auto r = rasterize_mask(region_of({{0, 0}, {8, 0}, {8, 8}, {0, 8}}), 8, 8);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(count_set(r.mask), 64u);
}

TEST(RasterizeMask, RectangleMatchesOracle) {
  const Region rect = region_of({{2, 2}, {6, 2}, {6, 6}, {2, 6}});
  const auto r = rasterize_mask(rect, 8, 8);
  const auto expected = oracle::rasterize_per_pixel(rect.polygon, 8, 8);
  EXPECT_EQ(count_set(expected), 16u);
  EXPECT_EQ(r.mask, expected);
}

TEST(RasterizeMask, RightTriangleMatchesOracle) {
  const Region tri = region_of({{0, 0}, {8, 0}, {0, 8}});
  const auto r = rasterize_mask(tri, 8, 8);
  const auto expected = oracle::rasterize_per_pixel(tri.polygon, 8, 8);
  // centers (x+0.5, y+0.5) with x + y + 1 < 8: 7 + 6 + ... + 1 = 28
  EXPECT_EQ(count_set(expected), 28u);
  EXPECT_EQ(r.mask, expected);
}

TEST(RasterizeMask, ZeroAreaPolygonIsFlagged) {
  const auto r = rasterize_mask(region_of({{1, 1}, {5, 5}, {3, 3}}), 8, 8);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.mask.width(), 8);
  EXPECT_EQ(count_set(r.mask), 0u);
}

TEST(RasterizeMask, RandomPolygonsMatchOracleAndIgnoreOrientation) {
  Rng rng(20211);
  for (int trial = 0; trial < 25; ++trial) {
    const Polygon poly = oracle::random_polygon(rng, 32);
    Polygon reversed = poly;
    std::reverse(reversed.vertices.begin(), reversed.vertices.end());
    const auto forward = rasterize_polygon(poly, 32, 32);
    const auto backward = rasterize_polygon(reversed, 32, 32);
    EXPECT_EQ(forward.mask, oracle::rasterize_per_pixel(poly, 32, 32)) << "trial " << trial;
    EXPECT_EQ(forward.mask, oracle::rasterize_by_winding(poly, 32, 32)) << "trial " << trial;
    EXPECT_EQ(count_set(forward.mask), count_set(backward.mask));
  }
}

TEST(ScaleAnnotations, IdentityHalvingAndRatio) {
  AnnotatedImage im{"a", "a.png", 512, 512, {region_of({{1.5, 2}, {100, 3}, {50, 60}})}};
  EXPECT_EQ(scale_annotations(im, 512, 512), im);

  im.width = im.height = 1024;
  const auto half = scale_annotations(im, 512, 512);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(half.regions[0].polygon.vertices[i].x, im.regions[0].polygon.vertices[i].x / 2);
    EXPECT_DOUBLE_EQ(half.regions[0].polygon.vertices[i].y, im.regions[0].polygon.vertices[i].y / 2);
  }
  EXPECT_EQ(half.width, 512);
  EXPECT_EQ(half.regions.size(), 1u);

  AnnotatedImage vga{"b", "b.png", 640, 480, {region_of({{320, 240}, {0, 0}, {640, 0}})}};
  const auto s = scale_annotations(vga, 512, 512);
  // 320 * 512/640 = 256, 240 * 512/480 = 256
  EXPECT_DOUBLE_EQ(s.regions[0].polygon.vertices[0].x, 256.0);
  EXPECT_DOUBLE_EQ(s.regions[0].polygon.vertices[0].y, 256.0);
  EXPECT_DOUBLE_EQ(s.regions[0].polygon.vertices[2].x, 512.0);
}

TEST(ScaleAnnotations, RasterOfScaledRectangleEqualsScaledGrid) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 8 + static_cast<int>(rng.below(9)), h = 8 + static_cast<int>(rng.below(9));
    const int x0 = static_cast<int>(rng.below(w - 1)), y0 = static_cast<int>(rng.below(h - 1));
    const int x1 = x0 + 1 + static_cast<int>(rng.below(w - x0 - 1)), y1 = y0 + 1 + static_cast<int>(rng.below(h - y0 - 1));
    const int factor = 2 + static_cast<int>(rng.below(3));
    AnnotatedImage im{"r", "r.png", w, h,
                      {region_of({{double(x0), double(y0)}, {double(x1), double(y0)}, {double(x1), double(y1)}, {double(x0), double(y1)}})}};
    const auto small = rasterize_mask(im.regions[0], w, h).mask;
    const auto scaled = scale_annotations(im, w * factor, h * factor);
    const auto big = rasterize_mask(scaled.regions[0], w * factor, h * factor).mask;
    for (int y = 0; y < h * factor; ++y)
      for (int x = 0; x < w * factor; ++x) ASSERT_EQ(big.at(x, y), small.at(x / factor, y / factor));
  }
}
