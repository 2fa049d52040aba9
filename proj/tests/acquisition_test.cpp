#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "slidemask/acquisition.hpp"
#include "slidemask/error.hpp"
#include "slidemask/image_io.hpp"
#include "slidemask/rng.hpp"

using namespace slidemask;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slidemask_acq_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put_image(const fs::path& path, int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image im(w, h, 3);
  for (auto& v : im.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  write_image(path.string(), im);
}

FetchOptions options_for(const fs::path& out) {
  FetchOptions o;
  o.out_dir = out.string();
  o.clock = [] { return std::string("2024-01-01T00:00:00Z"); };
  return o;
}

class FlakyProvider : public ImageProvider {
 public:
  explicit FlakyProvider(int failures) : failures_(failures) {}
  std::string name() const override { return "flaky"; }
  std::vector<ProviderItem> search(const std::string&, int) override {
    ++calls;
    if (failures_-- > 0) throw FetchError("connection reset", true);
    return {};
  }
  int calls = 0;

 private:
  int failures_;
};

}  // namespace

TEST(Fetch, TruncatesToMaxResults) {
  const auto src = fresh_dir("trunc_src");
  for (int i = 0; i < 5; ++i) put_image(src / ("img" + std::to_string(i) + ".png"), 32, 24, i + 1);
  FixtureProvider provider(src.string());
  FetchQuery q{"landslide", 3, 0, 0};
  const auto records = fetch_images(q, provider, options_for(fresh_dir("trunc_out")));
  ASSERT_EQ(records.size(), 3u);
  for (const auto& r : records) {
    EXPECT_TRUE(fs::exists(r.local_path));
    EXPECT_EQ(r.provider, "fixture");
    EXPECT_EQ(r.width, 32);
  }
  EXPECT_EQ(records[0].url, "fixture://img0.png");
}

TEST(Fetch, ByteIdenticalFilesCollapse) {
  const auto src = fresh_dir("dup_src");
  put_image(src / "a.png", 20, 20, 7);
  fs::copy_file(src / "a.png", src / "b.png");
  FixtureProvider provider(src.string());
  const auto records = fetch_images({"x", 10, 0, 0}, provider, options_for(fresh_dir("dup_out")));
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].url, "fixture://a.png");
}

TEST(Fetch, RecompressedDuplicateCollapsesOnPixels) {
  const auto src = fresh_dir("recomp_src");
  put_image(src / "a.png", 20, 20, 9);
  // Same pixels, different encoder settings and container bytes.
  const Image im = read_image((src / "a.png").string());
  write_image((src / "b.bmp").string(), im);
  FixtureProvider provider(src.string());
  EXPECT_EQ(fetch_images({"x", 10, 0, 0}, provider, options_for(fresh_dir("recomp_out"))).size(), 1u);
}

TEST(Fetch, SmallImagesExcluded) {
  const auto src = fresh_dir("small_src");
  put_image(src / "big.png", 600, 520, 1);
  put_image(src / "small.png", 100, 100, 2);
  FixtureProvider provider(src.string());
  const auto records = fetch_images({"x", 10, 512, 512}, provider, options_for(fresh_dir("small_out")));
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].url, "fixture://big.png");
  for (const auto& r : records) {
    EXPECT_GE(r.width, 512);
    EXPECT_GE(r.height, 512);
  }
}

TEST(Fetch, EmptyProviderIsNotAnError) {
  const auto src = fresh_dir("empty_src");
  FixtureProvider provider(src.string());
  EXPECT_TRUE(fetch_images({"x", 4, 0, 0}, provider, options_for(fresh_dir("empty_out"))).empty());
}

TEST(Fetch, IdempotentAgainstFixture) {
  const auto src = fresh_dir("idem_src");
  for (int i = 0; i < 4; ++i) put_image(src / ("f" + std::to_string(i) + ".png"), 16, 16, 40 + i);
  FixtureProvider provider(src.string());
  const auto a = fetch_images({"x", 10, 0, 0}, provider, options_for(fresh_dir("idem_a")));
  const auto b = fetch_images({"x", 10, 0, 0}, provider, options_for(fresh_dir("idem_b")));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].checksum, b[i].checksum);
    EXPECT_EQ(a[i].url, b[i].url);
  }
}

TEST(Fetch, CorruptFilesAreSkipped) {
  const auto src = fresh_dir("corrupt_src");
  std::ofstream(src / "broken.png") << "not a png";
  put_image(src / "ok.png", 8, 8, 3);
  FixtureProvider provider(src.string());
  EXPECT_EQ(fetch_images({"x", 10, 0, 0}, provider, options_for(fresh_dir("corrupt_out"))).size(), 1u);
}

TEST(Fetch, RetriesThenSurfacesRetryableError) {
  FlakyProvider recovers(1);
  EXPECT_TRUE(fetch_images({"x", 1, 0, 0}, recovers, options_for(fresh_dir("flaky1"))).empty());
  EXPECT_EQ(recovers.calls, 2);

  FlakyProvider broken(100);
  auto opts = options_for(fresh_dir("flaky2"));
  opts.retries = 2;
  try {
    fetch_images({"x", 1, 0, 0}, broken, opts);
    FAIL();
  } catch (const FetchError& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_EQ(e.kind(), ErrorKind::fetch);
  }
  EXPECT_EQ(broken.calls, 3);
}

TEST(Fetch, CommandProviderReadsPluginOutput) {
  const auto dir = fresh_dir("plugin");
  put_image(dir / "one.png", 12, 10, 5);
  const auto script = dir / "provider.sh";
  std::ofstream(script) << "#!/bin/sh\nprintf 'https://example.org/one\\t" << (dir / "one.png").string() << "\\n'\n";
  fs::permissions(script, fs::perms::owner_all);
  CommandProvider provider(script.string());
  const auto records = fetch_images({"hill slope", 5, 0, 0}, provider, options_for(dir / "out"));
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].url, "https://example.org/one");
  EXPECT_EQ(records[0].width, 12);
}

TEST(Fetch, InvalidQueryRejected) {
  const auto src = fresh_dir("badq");
  FixtureProvider provider(src.string());
  EXPECT_THROW(fetch_images({"x", 0, 0, 0}, provider, options_for(src)), Error);
}

TEST(Triage, WorksheetHasOneRowPerRecord) {
  std::vector<FetchRecord> recs = {{"u1", "a.png", "c1", 10, 20, "fixture", ""},
                                   {"u2", "b.png", "c2", 30, 40, "fixture", ""},
                                   {"u3", "c.png", "c3", 50, 60, "fixture", ""}};
  const std::string sheet = triage_listing(recs);
  EXPECT_EQ(std::count(sheet.begin(), sheet.end(), '\n'), 4);
  EXPECT_NE(sheet.find("b.png\t30\t40\t\n"), std::string::npos);
}

TEST(Triage, DropDecisionFilters) {
  std::vector<FetchRecord> recs = {{"u1", "a.png", "c1", 1, 1, "f", ""},
                                   {"u2", "b.png", "c2", 1, 1, "f", ""},
                                   {"u3", "c.png", "c3", 1, 1, "f", ""}};
  const auto kept = import_triage(recs, "path\twidth\theight\tdecision\na.png\t1\t1\tkeep\nb.png\t1\t1\tDROP\nc.png\t1\t1\t\n");
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].local_path, "a.png");
  EXPECT_EQ(kept[1].local_path, "c.png");
}

TEST(Triage, UnknownPathNamed) {
  std::vector<FetchRecord> recs = {{"u1", "a.png", "c1", 1, 1, "f", ""}};
  try {
    import_triage(recs, "path\twidth\theight\tdecision\nzzz.png\t1\t1\tdrop\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zzz.png"), std::string::npos);
  }
  EXPECT_THROW(import_triage(recs, "a.png\t1\t1\tmaybe\n"), Error);
}

TEST(Triage, RecordsRoundTrip) {
  const auto dir = fresh_dir("records");
  std::vector<FetchRecord> recs = {{"u1", "a.png", "c1", 3, 4, "fixture", "2024-01-01T00:00:00Z"}};
  write_fetch_records(recs, (dir / "r.json").string());
  const auto back = read_fetch_records((dir / "r.json").string());
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].checksum, "c1");
  EXPECT_EQ(back[0].height, 4);
}
