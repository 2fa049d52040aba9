#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace slidemask {

struct FetchQuery {
  std::string terms;
  int max_results = 20;
  int min_width = 0;
  int min_height = 0;

  void validate() const;
};

struct FetchRecord {
  std::string url;
  std::string local_path;
  std::string checksum;  // sha-256 over decoded pixels
  int width = 0;
  int height = 0;
  std::string provider;
  std::string retrieved_at;  // ISO-8601 UTC
};

/// One candidate returned by a provider.
struct ProviderItem {
  std::string url;
  std::vector<std::uint8_t> bytes;
};

class ImageProvider {
 public:
  virtual ~ImageProvider() = default;
  virtual std::string name() const = 0;
  /// Up to n candidates for the search terms. Throws FetchError on failure.
  virtual std::vector<ProviderItem> search(const std::string& terms, int n) = 0;
};

/// Serves the image files of a local directory in name order. Terms are ignored.
class FixtureProvider : public ImageProvider {
 public:
  explicit FixtureProvider(std::string directory);
  std::string name() const override { return "fixture"; }
  std::vector<ProviderItem> search(const std::string& terms, int n) override;

 private:
  std::string directory_;
};

/// Runs `<program> <terms> <n>`; the program prints "url<TAB>local-file" lines.
class CommandProvider : public ImageProvider {
 public:
  explicit CommandProvider(std::string program);
  std::string name() const override { return "command:" + program_; }
  std::vector<ProviderItem> search(const std::string& terms, int n) override;

 private:
  std::string program_;
};

/// "fixture" needs a directory; "command:<exe>" wraps an external plugin.
std::unique_ptr<ImageProvider> make_provider(const std::string& spec, const std::string& fixture_dir);

struct FetchOptions {
  std::string out_dir;
  int retries = 2;
  int concurrency = 4;
  int candidate_factor = 4;  // candidates requested per wanted result
  std::function<std::string()> clock;  // timestamp source; defaults to the system clock
};

std::vector<FetchRecord> fetch_images(const FetchQuery& query, ImageProvider& provider, const FetchOptions& options);

void write_fetch_records(const std::vector<FetchRecord>& records, const std::string& path);
std::vector<FetchRecord> read_fetch_records(const std::string& path);

/// Review worksheet: path, width, height and a blank decision column.
std::string triage_listing(const std::vector<FetchRecord>& records);
void write_triage_listing(const std::vector<FetchRecord>& records, const std::string& path);

/// Applies keep/drop decisions. Blank means keep; an unknown path is an error.
std::vector<FetchRecord> import_triage(const std::vector<FetchRecord>& records, const std::string& worksheet_text);

}  // namespace slidemask
