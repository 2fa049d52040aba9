#include "slidemask/acquisition.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <future>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "csv.hpp"
#include "fsutil.hpp"
#include "json.hpp"
#include "slidemask/error.hpp"
#include "slidemask/image_io.hpp"

namespace fs = std::filesystem;

namespace slidemask {

void FetchQuery::validate() const {
  if (max_results < 1) fail(ErrorKind::config, "max_results must be at least 1");
  if (min_width < 0 || min_height < 0) fail(ErrorKind::config, "minimum dimensions must be non-negative");
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  const std::string text = detail::read_text(path);
  return {text.begin(), text.end()};
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string extension_for(const std::vector<std::uint8_t>& b) {
  if (b.size() >= 4 && b[0] == 0x89 && b[1] == 'P' && b[2] == 'N' && b[3] == 'G') return ".png";
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return ".jpg";
  if (b.size() >= 2 && b[0] == 'B' && b[1] == 'M') return ".bmp";
  return ".img";
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

struct Decoded {
  bool ok = false;
  std::string checksum;
  int width = 0, height = 0;
  std::string problem;
};

Decoded inspect(const ProviderItem& item) {
  Decoded d;
  try {
    const Image img = decode_image(item.bytes, item.url);
    d.ok = true;
    d.checksum = pixel_checksum(img);
    d.width = img.width();
    d.height = img.height();
  } catch (const Error& e) {
    d.problem = e.what();
  }
  return d;
}

}  // namespace

FixtureProvider::FixtureProvider(std::string directory) : directory_(std::move(directory)) {
  if (!fs::is_directory(directory_)) fail(ErrorKind::not_found, "fixture directory '" + directory_ + "' does not exist");
}

std::vector<ProviderItem> FixtureProvider::search(const std::string&, int n) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory_))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<ProviderItem> items;
  for (const auto& f : files) {
    if (static_cast<int>(items.size()) >= n) break;
    items.push_back({"fixture://" + f.filename().string(), read_bytes(f.string())});
  }
  return items;
}

CommandProvider::CommandProvider(std::string program) : program_(std::move(program)) {}

std::vector<ProviderItem> CommandProvider::search(const std::string& terms, int n) {
  const std::string cmd = shell_quote(program_) + " " + shell_quote(terms) + " " + std::to_string(n);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw FetchError("cannot start provider '" + program_ + "'", true);
  std::string output;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, got);
  const int status = pclose(pipe);
  if (status != 0) throw FetchError("provider '" + program_ + "' exited with status " + std::to_string(status), true);

  std::vector<ProviderItem> items;
  std::istringstream lines(output);
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FetchError("provider line lacks a tab: '" + line + "'", false);
    try {
      items.push_back({line.substr(0, tab), read_bytes(line.substr(tab + 1))});
    } catch (const Error& e) {
      throw FetchError(std::string("provider output unreadable: ") + e.what(), true);
    }
  }
  return items;
}

std::unique_ptr<ImageProvider> make_provider(const std::string& spec, const std::string& fixture_dir) {
  if (spec == "fixture") return std::make_unique<FixtureProvider>(fixture_dir);
  if (spec.rfind("command:", 0) == 0 && spec.size() > 8) return std::make_unique<CommandProvider>(spec.substr(8));
  fail(ErrorKind::config, "unknown provider '" + spec + "' (expected fixture or command:<program>)");
}

std::vector<FetchRecord> fetch_images(const FetchQuery& query, ImageProvider& provider, const FetchOptions& options) {
  query.validate();
  require(!options.out_dir.empty(), "fetch needs an output directory");
  const int wanted = query.max_results * std::max(1, options.candidate_factor);

  std::vector<ProviderItem> items;
  for (int attempt = 0;; ++attempt) {
    try {
      items = provider.search(query.terms, wanted);
      break;
    } catch (const FetchError& e) {
      if (!e.retryable() || attempt >= options.retries) throw;
      spdlog::warn("provider {} failed ({}), retrying", provider.name(), e.what());
    }
  }

  // Decoding runs in parallel; the collector below walks results in order.
  std::vector<Decoded> decoded(items.size());
  const std::size_t width = static_cast<std::size_t>(std::max(1, options.concurrency));
  for (std::size_t start = 0; start < items.size(); start += width) {
    std::vector<std::future<Decoded>> jobs;
    for (std::size_t i = start; i < std::min(items.size(), start + width); ++i)
      jobs.push_back(std::async(std::launch::async, inspect, std::cref(items[i])));
    for (std::size_t i = 0; i < jobs.size(); ++i) decoded[start + i] = jobs[i].get();
  }

  fs::create_directories(options.out_dir);
  const auto clock = options.clock ? options.clock : now_utc;
  std::set<std::string> seen;
  std::vector<FetchRecord> records;
  for (std::size_t i = 0; i < items.size() && static_cast<int>(records.size()) < query.max_results; ++i) {
    const Decoded& d = decoded[i];
    if (!d.ok) {
      spdlog::warn("skipping {}: {}", items[i].url, d.problem);
      continue;
    }
    if (d.width < query.min_width || d.height < query.min_height) continue;
    if (!seen.insert(d.checksum).second) continue;
    char name[32];
    std::snprintf(name, sizeof name, "%04zu_", records.size());
    const fs::path path = fs::path(options.out_dir) / (name + d.checksum.substr(0, 12) + extension_for(items[i].bytes));
    detail::write_text(path.string(), std::string(items[i].bytes.begin(), items[i].bytes.end()));
    records.push_back({items[i].url, path.string(), d.checksum, d.width, d.height, provider.name(), clock()});
  }
  return records;
}

void write_fetch_records(const std::vector<FetchRecord>& records, const std::string& path) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& r : records)
    doc.push_back({{"url", r.url}, {"local_path", r.local_path}, {"checksum", r.checksum}, {"width", r.width},
                   {"height", r.height}, {"provider", r.provider}, {"retrieved_at", r.retrieved_at}});
  detail::write_text(path, doc.dump(2) + "\n");
}

std::vector<FetchRecord> read_fetch_records(const std::string& path) {
  const std::string text = detail::read_text(path);
  std::vector<FetchRecord> records;
  try {
    for (const auto& r : nlohmann::json::parse(text))
      records.push_back({r.at("url"), r.at("local_path"), r.at("checksum"), r.at("width"), r.at("height"),
                         r.at("provider"), r.value("retrieved_at", "")});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema, "fetch records '" + path + "': " + e.what());
  }
  return records;
}

std::string triage_listing(const std::vector<FetchRecord>& records) {
  std::string out = "path\twidth\theight\tdecision\n";
  for (const auto& r : records)
    out += r.local_path + "\t" + std::to_string(r.width) + "\t" + std::to_string(r.height) + "\t\n";
  return out;
}

void write_triage_listing(const std::vector<FetchRecord>& records, const std::string& path) {
  detail::write_text(path, triage_listing(records));
}

std::vector<FetchRecord> import_triage(const std::vector<FetchRecord>& records, const std::string& worksheet_text) {
  const auto rows = detail::parse_csv(worksheet_text, '\t');
  std::set<std::string> dropped;
  std::set<std::string> known;
  for (const auto& r : records) known.insert(r.local_path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.empty() || (row.size() == 1 && row[0].empty())) continue;
    if (i == 0 && row[0] == "path") continue;
    if (!known.count(row[0])) fail(ErrorKind::schema, "worksheet lists unknown path '" + row[0] + "'");
    std::string decision = row.size() >= 4 ? row[3] : "";
    decision.erase(0, decision.find_first_not_of(" \t"));
    decision.erase(decision.find_last_not_of(" \t") + 1);
    std::transform(decision.begin(), decision.end(), decision.begin(), [](unsigned char c) { return std::tolower(c); });
    if (decision == "drop") dropped.insert(row[0]);
    else if (!decision.empty() && decision != "keep")
      fail(ErrorKind::schema, "worksheet decision '" + decision + "' for '" + row[0] + "' is not keep or drop");
  }
  std::vector<FetchRecord> kept;
  for (const auto& r : records)
    if (!dropped.count(r.local_path)) kept.push_back(r);
  return kept;
}

}  // namespace slidemask
