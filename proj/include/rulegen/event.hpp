#pragma once

#include <chrono>
#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rulegen {

using Timestamp = std::chrono::sys_time<std::chrono::microseconds>;

/// Ordered, case-folded header map. Names are stored lowercase and unique;
/// repeated headers are joined with ", " in arrival order.
class HeaderMap {
 public:
  using Entry = std::pair<std::string, std::string>;

  void add(std::string_view name, std::string_view value);
  /// Empty view when the header is absent.
  std::string_view get(std::string_view lowercase_name) const noexcept;
  bool contains(std::string_view lowercase_name) const noexcept;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  friend bool operator==(const HeaderMap&, const HeaderMap&) = default;

 private:
  std::vector<Entry> entries_;
};

/// OCSF-lite HTTP request record. Immutable once built; decoded views are
/// derived from the raw ones at construction.
class HttpEvent {
 public:
  HttpEvent() : HttpEvent("GET", "/", "", {}, "", std::nullopt, std::nullopt) {}
  HttpEvent(std::string method, std::string path, std::string query_string, HeaderMap headers,
            std::string body, std::optional<std::string> source_ip,
            std::optional<Timestamp> timestamp);

  const std::string& method() const noexcept { return method_; }
  const std::string& path() const noexcept { return path_; }
  const std::string& path_decoded() const noexcept { return path_decoded_; }
  const std::string& query_string() const noexcept { return query_string_; }
  const std::string& query_string_decoded() const noexcept { return query_string_decoded_; }
  const HeaderMap& headers() const noexcept { return headers_; }
  const std::string& body() const noexcept { return body_; }
  const std::optional<std::string>& source_ip() const noexcept { return source_ip_; }
  const std::optional<Timestamp>& timestamp() const noexcept { return timestamp_; }

  friend bool operator==(const HttpEvent&, const HttpEvent&) = default;

 private:
  std::string method_;
  std::string path_;
  std::string path_decoded_;
  std::string query_string_;
  std::string query_string_decoded_;
  HeaderMap headers_;
  std::string body_;
  std::optional<std::string> source_ip_;
  std::optional<Timestamp> timestamp_;
};

/// RFC 3986 percent-decoding. Malformed escapes are copied through verbatim;
/// '+' is not treated as a space.
std::string percent_decode(std::string_view text);

/// Parses "METHOD SP target SP HTTP/x.y" plus headers and optional body.
/// Accepts CRLF or LF line endings and origin-form or absolute-form targets.
/// Throws MalformedRequest.
HttpEvent normalize_raw_http(std::string_view raw);

/// Renders an event back to raw HTTP/1.1 text (LF line endings). The output
/// normalizes to an event equal to the input apart from source_ip/timestamp.
std::string render_raw_http(const HttpEvent& event);

/// RFC 3339 helpers. Formatting always emits UTC with a "Z" suffix and a
/// fractional part only when sub-second precision is present.
std::optional<Timestamp> parse_rfc3339(std::string_view text);
std::string format_rfc3339(Timestamp ts);

/// Corpus line <-> event. Throws on malformed lines (std::exception subclasses).
HttpEvent event_from_json_line(std::string_view line);
std::string event_to_json_line(const HttpEvent& event);

/// Streams events from a JSONL corpus. Malformed lines are counted and skipped;
/// when the stream is exhausted and more than 10% of non-blank lines failed
/// (and more than one line),
/// next() throws CorpusCorrupt.
class CorpusReader {
 public:
  explicit CorpusReader(std::istream& in) : in_(in) {}

  std::optional<HttpEvent> next();

  std::size_t lines_read() const noexcept { return lines_; }
  std::size_t skipped() const noexcept { return skipped_; }
  /// 1-based line numbers of skipped lines, with the parse message.
  const std::vector<std::pair<std::size_t, std::string>>& skipped_lines() const noexcept {
    return skipped_detail_;
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
  std::size_t lines_ = 0;
  std::size_t skipped_ = 0;
  std::vector<std::pair<std::size_t, std::string>> skipped_detail_;
  bool finished_ = false;
};

struct LoadedCorpus {
  std::vector<HttpEvent> events;
  std::size_t skipped = 0;
};

/// Eager wrapper over CorpusReader.
LoadedCorpus load_event_corpus(std::istream& in);
LoadedCorpus load_event_corpus_file(const std::string& path);

}  // namespace rulegen
