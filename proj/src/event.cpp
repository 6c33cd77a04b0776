#include "rulegen/event.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rulegen/errors.hpp"

namespace rulegen {

namespace {

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string normalize_path(std::string path) {
  if (path.empty() || path.front() != '/') path.insert(path.begin(), '/');
  return path;
}

// Splits the next line off `rest`, accepting "\r\n" or "\n".
std::string_view take_line(std::string_view& rest) {
  const auto nl = rest.find('\n');
  std::string_view line = nl == std::string_view::npos ? rest : rest.substr(0, nl);
  rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace

void HeaderMap::add(std::string_view name, std::string_view value) {
  std::string key = to_lower(trim(name));
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v.append(", ");
      v.append(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::string(value));
}

std::string_view HeaderMap::get(std::string_view lowercase_name) const noexcept {
  for (const auto& [k, v] : entries_)
    if (k == lowercase_name) return v;
  return {};
}

bool HeaderMap::contains(std::string_view lowercase_name) const noexcept {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.first == lowercase_name; });
}

HttpEvent::HttpEvent(std::string method, std::string path, std::string query_string,
                     HeaderMap headers, std::string body, std::optional<std::string> source_ip,
                     std::optional<Timestamp> timestamp)
    : method_(std::move(method)),
      path_(normalize_path(std::move(path))),
      query_string_(std::move(query_string)),
      headers_(std::move(headers)),
      body_(std::move(body)),
      source_ip_(std::move(source_ip)),
      timestamp_(timestamp) {
  std::transform(method_.begin(), method_.end(), method_.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (!query_string_.empty() && query_string_.front() == '?') query_string_.erase(0, 1);
  path_decoded_ = percent_decode(path_);
  query_string_decoded_ = percent_decode(query_string_);
}

std::string percent_decode(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '%' && i + 2 < text.size()) {
      const int hi = hex_value(text[i + 1]);
      const int lo = hex_value(text[i + 2]);
      if (hi >= 0 && lo >= 0) {
        out.push_back(static_cast<char>(hi * 16 + lo));
        i += 2;
        continue;
      }
    }
    out.push_back(text[i]);
  }
  return out;
}

HttpEvent normalize_raw_http(std::string_view raw) {
  std::string_view rest = raw;
  // Leading blank lines are tolerated (common in YAML block scalars).
  std::string_view request_line;
  while (!rest.empty()) {
    request_line = take_line(rest);
    if (!trim(request_line).empty()) break;
  }
  request_line = trim(request_line);
  if (request_line.empty()) throw MalformedRequest("empty request: no request line");

  const auto sp1 = request_line.find(' ');
  const auto sp2 = request_line.rfind(' ');
  if (sp1 == std::string_view::npos || sp2 == sp1)
    throw MalformedRequest("request line must be 'METHOD target HTTP/x.y': " +
                           std::string(request_line));
  const std::string_view method = request_line.substr(0, sp1);
  const std::string_view target = trim(request_line.substr(sp1 + 1, sp2 - sp1 - 1));
  const std::string_view version = request_line.substr(sp2 + 1);
  if (method.empty() || target.empty() || !version.starts_with("HTTP/") ||
      target.find(' ') != std::string_view::npos)
    throw MalformedRequest("request line must be 'METHOD target HTTP/x.y': " +
                           std::string(request_line));
  if (!std::all_of(method.begin(), method.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '_';
      }))
    throw MalformedRequest("invalid method token: " + std::string(method));

  std::string_view origin = target;
  if (const auto scheme = origin.find("://"); scheme != std::string_view::npos &&
                                              origin.substr(0, scheme).find('/') ==
                                                  std::string_view::npos) {
    origin.remove_prefix(scheme + 3);
    const auto slash = origin.find_first_of("/?");
    origin = slash == std::string_view::npos ? std::string_view{} : origin.substr(slash);
  }
  std::string path;
  std::string query;
  if (const auto q = origin.find('?'); q != std::string_view::npos) {
    path = std::string(origin.substr(0, q));
    query = std::string(origin.substr(q + 1));
  } else {
    path = std::string(origin);
  }
  if (const auto frag = query.find('#'); frag != std::string::npos) query.resize(frag);
  if (const auto frag = path.find('#'); frag != std::string::npos) path.resize(frag);

  HeaderMap headers;
  while (!rest.empty()) {
    const std::string_view line = take_line(rest);
    if (line.empty()) break;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0)
      throw MalformedRequest("malformed header line: " + std::string(line));
    headers.add(line.substr(0, colon), trim(line.substr(colon + 1)));
  }

  return HttpEvent(std::string(method), std::move(path), std::move(query), std::move(headers),
                   std::string(rest), std::nullopt, std::nullopt);
}

std::string render_raw_http(const HttpEvent& event) {
  std::string out = event.method() + " " + event.path();
  if (!event.query_string().empty()) out += "?" + event.query_string();
  out += " HTTP/1.1\n";
  for (const auto& [k, v] : event.headers().entries()) out += k + ": " + v + "\n";
  out += "\n";
  out += event.body();
  return out;
}

std::optional<Timestamp> parse_rfc3339(std::string_view text) {
  // YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > text.size()) return false;
    const auto* b = text.data() + pos;
    auto [p, ec] = std::from_chars(b, b + len, out);
    return ec == std::errc{} && p == b + len;
  };
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (text.size() < 20 || !num(0, 4, y) || text[4] != '-' || !num(5, 2, mo) || text[7] != '-' ||
      !num(8, 2, d) || (text[10] != 'T' && text[10] != 't' && text[10] != ' ') ||
      !num(11, 2, h) || text[13] != ':' || !num(14, 2, mi) || text[16] != ':' ||
      !num(17, 2, s))
    return std::nullopt;
  std::size_t pos = 19;
  long long micros = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      if (digits < 6) micros = micros * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) return std::nullopt;
    for (int k = std::min(digits, 6); k < 6; ++k) micros *= 10;
  }
  if (pos >= text.size()) return std::nullopt;
  int offset_minutes = 0;
  if (text[pos] == 'Z' || text[pos] == 'z') {
    ++pos;
  } else if (text[pos] == '+' || text[pos] == '-') {
    int oh = 0, om = 0;
    if (!num(pos + 1, 2, oh) || pos + 3 >= text.size() || text[pos + 3] != ':' ||
        !num(pos + 4, 2, om))
      return std::nullopt;
    offset_minutes = (oh * 60 + om) * (text[pos] == '-' ? -1 : 1);
    pos += 6;
  } else {
    return std::nullopt;
  }
  if (pos != text.size()) return std::nullopt;

  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) return std::nullopt;
  auto tp = sys_days(ymd) + hours(h) + minutes(mi) + seconds(s) + microseconds(micros) -
            minutes(offset_minutes);
  return time_point_cast<microseconds>(tp);
}

std::string format_rfc3339(Timestamp ts) {
  using namespace std::chrono;
  const auto days = floor<std::chrono::days>(ts);
  const year_month_day ymd{days};
  auto rem = ts - days;
  const auto h = duration_cast<hours>(rem);
  rem -= h;
  const auto mi = duration_cast<minutes>(rem);
  rem -= mi;
  const auto s = duration_cast<seconds>(rem);
  rem -= s;
  const long long us = rem.count();
  char buf[64];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02lld",
                        static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                        static_cast<unsigned>(ymd.day()), static_cast<int>(h.count()),
                        static_cast<int>(mi.count()), static_cast<long long>(s.count()));
  std::string out(buf, static_cast<std::size_t>(n));
  if (us != 0) {
    std::snprintf(buf, sizeof buf, ".%06lld", us);
    std::string frac(buf);
    while (frac.back() == '0') frac.pop_back();
    out += frac;
  }
  out.push_back('Z');
  return out;
}

HttpEvent event_from_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  if (!j.is_object()) throw MalformedRequest("corpus line is not a JSON object");
  HeaderMap headers;
  if (auto it = j.find("headers"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw MalformedRequest("headers must be an object");
    for (const auto& [k, v] : it->items()) headers.add(k, v.get<std::string>());
  }
  std::optional<std::string> ip;
  if (auto it = j.find("source_ip"); it != j.end() && !it->is_null())
    ip = it->get<std::string>();
  std::optional<Timestamp> ts;
  if (auto it = j.find("timestamp"); it != j.end() && !it->is_null()) {
    ts = parse_rfc3339(it->get<std::string>());
    if (!ts) throw MalformedRequest("timestamp is not RFC 3339");
  }
  if (!j.contains("method") || !j.contains("path"))
    throw MalformedRequest("corpus line lacks method or path");
  return HttpEvent(j.at("method").get<std::string>(), j.at("path").get<std::string>(),
                   j.value("query_string", std::string{}), std::move(headers),
                   j.value("body", std::string{}), std::move(ip), ts);
}

std::string event_to_json_line(const HttpEvent& event) {
  nlohmann::ordered_json j;
  j["method"] = event.method();
  j["path"] = event.path();
  j["query_string"] = event.query_string();
  auto headers = nlohmann::ordered_json::object();
  for (const auto& [k, v] : event.headers().entries()) headers[k] = v;
  j["headers"] = std::move(headers);
  j["body"] = event.body();
  j["source_ip"] = event.source_ip() ? nlohmann::ordered_json(*event.source_ip()) : nlohmann::ordered_json(nullptr);
  j["timestamp"] =
      event.timestamp() ? nlohmann::ordered_json(format_rfc3339(*event.timestamp())) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

std::optional<HttpEvent> CorpusReader::next() {
  std::string line;
  while (!finished_ && std::getline(in_, line)) {
    ++line_no_;
    if (trim(line).empty()) continue;
    ++lines_;
    try {
      return event_from_json_line(line);
    } catch (const std::exception& e) {
      ++skipped_;
      skipped_detail_.emplace_back(line_no_, e.what());
    }
  }
  if (!finished_) {
    finished_ = true;
    // A single bad line is always tolerated; beyond that the 10% ceiling applies.
    if (skipped_ > 1 && skipped_ * 10 > lines_)
      throw CorpusCorrupt("corpus corrupt: " + std::to_string(skipped_) + " of " +
                          std::to_string(lines_) + " lines failed to parse");
  }
  return std::nullopt;
}

LoadedCorpus load_event_corpus(std::istream& in) {
  CorpusReader reader(in);
  LoadedCorpus out;
  while (auto ev = reader.next()) out.events.push_back(std::move(*ev));
  out.skipped = reader.skipped();
  return out;
}

LoadedCorpus load_event_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file: " + path);
  return load_event_corpus(in);
}

}  // namespace rulegen
