#include "rulegen/selector.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "rulegen/errors.hpp"

namespace rulegen {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int cve_year(const std::string& id) {
  // CVE-YYYY-NNNN
  if (id.size() < 8) return 0;
  try {
    return std::stoi(id.substr(4, 4));
  } catch (...) {
    return 0;
  }
}

}  // namespace

ScoringConfig ScoringConfig::defaults() {
  ScoringConfig c;
  c.keyword_weights = {
      {"remote code execution", 30.0},
      {"command injection", 25.0},
      {"sql injection", 20.0},
      {"authentication bypass", 25.0},
      // Enterprise infrastructure vendors.
      {"atlassian", 15.0},
      {"jira", 15.0},
      {"confluence", 15.0},
      {"vmware", 15.0},
      {"citrix", 15.0},
      {"fortinet", 15.0},
      {"cisco", 15.0},
      {"oracle", 15.0},
      {"microsoft exchange", 15.0},
      // Isolated single-product plugins.
      {"wordpress plugin", -25.0},
      {"joomla component", -25.0},
      {"drupal module", -25.0},
  };
  c.kev_bonus = 50.0;
  c.news_bonus = 20.0;
  c.selection_threshold = 40.0;
  return c;
}

void ScoringConfig::validate() const {
  bool positive = false;
  bool negative = false;
  for (const auto& [kw, w] : keyword_weights) {
    if (kw.empty()) throw ConfigError("empty keyword in scoring config");
    if (kw != lower(kw)) throw ConfigError("keyword '" + kw + "' must be lowercase");
    positive |= w > 0;
    negative |= w < 0;
  }
  if (!positive || !negative)
    throw ConfigError("scoring config needs at least one positive and one negative keyword weight");
}

nlohmann::ordered_json to_json(const ScoringConfig& c) {
  nlohmann::ordered_json j;
  auto kw = nlohmann::ordered_json::object();
  for (const auto& [k, w] : c.keyword_weights) kw[k] = w;
  j["keyword_weights"] = std::move(kw);
  j["kev_bonus"] = c.kev_bonus;
  j["news_bonus"] = c.news_bonus;
  j["selection_threshold"] = c.selection_threshold;
  return j;
}

ScoringConfig scoring_config_from_json(const nlohmann::json& j) {
  ScoringConfig c = ScoringConfig::defaults();
  try {
    if (j.contains("keyword_weights")) {
      c.keyword_weights.clear();
      for (const auto& [k, w] : j.at("keyword_weights").items())
        c.keyword_weights[k] = w.get<double>();
    }
    c.kev_bonus = j.value("kev_bonus", c.kev_bonus);
    c.news_bonus = j.value("news_bonus", c.news_bonus);
    c.selection_threshold = j.value("selection_threshold", c.selection_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad scoring config: ") + e.what());
  }
  c.validate();
  return c;
}

ScoreResult score_cve(const CveRecord& record, const CveIdSet& kev_ids, const CveIdSet& news_ids,
                      const ScoringConfig& config, Timestamp decided_at) {
  ScoreResult result;
  const std::string description = lower(record.tmpl.description);
  for (const auto& [keyword, weight] : config.keyword_weights) {
    if (weight == 0.0) continue;
    const auto pos = description.find(keyword);
    if (pos == std::string::npos) continue;
    result.audit.entries.push_back(
        {"keyword:" + keyword, record.tmpl.description.substr(pos, keyword.size()), weight});
  }
  if (config.kev_bonus != 0.0 && kev_ids.contains(record.cve_id))
    result.audit.entries.push_back({"cisa_kev", record.cve_id + " listed in KEV catalog",
                                    config.kev_bonus});
  if (config.news_bonus != 0.0 && news_ids.contains(record.cve_id))
    result.audit.entries.push_back({"news_feed", record.cve_id + " mentioned in news feed",
                                    config.news_bonus});
  for (const auto& e : result.audit.entries) result.audit.total += e.weight;
  result.audit.selected = result.audit.total >= config.selection_threshold;
  result.audit.decided_at = decided_at;
  result.score = result.audit.total;
  return result;
}

bool ranks_before(const CveRecord& a, const CveRecord& b) {
  const double sa = a.priority_score.value_or(0.0);
  const double sb = b.priority_score.value_or(0.0);
  if (sa != sb) return sa > sb;
  const int ya = cve_year(a.cve_id);
  const int yb = cve_year(b.cve_id);
  if (ya != yb) return ya > yb;
  return a.cve_id < b.cve_id;
}

Ranking rank_and_select(std::vector<CveRecord> records, const ScoringConfig& config,
                        const CveIdSet& kev_ids, const CveIdSet& news_ids, Timestamp decided_at) {
  Ranking out;
  for (auto& r : records) {
    auto s = score_cve(r, kev_ids, news_ids, config, decided_at);
    r.priority_score = s.score;
    r.score_audit = std::move(s.audit);
  }
  std::stable_sort(records.begin(), records.end(), ranks_before);
  for (const auto& r : records)
    if (r.score_audit->selected) out.selected.push_back(r);
  out.scored = std::move(records);
  return out;
}

CveIdSet load_kev_catalog(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FeedFormatError(std::string("KEV feed is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("vulnerabilities") || !j.at("vulnerabilities").is_array())
    throw FeedFormatError("KEV feed lacks a 'vulnerabilities' array");
  CveIdSet ids;
  for (const auto& v : j.at("vulnerabilities")) {
    if (!v.is_object() || !v.contains("cveID") || !v.at("cveID").is_string())
      throw FeedFormatError("KEV entry without a string 'cveID'");
    ids.insert(v.at("cveID").get<std::string>());
  }
  return ids;
}

CveIdSet load_news_ids(std::istream& in) {
  CveIdSet ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    ids.insert(line.substr(b, e - b + 1));
  }
  return ids;
}

CveIdSet extract_cve_ids_from_rss(std::string_view feed_xml) {
  static const std::regex title(R"(<title[^>]*>([\s\S]*?)</title>)", std::regex::icase);
  static const std::regex cve(R"(CVE-\d{4}-\d{4,})", std::regex::icase);
  CveIdSet ids;
  const std::string xml(feed_xml);
  for (auto it = std::sregex_iterator(xml.begin(), xml.end(), title); it != std::sregex_iterator();
       ++it) {
    const std::string text = (*it)[1].str();
    for (auto c = std::sregex_iterator(text.begin(), text.end(), cve); c != std::sregex_iterator();
         ++c) {
      std::string id = c->str();
      for (auto& ch : id) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      ids.insert(std::move(id));
    }
  }
  return ids;
}

}  // namespace rulegen
