#include "rulegen/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "rulegen/calibration.hpp"
#include "rulegen/config.hpp"
#include "rulegen/engine.hpp"
#include "rulegen/errors.hpp"
#include "rulegen/judge.hpp"
#include "rulegen/mock_backend.hpp"
#include "rulegen/nuclei.hpp"
#include "rulegen/pipeline.hpp"
#include "rulegen/provider_backend.hpp"
#include "rulegen/selector.hpp"
#include "rulegen/store.hpp"

namespace fs = std::filesystem;

namespace rulegen {

namespace {

class UsageError : public Error {
  using Error::Error;
};

struct GlobalOptions {
  std::string store = "store";
  std::string config;
  std::string backend = "mock";
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

AppConfig resolve_config(const GlobalOptions& g) {
  AppConfig c = g.config.empty() ? AppConfig{} : load_app_config(g.config);
  if (g.seed) {
    c.mock.seed = *g.seed;
    c.generation.rng_seed = *g.seed;
  }
  return c;
}

std::shared_ptr<Backend> make_backend(const GlobalOptions& g, const AppConfig& c) {
  if (g.backend == "mock") return std::make_shared<MockBackend>(c.mock);
  if (g.backend == "provider") return std::make_shared<ProviderBackend>(c.provider);
  throw UsageError("unknown backend '" + g.backend + "' (expected mock or provider)");
}

// ---------------------------------------------------------------- ingest

int cmd_ingest(const GlobalOptions& g, const std::string& dir, std::ostream& out,
               std::ostream& err) {
  if (!fs::is_directory(dir)) {
    err << "error: " << dir << " is not a directory\n";
    return kExitValidation;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".yaml" || ext == ".yml")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  Store store(g.store);
  auto lock = store.lock();
  std::size_t inserted = 0, updated = 0, skipped = 0;
  const auto now = std::chrono::time_point_cast<std::chrono::microseconds>(
      std::chrono::system_clock::now());
  for (const auto& f : files) {
    try {
      const std::string text = read_file(f);
      auto record = make_record(parse_template(text), now);
      (store.put_record(record, text) == UpsertResult::kInserted ? inserted : updated)++;
    } catch (const Error& e) {
      ++skipped;
      err << "skipped " << f.string() << ": " << e.what() << "\n";
    }
  }
  out << "ingested " << inserted << " new, " << updated << " updated, " << skipped
      << " skipped\n";
  return kExitOk;
}

// ---------------------------------------------------------------- select

int cmd_select(const GlobalOptions& g, const std::string& kev, const std::string& news,
               std::optional<double> threshold, std::ostream& out) {
  if (g.config.empty()) throw UsageError("select requires --config");
  AppConfig cfg = resolve_config(g);
  if (threshold) {
    cfg.scoring.selection_threshold = *threshold;
    cfg.scoring.validate();
  }
  CveIdSet kev_ids, news_ids;
  if (!kev.empty()) {
    std::ifstream in(kev);
    if (!in) throw UsageError("cannot read " + kev);
    kev_ids = load_kev_catalog(in);
  }
  if (!news.empty()) {
    const std::string text = read_file(news);
    if (text.find('<') != std::string::npos) {
      news_ids = extract_cve_ids_from_rss(text);
    } else {
      std::istringstream in(text);
      news_ids = load_news_ids(in);
    }
  }

  Store store(g.store);
  auto lock = store.lock();
  std::vector<CveRecord> pool;
  for (auto& r : store.records())
    if (!store.has_approved_rule(r.cve_id)) pool.push_back(std::move(r));
  const auto now = std::chrono::time_point_cast<std::chrono::microseconds>(
      std::chrono::system_clock::now());
  const auto ranking = rank_and_select(std::move(pool), cfg.scoring, kev_ids, news_ids, now);
  for (const auto& r : ranking.scored) store.put_selection_audit(r.cve_id, *r.score_audit);

  std::vector<CveRecord> ordered = ranking.scored;
  std::stable_sort(ordered.begin(), ordered.end(), ranks_before);
  char line[160];
  std::snprintf(line, sizeof line, "%-5s %-18s %8s  %s\n", "rank", "cve", "score", "selected");
  out << line;
  int rank = 0;
  for (const auto& r : ordered) {
    std::snprintf(line, sizeof line, "%-5d %-18s %8.1f  %s\n", ++rank, r.cve_id.c_str(),
                  *r.priority_score, r.score_audit->selected ? "yes" : "no");
    out << line;
  }
  out << ranking.selected.size() << " of " << ranking.scored.size() << " selected (threshold "
      << fixed(cfg.scoring.selection_threshold, 1) << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------- generate

struct TrafficData {
  std::vector<HttpEvent> corpus;
  ReputationMap reputation;
};

int cmd_generate(const GlobalOptions& g, const std::vector<std::string>& ids, int top, bool all,
                 std::ostream& out, std::ostream& err) {
  const AppConfig cfg = resolve_config(g);
  Store store(g.store);
  auto lock = store.lock();

  std::vector<CveRecord> targets;
  if (!ids.empty()) {
    for (const auto& id : ids) {
      auto r = store.get_record(id);
      if (!r) throw UsageError("unknown CVE id " + id);
      targets.push_back(std::move(*r));
    }
  } else if (all) {
    targets = store.records();
  } else if (top > 0) {
    std::vector<CveRecord> selected;
    for (auto& r : store.records())
      if (r.score_audit && r.score_audit->selected && !store.has_approved_rule(r.cve_id))
        selected.push_back(std::move(r));
    if (selected.empty()) throw UsageError("no selected CVEs; run `select` first");
    std::stable_sort(selected.begin(), selected.end(), ranks_before);
    if (selected.size() > static_cast<std::size_t>(top)) selected.resize(static_cast<std::size_t>(top));
    targets = std::move(selected);
  } else {
    throw UsageError("generate needs a CVE id, --top N or --all");
  }

  auto gateway = std::make_shared<Gateway>(make_backend(g, cfg), cfg.gateway);
  std::optional<JudgePrompts> prompts;
  if (cfg.judge_prompt_dir) prompts = load_judge_prompts(*cfg.judge_prompt_dir, cfg.judge_variant);
  ConfidenceJudge judge(*gateway, cfg.judge_variant, prompts);

  std::optional<TrafficData> traffic;
  if (cfg.traffic_stage && cfg.traffic_corpus && cfg.reputation) {
    traffic.emplace();
    traffic->corpus = load_event_corpus_file(cfg.traffic_corpus->string()).events;
    std::ifstream rep(*cfg.reputation);
    if (!rep) throw ConfigError("cannot read reputation file " + cfg.reputation->string());
    traffic->reputation = load_reputation(rep);
  }

  PipelineOptions opts;
  opts.confidence_stage = cfg.confidence_stage;
  opts.traffic_stage = cfg.traffic_stage;
  opts.detailed_synthetic_feedback = cfg.detailed_synthetic_feedback;
  opts.thresholds = cfg.thresholds;
  opts.ip = cfg.ip_validation;
  opts.corpus_workers = 4;
  std::optional<TrafficSource> source;
  if (traffic) source = TrafficSource{traffic->corpus, &traffic->reputation};
  ValidationPipeline pipeline(*gateway, &judge, opts, source);

  const std::string run_id = store.next_run_id();
  out << "run " << run_id << "\n";
  bool all_found = true;
  for (const auto& record : targets) {
    gateway->begin_run();
    const auto human = store.human_feedback(record.cve_id);
    const auto outcome = generate_for_cve(record, cfg.generation, *gateway, pipeline, human);
    for (const auto& c : outcome.candidates) {
      const auto ref = store.put_candidate(run_id, c);
      if (c.status == CandidateStatus::kFailed && !c.attempts.empty())
        store.append_feedback(record.cve_id,
                              {now_rfc3339(), "systemic", ref.str(), c.attempts.back().feedback});
    }
    const auto path = store.put_run_manifest(run_id, record.cve_id,
                                             run_manifest(record, cfg.generation, outcome, human));

    std::map<std::string, int> counts;
    for (const auto& c : outcome.candidates) ++counts[std::string(to_string(c.status))];
    out << record.cve_id << ": " << counts["passed"] << " passed, " << counts["failed"]
        << " failed, " << counts["refused"] << " refused\n";
    for (const auto& c : outcome.candidates) {
      out << "  c" << c.candidate_index << " " << to_string(c.status) << " after "
          << c.attempt << (c.attempt == 1 ? " attempt" : " attempts") << " (temperature "
          << fixed(c.temperature, 3) << ")";
      if (c.validation && c.validation->confidence)
        out << " confidence " << fixed(c.validation->confidence->confidence, 3);
      out << "\n";
    }
    if (const auto* best = outcome.best()) {
      out << "  best: " << CandidateRef{record.cve_id, run_id, best->candidate_index}.str()
          << " (pending review)\n";
    } else {
      out << "  best: none\n";
      all_found = false;
    }
    out << "  manifest: " << path.string() << "\n";
  }
  (void)err;
  return all_found ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------- review

CandidateRef parse_ref(const std::string& text) {
  auto ref = CandidateRef::parse(text);
  if (!ref) throw UsageError("bad candidate reference '" + text + "' (expected CVE-ID/RUN-cN)");
  return *ref;
}

int cmd_review_list(const GlobalOptions& g, std::ostream& out) {
  Store store(g.store);
  const auto pending = store.pending_reviews();
  for (const auto& ref : pending) {
    const auto c = store.get_candidate(ref);
    out << ref.str();
    if (c && c->validation && c->validation->confidence)
      out << "  confidence " << fixed(c->validation->confidence->confidence, 3);
    out << "\n";
  }
  out << pending.size() << " pending\n";
  return kExitOk;
}

int cmd_review_show(const GlobalOptions& g, const std::string& ref_text, std::ostream& out) {
  Store store(g.store);
  const auto c = store.get_candidate(parse_ref(ref_text));
  if (!c) throw UsageError("no candidate " + ref_text);
  out << to_json(*c).dump(2) << "\n";
  return kExitOk;
}

int cmd_review_approve(const GlobalOptions& g, const std::string& ref_text,
                       const std::string& comment, std::ostream& out) {
  Store store(g.store);
  auto lock = store.lock();
  const auto path = store.approve(parse_ref(ref_text), comment);
  out << "approved " << ref_text << " -> " << path.string() << "\n";
  return kExitOk;
}

int cmd_review_reject(const GlobalOptions& g, const std::string& ref_text,
                      const std::string& comment, std::ostream& out) {
  if (comment.empty()) throw UsageError("reject requires -m <comment>");
  Store store(g.store);
  auto lock = store.lock();
  store.reject(parse_ref(ref_text), comment);
  out << "rejected " << ref_text << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- match / metrics / report

int cmd_match(const std::string& rule_file, const std::string& corpus_file, unsigned workers,
              std::ostream& out) {
  const auto rule = parse_rule(read_file(rule_file));
  const auto corpus = load_event_corpus_file(corpus_file);
  const auto stats = match_corpus(rule, corpus.events, workers);
  nlohmann::ordered_json j;
  j["events"] = corpus.events.size();
  j["matched"] = stats.matched;
  j["distinct_ips"] = stats.distinct_ips.size();
  j["skipped_lines"] = corpus.skipped;
  out << j.dump(2) << "\n";
  return kExitOk;
}

std::vector<ScoredOutcome> read_outcomes(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read " + file);
  return load_outcomes(in);
}

int cmd_metrics(const std::string& file, std::size_t bins, const std::string& out_dir,
                std::ostream& out) {
  const auto samples = read_outcomes(file);
  const auto metrics = metrics_json(samples, bins);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "metrics.json") << metrics.dump(2) << "\n";
    std::ofstream(fs::path(out_dir) / "reliability.csv")
        << reliability_csv(reliability_table(samples, bins));
  }
  out << metrics.dump(2) << "\n";
  return kExitOk;
}

int cmd_report_variants(const std::string& file, std::size_t bins, std::ostream& out) {
  const auto samples = read_outcomes(file);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [variant, group] : group_by_variant(samples))
    j[variant.empty() ? "unlabeled" : variant] = metrics_json(group, bins);
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_report_store(const GlobalOptions& g, std::ostream& out) {
  Store store(g.store);
  const auto records = store.records();
  nlohmann::ordered_json j;
  j["records"] = records.size();
  j["scored"] = std::count_if(records.begin(), records.end(),
                              [](const CveRecord& r) { return r.score_audit.has_value(); });
  j["selected"] = std::count_if(records.begin(), records.end(), [](const CveRecord& r) {
    return r.score_audit && r.score_audit->selected;
  });
  std::map<std::string, int> status, review;
  for (const auto& ref : store.candidates()) {
    const auto c = store.get_candidate(ref);
    if (!c) continue;
    ++status[std::string(to_string(c->status))];
    if (c->validation && c->validation->review)
      ++review[std::string(to_string(c->validation->review->decision))];
  }
  j["candidates"] = status;
  j["reviews"] = review;
  out << j.dump(2) << "\n";
  return kExitOk;
}

// Confidence and IP-validation verdict of every candidate that reached the
// traffic stage, as calibration input.
int cmd_report_outcomes(const GlobalOptions& g, const std::string& out_file, std::ostream& out) {
  Store store(g.store);
  std::string lines;
  std::size_t n = 0;
  for (const auto& ref : store.candidates()) {
    const auto c = store.get_candidate(ref);
    if (!c) continue;
    for (const auto& a : c->attempts) {
      if (!a.validation || !a.validation->confidence || !a.validation->traffic ||
          a.validation->traffic->skipped_reason)
        continue;
      nlohmann::ordered_json j;
      j["confidence"] = a.validation->confidence->confidence;
      j["correct"] = a.validation->traffic->passed;
      j["variant"] = std::string(to_string(a.validation->confidence->phrasing_variant));
      lines += j.dump() + "\n";
      ++n;
    }
  }
  if (out_file.empty()) {
    out << lines;
  } else {
    std::ofstream(out_file) << lines;
    out << n << " outcomes written to " << out_file << "\n";
  }
  return kExitOk;
}

void configure_logging(bool verbose, std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("rulegen", sink);
  logger->set_level(verbose ? spdlog::level::debug : spdlog::level::warn);
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detection-rule generation for web CVEs", "rulegen"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--store", g.store, "Store directory")->capture_default_str();
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--backend", g.backend, "Text-generation backend")
      ->check(CLI::IsMember({"mock", "provider"}))
      ->capture_default_str();
  app.add_option("--seed", g.seed, "Seed for the mock backend and temperature sampling");
  app.add_flag("-v,--verbose", g.verbose, "Log gateway calls to stderr");

  std::function<int()> action;

  auto* ingest = app.add_subcommand("ingest", "Parse Nuclei templates into the store");
  std::string template_dir;
  ingest->add_option("template_dir", template_dir)->required();
  ingest->callback([&] { action = [&] { return cmd_ingest(g, template_dir, out, err); }; });

  auto* select = app.add_subcommand("select", "Score and rank stored CVEs");
  std::string kev, news;
  std::optional<double> threshold;
  select->add_option("--kev", kev, "CISA KEV catalog JSON");
  select->add_option("--news", news, "News feed: one CVE id per line, or RSS");
  select->add_option("--threshold", threshold, "Override the selection threshold");
  select->callback([&] { action = [&] { return cmd_select(g, kev, news, threshold, out); }; });

  auto* generate = app.add_subcommand("generate", "Generate and validate rules");
  std::vector<std::string> ids;
  int top = 0;
  bool all = false;
  generate->add_option("cve_id", ids, "CVE ids to process");
  generate->add_option("--top", top, "Process the N highest-priority selected CVEs")
      ->check(CLI::PositiveNumber);
  generate->add_flag("--all", all, "Process every stored CVE in id order");
  generate->callback([&] { action = [&] { return cmd_generate(g, ids, top, all, out, err); }; });

  auto* review = app.add_subcommand("review", "Human review queue");
  review->require_subcommand(1);
  std::string ref_text, comment;
  auto* rlist = review->add_subcommand("list", "List candidates pending review");
  rlist->callback([&] { action = [&] { return cmd_review_list(g, out); }; });
  auto* rshow = review->add_subcommand("show", "Print a candidate");
  rshow->add_option("candidate", ref_text)->required();
  rshow->callback([&] { action = [&] { return cmd_review_show(g, ref_text, out); }; });
  auto* rapprove = review->add_subcommand("approve", "Approve a pending candidate");
  rapprove->add_option("candidate", ref_text)->required();
  rapprove->add_option("-m,--message", comment, "Reviewer comment");
  rapprove->callback([&] { action = [&] { return cmd_review_approve(g, ref_text, comment, out); }; });
  auto* rreject = review->add_subcommand("reject", "Reject a pending candidate");
  rreject->add_option("candidate", ref_text)->required();
  rreject->add_option("-m,--message", comment, "Reason, fed into later prompts")->required();
  rreject->callback([&] { action = [&] { return cmd_review_reject(g, ref_text, comment, out); }; });

  auto* match = app.add_subcommand("match", "Match a rule against an event corpus");
  std::string rule_file, corpus_file;
  unsigned workers = 1;
  match->add_option("rule_file", rule_file)->required();
  match->add_option("corpus", corpus_file)->required();
  match->add_option("--workers", workers)->check(CLI::PositiveNumber);
  match->callback([&] { action = [&] { return cmd_match(rule_file, corpus_file, workers, out); }; });

  auto* metrics = app.add_subcommand("metrics", "Calibration metrics for scored outcomes");
  std::string outcomes_file, out_dir;
  std::size_t bins = 10;
  metrics->add_option("outcomes_file", outcomes_file)->required();
  metrics->add_option("--bins", bins)->check(CLI::PositiveNumber)->capture_default_str();
  metrics->add_option("--out-dir", out_dir, "Also write metrics.json and reliability.csv here");
  metrics->callback([&] { action = [&] { return cmd_metrics(outcomes_file, bins, out_dir, out); }; });

  auto* report = app.add_subcommand("report", "Run statistics and variant comparisons");
  report->require_subcommand(1);
  auto* rvariants = report->add_subcommand("variants", "Metrics grouped by phrasing variant");
  rvariants->add_option("outcomes_file", outcomes_file)->required();
  rvariants->add_option("--bins", bins)->check(CLI::PositiveNumber);
  rvariants->callback([&] { action = [&] { return cmd_report_variants(outcomes_file, bins, out); }; });
  auto* rstore = report->add_subcommand("store", "Counts of records, candidates and reviews");
  rstore->callback([&] { action = [&] { return cmd_report_store(g, out); }; });
  auto* routcomes = report->add_subcommand("outcomes", "Export confidence/IP-validation pairs");
  std::string outcomes_out;
  routcomes->add_option("--out", outcomes_out, "Output JSONL file (default stdout)");
  routcomes->callback([&] { action = [&] { return cmd_report_outcomes(g, outcomes_out, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  configure_logging(g.verbose, err);
  try {
    return action ? action() : kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BackendUnavailable& e) {
    err << "backend unavailable: " << e.what() << "\n";
    return kExitBackend;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const BudgetExceeded& e) {
    err << "backend budget exhausted: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ReviewStateError& e) {
    err << "review: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace rulegen
