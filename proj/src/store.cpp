#include "rulegen/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <cstdio>
#include <cstdlib>
#include <tuple>

#include "rulegen/errors.hpp"

namespace fs = std::filesystem;

namespace rulegen {

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw StoreError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so readers never observe a partial file.
void write_text(const fs::path& p, std::string_view text) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw StoreError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw StoreError("cannot replace " + p.string() + ": " + ec.message());
}

void append_line(const fs::path& p, const std::string& line) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::app);
  if (!out) throw StoreError("cannot append to " + p.string());
  out << line << '\n';
}

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(p.string() + " is not valid JSON: " + e.what());
  }
}

void check_id(std::string_view id) {
  if (id.empty() || id.find('/') != std::string_view::npos || id.find("..") != std::string_view::npos)
    throw StoreError("invalid identifier '" + std::string(id) + "'");
}

}  // namespace

std::string now_rfc3339() {
  return format_rfc3339(std::chrono::time_point_cast<std::chrono::microseconds>(
      std::chrono::system_clock::now()));
}

std::string CandidateRef::str() const {
  return cve_id + "/" + run_id + "-c" + std::to_string(index);
}

std::optional<CandidateRef> CandidateRef::parse(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return std::nullopt;
  const auto tail = text.substr(slash + 1);
  const auto dash = tail.rfind("-c");
  if (dash == std::string_view::npos || dash == 0 || dash + 2 >= tail.size()) return std::nullopt;
  CandidateRef r;
  r.cve_id = std::string(text.substr(0, slash));
  r.run_id = std::string(tail.substr(0, dash));
  int n = 0;
  for (char c : tail.substr(dash + 2)) {
    if (c < '0' || c > '9') return std::nullopt;
    n = n * 10 + (c - '0');
  }
  r.index = n;
  if (r.cve_id.empty() || r.run_id.find('/') != std::string::npos) return std::nullopt;
  return r;
}

StoreLock::StoreLock(const fs::path& root) {
  const auto p = root / ".lock";
  fd_ = ::open(p.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw StoreError("cannot open lock file " + p.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX) != 0) {
    const int err = errno;
    ::close(fd_);
    throw StoreError("cannot lock " + p.string() + ": " + std::strerror(err));
  }
}

StoreLock::~StoreLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

Store::Store(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  for (const char* sub : {"cves", "candidates", "rules", "feedback", "audit/selection", "audit/runs"}) {
    fs::create_directories(root_ / sub, ec);
    if (ec) throw StoreError("cannot create " + (root_ / sub).string() + ": " + ec.message());
  }
}

UpsertResult Store::put_record(const CveRecord& record, std::string_view template_yaml) {
  check_id(record.cve_id);
  const auto json_path = root_ / "cves" / (record.cve_id + ".json");
  const bool existed = fs::exists(json_path);
  CveRecord merged = record;
  if (existed) {
    // Re-ingest refreshes the template but keeps the selection state.
    const auto old = record_from_json(read_json(json_path));
    merged.priority_score = old.priority_score;
    merged.score_audit = old.score_audit;
  }
  write_text(root_ / "cves" / (record.cve_id + ".yaml"), template_yaml);
  write_text(json_path, to_json(merged).dump(2) + "\n");
  return existed ? UpsertResult::kUpdated : UpsertResult::kInserted;
}

std::optional<CveRecord> Store::get_record(std::string_view cve_id) const {
  check_id(cve_id);
  const auto p = root_ / "cves" / (std::string(cve_id) + ".json");
  if (!fs::exists(p)) return std::nullopt;
  return record_from_json(read_json(p));
}

std::vector<CveRecord> Store::records() const {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root_ / "cves"))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<CveRecord> out;
  for (const auto& f : files) out.push_back(record_from_json(read_json(f)));
  return out;
}

void Store::put_selection_audit(const std::string& cve_id, const AuditTrail& audit) {
  check_id(cve_id);
  write_text(root_ / "audit" / "selection" / (cve_id + ".json"), to_json(audit).dump(2) + "\n");
  if (auto rec = get_record(cve_id)) {
    rec->priority_score = audit.total;
    rec->score_audit = audit;
    write_text(root_ / "cves" / (cve_id + ".json"), to_json(*rec).dump(2) + "\n");
  }
}

std::optional<AuditTrail> Store::get_selection_audit(std::string_view cve_id) const {
  const auto p = root_ / "audit" / "selection" / (std::string(cve_id) + ".json");
  if (!fs::exists(p)) return std::nullopt;
  return audit_from_json(read_json(p));
}

std::string Store::next_run_id() const {
  int highest = 0;
  for (const auto& e : fs::directory_iterator(root_ / "audit" / "runs")) {
    const auto name = e.path().filename().string();
    if (name.size() > 1 && name[0] == 'r') highest = std::max(highest, std::atoi(name.c_str() + 1));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "r%04d", highest + 1);
  return buf;
}

fs::path Store::put_run_manifest(const std::string& run_id, const std::string& cve_id,
                                 const nlohmann::ordered_json& manifest) {
  check_id(run_id);
  check_id(cve_id);
  const auto p = root_ / "audit" / "runs" / run_id / (cve_id + ".json");
  write_text(p, manifest.dump(2) + "\n");
  return p;
}

fs::path Store::candidate_path(const CandidateRef& ref) const {
  check_id(ref.cve_id);
  check_id(ref.run_id);
  return root_ / "candidates" / ref.cve_id / (ref.run_id + "-c" + std::to_string(ref.index) + ".json");
}

CandidateRef Store::put_candidate(const std::string& run_id, const CandidateRule& candidate) {
  CandidateRef ref{candidate.cve_id, run_id, candidate.candidate_index};
  write_text(candidate_path(ref), to_json(candidate).dump(2) + "\n");
  return ref;
}

std::optional<CandidateRule> Store::get_candidate(const CandidateRef& ref) const {
  const auto p = candidate_path(ref);
  if (!fs::exists(p)) return std::nullopt;
  return candidate_from_json(read_json(p));
}

std::vector<CandidateRef> Store::candidates(std::string_view cve_id) const {
  std::vector<CandidateRef> out;
  const auto base = root_ / "candidates";
  for (const auto& dir : fs::directory_iterator(base)) {
    if (!dir.is_directory()) continue;
    const auto cve = dir.path().filename().string();
    if (!cve_id.empty() && cve != cve_id) continue;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (f.path().extension() != ".json") continue;
      if (auto ref = CandidateRef::parse(cve + "/" + f.path().stem().string())) out.push_back(*ref);
    }
  }
  std::sort(out.begin(), out.end(), [](const CandidateRef& a, const CandidateRef& b) {
    return std::tie(a.cve_id, a.run_id, a.index) < std::tie(b.cve_id, b.run_id, b.index);
  });
  return out;
}

std::vector<CandidateRef> Store::pending_reviews() const {
  std::vector<CandidateRef> out;
  for (const auto& ref : candidates()) {
    const auto c = get_candidate(ref);
    if (c && c->validation && c->validation->review &&
        c->validation->review->decision == ReviewDecision::kPending)
      out.push_back(ref);
  }
  return out;
}

fs::path Store::rule_path(const CandidateRef& ref) const {
  return root_ / "rules" / (ref.cve_id + "__" + ref.run_id + "-c" + std::to_string(ref.index) + ".json");
}

namespace {

std::string review_state(const CandidateRule& c) {
  if (c.validation && c.validation->review) return std::string(to_string(c.validation->review->decision));
  return "not queued for review (status " + std::string(to_string(c.status)) + ")";
}

}  // namespace

fs::path Store::approve(const CandidateRef& ref, const std::string& comment) {
  auto c = get_candidate(ref);
  if (!c) throw StoreError("no candidate " + ref.str());
  if (!c->validation || !c->validation->review ||
      c->validation->review->decision != ReviewDecision::kPending || !c->rule)
    throw ReviewStateError("candidate " + ref.str() + " is " + review_state(*c));
  c->validation->review = ReviewOutcome{ReviewDecision::kApproved, comment};
  const auto rp = rule_path(ref);
  write_text(rp, serialize_rule(*c->rule) + "\n");
  write_text(candidate_path(ref), to_json(*c).dump(2) + "\n");
  log_review(ref, ReviewDecision::kApproved, comment);
  return rp;
}

void Store::reject(const CandidateRef& ref, const std::string& comment) {
  if (comment.empty()) throw ReviewStateError("rejecting a candidate requires a comment");
  auto c = get_candidate(ref);
  if (!c) throw StoreError("no candidate " + ref.str());
  if (!c->validation || !c->validation->review ||
      c->validation->review->decision != ReviewDecision::kPending)
    throw ReviewStateError("candidate " + ref.str() + " is " + review_state(*c));
  c->validation->review = ReviewOutcome{ReviewDecision::kRejected, comment};
  write_text(candidate_path(ref), to_json(*c).dump(2) + "\n");
  append_feedback(ref.cve_id, {now_rfc3339(), "human", ref.str(), comment});
  log_review(ref, ReviewDecision::kRejected, comment);
}

void Store::log_review(const CandidateRef& ref, ReviewDecision to, const std::string& comment) {
  nlohmann::ordered_json j;
  j["timestamp"] = now_rfc3339();
  j["candidate"] = ref.str();
  j["from"] = "pending";
  j["to"] = std::string(to_string(to));
  j["comment"] = comment;
  append_line(root_ / "audit" / "review.jsonl", j.dump());
}

void Store::append_feedback(const std::string& cve_id, const FeedbackEntry& entry) {
  check_id(cve_id);
  nlohmann::ordered_json j;
  j["timestamp"] = entry.timestamp;
  j["kind"] = entry.kind;
  j["candidate"] = entry.candidate;
  j["text"] = entry.text;
  append_line(root_ / "feedback" / (cve_id + ".jsonl"), j.dump());
}

std::vector<FeedbackEntry> Store::feedback(std::string_view cve_id) const {
  check_id(cve_id);
  std::vector<FeedbackEntry> out;
  const auto p = root_ / "feedback" / (std::string(cve_id) + ".jsonl");
  if (!fs::exists(p)) return out;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("timestamp").get<std::string>(), j.at("kind").get<std::string>(),
                     j.at("candidate").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw StoreError(p.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> Store::human_feedback(std::string_view cve_id) const {
  std::vector<std::string> out;
  for (const auto& f : feedback(cve_id))
    if (f.kind == "human") out.push_back(f.text);
  return out;
}

bool Store::has_approved_rule(std::string_view cve_id) const {
  const std::string prefix = std::string(cve_id) + "__";
  for (const auto& e : fs::directory_iterator(root_ / "rules"))
    if (e.path().filename().string().starts_with(prefix)) return true;
  return false;
}

}  // namespace rulegen
