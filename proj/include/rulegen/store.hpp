#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulegen/engine.hpp"
#include "rulegen/nuclei.hpp"
#include "rulegen/pipeline.hpp"

namespace rulegen {

/// "<cve_id>/<run_id>-c<index>", the handle the review commands take.
struct CandidateRef {
  std::string cve_id;
  std::string run_id;
  int index = 0;

  std::string str() const;
  static std::optional<CandidateRef> parse(std::string_view text);
  friend bool operator==(const CandidateRef&, const CandidateRef&) = default;
};

struct FeedbackEntry {
  std::string timestamp;  // RFC 3339
  std::string kind;       // "human" or "systemic"
  std::string candidate;  // CandidateRef::str()
  std::string text;
};

enum class UpsertResult { kInserted, kUpdated };

/// Exclusive advisory lock on <root>/.lock, held for the object's lifetime.
class StoreLock {
 public:
  explicit StoreLock(const std::filesystem::path& root);
  ~StoreLock();
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  int fd_ = -1;
};

/// Directory-backed repository:
///   cves/<id>.json, cves/<id>.yaml      record and verbatim template
///   candidates/<cve>/<run>-c<i>.json    every candidate with its report
///   rules/<cve>__<run>-c<i>.json        approved rules
///   feedback/<cve>.jsonl                append-only feedback
///   audit/selection/<cve>.json          scoring audits
///   audit/runs/<run>/<cve>.json         run manifests
///   audit/review.jsonl                  review state transitions
class Store {
 public:
  /// Creates the layout when missing. Throws StoreError.
  explicit Store(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  StoreLock lock() const { return StoreLock(root_); }

  UpsertResult put_record(const CveRecord& record, std::string_view template_yaml);
  std::optional<CveRecord> get_record(std::string_view cve_id) const;
  std::vector<CveRecord> records() const;  // sorted by id

  /// Writes the audit file and folds the score into the stored record.
  void put_selection_audit(const std::string& cve_id, const AuditTrail& audit);
  std::optional<AuditTrail> get_selection_audit(std::string_view cve_id) const;

  std::string next_run_id() const;
  std::filesystem::path put_run_manifest(const std::string& run_id, const std::string& cve_id,
                                         const nlohmann::ordered_json& manifest);

  CandidateRef put_candidate(const std::string& run_id, const CandidateRule& candidate);
  std::optional<CandidateRule> get_candidate(const CandidateRef& ref) const;
  std::vector<CandidateRef> candidates(std::string_view cve_id = {}) const;
  std::vector<CandidateRef> pending_reviews() const;

  /// Throws ReviewStateError when the candidate is not pending review.
  std::filesystem::path approve(const CandidateRef& ref, const std::string& comment);
  void reject(const CandidateRef& ref, const std::string& comment);

  void append_feedback(const std::string& cve_id, const FeedbackEntry& entry);
  std::vector<FeedbackEntry> feedback(std::string_view cve_id) const;
  std::vector<std::string> human_feedback(std::string_view cve_id) const;

  bool has_approved_rule(std::string_view cve_id) const;
  std::filesystem::path rule_path(const CandidateRef& ref) const;

 private:
  std::filesystem::path candidate_path(const CandidateRef& ref) const;
  void log_review(const CandidateRef& ref, ReviewDecision to, const std::string& comment);

  std::filesystem::path root_;
};

std::string now_rfc3339();

}  // namespace rulegen
