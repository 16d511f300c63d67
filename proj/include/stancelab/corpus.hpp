#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace stancelab {

enum class Language { DE, FR, IT };

// Accepts "DE"/"FR"/"IT" case-insensitively; anything else raises
// ErrorKind::Parse naming the offending code.
Language parse_language(const std::string& code);
const char* language_code(Language lang);
// English name used inside prompt templates ("German"/"French"/"Italian").
const char* language_english_name(Language lang);

// One candidate-written stance text plus its conditioning metadata.
struct Comment {
    std::string id;
    std::string text;
    std::string issue_id;
    std::string party;  // trimmed, uppercased
    Language language = Language::DE;
    int election_year = 0;
    std::map<std::string, std::string> extra;  // canton, age, ... pass-through

    nlohmann::json to_json() const;
    static Comment from_json(const nlohmann::json& record, std::size_t record_no);
};

struct Issue {
    std::string issue_id;
    std::string question_text;
    std::set<int> election_years;
};

enum class CorpusFormat { Jsonl, Csv };

struct IngestResult {
    std::vector<Comment> comments;
    std::size_t excluded_short = 0;  // records dropped by the 5-token filter
};

// Reads a comment corpus from JSONL (one object per line) or CSV (header row
// required). Comments shorter than five whitespace tokens are dropped and
// counted; party labels are trimmed and uppercased.
IngestResult ingest_comments(const std::string& path, CorpusFormat format);

void save_comments_jsonl(const std::string& path, const std::vector<Comment>& comments);

struct SplitAssignment {
    std::set<std::string> train;
    std::set<std::string> dev;
    std::set<std::string> test;
    std::uint64_t seed = 0;

    // "train"/"dev"/"test"; unknown id raises ErrorKind::Domain.
    const char* part_of(const std::string& issue_id) const;
    nlohmann::json to_json() const;
    static SplitAssignment from_json(const nlohmann::json& j);
};

// Dev and test each receive max(1, floor(frac * |eligible|)) issues, drawn
// without replacement from the issues that appear only in the newest election
// year; everything else goes to train. Deterministic for a fixed seed and
// invariant under comment reordering.
SplitAssignment split_by_issue(const std::vector<Comment>& comments, double dev_frac,
                               double test_frac, std::uint64_t seed);

struct SplitCounts {
    std::size_t comments = 0;
    std::size_t issues = 0;
    std::map<Language, std::size_t> by_language;
    std::map<std::string, std::size_t> by_party;
};

struct StatsReport {
    std::size_t total_comments = 0;
    std::size_t total_issues = 0;
    std::map<std::string, SplitCounts> splits;        // keyed train/dev/test
    std::map<std::string, std::size_t> party_totals;  // across all splits

    nlohmann::json to_json() const;
    // Fixed-width table with per-split language shares in percent.
    std::string to_table() const;
};

// Exact counts per split x language x party. Every comment's issue_id must
// appear in the split, otherwise ErrorKind::Domain.
StatsReport corpus_stats(const std::vector<Comment>& comments,
                         const SplitAssignment& split);

// Convenience used by stats reporting when no split file is given: every
// issue assigned to "train".
SplitAssignment trivial_split(const std::vector<Comment>& comments);

std::vector<Comment> filter_by_split(const std::vector<Comment>& comments,
                                     const SplitAssignment& split,
                                     const std::string& part);

std::vector<Issue> read_issues_jsonl(const std::string& path);

}  // namespace stancelab
