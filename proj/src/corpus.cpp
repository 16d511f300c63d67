#include "stancelab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "stancelab/error.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/rng.hpp"
#include "stancelab/text.hpp"

namespace stancelab {

Language parse_language(const std::string& code) {
    std::string upper = utf8_uppercase(trim(code));
    if (upper == "DE") return Language::DE;
    if (upper == "FR") return Language::FR;
    if (upper == "IT") return Language::IT;
    raise(ErrorKind::Parse, "unknown language code: \"" + code + "\"");
}

const char* language_code(Language lang) {
    switch (lang) {
        case Language::DE: return "de";
        case Language::FR: return "fr";
        case Language::IT: return "it";
    }
    return "de";
}

const char* language_english_name(Language lang) {
    switch (lang) {
        case Language::DE: return "German";
        case Language::FR: return "French";
        case Language::IT: return "Italian";
    }
    return "German";
}

nlohmann::json Comment::to_json() const {
    nlohmann::json j{
        {"id", id},
        {"text", text},
        {"issue_id", issue_id},
        {"party", party},
        {"language", language_code(language)},
        {"election_year", election_year},
    };
    for (const auto& [key, value] : extra) j[key] = value;
    return j;
}

namespace {

std::string json_field_as_string(const nlohmann::json& value) {
    if (value.is_string()) return value.get<std::string>();
    return value.dump();
}

}  // namespace

Comment Comment::from_json(const nlohmann::json& record, std::size_t record_no) {
    const auto where = [record_no] {
        return " (record " + std::to_string(record_no) + ")";
    };
    if (!record.is_object()) {
        raise(ErrorKind::Parse, "record is not a JSON object" + where());
    }
    for (const char* field : {"text", "issue_id", "party", "language", "election_year"}) {
        if (!record.contains(field)) {
            raise(ErrorKind::Parse,
                  std::string("missing required field \"") + field + "\"" + where());
        }
    }
    Comment c;
    if (!record["text"].is_string() || !record["issue_id"].is_string() ||
        !record["party"].is_string()) {
        raise(ErrorKind::Parse, "text, issue_id and party must be strings" + where());
    }
    c.text = record["text"].get<std::string>();
    c.issue_id = record["issue_id"].get<std::string>();
    c.party = utf8_uppercase(trim(record["party"].get<std::string>()));
    if (c.party.empty()) raise(ErrorKind::Parse, "empty party label" + where());
    if (!record["language"].is_string()) {
        raise(ErrorKind::Parse, "language must be a string" + where());
    }
    c.language = parse_language(record["language"].get<std::string>());
    if (record["election_year"].is_number_integer()) {
        c.election_year = record["election_year"].get<int>();
    } else if (record["election_year"].is_string()) {
        try {
            c.election_year = std::stoi(record["election_year"].get<std::string>());
        } catch (const std::exception&) {
            raise(ErrorKind::Parse, "election_year is not an integer" + where());
        }
    } else {
        raise(ErrorKind::Parse, "election_year is not an integer" + where());
    }
    if (record.contains("id")) {
        c.id = json_field_as_string(record["id"]);
    } else {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "r%06zu", record_no);
        c.id = buf;
    }
    for (const auto& [key, value] : record.items()) {
        if (key == "id" || key == "text" || key == "issue_id" || key == "party" ||
            key == "language" || key == "election_year") {
            continue;
        }
        c.extra[key] = json_field_as_string(value);
    }
    return c;
}

namespace {

IngestResult filter_short(std::vector<Comment> parsed) {
    IngestResult result;
    for (auto& c : parsed) {
        if (whitespace_token_count(c.text) >= 5) {
            result.comments.push_back(std::move(c));
        } else {
            ++result.excluded_short;
        }
    }
    return result;
}

IngestResult ingest_jsonl(const std::string& path) {
    std::vector<Comment> parsed;
    std::size_t record_no = 0;
    for (const auto& record : read_jsonl(path)) {
        ++record_no;
        parsed.push_back(Comment::from_json(record, record_no));
    }
    return filter_short(std::move(parsed));
}

IngestResult ingest_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    std::map<std::string, std::size_t> columns;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        columns[trim(table.header[i])] = i;
    }
    for (const char* field : {"text", "issue_id", "party", "language", "election_year"}) {
        if (!columns.count(field)) {
            raise(ErrorKind::Parse,
                  path + ": CSV header is missing required column \"" +
                      std::string(field) + "\"");
        }
    }
    std::vector<Comment> parsed;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        nlohmann::json record;
        for (const auto& [name, idx] : columns) {
            record[name] = table.rows[r][idx];
        }
        parsed.push_back(Comment::from_json(record, r + 1));
    }
    return filter_short(std::move(parsed));
}

}  // namespace

IngestResult ingest_comments(const std::string& path, CorpusFormat format) {
    return format == CorpusFormat::Jsonl ? ingest_jsonl(path) : ingest_csv(path);
}

void save_comments_jsonl(const std::string& path, const std::vector<Comment>& comments) {
    std::vector<nlohmann::json> records;
    records.reserve(comments.size());
    for (const auto& c : comments) records.push_back(c.to_json());
    write_jsonl(path, records);
}

const char* SplitAssignment::part_of(const std::string& issue_id) const {
    if (train.count(issue_id)) return "train";
    if (dev.count(issue_id)) return "dev";
    if (test.count(issue_id)) return "test";
    raise(ErrorKind::Domain, "issue_id not covered by split: " + issue_id);
}

nlohmann::json SplitAssignment::to_json() const {
    return nlohmann::json{
        {"seed", seed},
        {"train", std::vector<std::string>(train.begin(), train.end())},
        {"dev", std::vector<std::string>(dev.begin(), dev.end())},
        {"test", std::vector<std::string>(test.begin(), test.end())},
    };
}

SplitAssignment SplitAssignment::from_json(const nlohmann::json& j) {
    SplitAssignment s;
    if (!j.is_object() || !j.contains("train") || !j.contains("dev") || !j.contains("test")) {
        raise(ErrorKind::Parse, "split JSON must contain train/dev/test arrays");
    }
    for (const auto& id : j["train"]) s.train.insert(id.get<std::string>());
    for (const auto& id : j["dev"]) s.dev.insert(id.get<std::string>());
    for (const auto& id : j["test"]) s.test.insert(id.get<std::string>());
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    return s;
}

SplitAssignment split_by_issue(const std::vector<Comment>& comments, double dev_frac,
                               double test_frac, std::uint64_t seed) {
    if (dev_frac < 0 || test_frac < 0 || dev_frac + test_frac >= 1.0) {
        raise(ErrorKind::InvalidArgument,
              "dev_frac + test_frac must lie in [0, 1)");
    }
    if (comments.empty()) raise(ErrorKind::InvalidArgument, "empty corpus");

    int newest_year = comments.front().election_year;
    for (const auto& c : comments) newest_year = std::max(newest_year, c.election_year);

    std::map<std::string, std::set<int>> years_by_issue;
    for (const auto& c : comments) years_by_issue[c.issue_id].insert(c.election_year);

    // Eligible: present in the newest year and in no earlier one.
    std::vector<std::string> eligible;
    for (const auto& [issue, years] : years_by_issue) {
        if (years.size() == 1 && *years.begin() == newest_year) eligible.push_back(issue);
    }
    if (eligible.empty()) raise(ErrorKind::Domain, "no eligible issues");

    const auto take = [&](double frac) {
        auto n = static_cast<std::size_t>(std::floor(frac * static_cast<double>(eligible.size())));
        return std::max<std::size_t>(n, 1);
    };
    const std::size_t n_dev = take(dev_frac);
    const std::size_t n_test = take(test_frac);
    if (n_dev + n_test > eligible.size()) {
        raise(ErrorKind::Domain,
              "not enough eligible issues: need " + std::to_string(n_dev + n_test) +
                  ", have " + std::to_string(eligible.size()));
    }

    std::sort(eligible.begin(), eligible.end());
    Rng rng(seed);
    rng.shuffle(eligible);

    SplitAssignment split;
    split.seed = seed;
    for (std::size_t i = 0; i < n_dev; ++i) split.dev.insert(eligible[i]);
    for (std::size_t i = 0; i < n_test; ++i) split.test.insert(eligible[n_dev + i]);
    for (const auto& [issue, years] : years_by_issue) {
        if (!split.dev.count(issue) && !split.test.count(issue)) split.train.insert(issue);
    }
    return split;
}

SplitAssignment trivial_split(const std::vector<Comment>& comments) {
    SplitAssignment split;
    for (const auto& c : comments) split.train.insert(c.issue_id);
    return split;
}

StatsReport corpus_stats(const std::vector<Comment>& comments,
                         const SplitAssignment& split) {
    StatsReport report;
    report.splits["train"];
    report.splits["dev"];
    report.splits["test"];
    std::map<std::string, std::set<std::string>> issues_seen;
    for (const auto& c : comments) {
        const char* part = split.part_of(c.issue_id);
        auto& counts = report.splits[part];
        ++counts.comments;
        ++counts.by_language[c.language];
        ++counts.by_party[c.party];
        issues_seen[part].insert(c.issue_id);
        ++report.party_totals[c.party];
        ++report.total_comments;
    }
    for (auto& [part, counts] : report.splits) counts.issues = issues_seen[part].size();
    std::set<std::string> all_issues;
    for (const auto& [part, ids] : issues_seen) all_issues.insert(ids.begin(), ids.end());
    report.total_issues = all_issues.size();
    return report;
}

nlohmann::json StatsReport::to_json() const {
    nlohmann::json splits_json = nlohmann::json::object();
    for (const auto& [part, counts] : splits) {
        nlohmann::json langs = nlohmann::json::object();
        nlohmann::json shares = nlohmann::json::object();
        for (const auto& [lang, n] : counts.by_language) {
            langs[language_code(lang)] = n;
            shares[language_code(lang)] =
                counts.comments ? static_cast<double>(n) / static_cast<double>(counts.comments)
                                : 0.0;
        }
        nlohmann::json parties = nlohmann::json::object();
        for (const auto& [party, n] : counts.by_party) parties[party] = n;
        splits_json[part] = {
            {"comments", counts.comments},
            {"issues", counts.issues},
            {"by_language", langs},
            {"language_share", shares},
            {"by_party", parties},
        };
    }
    nlohmann::json party_json = nlohmann::json::object();
    for (const auto& [party, n] : party_totals) party_json[party] = n;
    return nlohmann::json{
        {"total_comments", total_comments},
        {"total_issues", total_issues},
        {"splits", splits_json},
        {"party_totals", party_json},
    };
}

std::string StatsReport::to_table() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-8s %10s %8s %9s %9s %9s\n", "split",
                  "comments", "issues", "DE (%)", "FR (%)", "IT (%)");
    out << line;
    const auto share = [](const SplitCounts& c, Language lang) {
        if (c.comments == 0) return 0.0;
        auto it = c.by_language.find(lang);
        std::size_t n = it == c.by_language.end() ? 0 : it->second;
        return 100.0 * static_cast<double>(n) / static_cast<double>(c.comments);
    };
    for (const char* part : {"train", "dev", "test"}) {
        auto it = splits.find(part);
        if (it == splits.end()) continue;
        const auto& c = it->second;
        std::snprintf(line, sizeof(line), "%-8s %10zu %8zu %9.1f %9.1f %9.1f\n", part,
                      c.comments, c.issues, share(c, Language::DE), share(c, Language::FR),
                      share(c, Language::IT));
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-8s %10zu %8zu\n", "total", total_comments,
                  total_issues);
    out << line;
    return out.str();
}

std::vector<Comment> filter_by_split(const std::vector<Comment>& comments,
                                     const SplitAssignment& split,
                                     const std::string& part) {
    const std::set<std::string>* wanted = nullptr;
    if (part == "train") wanted = &split.train;
    else if (part == "dev") wanted = &split.dev;
    else if (part == "test") wanted = &split.test;
    else raise(ErrorKind::InvalidArgument, "unknown split part: " + part);
    std::vector<Comment> out;
    for (const auto& c : comments) {
        if (wanted->count(c.issue_id)) out.push_back(c);
    }
    return out;
}

std::vector<Issue> read_issues_jsonl(const std::string& path) {
    std::vector<Issue> issues;
    std::size_t record_no = 0;
    for (const auto& record : read_jsonl(path)) {
        ++record_no;
        if (!record.contains("issue_id") || !record.contains("question_text")) {
            raise(ErrorKind::Parse, path + ": issue record " + std::to_string(record_no) +
                                        " needs issue_id and question_text");
        }
        Issue issue;
        issue.issue_id = record["issue_id"].get<std::string>();
        issue.question_text = record["question_text"].get<std::string>();
        if (issue.question_text.empty()) {
            raise(ErrorKind::Parse, path + ": empty question_text in record " +
                                        std::to_string(record_no));
        }
        if (record.contains("election_years")) {
            for (const auto& y : record["election_years"]) {
                issue.election_years.insert(y.get<int>());
            }
        }
        issues.push_back(std::move(issue));
    }
    return issues;
}

}  // namespace stancelab
