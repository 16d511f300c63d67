#include "stancelab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "stancelab/error.hpp"
#include "stancelab/io_util.hpp"
#include "stancelab/rng.hpp"
#include "stancelab/text.hpp"

namespace stancelab {

namespace {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string clip_for_message(std::string_view s) {
    if (s.size() <= 120) return std::string(s);
    return std::string(s.substr(0, 120)) + "...";
}

}  // namespace

// ---------------------------------------------------------------------------
// Generations
// ---------------------------------------------------------------------------

nlohmann::json GenerationRecord::to_json() const {
    return nlohmann::json{{"issue_id", issue_id},
                          {"party", party},
                          {"language", language_code(language)},
                          {"text", text},
                          {"model_tag", model_tag}};
}

GenerationRecord GenerationRecord::from_json(const nlohmann::json& j, std::size_t record_no) {
    const std::string where = "generation record " + std::to_string(record_no);
    if (!j.is_object()) raise(ErrorKind::Parse, where + ": not a JSON object");
    GenerationRecord r;
    try {
        r.issue_id = j.at("issue_id").get<std::string>();
        r.party = j.at("party").get<std::string>();
        r.language = parse_language(j.at("language").get<std::string>());
        r.text = j.at("text").get<std::string>();
        r.model_tag = j.at("model_tag").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, where + ": " + e.what());
    }
    if (r.text.empty()) raise(ErrorKind::Parse, where + ": empty text");
    return r;
}

std::vector<GenerationRecord> load_generations_jsonl(const std::string& path) {
    std::vector<GenerationRecord> out;
    std::size_t n = 0;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(GenerationRecord::from_json(j, ++n));
    }
    return out;
}

void save_generations_jsonl(const std::vector<GenerationRecord>& records,
                            const std::string& path) {
    std::vector<nlohmann::json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(r.to_json());
    write_jsonl(path, lines);
}

// ---------------------------------------------------------------------------
// Jaccard diversity
// ---------------------------------------------------------------------------

std::set<std::string> tokenize_for_jaccard(std::string_view text) {
    const std::string lowered = utf8_lowercase(text);
    std::string cleaned;
    cleaned.reserve(lowered.size());
    std::size_t pos = 0;
    while (pos < lowered.size()) {
        const char32_t cp = decode_utf8(lowered, pos);
        if (!is_punctuation(cp)) append_utf8(cleaned, cp);
    }
    std::set<std::string> out;
    for (auto& tok : split_whitespace(cleaned)) out.insert(std::move(tok));
    return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : a) inter += b.count(t);
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

nlohmann::json DiversityReport::to_json() const {
    nlohmann::json issues = nlohmann::json::object();
    for (const auto& [issue, value] : per_issue) issues[issue] = value;
    return nlohmann::json{{"model_tag", model_tag},
                          {"per_issue", issues},
                          {"overall_mean", overall_mean},
                          {"skipped_issues", skipped_issues}};
}

std::string DiversityReport::to_csv() const {
    CsvTable table;
    table.header = {"issue_id", "mean_pairwise_jaccard"};
    for (const auto& [issue, value] : per_issue) {
        table.rows.push_back({issue, fmt6(value)});
    }
    table.rows.push_back({"OVERALL", fmt6(overall_mean)});
    return format_csv(table);
}

DiversityReport diversity_report(const std::vector<GenerationRecord>& records) {
    if (records.empty()) {
        raise(ErrorKind::InvalidArgument, "diversity_report: no generation records");
    }
    DiversityReport report;
    report.model_tag = records.front().model_tag;
    for (const auto& r : records) {
        if (r.model_tag != report.model_tag) {
            raise(ErrorKind::InvalidArgument,
                  "diversity_report: mixed model tags (\"" + report.model_tag + "\" vs \"" +
                      r.model_tag + "\")");
        }
    }

    std::map<std::string, std::vector<std::size_t>> by_issue;
    for (std::size_t i = 0; i < records.size(); ++i) {
        by_issue[records[i].issue_id].push_back(i);
    }
    std::vector<std::set<std::string>> token_sets(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        token_sets[i] = tokenize_for_jaccard(records[i].text);
    }

    for (const auto& [issue, idx] : by_issue) {
        double sum = 0.0;
        int pairs = 0;
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                if (records[idx[a]].party == records[idx[b]].party) continue;
                sum += jaccard(token_sets[idx[a]], token_sets[idx[b]]);
                ++pairs;
            }
        }
        if (pairs == 0) {
            ++report.skipped_issues;
            continue;
        }
        report.per_issue[issue] = sum / pairs;
    }

    if (report.per_issue.empty()) {
        raise(ErrorKind::Domain,
              "diversity_report: no issue has generations from at least two parties");
    }
    double total = 0.0;
    for (const auto& [issue, value] : report.per_issue) total += value;
    report.overall_mean = total / static_cast<double>(report.per_issue.size());
    return report;
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

FeaturizerKind parse_featurizer(const std::string& name) {
    const std::string low = utf8_lowercase(name);
    if (low == "hashed_ngram" || low == "hashed-ngram") return FeaturizerKind::HASHED_NGRAM;
    if (low == "external_file" || low == "external-file") return FeaturizerKind::EXTERNAL_FILE;
    raise(ErrorKind::Parse, "unknown featurizer \"" + name +
                                "\" (expected hashed_ngram or external_file)");
}

std::string featurizer_name(FeaturizerKind kind) {
    return kind == FeaturizerKind::HASHED_NGRAM ? "hashed_ngram" : "external_file";
}

namespace {

std::vector<Eigen::VectorXd> embed_hashed_ngram(const std::vector<std::string>& texts) {
    const int d = kHashedNgramBuckets;
    std::vector<Eigen::VectorXd> tf(texts.size());
    Eigen::VectorXd df = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        tf[i] = Eigen::VectorXd::Zero(d);
        const std::string_view t = texts[i];
        for (std::size_t len = 3; len <= 5; ++len) {
            if (t.size() < len) break;
            for (std::size_t pos = 0; pos + len <= t.size(); ++pos) {
                const auto bucket =
                    static_cast<Eigen::Index>(fnv1a64(t.substr(pos, len)) % d);
                tf[i][bucket] += 1.0;
            }
        }
        for (Eigen::Index b = 0; b < d; ++b) {
            if (tf[i][b] > 0.0) df[b] += 1.0;
        }
    }
    const double n = static_cast<double>(texts.size());
    Eigen::VectorXd idf(d);
    for (Eigen::Index b = 0; b < d; ++b) {
        idf[b] = std::log((1.0 + n) / (1.0 + df[b])) + 1.0;
    }
    for (auto& v : tf) {
        v.array() *= idf.array();
        const double norm = v.norm();
        if (norm > 0.0) v /= norm;
    }
    return tf;
}

std::vector<Eigen::VectorXd> embed_external(const std::vector<std::string>& texts,
                                            const std::string& sidecar_path) {
    if (sidecar_path.empty()) {
        raise(ErrorKind::InvalidArgument,
              "embed: the external-file featurizer needs a sidecar path");
    }
    std::map<std::string, Eigen::VectorXd> by_id;
    std::size_t record_no = 0;
    Eigen::Index dim = -1;
    for (const auto& j : read_jsonl(sidecar_path)) {
        ++record_no;
        const std::string where =
            sidecar_path + ": record " + std::to_string(record_no);
        std::string id;
        std::vector<double> values;
        try {
            id = j.at("id").get<std::string>();
            values = j.at("vector").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorKind::Parse, where + ": " + e.what());
        }
        if (values.empty()) raise(ErrorKind::Parse, where + ": empty vector");
        if (dim < 0) dim = static_cast<Eigen::Index>(values.size());
        if (static_cast<Eigen::Index>(values.size()) != dim) {
            raise(ErrorKind::Parse, where + ": vector length " +
                                        std::to_string(values.size()) +
                                        " disagrees with earlier length " + std::to_string(dim));
        }
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(
            values.data(), static_cast<Eigen::Index>(values.size()));
        if (!by_id.emplace(std::move(id), std::move(v)).second) {
            raise(ErrorKind::Parse, where + ": duplicate id");
        }
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        auto it = by_id.find(t);
        if (it == by_id.end()) {
            raise(ErrorKind::Domain, "embed: sidecar " + sidecar_path +
                                         " has no vector for id \"" + clip_for_message(t) + "\"");
        }
        out.push_back(it->second);
    }
    return out;
}

}  // namespace

std::vector<Eigen::VectorXd> embed(const std::vector<std::string>& texts, FeaturizerKind kind,
                                   const std::string& sidecar_path) {
    if (kind == FeaturizerKind::HASHED_NGRAM) return embed_hashed_ngram(texts);
    return embed_external(texts, sidecar_path);
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace {

std::size_t count_distinct(const std::vector<Eigen::VectorXd>& vectors) {
    std::set<std::vector<double>> seen;
    for (const auto& v : vectors) {
        seen.emplace(v.data(), v.data() + v.size());
    }
    return seen.size();
}

}  // namespace

std::vector<int> kmeans(const std::vector<Eigen::VectorXd>& vectors, int k, std::uint64_t seed,
                        int max_iters) {
    if (vectors.empty()) raise(ErrorKind::InvalidArgument, "kmeans: no vectors");
    if (k < 2) raise(ErrorKind::InvalidArgument, "kmeans: k must be >= 2");
    if (max_iters < 1) raise(ErrorKind::InvalidArgument, "kmeans: max_iters must be >= 1");
    const Eigen::Index dim = vectors.front().size();
    for (const auto& v : vectors) {
        if (v.size() != dim) {
            raise(ErrorKind::InvalidArgument, "kmeans: vectors of mixed dimension");
        }
    }
    const std::size_t distinct = count_distinct(vectors);
    if (static_cast<std::size_t>(k) > distinct) {
        raise(ErrorKind::InvalidArgument, "kmeans: k (" + std::to_string(k) +
                                              ") exceeds the number of distinct vectors (" +
                                              std::to_string(distinct) + ")");
    }

    const std::size_t n = vectors.size();
    Rng rng(seed);
    std::vector<Eigen::VectorXd> centroids;
    centroids.reserve(static_cast<std::size_t>(k));
    centroids.push_back(vectors[rng.below(n)]);
    std::vector<double> dist2(n);
    for (std::size_t i = 0; i < n; ++i) {
        dist2[i] = (vectors[i] - centroids[0]).squaredNorm();
    }
    while (centroids.size() < static_cast<std::size_t>(k)) {
        double total = 0.0;
        for (double v : dist2) total += v;
        // total > 0 because k does not exceed the distinct-vector count
        const double r = rng.next_double() * total;
        double cum = 0.0;
        std::size_t pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            cum += dist2[i];
            if (cum > r && dist2[i] > 0.0) {
                pick = i;
                break;
            }
        }
        if (dist2[pick] == 0.0) {
            // floating-point edge: fall back to the last point with mass
            for (std::size_t i = n; i-- > 0;) {
                if (dist2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(vectors[pick]);
        for (std::size_t i = 0; i < n; ++i) {
            dist2[i] = std::min(dist2[i], (vectors[i] - centroids.back()).squaredNorm());
        }
    }

    std::vector<int> assignment(n, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (vectors[i] - centroids[0]).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (vectors[i] - centroids[static_cast<std::size_t>(c)]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assignment[i] != best) {
                assignment[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(k),
                                          Eigen::VectorXd::Zero(dim));
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[static_cast<std::size_t>(assignment[i])] += vectors[i];
            ++counts[static_cast<std::size_t>(assignment[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids[static_cast<std::size_t>(c)] =
                    sums[static_cast<std::size_t>(c)] / counts[static_cast<std::size_t>(c)];
            }
        }
    }
    return assignment;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> histogram_pair(
    const std::vector<int>& model_assignments, const std::vector<int>& ref_assignments, int k) {
    if (model_assignments.empty() || ref_assignments.empty()) {
        raise(ErrorKind::InvalidArgument, "histogram_pair: empty assignment list");
    }
    if (k < 1) raise(ErrorKind::InvalidArgument, "histogram_pair: k must be >= 1");
    auto build = [k](const std::vector<int>& a, const char* side) {
        Eigen::VectorXd h = Eigen::VectorXd::Zero(k);
        for (int c : a) {
            if (c < 0 || c >= k) {
                raise(ErrorKind::InvalidArgument, std::string("histogram_pair: ") + side +
                                                      " assignment " + std::to_string(c) +
                                                      " outside [0, " + std::to_string(k) + ")");
            }
            h[c] += 1.0;
        }
        return Eigen::VectorXd(h / static_cast<double>(a.size()));
    };
    return {build(model_assignments, "model"), build(ref_assignments, "reference")};
}

// ---------------------------------------------------------------------------
// MAUVE
// ---------------------------------------------------------------------------

namespace {

void check_histogram(const Eigen::VectorXd& h, const char* name) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        if (!(h[i] >= 0.0)) {
            raise(ErrorKind::InvalidArgument,
                  std::string("mauve_score: ") + name + " has a negative entry");
        }
        sum += h[i];
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        raise(ErrorKind::InvalidArgument,
              std::string("mauve_score: ") + name + " does not sum to 1");
    }
}

// KL(a ‖ r) over the support of a; callers guarantee r > 0 wherever a > 0.
double kl_divergence(const Eigen::VectorXd& a, const Eigen::VectorXd& r) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a[i] > 0.0) kl += a[i] * std::log(a[i] / r[i]);
    }
    return kl;
}

}  // namespace

MauveCurve mauve_score(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double c,
                       int grid_size) {
    if (p.size() != q.size()) {
        raise(ErrorKind::InvalidArgument, "mauve_score: histogram lengths differ (" +
                                              std::to_string(p.size()) + " vs " +
                                              std::to_string(q.size()) + ")");
    }
    if (p.size() == 0) raise(ErrorKind::InvalidArgument, "mauve_score: empty histograms");
    if (!(c > 0.0)) raise(ErrorKind::InvalidArgument, "mauve_score: c must be > 0");
    if (grid_size < 1) raise(ErrorKind::InvalidArgument, "mauve_score: grid_size must be >= 1");
    check_histogram(p, "P");
    check_histogram(q, "Q");

    MauveCurve curve;
    curve.points.reserve(static_cast<std::size_t>(grid_size) + 2);
    curve.points.push_back(DivergencePoint{0.0, 1.0, 1.0});
    for (int i = 1; i <= grid_size; ++i) {
        const double lambda = static_cast<double>(i) / static_cast<double>(grid_size + 1);
        const Eigen::VectorXd r = lambda * p + (1.0 - lambda) * q;
        curve.points.push_back(DivergencePoint{std::exp(-c * kl_divergence(q, r)),
                                               std::exp(-c * kl_divergence(p, r)), lambda});
    }
    curve.points.push_back(DivergencePoint{1.0, 0.0, 0.0});

    std::sort(curve.points.begin(), curve.points.end(),
              [](const DivergencePoint& a, const DivergencePoint& b) {
                  if (a.x != b.x) return a.x < b.x;
                  return a.y > b.y;
              });

    double area = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        area += 0.5 * (curve.points[i].y + curve.points[i - 1].y) *
                (curve.points[i].x - curve.points[i - 1].x);
    }
    curve.score = std::clamp(area, 0.0, 1.0);
    return curve;
}

nlohmann::json MauveReport::to_json() const {
    return nlohmann::json{{"runs", runs},
                          {"mean", mean},
                          {"ci95_halfwidth", ci95_halfwidth},
                          {"c", c},
                          {"k", k},
                          {"grid_size", grid_size},
                          {"seed", seed}};
}

std::string MauveReport::to_csv() const {
    CsvTable table;
    table.header = {"statistic", "value"};
    for (std::size_t i = 0; i < runs.size(); ++i) {
        table.rows.push_back({"run_" + std::to_string(i + 1), fmt6(runs[i])});
    }
    table.rows.push_back({"mean", fmt6(mean)});
    table.rows.push_back({"ci95_halfwidth", fmt6(ci95_halfwidth)});
    return format_csv(table);
}

MauveReport mauve_report(const std::vector<std::string>& model_texts,
                         const std::vector<std::string>& ref_texts, FeaturizerKind featurizer,
                         int runs, std::uint64_t seed, const std::string& sidecar_path, double c,
                         int grid_size) {
    if (model_texts.empty()) raise(ErrorKind::InvalidArgument, "mauve_report: no model texts");
    if (ref_texts.size() < 2) {
        raise(ErrorKind::InvalidArgument, "mauve_report: fewer than 2 reference texts");
    }
    if (runs < 1) raise(ErrorKind::InvalidArgument, "mauve_report: runs must be >= 1");

    const std::size_t m = std::min(ref_texts.size(), model_texts.size());
    const std::size_t n_union = model_texts.size() + m;
    MauveReport report;
    report.c = c;
    report.grid_size = grid_size;
    report.seed = seed;
    report.k = std::max(2, std::min(50, static_cast<int>(n_union / 5)));

    for (int run = 0; run < runs; ++run) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(run)));

        // Partial Fisher-Yates: a fresh reference subsample per run.
        std::vector<std::size_t> idx(ref_texts.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + rng.below(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }

        std::vector<std::string> pool = model_texts;
        for (std::size_t i = 0; i < m; ++i) pool.push_back(ref_texts[idx[i]]);
        const std::vector<Eigen::VectorXd> vectors = embed(pool, featurizer, sidecar_path);

        const std::size_t distinct = count_distinct(vectors);
        double score = 1.0;  // a single shared point means identical histograms
        if (distinct >= 2) {
            const int k_eff = std::min(report.k, static_cast<int>(distinct));
            const std::vector<int> assignment = kmeans(vectors, k_eff, rng.next_u64());
            std::vector<int> model_side(assignment.begin(),
                                        assignment.begin() +
                                            static_cast<std::ptrdiff_t>(model_texts.size()));
            std::vector<int> ref_side(assignment.begin() +
                                          static_cast<std::ptrdiff_t>(model_texts.size()),
                                      assignment.end());
            const auto [hp, hq] = histogram_pair(model_side, ref_side, k_eff);
            score = mauve_score(hp, hq, c, grid_size).score;
        }
        report.runs.push_back(score);
    }

    double total = 0.0;
    for (double r : report.runs) total += r;
    report.mean = total / static_cast<double>(report.runs.size());
    if (report.runs.size() > 1) {
        double ss = 0.0;
        for (double r : report.runs) ss += (r - report.mean) * (r - report.mean);
        const double sd = std::sqrt(ss / static_cast<double>(report.runs.size() - 1));
        report.ci95_halfwidth = 1.96 * sd / std::sqrt(static_cast<double>(report.runs.size()));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Cohen's kappa
// ---------------------------------------------------------------------------

double cohens_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.size() != b.size()) {
        raise(ErrorKind::InvalidArgument, "cohens_kappa: label lists of different length (" +
                                              std::to_string(a.size()) + " vs " +
                                              std::to_string(b.size()) + ")");
    }
    if (a.empty()) raise(ErrorKind::InvalidArgument, "cohens_kappa: empty label lists");

    const double n = static_cast<double>(a.size());
    std::size_t agree = 0;
    std::map<std::string, std::size_t> count_a, count_b;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) ++agree;
        ++count_a[a[i]];
        ++count_b[b[i]];
    }
    const double p_o = static_cast<double>(agree) / n;

    // p_e == 1 exactly when both annotators always use one identical label.
    if (count_a.size() == 1 && count_b.size() == 1 &&
        count_a.begin()->first == count_b.begin()->first) {
        return p_o == 1.0 ? 1.0 : 0.0;
    }
    double p_e = 0.0;
    for (const auto& [label, ca] : count_a) {
        auto it = count_b.find(label);
        if (it == count_b.end()) continue;
        p_e += (static_cast<double>(ca) / n) * (static_cast<double>(it->second) / n);
    }
    return (p_o - p_e) / (1.0 - p_e);
}

PairLabel parse_pair_label(const std::string& name) {
    const std::string up = utf8_uppercase(name);
    if (up == "A") return PairLabel::A;
    if (up == "B") return PairLabel::B;
    if (up == "BOTH") return PairLabel::BOTH;
    if (up == "NEITHER") return PairLabel::NEITHER;
    raise(ErrorKind::Parse, "unknown pair label \"" + name + "\"");
}

std::string pair_label_name(PairLabel label) {
    switch (label) {
        case PairLabel::A: return "A";
        case PairLabel::B: return "B";
        case PairLabel::BOTH: return "BOTH";
        case PairLabel::NEITHER: return "NEITHER";
    }
    raise(ErrorKind::Internal, "pair_label_name: bad enum value");
}

nlohmann::json AnnotationRecord::to_json() const {
    nlohmann::json j{{"item_id", item_id},
                     {"label_a", pair_label_name(label_a)},
                     {"label_b", pair_label_name(label_b)}};
    if (familiarity) j["familiarity"] = *familiarity;
    return j;
}

AnnotationRecord AnnotationRecord::from_json(const nlohmann::json& j, std::size_t record_no) {
    const std::string where = "annotation record " + std::to_string(record_no);
    if (!j.is_object()) raise(ErrorKind::Parse, where + ": not a JSON object");
    AnnotationRecord r;
    try {
        r.item_id = j.at("item_id").get<std::string>();
        r.label_a = parse_pair_label(j.at("label_a").get<std::string>());
        r.label_b = parse_pair_label(j.at("label_b").get<std::string>());
        if (j.contains("familiarity")) r.familiarity = j.at("familiarity").get<int>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, where + ": " + e.what());
    }
    if (r.familiarity && (*r.familiarity < 1 || *r.familiarity > 5)) {
        raise(ErrorKind::Parse, where + ": familiarity must lie in 1..5");
    }
    return r;
}

std::vector<AnnotationRecord> load_annotations_jsonl(const std::string& path) {
    std::vector<AnnotationRecord> out;
    std::size_t n = 0;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(AnnotationRecord::from_json(j, ++n));
    }
    return out;
}

nlohmann::json KappaReport::to_json() const {
    return nlohmann::json{{"kappa", kappa},
                          {"items_used", items_used},
                          {"items_discarded", items_discarded},
                          {"discard_ties", discard_ties}};
}

KappaReport kappa_from_annotations(const std::vector<AnnotationRecord>& records,
                                   bool discard_ties) {
    if (records.empty()) raise(ErrorKind::InvalidArgument, "kappa_from_annotations: no records");
    std::vector<std::string> a, b;
    KappaReport report;
    report.discard_ties = discard_ties;
    for (const auto& r : records) {
        const bool tie = r.label_a == PairLabel::BOTH || r.label_a == PairLabel::NEITHER ||
                         r.label_b == PairLabel::BOTH || r.label_b == PairLabel::NEITHER;
        if (discard_ties && tie) {
            ++report.items_discarded;
            continue;
        }
        a.push_back(pair_label_name(r.label_a));
        b.push_back(pair_label_name(r.label_b));
    }
    if (a.empty()) {
        raise(ErrorKind::Domain,
              "kappa_from_annotations: no items remain after discarding ties");
    }
    report.items_used = static_cast<int>(a.size());
    report.kappa = cohens_kappa(a, b);
    return report;
}

// ---------------------------------------------------------------------------
// Win rates
// ---------------------------------------------------------------------------

Winner parse_winner(const std::string& name) {
    const std::string up = utf8_uppercase(name);
    if (up == "X") return Winner::X;
    if (up == "Y") return Winner::Y;
    if (up == "TIE") return Winner::TIE;
    raise(ErrorKind::Parse, "unknown winner \"" + name + "\" (expected X, Y, or TIE)");
}

std::string winner_name(Winner w) {
    switch (w) {
        case Winner::X: return "X";
        case Winner::Y: return "Y";
        case Winner::TIE: return "TIE";
    }
    raise(ErrorKind::Internal, "winner_name: bad enum value");
}

TiePolicy parse_tie_policy(const std::string& name) {
    const std::string up = utf8_uppercase(name);
    if (up == "HALF") return TiePolicy::HALF;
    if (up == "DISCARD") return TiePolicy::DISCARD;
    raise(ErrorKind::Parse, "unknown tie policy \"" + name + "\" (expected HALF or DISCARD)");
}

std::string tie_policy_name(TiePolicy p) { return p == TiePolicy::HALF ? "HALF" : "DISCARD"; }

nlohmann::json Comparison::to_json() const {
    return nlohmann::json{
        {"model_x", model_x}, {"model_y", model_y}, {"winner", winner_name(winner)}};
}

Comparison Comparison::from_json(const nlohmann::json& j, std::size_t record_no) {
    const std::string where = "comparison record " + std::to_string(record_no);
    if (!j.is_object()) raise(ErrorKind::Parse, where + ": not a JSON object");
    Comparison c;
    try {
        c.model_x = j.at("model_x").get<std::string>();
        c.model_y = j.at("model_y").get<std::string>();
        c.winner = parse_winner(j.at("winner").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::Parse, where + ": " + e.what());
    }
    return c;
}

std::vector<Comparison> load_comparisons_jsonl(const std::string& path) {
    std::vector<Comparison> out;
    std::size_t n = 0;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(Comparison::from_json(j, ++n));
    }
    return out;
}

nlohmann::json WinRateReport::to_json() const {
    nlohmann::json entries_json = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json je{{"model", e.model}, {"wins", e.wins}, {"comparisons", e.comparisons}};
        if (e.rate) {
            je["rate"] = *e.rate;
        } else {
            je["rate"] = nullptr;
        }
        entries_json.push_back(std::move(je));
    }
    return nlohmann::json{{"policy", tie_policy_name(policy)}, {"entries", entries_json}};
}

std::string WinRateReport::to_csv() const {
    CsvTable table;
    table.header = {"model", "wins", "comparisons", "rate"};
    for (const auto& e : entries) {
        table.rows.push_back({e.model, fmt6(e.wins), std::to_string(e.comparisons),
                              e.rate ? fmt6(*e.rate) : std::string()});
    }
    return format_csv(table);
}

WinRateReport win_rates(const std::vector<Comparison>& comparisons, TiePolicy policy) {
    if (comparisons.empty()) raise(ErrorKind::InvalidArgument, "win_rates: no comparisons");
    struct Tally {
        double wins = 0.0;
        int comparisons = 0;
    };
    std::map<std::string, Tally> tallies;
    for (std::size_t i = 0; i < comparisons.size(); ++i) {
        const Comparison& c = comparisons[i];
        if (c.model_x == c.model_y) {
            raise(ErrorKind::InvalidArgument, "win_rates: comparison " + std::to_string(i + 1) +
                                                  " pits model \"" + c.model_x +
                                                  "\" against itself");
        }
        // Make sure both models appear in the report even if every one of
        // their comparisons is a discarded tie.
        tallies[c.model_x];
        tallies[c.model_y];
        if (c.winner == Winner::TIE) {
            if (policy == TiePolicy::DISCARD) continue;
            tallies[c.model_x].wins += 0.5;
            tallies[c.model_y].wins += 0.5;
        } else if (c.winner == Winner::X) {
            tallies[c.model_x].wins += 1.0;
        } else {
            tallies[c.model_y].wins += 1.0;
        }
        ++tallies[c.model_x].comparisons;
        ++tallies[c.model_y].comparisons;
    }
    WinRateReport report;
    report.policy = policy;
    for (const auto& [model, tally] : tallies) {
        WinRateEntry e;
        e.model = model;
        e.wins = tally.wins;
        e.comparisons = tally.comparisons;
        if (tally.comparisons > 0) e.rate = tally.wins / tally.comparisons;
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace stancelab
