#include "chemtown/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "chemtown/corpus.hpp"
#include "chemtown/errors.hpp"
#include "chemtown/jsonl.hpp"
#include "chemtown/log.hpp"

namespace chemtown::eval {

bool is_dimension(std::string_view name) {
    return std::find(kDimensions.begin(), kDimensions.end(), name) != kDimensions.end();
}

namespace {

double scale(double feature) { return kMinScore + (kMaxScore - kMinScore) * feature; }

double weighted_overall(const std::map<std::string, double>& dims,
                        const std::map<std::string, double>& weights) {
    double total = 0.0;
    double weight_sum = 0.0;
    for (const auto& [name, value] : dims) {
        auto it = weights.find(name);
        double w = it == weights.end() ? 1.0 : it->second;
        total += w * value;
        weight_sum += w;
    }
    if (weight_sum <= 0.0) throw ConfigError("dimension weights sum to zero");
    return total / weight_sum;
}

std::string fmt_double(double v) { return nlohmann::json(v).dump(); }

std::string pair_label(const std::pair<std::string, std::string>& pair) {
    return pair.first + "-" + pair.second;
}

} // namespace

void RubricConfig::validate() const {
    for (const auto& [name, weight] : weights) {
        if (!is_dimension(name)) throw ConfigError("unknown dimension in weights: " + name);
        if (weight < 0.0) throw ConfigError("dimension weight must be non-negative: " + name);
    }
    if (!weights.empty()) {
        double sum = 0.0;
        for (std::string_view name : kDimensions) {
            auto it = weights.find(std::string(name));
            sum += it == weights.end() ? 1.0 : it->second;
        }
        if (sum <= 0.0) throw ConfigError("dimension weights sum to zero");
    }
}

RubricScorer::RubricScorer(RubricConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

ScoreCard RubricScorer::score(const townsim::Transcript& t) const {
    if (t.turns.empty()) throw InputError("transcript " + t.id + " has no turns");

    std::vector<const agents::DialogueTurn*> expert_turns;
    for (const agents::DialogueTurn& turn : t.turns) {
        if (!turn.mediated) expert_turns.push_back(&turn);
    }
    if (expert_turns.empty()) throw InputError("transcript " + t.id + " has no expert turns");
    const double n = static_cast<double>(expert_turns.size());

    std::size_t total_citations = 0;
    for (const auto* turn : expert_turns) total_citations += turn->citations.size();
    const double citation_density = std::min(1.0, static_cast<double>(total_citations) / n);

    double response_speed = 0.0;
    for (std::size_t i = 0; i < expert_turns.size(); ++i) {
        if (!expert_turns[i]->citations.empty()) {
            response_speed = 1.0 / static_cast<double>(i + 1);
            break;
        }
    }

    // Echo detection: an expert turn is eligible when some earlier turn has a
    // different speaker; it scores a hit when a term of the speaker's lexicon
    // occurs both in the nearest such turn and in the turn itself.
    std::size_t eligible = 0;
    std::size_t hits = 0;
    std::set<std::string> echoed;
    for (const auto* turn : expert_turns) {
        auto pos = std::find_if(t.turns.begin(), t.turns.end(),
                                [&](const agents::DialogueTurn& x) { return &x == turn; });
        const agents::DialogueTurn* prev_other = nullptr;
        for (auto it = t.turns.begin(); it != pos; ++it) {
            if (it->speaker != turn->speaker) prev_other = &*it;
        }
        if (!prev_other) continue;
        ++eligible;
        auto lex = cfg_.lexicons.find(turn->speaker);
        if (lex == cfg_.lexicons.end()) continue;
        const std::vector<std::string> own = corpus::lowercase_tokens(turn->text);
        const std::vector<std::string> other = corpus::lowercase_tokens(prev_other->text);
        bool hit = false;
        for (const std::string& term : lex->second) {
            if (corpus::count_term(own, term) > 0 && corpus::count_term(other, term) > 0) {
                hit = true;
                echoed.insert(term);
            }
        }
        if (hit) ++hits;
    }
    const double echo_rate =
        eligible == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(eligible);
    const double cross_domain =
        eligible == 0 ? 0.0
                      : std::min(1.0, static_cast<double>(echoed.size()) /
                                          (2.0 * static_cast<double>(eligible)));

    std::size_t unmapped_total = 0;
    std::size_t resolved = 0;
    for (const ontology::MediationRecord& m : t.mediations) {
        unmapped_total += m.unmapped_terms.size();
        if (!m.translations.empty()) ++resolved;
    }
    const double fluency = 1.0 - std::min(1.0, static_cast<double>(unmapped_total) / n);
    const double coordination =
        t.mediations.empty()
            ? 0.5
            : static_cast<double>(resolved) / static_cast<double>(t.mediations.size());
    const double feasibility = 0.5 * citation_density + 0.5 * echo_rate;

    ScoreCard card;
    card.dims = {{"fluency", scale(fluency)},
                 {"response_speed", scale(response_speed)},
                 {"coordination", scale(coordination)},
                 {"scientific_correctness", scale(citation_density)},
                 {"feasibility", scale(feasibility)},
                 {"completeness", scale(citation_density)},
                 {"knowledge_transfer", scale(echo_rate)},
                 {"cross_domain_reasoning", scale(cross_domain)}};
    card.overall = weighted_overall(card.dims, cfg_.weights);
    return card;
}

std::map<std::string, std::vector<double>> per_agent_overalls(
    std::span<const townsim::Transcript> transcripts, const RubricScorer& scorer) {
    std::map<std::string, std::vector<double>> out;
    for (const townsim::Transcript& t : transcripts) {
        ScoreCard card = scorer.score(t);
        out[t.pair.first].push_back(card.overall);
        out[t.pair.second].push_back(card.overall);
    }
    return out;
}

std::map<std::string, double> per_agent_overall(std::span<const townsim::Transcript> transcripts,
                                                const RubricScorer& scorer) {
    std::map<std::string, double> means;
    for (const auto& [abbr, scores] : per_agent_overalls(transcripts, scorer)) {
        double sum = 0.0;
        for (double s : scores) sum += s;
        means[abbr] = sum / static_cast<double>(scores.size());
    }
    return means;
}

RunComparison compare_runs(const std::map<std::string, std::vector<double>>& baseline,
                           const std::map<std::string, std::vector<double>>& treated) {
    if (baseline.empty()) throw InputError("baseline run has no scores");
    if (treated.empty()) throw InputError("treated run has no scores");
    for (const auto& [abbr, scores] : baseline) {
        if (treated.find(abbr) == treated.end())
            throw CoverageError("agent " + abbr + " present only in the baseline run");
    }
    for (const auto& [abbr, scores] : treated) {
        if (baseline.find(abbr) == baseline.end())
            throw CoverageError("agent " + abbr + " present only in the treated run");
    }

    auto mean_of = [](const std::vector<double>& scores, const std::string& abbr,
                      const char* side) {
        if (scores.empty())
            throw InputError("agent " + abbr + " has no scores in the " + side + " run");
        double sum = 0.0;
        for (double s : scores) sum += s;
        return sum / static_cast<double>(scores.size());
    };

    RunComparison comparison;
    double pct_sum = 0.0;
    for (const auto& [abbr, scores] : baseline) {
        AgentDelta delta;
        delta.baseline_mean = mean_of(scores, abbr, "baseline");
        delta.treated_mean = mean_of(treated.at(abbr), abbr, "treated");
        delta.baseline_count = scores.size();
        delta.treated_count = treated.at(abbr).size();
        if (delta.baseline_mean == 0.0)
            throw InputError("agent " + abbr + " has a zero baseline mean");
        delta.improvement_pct =
            100.0 * (delta.treated_mean - delta.baseline_mean) / delta.baseline_mean;
        pct_sum += delta.improvement_pct;
        comparison.per_agent.emplace(abbr, delta);
    }
    comparison.mean_improvement_pct = pct_sum / static_cast<double>(comparison.per_agent.size());
    return comparison;
}

GapEffectReport gap_effect(std::span<const PairImprovement> improvements,
                           const DistanceFn& distance, ontology::BinThresholds thresholds) {
    thresholds.validate();
    if (!distance) throw InputError("gap_effect needs a distance function");

    GapEffectReport report;
    report.thresholds = thresholds;
    std::map<ontology::GapBin, std::vector<double>> values;
    for (ontology::GapBin bin :
         {ontology::GapBin::proximate, ontology::GapBin::medium, ontology::GapBin::distant}) {
        report.bins[bin] = {};
        values[bin] = {};
    }
    for (const PairImprovement& p : improvements) {
        if (!std::isfinite(p.improvement))
            throw InputError("improvement for " + p.a + "-" + p.b + " is not finite");
        ontology::GapBin bin = ontology::classify_pair(distance(p.a, p.b), thresholds);
        report.bins[bin].pairs.push_back(p.a + "-" + p.b);
        values[bin].push_back(p.improvement);
    }
    for (auto& [bin, stats] : report.bins) {
        const std::vector<double>& v = values[bin];
        if (v.empty()) continue;
        double sum = 0.0;
        for (double x : v) sum += x;
        stats.mean = sum / static_cast<double>(v.size());
    }

    const std::vector<double>& proximate = values[ontology::GapBin::proximate];
    const std::vector<double>& distant = values[ontology::GapBin::distant];
    if (proximate.empty() || distant.empty()) {
        report.notice = "fold ratio omitted: the proximate and distant bins must both be filled";
    } else {
        double max_proximate = *std::max_element(proximate.begin(), proximate.end());
        double max_distant = *std::max_element(distant.begin(), distant.end());
        if (max_proximate <= 0.0) {
            report.notice = "fold ratio omitted: best proximate improvement is not positive";
        } else {
            report.fold_ratio = max_distant / max_proximate;
        }
        double mean_proximate = report.bins[ontology::GapBin::proximate].mean;
        if (mean_proximate > 0.0)
            report.mean_ratio = report.bins[ontology::GapBin::distant].mean / mean_proximate;
    }
    return report;
}

namespace {

double round_to(double value, double step) { return std::round(value / step) * step; }

} // namespace

nlohmann::json gap_report_to_json(const GapEffectReport& report) {
    nlohmann::json bins;
    for (const auto& [bin, stats] : report.bins) {
        nlohmann::json entry{{"pairs", stats.pairs}};
        if (!stats.pairs.empty()) entry["mean"] = round_to(stats.mean, 0.01);
        bins[std::string(ontology::bin_name(bin))] = std::move(entry);
    }
    nlohmann::json j{{"bins", std::move(bins)},
                     {"thresholds",
                      {{"proximate_lt", report.thresholds.proximate_lt},
                       {"medium_lt", report.thresholds.medium_lt}}}};
    if (report.fold_ratio) j["fold_ratio"] = round_to(*report.fold_ratio, 0.1);
    if (report.mean_ratio) j["mean_ratio"] = round_to(*report.mean_ratio, 0.1);
    if (!report.notice.empty()) j["notice"] = report.notice;
    return j;
}

const std::string kJudgeRubricPrompt =
    "You are scoring a recorded dialogue between two domain experts.\n"
    "Rate the dialogue on a continuous 1-100 scale for each of these dimensions:\n"
    "fluency, response_speed, coordination, scientific_correctness, feasibility,\n"
    "completeness, knowledge_transfer, cross_domain_reasoning.\n"
    "Reply with a single JSON object whose keys are exactly those dimension names\n"
    "and whose values are numbers between 1 and 100. No other text.\n";

std::string render_transcript(const townsim::Transcript& t) {
    std::string out = "conversation " + t.id + " (" + pair_label(t.pair) + ")\n";
    out += "topic: " + t.topic + "\n";
    for (const agents::DialogueTurn& turn : t.turns) {
        out += turn.speaker;
        if (turn.mediated) out += " (mediated)";
        out += ": " + turn.text + "\n";
    }
    return out;
}

namespace {

/// The first balanced JSON object embedded in `reply`.
nlohmann::json first_json_object(const std::string& reply) {
    std::size_t start = reply.find('{');
    if (start == std::string::npos)
        throw JudgeFormatError("judge reply contains no JSON object");
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < reply.size(); ++i) {
        char c = reply[i];
        if (in_string) {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            --depth;
            if (depth == 0) {
                nlohmann::json parsed =
                    nlohmann::json::parse(reply.substr(start, i - start + 1), nullptr, false);
                if (parsed.is_discarded() || !parsed.is_object())
                    throw JudgeFormatError("judge reply JSON does not parse");
                return parsed;
            }
        }
    }
    throw JudgeFormatError("judge reply JSON object is unterminated");
}

} // namespace

ScoreCard judge_score(const townsim::Transcript& t, backend::Client& client,
                      const RubricConfig& rubric) {
    rubric.validate();
    std::vector<backend::Message> messages{{"system", kJudgeRubricPrompt},
                                           {"user", render_transcript(t)}};
    const std::string reply = client.chat(messages);
    const nlohmann::json parsed = first_json_object(reply);

    ScoreCard card;
    for (std::string_view name : kDimensions) {
        const std::string key(name);
        auto it = parsed.find(key);
        if (it == parsed.end())
            throw JudgeFormatError("judge reply missing dimension: " + key);
        if (!it->is_number())
            throw JudgeFormatError("judge reply dimension is not numeric: " + key);
        double value = it->get<double>();
        if (value < kMinScore || value > kMaxScore) {
            double clamped = std::clamp(value, kMinScore, kMaxScore);
            log::warn("judge score for " + key + " clamped from " + fmt_double(value) + " to " +
                      fmt_double(clamped));
            value = clamped;
        }
        card.dims[key] = value;
    }
    card.overall = weighted_overall(card.dims, rubric.weights);
    return card;
}

namespace {

std::string csv_header() {
    std::string header = "conversation_id,pair";
    for (std::string_view name : kDimensions) header += "," + std::string(name);
    header += ",overall";
    return header;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

double parse_double(const std::string& field, std::size_t line_no) {
    try {
        std::size_t used = 0;
        double value = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        return value;
    } catch (const std::exception&) {
        throw FormatError("not a number: \"" + field + "\"", line_no);
    }
}

} // namespace

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write file: " + path.string());
    out << csv_header() << "\n";
    for (const ScoreRow& row : rows) {
        out << row.conversation_id << "," << row.pair_label;
        for (std::string_view name : kDimensions) {
            out << "," << fmt_double(row.card.dims.at(std::string(name)));
        }
        out << "," << fmt_double(row.card.overall) << "\n";
    }
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    std::vector<ScoreRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != csv_header())
                throw FormatError("unexpected score CSV header", line_no);
            continue;
        }
        std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != 2 + kDimensions.size() + 1)
            throw FormatError("score row has " + std::to_string(fields.size()) + " fields",
                              line_no);
        ScoreRow row;
        row.conversation_id = fields[0];
        row.pair_label = fields[1];
        for (std::size_t i = 0; i < kDimensions.size(); ++i) {
            row.card.dims[std::string(kDimensions[i])] = parse_double(fields[2 + i], line_no);
        }
        row.card.overall = parse_double(fields.back(), line_no);
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json scores_to_json(std::span<const ScoreRow> rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const ScoreRow& row : rows) {
        out.push_back({{"conversation_id", row.conversation_id},
                       {"pair", row.pair_label},
                       {"dims", row.card.dims},
                       {"overall", row.card.overall}});
    }
    return out;
}

std::vector<ScoreRow> scores_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw FormatError("score list must be a JSON array");
    std::vector<ScoreRow> rows;
    for (const nlohmann::json& item : j) {
        ScoreRow row;
        row.conversation_id = jsonl::require(item, "conversation_id").get<std::string>();
        row.pair_label = jsonl::require(item, "pair").get<std::string>();
        row.card.dims = jsonl::require(item, "dims").get<std::map<std::string, double>>();
        row.card.overall = jsonl::require(item, "overall").get<double>();
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace chemtown::eval
