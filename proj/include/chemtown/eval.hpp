#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "chemtown/backend.hpp"
#include "chemtown/ontology.hpp"
#include "chemtown/townsim.hpp"

namespace chemtown::eval {

inline constexpr std::array<std::string_view, 8> kDimensions = {
    "fluency",      "response_speed", "coordination",       "scientific_correctness",
    "feasibility",  "completeness",   "knowledge_transfer", "cross_domain_reasoning"};

bool is_dimension(std::string_view name);

inline constexpr double kMinScore = 1.0;
inline constexpr double kMaxScore = 100.0;

/// One score per dimension plus the weighted overall, all on the 1..100 scale.
struct ScoreCard {
    std::map<std::string, double> dims;
    double overall = 0.0;

    bool operator==(const ScoreCard&) const = default;
};

struct RubricConfig {
    /// Lowercased lexicon per expert abbr, used for echo detection.
    std::map<std::string, std::set<std::string>> lexicons;
    /// Dimension weights for the overall; empty means equal weights.
    std::map<std::string, double> weights;

    void validate() const;
};

/// Deterministic transcript scorer. Every dimension maps a 0..1 feature of
/// the dialogue onto the 1..100 scale.
class RubricScorer {
public:
    explicit RubricScorer(RubricConfig cfg);

    ScoreCard score(const townsim::Transcript& t) const;
    const RubricConfig& config() const { return cfg_; }

private:
    RubricConfig cfg_;
};

/// Overall scores per participating expert, one entry per transcript the
/// expert took part in.
std::map<std::string, std::vector<double>> per_agent_overalls(
    std::span<const townsim::Transcript> transcripts, const RubricScorer& scorer);

/// Mean overall score per participating expert.
std::map<std::string, double> per_agent_overall(std::span<const townsim::Transcript> transcripts,
                                                const RubricScorer& scorer);

struct AgentDelta {
    double baseline_mean = 0.0;
    double treated_mean = 0.0;
    std::size_t baseline_count = 0;
    std::size_t treated_count = 0;
    double improvement_pct = 0.0;
};

struct RunComparison {
    std::map<std::string, AgentDelta> per_agent;
    double mean_improvement_pct = 0.0;
};

/// Per-agent relative change of mean overall scores between two runs, in
/// percent of the baseline. Both sides must cover the same non-empty agent
/// set, each agent with at least one score per side.
RunComparison compare_runs(const std::map<std::string, std::vector<double>>& baseline,
                           const std::map<std::string, std::vector<double>>& treated);

struct PairImprovement {
    std::string a;
    std::string b;
    double improvement = 0.0; // score points
};

using DistanceFn = std::function<double(const std::string&, const std::string&)>;

struct GapBinStats {
    std::vector<std::string> pairs; // "A-B" labels in input order
    double mean = 0.0;
};

struct GapEffectReport {
    std::map<ontology::GapBin, GapBinStats> bins;
    std::optional<double> fold_ratio; // best distant gain over best proximate gain
    std::optional<double> mean_ratio;
    ontology::BinThresholds thresholds;
    std::string notice; // set when a ratio cannot be formed
};

/// Buckets pair improvements by domain distance and summarizes each bucket.
GapEffectReport gap_effect(std::span<const PairImprovement> improvements,
                           const DistanceFn& distance, ontology::BinThresholds thresholds = {});

/// Report rendering with stable rounding: bin means to 2 decimals, ratios to
/// 1 decimal.
nlohmann::json gap_report_to_json(const GapEffectReport& report);

extern const std::string kJudgeRubricPrompt;

/// Plain-text rendering of a transcript for judge prompts.
std::string render_transcript(const townsim::Transcript& t);

/// Asks the remote judge for per-dimension scores. The reply must carry one
/// JSON object with every dimension as a numeric field; values are clamped to
/// the 1..100 scale with a warning.
ScoreCard judge_score(const townsim::Transcript& t, backend::Client& client,
                      const RubricConfig& rubric = {});

struct ScoreRow {
    std::string conversation_id;
    std::string pair_label; // "A-B"
    ScoreCard card;

    bool operator==(const ScoreRow&) const = default;
};

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

nlohmann::json scores_to_json(std::span<const ScoreRow> rows);
std::vector<ScoreRow> scores_from_json(const nlohmann::json& j);

} // namespace chemtown::eval
