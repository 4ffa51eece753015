#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chemtown/agents.hpp"
#include "chemtown/ontology.hpp"

namespace chemtown::townsim {

/// All 21 unordered expert pairs, in roster order with the first member
/// earlier in the roster.
std::vector<std::pair<std::string, std::string>> all_expert_pairs();

struct SimulationConfig {
    std::size_t rounds = 1;
    std::uint64_t seed = 0;
    /// Explicit pairing per round, cycled; empty draws from the 21 expert
    /// pairs with the seeded generator.
    std::vector<std::pair<std::string, std::string>> pairs;
    bool ca_enabled = true;
    std::size_t turns_per_round = 2;
    std::vector<std::string> topics;
    vstore::RetrievalConfig retrieval;
    std::size_t token_budget = agents::kDefaultTokenBudget;

    void validate() const; // rounds > 0, turns >= 2, topics non-empty, pairs are expert abbrs
};

nlohmann::json config_to_json(const SimulationConfig& cfg);
SimulationConfig config_from_json(const nlohmann::json& j);

struct RoundPlan {
    std::pair<std::string, std::string> pair;
    std::string topic;
};

/// The per-round pair and topic schedule, drawn up front from the seed.
std::vector<RoundPlan> draw_schedule(const SimulationConfig& cfg);

struct World {
    std::vector<agents::ExpertProfile> experts;
    std::shared_ptr<const ontology::OntologyRegistry> registry; // needed when ca_enabled

    const agents::ExpertProfile& expert(std::string_view abbr) const;
    void validate(const SimulationConfig& cfg) const;
};

struct Transcript {
    std::string id;
    std::size_t round = 0;
    std::pair<std::string, std::string> pair;
    std::string topic;
    std::uint64_t seed = 0;
    nlohmann::json config; // snapshot of the generating SimulationConfig
    std::vector<agents::DialogueTurn> turns;
    std::vector<ontology::MediationRecord> mediations;
    std::optional<std::string> failure;

    bool operator==(const Transcript&) const = default;
};

struct SimulationResult {
    std::vector<Transcript> transcripts;
    std::size_t failed_rounds = 0;
};

/// Runs the configured number of dialogue rounds. Identical inputs and seed
/// produce identical results turn for turn. A backend failure marks the
/// current transcript and the run moves on to the next round.
SimulationResult run_simulation(const SimulationConfig& cfg, const World& world,
                                agents::ChatBackend& backend);

nlohmann::json transcript_to_json(const Transcript& t);
Transcript transcript_from_json(const nlohmann::json& j);

void write_transcripts(const std::filesystem::path& path, std::span<const Transcript> transcripts);
std::vector<Transcript> read_transcripts(const std::filesystem::path& path);

} // namespace chemtown::townsim
