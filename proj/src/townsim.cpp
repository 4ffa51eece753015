#include "chemtown/townsim.hpp"

#include <algorithm>
#include <random>

#include "chemtown/errors.hpp"
#include "chemtown/jsonl.hpp"
#include "chemtown/log.hpp"

namespace chemtown::townsim {

std::vector<std::pair<std::string, std::string>> all_expert_pairs() {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i < agents::kExpertAbbrs.size(); ++i) {
        for (std::size_t j = i + 1; j < agents::kExpertAbbrs.size(); ++j) {
            pairs.emplace_back(std::string(agents::kExpertAbbrs[i]),
                               std::string(agents::kExpertAbbrs[j]));
        }
    }
    return pairs;
}

void SimulationConfig::validate() const {
    if (rounds == 0) throw ConfigError("rounds must be positive");
    if (turns_per_round < 2) throw ConfigError("turns_per_round must be at least 2");
    if (topics.empty()) throw ConfigError("topic list must be non-empty");
    for (const auto& [a, b] : pairs) {
        if (!agents::is_expert_abbr(a) || !agents::is_expert_abbr(b))
            throw ConfigError("pair must name two experts: " + a + "-" + b);
        if (a == b) throw ConfigError("pair members must differ: " + a);
    }
    retrieval.validate();
}

const agents::ExpertProfile& World::expert(std::string_view abbr) const {
    for (const agents::ExpertProfile& p : experts) {
        if (p.abbr == abbr) return p;
    }
    throw ReferenceError("no such agent in the roster: " + std::string(abbr));
}

void World::validate(const SimulationConfig& cfg) const {
    cfg.validate();
    for (const agents::ExpertProfile& p : experts) p.validate();
    for (std::string_view abbr : agents::kExpertAbbrs) {
        auto count = std::count_if(experts.begin(), experts.end(),
                                   [&](const agents::ExpertProfile& p) { return p.abbr == abbr; });
        if (count == 0)
            throw ConfigError("roster is missing expert " + std::string(abbr));
        if (count > 1) throw ConfigError("duplicate roster entry for " + std::string(abbr));
    }
    if (cfg.ca_enabled) {
        bool has_ca = std::any_of(experts.begin(), experts.end(), [](const auto& p) {
            return p.abbr == agents::kCollaborationAbbr;
        });
        if (!has_ca)
            throw ConfigError("ca_enabled requires the collaboration agent in the roster");
        if (!registry) throw ConfigError("ca_enabled requires an ontology registry");
        for (std::string_view abbr : agents::kExpertAbbrs) {
            const agents::ExpertProfile& p = expert(abbr);
            if (!registry->has_domain(p.domain))
                throw ConfigError("no ontology registered for domain " + p.domain);
        }
    }
}

nlohmann::json config_to_json(const SimulationConfig& cfg) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [a, b] : cfg.pairs) pairs.push_back({a, b});
    return {{"rounds", cfg.rounds},
            {"seed", cfg.seed},
            {"pairs", pairs},
            {"ca_enabled", cfg.ca_enabled},
            {"turns_per_round", cfg.turns_per_round},
            {"topics", cfg.topics},
            {"retrieval", {{"k", cfg.retrieval.k}, {"threshold", cfg.retrieval.threshold}}},
            {"token_budget", cfg.token_budget}};
}

SimulationConfig config_from_json(const nlohmann::json& j) {
    SimulationConfig cfg;
    cfg.rounds = jsonl::require(j, "rounds").get<std::size_t>();
    cfg.seed = jsonl::require(j, "seed").get<std::uint64_t>();
    for (const nlohmann::json& pair : jsonl::require(j, "pairs")) {
        cfg.pairs.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    }
    cfg.ca_enabled = jsonl::require(j, "ca_enabled").get<bool>();
    cfg.turns_per_round = jsonl::require(j, "turns_per_round").get<std::size_t>();
    cfg.topics = jsonl::require(j, "topics").get<std::vector<std::string>>();
    const nlohmann::json& retrieval = jsonl::require(j, "retrieval");
    cfg.retrieval.k = jsonl::require(retrieval, "k").get<std::size_t>();
    cfg.retrieval.threshold = jsonl::require(retrieval, "threshold").get<double>();
    cfg.token_budget = jsonl::require(j, "token_budget").get<std::size_t>();
    return cfg;
}

std::vector<RoundPlan> draw_schedule(const SimulationConfig& cfg) {
    cfg.validate();
    std::mt19937_64 gen(cfg.seed);
    const std::vector<std::pair<std::string, std::string>> pool =
        cfg.pairs.empty() ? all_expert_pairs() : cfg.pairs;
    std::vector<RoundPlan> plans;
    plans.reserve(cfg.rounds);
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        RoundPlan plan;
        // gen() % n instead of a distribution: distribution output is not
        // pinned by the standard, and schedules must replay identically
        // everywhere.
        plan.pair = cfg.pairs.empty() ? pool[gen() % pool.size()] : pool[r % pool.size()];
        plan.topic = cfg.topics[r % cfg.topics.size()];
        plans.push_back(std::move(plan));
    }
    return plans;
}

namespace {

std::string conversation_id(std::size_t round) {
    std::string digits = std::to_string(round);
    if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
    return "c" + digits;
}

} // namespace

SimulationResult run_simulation(const SimulationConfig& cfg, const World& world,
                                agents::ChatBackend& backend) {
    world.validate(cfg);
    const std::vector<RoundPlan> schedule = draw_schedule(cfg);
    const nlohmann::json cfg_json = config_to_json(cfg);

    SimulationResult result;
    std::uint64_t timestamp = 0;
    for (std::size_t r = 0; r < schedule.size(); ++r) {
        const RoundPlan& plan = schedule[r];
        Transcript t;
        t.id = conversation_id(r);
        t.round = r;
        t.pair = plan.pair;
        t.topic = plan.topic;
        t.seed = cfg.seed;
        t.config = cfg_json;

        for (std::size_t turn_idx = 0; turn_idx < cfg.turns_per_round; ++turn_idx) {
            const bool first_speaks = turn_idx % 2 == 0;
            const std::string& speaker_abbr = first_speaks ? plan.pair.first : plan.pair.second;
            const std::string& partner_abbr = first_speaks ? plan.pair.second : plan.pair.first;
            const agents::ExpertProfile& speaker = world.expert(speaker_abbr);

            agents::DialogueTurn turn;
            try {
                agents::PromptBundle bundle = agents::assemble_prompt(
                    speaker, plan.topic, t.turns, cfg.retrieval, cfg.token_budget);
                turn = agents::respond(speaker, bundle, backend, r, timestamp + 1);
            } catch (const Error& e) {
                t.failure = e.what();
                ++result.failed_rounds;
                log::warn("round " + std::to_string(r) + " failed: " + e.what());
                break;
            }
            ++timestamp;
            t.turns.push_back(std::move(turn));

            if (!cfg.ca_enabled) continue;
            const agents::DialogueTurn& spoken = t.turns.back();
            const std::string& src_domain = speaker.domain;
            const std::string& dst_domain = world.expert(partner_abbr).domain;
            ontology::MisalignmentReport report =
                world.registry->detect_misalignment(spoken.text, src_domain, dst_domain);
            if (report.found_terms.empty()) continue;
            if (!world.registry->should_intervene(report.unmapped_fraction)) continue;

            ontology::TranslationResult translated =
                world.registry->translate(spoken.text, src_domain, dst_domain);
            ontology::MediationRecord record = std::move(translated.record);
            record.conversation_id = t.id;
            record.round = r;
            record.intervened = true;
            const bool insert_turn = !record.translations.empty();
            t.mediations.push_back(std::move(record));
            if (insert_turn) {
                agents::DialogueTurn ca_turn;
                ca_turn.speaker = std::string(agents::kCollaborationAbbr);
                ca_turn.round = r;
                ca_turn.text = std::move(translated.text);
                ca_turn.mediated = true;
                ca_turn.timestamp = ++timestamp;
                t.turns.push_back(std::move(ca_turn));
            }
        }
        result.transcripts.push_back(std::move(t));
    }
    return result;
}

namespace {

nlohmann::json turn_to_json(const agents::DialogueTurn& turn) {
    nlohmann::json citations = nlohmann::json::array();
    for (const vstore::ChunkRef& ref : turn.citations) {
        citations.push_back({{"doc_id", ref.doc_id}, {"index", ref.index}});
    }
    return {{"speaker", turn.speaker}, {"round", turn.round},   {"text", turn.text},
            {"citations", citations},  {"mediated", turn.mediated},
            {"timestamp", turn.timestamp}};
}

agents::DialogueTurn turn_from_json(const nlohmann::json& j, std::size_t line) {
    agents::DialogueTurn turn;
    turn.speaker = jsonl::require(j, "speaker", line).get<std::string>();
    turn.round = jsonl::require(j, "round", line).get<std::size_t>();
    turn.text = jsonl::require(j, "text", line).get<std::string>();
    for (const nlohmann::json& ref : jsonl::require(j, "citations", line)) {
        turn.citations.push_back({jsonl::require(ref, "doc_id", line).get<std::string>(),
                                  jsonl::require(ref, "index", line).get<std::size_t>()});
    }
    turn.mediated = jsonl::require(j, "mediated", line).get<bool>();
    turn.timestamp = jsonl::require(j, "timestamp", line).get<std::uint64_t>();
    return turn;
}

nlohmann::json mediation_to_json(const ontology::MediationRecord& m) {
    nlohmann::json translations = nlohmann::json::array();
    for (const ontology::AppliedTranslation& t : m.translations) {
        translations.push_back({{"src_term", t.src_term},
                                {"dst_term", t.dst_term},
                                {"relation", std::string(ontology::relation_name(t.relation))}});
    }
    return {{"conversation_id", m.conversation_id}, {"round", m.round},
            {"unmapped_terms", m.unmapped_terms},   {"translations", translations},
            {"intervened", m.intervened}};
}

ontology::MediationRecord mediation_from_json(const nlohmann::json& j, std::size_t line) {
    ontology::MediationRecord m;
    m.conversation_id = jsonl::require(j, "conversation_id", line).get<std::string>();
    m.round = jsonl::require(j, "round", line).get<std::size_t>();
    m.unmapped_terms =
        jsonl::require(j, "unmapped_terms", line).get<std::vector<std::string>>();
    for (const nlohmann::json& t : jsonl::require(j, "translations", line)) {
        m.translations.push_back(
            {jsonl::require(t, "src_term", line).get<std::string>(),
             jsonl::require(t, "dst_term", line).get<std::string>(),
             ontology::relation_from_name(
                 jsonl::require(t, "relation", line).get<std::string>())});
    }
    m.intervened = jsonl::require(j, "intervened", line).get<bool>();
    return m;
}

} // namespace

nlohmann::json transcript_to_json(const Transcript& t) {
    nlohmann::json turns = nlohmann::json::array();
    for (const agents::DialogueTurn& turn : t.turns) turns.push_back(turn_to_json(turn));
    nlohmann::json mediations = nlohmann::json::array();
    for (const ontology::MediationRecord& m : t.mediations)
        mediations.push_back(mediation_to_json(m));
    nlohmann::json j{{"id", t.id},
                     {"round", t.round},
                     {"pair", {t.pair.first, t.pair.second}},
                     {"topic", t.topic},
                     {"seed", t.seed},
                     {"config", t.config},
                     {"turns", turns},
                     {"mediations", mediations}};
    if (t.failure) j["failure"] = *t.failure;
    return j;
}

namespace {

Transcript transcript_from_json_line(const nlohmann::json& j, std::size_t line) {
    Transcript t;
    t.id = jsonl::require(j, "id", line).get<std::string>();
    t.round = jsonl::require(j, "round", line).get<std::size_t>();
    const nlohmann::json& pair = jsonl::require(j, "pair", line);
    if (!pair.is_array() || pair.size() != 2)
        throw FormatError("pair must hold two abbreviations", line);
    t.pair = {pair[0].get<std::string>(), pair[1].get<std::string>()};
    t.topic = jsonl::require(j, "topic", line).get<std::string>();
    t.seed = jsonl::require(j, "seed", line).get<std::uint64_t>();
    t.config = jsonl::require(j, "config", line);
    for (const nlohmann::json& turn : jsonl::require(j, "turns", line))
        t.turns.push_back(turn_from_json(turn, line));
    for (const nlohmann::json& m : jsonl::require(j, "mediations", line))
        t.mediations.push_back(mediation_from_json(m, line));
    if (j.contains("failure")) t.failure = j["failure"].get<std::string>();
    return t;
}

} // namespace

Transcript transcript_from_json(const nlohmann::json& j) {
    return transcript_from_json_line(j, 0);
}

void write_transcripts(const std::filesystem::path& path,
                       std::span<const Transcript> transcripts) {
    std::vector<nlohmann::json> lines;
    lines.reserve(transcripts.size());
    for (const Transcript& t : transcripts) lines.push_back(transcript_to_json(t));
    jsonl::write_file(path, lines);
}

std::vector<Transcript> read_transcripts(const std::filesystem::path& path) {
    std::vector<Transcript> transcripts;
    std::size_t line_no = 0;
    for (const nlohmann::json& j : jsonl::read_file(path)) {
        ++line_no;
        transcripts.push_back(transcript_from_json_line(j, line_no));
    }
    return transcripts;
}

} // namespace chemtown::townsim
