#include "chemtown/agents.hpp"

#include <algorithm>
#include <limits>

#include "chemtown/corpus.hpp"
#include "chemtown/errors.hpp"
#include "chemtown/jsonl.hpp"

namespace chemtown::agents {

bool is_expert_abbr(std::string_view abbr) {
    return std::find(kExpertAbbrs.begin(), kExpertAbbrs.end(), abbr) != kExpertAbbrs.end();
}

bool is_agent_abbr(std::string_view abbr) {
    return abbr == kCollaborationAbbr || is_expert_abbr(abbr);
}

std::string_view default_domain(std::string_view abbr) {
    if (abbr == "MDE") return "molecular_design";
    if (abbr == "RME") return "reaction_mechanisms";
    if (abbr == "POE") return "process_optimization";
    if (abbr == "ERE") return "experimental_research";
    if (abbr == "TME") return "theoretical_modeling";
    if (abbr == "PSE") return "safety_management";
    if (abbr == "QCE") return "quality_management";
    if (abbr == "CA") return "collaborative_work";
    throw InputError("unknown agent abbreviation: " + std::string(abbr));
}

void ExpertProfile::validate() const {
    if (!is_agent_abbr(abbr)) throw ConfigError("unknown agent abbreviation: " + abbr);
    if (domain.empty()) throw ConfigError("agent " + abbr + " has no domain tag");
    if (kb_enabled) {
        if (!kb || !kb->store || !kb->chunk_texts || !kb->embedder)
            throw ConfigError("agent " + abbr + " has kb_enabled without a knowledge binding");
    }
}

std::string render_bundle(const PromptBundle& bundle) {
    std::string out = "task: " + bundle.task_description + "\n";
    if (!bundle.retrieved.empty()) {
        out += "knowledge:\n";
        for (const RetrievedChunk& chunk : bundle.retrieved) {
            out += "[" + chunk.ref.label() + "] " + chunk.text + "\n";
        }
    }
    if (!bundle.history.empty()) {
        out += "history:\n";
        for (const DialogueTurn& turn : bundle.history) {
            out += turn.speaker + ": " + turn.text + "\n";
        }
    }
    out += "query: " + bundle.query + "\n";
    return out;
}

std::size_t bundle_token_count(const PromptBundle& bundle) {
    return corpus::count_tokens(render_bundle(bundle));
}

PromptBundle assemble_prompt(const ExpertProfile& profile, const std::string& query,
                             std::span<const DialogueTurn> history,
                             const vstore::RetrievalConfig& retrieval_cfg,
                             std::size_t token_budget) {
    profile.validate();
    if (corpus::count_tokens(query) == 0) throw InputError("query is empty");

    PromptBundle bundle;
    bundle.task_description = profile.responsibility;
    bundle.query = query;
    bundle.history.assign(history.begin(), history.end());
    bundle.token_budget = token_budget;

    if (profile.kb_enabled) {
        const KnowledgeBinding& kb = *profile.kb;
        std::vector<double> qvec = kb.embedder->embed_one(query);
        for (const vstore::SearchHit& hit : kb.store->retrieve(qvec, retrieval_cfg)) {
            auto it = kb.chunk_texts->find(hit.ref);
            if (it == kb.chunk_texts->end())
                throw ReferenceError("no chunk text for " + hit.ref.label());
            bundle.retrieved.push_back({hit.ref, it->second, hit.similarity});
        }
    }

    // Overflow drops oldest history first, then the weakest chunks; the task
    // description and query always stay.
    while (bundle_token_count(bundle) > bundle.token_budget) {
        if (!bundle.history.empty()) {
            bundle.history.erase(bundle.history.begin());
        } else if (!bundle.retrieved.empty()) {
            bundle.retrieved.pop_back();
        } else {
            break;
        }
    }
    return bundle;
}

namespace {

/// Lexicon terms of `profile` found in `text`, in the set's sorted order.
std::vector<std::string> lexicon_hits(const ExpertProfile& profile, const std::string& text,
                                      std::size_t limit) {
    std::vector<std::string> hits;
    const std::vector<std::string> tokens = corpus::lowercase_tokens(text);
    for (const std::string& term : profile.lexicon) {
        if (corpus::count_term(tokens, term) > 0) {
            hits.push_back(term);
            if (hits.size() == limit) break;
        }
    }
    return hits;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const std::string& p : parts) {
        if (!out.empty()) out += ", ";
        out += p;
    }
    return out;
}

} // namespace

std::string stub_generate(const ExpertProfile& profile, const PromptBundle& bundle) {
    std::string out = "(" + profile.abbr + "/" + profile.domain + ") focus: ";
    std::vector<std::string> focus =
        lexicon_hits(profile, bundle.query, std::numeric_limits<std::size_t>::max());
    out += focus.empty() ? "(none)" : join(focus);
    out += "\n";

    out += "evidence:";
    if (bundle.retrieved.empty()) {
        out += " " + std::string(kNoEvidenceMarker);
    } else {
        for (const RetrievedChunk& chunk : bundle.retrieved) {
            out += " [" + chunk.ref.label() + "]";
        }
    }
    out += "\n";

    out += "echo:";
    for (auto it = bundle.history.rbegin(); it != bundle.history.rend(); ++it) {
        if (it->speaker == profile.abbr) continue;
        std::vector<std::string> echoed = lexicon_hits(profile, it->text, 2);
        if (!echoed.empty()) out += " " + join(echoed);
        break;
    }
    out += "\n";

    out += "note: assessment recorded for the " + profile.domain + " domain.\n";
    return out;
}

GenerationResult StubBackend::generate(const ExpertProfile& profile, const PromptBundle& bundle) {
    GenerationResult result;
    result.text = stub_generate(profile, bundle);
    for (const RetrievedChunk& chunk : bundle.retrieved) result.cited.push_back(chunk.ref);
    return result;
}

RemoteBackend::RemoteBackend(backend::BackendConfig cfg, backend::ChatParams params)
    : client_(std::move(cfg)), params_(params) {}

GenerationResult RemoteBackend::generate(const ExpertProfile& profile,
                                         const PromptBundle& bundle) {
    std::vector<backend::Message> messages;
    messages.push_back({"system", "You are " + profile.name + " (" + profile.abbr +
                                      "), an expert for the " + profile.domain + " domain."});
    messages.push_back({"user", render_bundle(bundle)});
    GenerationResult result;
    result.text = client_.chat(messages, params_);
    for (const RetrievedChunk& chunk : bundle.retrieved) result.cited.push_back(chunk.ref);
    return result;
}

std::string RemoteBackend::id() const { return "remote:" + client_.config().model_id; }

DialogueTurn respond(const ExpertProfile& profile, const PromptBundle& bundle,
                     ChatBackend& backend, std::size_t round, std::uint64_t timestamp) {
    GenerationResult result;
    try {
        result = backend.generate(profile, bundle);
    } catch (const BackendError& e) {
        throw BackendError(e.kind(), e.attempts(),
                           e.context() + " (agent " + profile.abbr + ", round " +
                               std::to_string(round) + ")",
                           e.status_code());
    }
    if (result.text.empty())
        throw GenerationError("backend returned empty text (agent " + profile.abbr + ", round " +
                              std::to_string(round) + ")");

    DialogueTurn turn;
    turn.speaker = profile.abbr;
    turn.round = round;
    turn.text = std::move(result.text);
    turn.mediated = false;
    turn.timestamp = timestamp;
    for (const vstore::ChunkRef& ref : result.cited) {
        bool in_bundle = std::any_of(bundle.retrieved.begin(), bundle.retrieved.end(),
                                     [&](const RetrievedChunk& c) { return c.ref == ref; });
        if (in_bundle) turn.citations.push_back(ref);
    }
    return turn;
}

std::vector<RosterEntry> read_roster(const std::filesystem::path& path) {
    std::vector<RosterEntry> entries;
    std::size_t line_no = 0;
    for (const nlohmann::json& j : jsonl::read_file(path)) {
        ++line_no;
        RosterEntry entry;
        entry.abbr = jsonl::require(j, "abbr", line_no).get<std::string>();
        entry.name = jsonl::require(j, "name", line_no).get<std::string>();
        entry.domain = jsonl::require(j, "domain", line_no).get<std::string>();
        entry.responsibility = jsonl::require(j, "responsibility", line_no).get<std::string>();
        entry.lexicon_path = jsonl::require(j, "lexicon_path", line_no).get<std::string>();
        entry.kb_path = jsonl::require(j, "kb_path", line_no).get<std::string>();
        entry.kb_enabled = jsonl::require(j, "kb_enabled", line_no).get<bool>();
        entries.push_back(std::move(entry));
    }
    return entries;
}

void write_roster(const std::filesystem::path& path, const std::vector<RosterEntry>& entries) {
    std::vector<nlohmann::json> lines;
    lines.reserve(entries.size());
    for (const RosterEntry& e : entries) {
        lines.push_back({{"abbr", e.abbr}, {"name", e.name}, {"domain", e.domain},
                         {"responsibility", e.responsibility}, {"lexicon_path", e.lexicon_path},
                         {"kb_path", e.kb_path}, {"kb_enabled", e.kb_enabled}});
    }
    jsonl::write_file(path, lines);
}

} // namespace chemtown::agents
