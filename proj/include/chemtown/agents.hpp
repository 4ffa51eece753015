#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chemtown/backend.hpp"
#include "chemtown/kgraph.hpp"
#include "chemtown/vectorstore.hpp"

namespace chemtown::agents {

/// The seven domain experts, in roster order, plus the collaboration agent.
inline constexpr std::array<std::string_view, 7> kExpertAbbrs = {"MDE", "RME", "POE", "ERE",
                                                                "TME", "PSE", "QCE"};
inline constexpr std::string_view kCollaborationAbbr = "CA";

bool is_expert_abbr(std::string_view abbr);
bool is_agent_abbr(std::string_view abbr);

/// Canonical domain tag for an agent abbreviation. Throws InputError on an
/// unknown abbreviation.
std::string_view default_domain(std::string_view abbr);

inline constexpr std::size_t kDefaultTokenBudget = 4096;

/// Everything an agent needs to consult its knowledge base: the vector store,
/// the chunk texts behind its records, and the embedder that built it.
struct KnowledgeBinding {
    std::shared_ptr<const vstore::VectorStore> store;
    std::shared_ptr<const std::map<vstore::ChunkRef, std::string>> chunk_texts;
    std::shared_ptr<vstore::Embedder> embedder;
};

struct ExpertProfile {
    std::string abbr;
    std::string name;
    std::string domain;
    std::string responsibility;
    std::set<std::string> lexicon; // lowercased terms
    bool kb_enabled = false;
    std::optional<KnowledgeBinding> kb;
    std::shared_ptr<const kgraph::KnowledgeGraph> kg;

    void validate() const; // abbr in the closed agent set; kb_enabled requires kb
};

struct RetrievedChunk {
    vstore::ChunkRef ref;
    std::string text;
    double similarity = 0.0;
};

struct DialogueTurn {
    std::string speaker;
    std::size_t round = 0;
    std::string text;
    std::vector<vstore::ChunkRef> citations; // chunks injected into the prompt
    bool mediated = false;                   // true for collaboration-agent insertions
    std::uint64_t timestamp = 0;             // logical counter

    bool operator==(const DialogueTurn&) const = default;
};

struct PromptBundle {
    std::string task_description;
    std::vector<RetrievedChunk> retrieved; // sorted by similarity descending
    std::vector<DialogueTurn> history;
    std::string query;
    std::size_t token_budget = kDefaultTokenBudget;
};

/// Canonical prompt text: task, knowledge, history, query sections in that
/// order. The token budget is measured on this rendering.
std::string render_bundle(const PromptBundle& bundle);
std::size_t bundle_token_count(const PromptBundle& bundle);

/// Builds the bundle for one turn. Retrieval runs only for kb-enabled
/// profiles. Overflow past the budget drops oldest history turns first, then
/// lowest-similarity chunks; the task description and query are never cut.
PromptBundle assemble_prompt(const ExpertProfile& profile, const std::string& query,
                             std::span<const DialogueTurn> history,
                             const vstore::RetrievalConfig& retrieval_cfg = {},
                             std::size_t token_budget = kDefaultTokenBudget);

struct GenerationResult {
    std::string text;
    std::vector<vstore::ChunkRef> cited;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual GenerationResult generate(const ExpertProfile& profile, const PromptBundle& bundle) = 0;
    virtual std::string id() const = 0;
};

inline constexpr std::string_view kNoEvidenceMarker = "no retrieved evidence";

/// Deterministic template reply: names the speaker's domain, restates the
/// query terms found in the profile lexicon, cites every injected chunk as
/// [doc#index], and echoes up to two lexicon terms from the last turn by
/// another speaker. A pure function of (profile, bundle).
std::string stub_generate(const ExpertProfile& profile, const PromptBundle& bundle);

class StubBackend final : public ChatBackend {
public:
    GenerationResult generate(const ExpertProfile& profile, const PromptBundle& bundle) override;
    std::string id() const override { return "stub"; }
};

/// Chat backend over the remote wire client.
class RemoteBackend final : public ChatBackend {
public:
    explicit RemoteBackend(backend::BackendConfig cfg, backend::ChatParams params = {});

    GenerationResult generate(const ExpertProfile& profile, const PromptBundle& bundle) override;
    std::string id() const override;
    backend::Client& client() { return client_; }

private:
    backend::Client client_;
    backend::ChatParams params_;
};

/// Runs one generation. Citations are exactly the refs the backend declares
/// used, all of which were present in the bundle. Throws GenerationError when
/// the backend returns empty text; backend errors surface with the agent abbr
/// and round attached.
DialogueTurn respond(const ExpertProfile& profile, const PromptBundle& bundle,
                     ChatBackend& backend, std::size_t round, std::uint64_t timestamp);

/// One roster record as stored on disk.
struct RosterEntry {
    std::string abbr;
    std::string name;
    std::string domain;
    std::string responsibility;
    std::string lexicon_path;
    std::string kb_path;
    bool kb_enabled = false;
};

std::vector<RosterEntry> read_roster(const std::filesystem::path& path);
void write_roster(const std::filesystem::path& path, const std::vector<RosterEntry>& entries);

} // namespace chemtown::agents
