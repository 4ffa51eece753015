#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace chemtown::corpus {

inline constexpr std::string_view kGeneralDomain = "general";

/// A Markdown source document with its annotations. The body is kept verbatim;
/// chunking operates on token offsets into it.
struct Document {
    std::string id;
    std::string title;
    std::string domain = std::string(kGeneralDomain);
    std::string body;
    std::string source_path;
    std::map<std::string, std::string> metadata;
};

/// Half-open byte range of one token within its source text.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const TokenSpan&) const = default;
};

/// Deterministic tokenizer: maximal runs of non-whitespace, with each ASCII
/// punctuation character split into its own single-character token. Bytes
/// >= 0x80 are treated as word characters, so UTF-8 sequences stay intact.
std::vector<TokenSpan> tokenize(std::string_view text);

std::vector<std::string> token_texts(std::string_view text);
std::size_t count_tokens(std::string_view text);

/// ASCII-lowercased token texts, the form used for term matching.
std::vector<std::string> lowercase_tokens(std::string_view text);
std::string ascii_lower(std::string_view text);

/// Whole-token, case-insensitive occurrence count of `term` (itself tokenized,
/// possibly multi-token) within `tokens`.
std::size_t count_term(std::span<const std::string> tokens, std::string_view term);
bool contains_term(std::string_view text, std::string_view term);

struct ChunkingConfig {
    std::size_t chunk_size = 512;
    std::size_t overlap = 128;
    bool atomic_blocks = true;

    void validate() const; // throws ConfigError unless 0 <= overlap < chunk_size
};

inline constexpr std::string_view kOversizedFlag = "oversized_atomic_block";

struct Chunk {
    std::string doc_id;
    std::size_t index = 0;
    std::size_t token_start = 0; // inclusive token offset
    std::size_t token_end = 0;   // exclusive token offset
    std::string text;
    std::map<std::string, std::string> metadata;

    bool operator==(const Chunk&) const = default;
};

/// Byte ranges of regions chunking must not split: fenced code blocks and
/// $$ display-equation blocks. Exposed for tests.
std::vector<std::pair<std::size_t, std::size_t>> atomic_block_ranges(std::string_view body);

/// Sliding-window chunker. Windows hold cfg.chunk_size tokens with stride
/// (chunk_size - overlap); the final chunk may be shorter. A window boundary
/// landing inside an atomic block is moved to the block start, and a block
/// longer than chunk_size becomes a single chunk flagged kOversizedFlag.
std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg);

/// Per-domain term lists, domain tag -> terms.
using LexiconSet = std::map<std::string, std::vector<std::string>>;

/// Topic tags and domain classification. Returns keys "domain", "topics"
/// (comma-joined, sorted) and "topic_counts" ("term=count" entries, sorted).
/// Classification picks the lexicon with the most whole-token matches, ties
/// broken alphabetically; no match at all classifies as "general".
std::map<std::string, std::string> extract_metadata(const Document& doc, const LexiconSet& lexicons);

/// Reads one UTF-8 lexicon file per domain from a directory (domain = file stem,
/// one term per line, blank lines skipped).
LexiconSet load_lexicon_dir(const std::filesystem::path& dir);

nlohmann::json chunk_to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& j, std::size_t line = 0);

/// Chunk manifest persistence (JSON Lines, one chunk per line).
void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks(const std::filesystem::path& path);

} // namespace chemtown::corpus
