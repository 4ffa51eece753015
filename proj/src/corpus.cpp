#include "chemtown/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "chemtown/errors.hpp"
#include "chemtown/jsonl.hpp"

namespace chemtown::corpus {

namespace {

bool is_space_char(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_punct_char(unsigned char c) {
    return (c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) || (c >= 0x5b && c <= 0x60) ||
           (c >= 0x7b && c <= 0x7e);
}

std::string_view trim_view(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space_char(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space_char(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool starts_with_fence(std::string_view trimmed, char& marker) {
    if (trimmed.size() >= 3 && (trimmed[0] == '`' || trimmed[0] == '~') &&
        trimmed[1] == trimmed[0] && trimmed[2] == trimmed[0]) {
        marker = trimmed[0];
        return true;
    }
    return false;
}

bool closes_fence(std::string_view trimmed, char marker) {
    return trimmed.size() >= 3 && trimmed[0] == marker && trimmed[1] == marker &&
           trimmed[2] == marker;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

} // namespace

std::vector<TokenSpan> tokenize(std::string_view text) {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_char(c)) {
            ++i;
            continue;
        }
        if (is_punct_char(c)) {
            out.push_back({i, i + 1});
            ++i;
            continue;
        }
        std::size_t begin = i;
        while (i < n) {
            unsigned char w = static_cast<unsigned char>(text[i]);
            if (is_space_char(w) || is_punct_char(w)) break;
            ++i;
        }
        out.push_back({begin, i});
    }
    return out;
}

std::vector<std::string> token_texts(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& span : tokenize(text)) {
        out.emplace_back(text.substr(span.begin, span.end - span.begin));
    }
    return out;
}

std::size_t count_tokens(std::string_view text) { return tokenize(text).size(); }

std::string ascii_lower(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::vector<std::string> lowercase_tokens(std::string_view text) {
    std::vector<std::string> out = token_texts(text);
    for (std::string& t : out) t = ascii_lower(t);
    return out;
}

std::size_t count_term(std::span<const std::string> tokens, std::string_view term) {
    const std::vector<std::string> pattern = lowercase_tokens(term);
    if (pattern.empty() || pattern.size() > tokens.size()) return 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + pattern.size() <= tokens.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < pattern.size(); ++j) {
            if (tokens[i + j] != pattern[j]) {
                match = false;
                break;
            }
        }
        if (match) ++count;
    }
    return count;
}

bool contains_term(std::string_view text, std::string_view term) {
    const std::vector<std::string> tokens = lowercase_tokens(text);
    return count_term(tokens, term) > 0;
}

void ChunkingConfig::validate() const {
    if (chunk_size == 0) throw ConfigError("chunk_size must be positive");
    if (overlap >= chunk_size) throw ConfigError("overlap must be smaller than chunk_size");
}

std::vector<std::pair<std::size_t, std::size_t>> atomic_block_ranges(std::string_view body) {
    std::vector<std::pair<std::size_t, std::size_t>> blocks;
    enum class State { none, fence, math };
    State state = State::none;
    char fence_marker = '`';
    std::size_t block_start = 0;
    std::size_t pos = 0;
    const std::size_t n = body.size();
    while (pos < n) {
        std::size_t eol = body.find('\n', pos);
        std::size_t line_end = (eol == std::string_view::npos) ? n : eol + 1;
        std::string_view trimmed = trim_view(body.substr(pos, line_end - pos));
        switch (state) {
        case State::none:
            if (starts_with_fence(trimmed, fence_marker)) {
                state = State::fence;
                block_start = pos;
            } else if (trimmed.size() >= 2 && trimmed.substr(0, 2) == "$$") {
                if (trimmed.size() > 2 && ends_with(trimmed, "$$")) {
                    blocks.emplace_back(pos, line_end);
                } else {
                    state = State::math;
                    block_start = pos;
                }
            }
            break;
        case State::fence:
            if (closes_fence(trimmed, fence_marker)) {
                blocks.emplace_back(block_start, line_end);
                state = State::none;
            }
            break;
        case State::math:
            if (ends_with(trimmed, "$$")) {
                blocks.emplace_back(block_start, line_end);
                state = State::none;
            }
            break;
        }
        pos = line_end;
    }
    if (state != State::none) blocks.emplace_back(block_start, n);
    return blocks;
}

namespace {

struct TokenBlock {
    std::size_t begin = 0; // token index, inclusive
    std::size_t end = 0;   // token index, exclusive
};

std::vector<TokenBlock> blocks_in_tokens(std::string_view body,
                                         const std::vector<TokenSpan>& tokens) {
    std::vector<TokenBlock> out;
    for (const auto& [bb, be] : atomic_block_ranges(body)) {
        auto first = std::find_if(tokens.begin(), tokens.end(),
                                  [bb = bb](const TokenSpan& t) { return t.end > bb; });
        auto last = std::find_if(first, tokens.end(),
                                 [be = be](const TokenSpan& t) { return t.begin >= be; });
        std::size_t tb = static_cast<std::size_t>(first - tokens.begin());
        std::size_t te = static_cast<std::size_t>(last - tokens.begin());
        if (tb < te) out.push_back({tb, te});
    }
    return out;
}

const TokenBlock* block_containing(const std::vector<TokenBlock>& blocks, std::size_t pos) {
    for (const auto& b : blocks) {
        if (b.begin < pos && pos < b.end) return &b;
    }
    return nullptr;
}

const TokenBlock* block_starting_at(const std::vector<TokenBlock>& blocks, std::size_t pos) {
    for (const auto& b : blocks) {
        if (b.begin == pos) return &b;
    }
    return nullptr;
}

} // namespace

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg) {
    cfg.validate();
    const std::vector<TokenSpan> tokens = tokenize(doc.body);
    const std::size_t n = tokens.size();
    std::vector<Chunk> chunks;
    if (n == 0) return chunks;
    const std::vector<TokenBlock> blocks =
        cfg.atomic_blocks ? blocks_in_tokens(doc.body, tokens) : std::vector<TokenBlock>{};

    auto emit = [&](std::size_t begin, std::size_t end, bool oversized) {
        Chunk chunk;
        chunk.doc_id = doc.id;
        chunk.index = chunks.size();
        chunk.token_start = begin;
        chunk.token_end = end;
        std::size_t byte_begin = tokens[begin].begin;
        std::size_t byte_end = tokens[end - 1].end;
        chunk.text = doc.body.substr(byte_begin, byte_end - byte_begin);
        chunk.metadata = doc.metadata;
        if (oversized) chunk.metadata[std::string(kOversizedFlag)] = "true";
        chunks.push_back(std::move(chunk));
    };

    std::size_t start = 0;
    while (start < n) {
        if (const TokenBlock* b = block_starting_at(blocks, start);
            b && b->end - b->begin > cfg.chunk_size) {
            emit(b->begin, b->end, true);
            start = b->end;
            continue;
        }
        std::size_t end = std::min(start + cfg.chunk_size, n);
        bool adjusted = false;
        if (end < n) {
            if (const TokenBlock* b = block_containing(blocks, end)) {
                end = b->begin;
                adjusted = true;
            }
        }
        emit(start, end, false);
        if (end >= n) break;
        std::size_t next = adjusted ? end : end - cfg.overlap;
        if (const TokenBlock* b = block_containing(blocks, next)) {
            next = (b->begin > start) ? b->begin : b->end;
        }
        start = next;
    }
    return chunks;
}

std::map<std::string, std::string> extract_metadata(const Document& doc,
                                                    const LexiconSet& lexicons) {
    if (lexicons.empty()) throw ConfigError("no lexicons loaded");
    const std::vector<std::string> tokens = lowercase_tokens(doc.body);

    std::string best_domain(kGeneralDomain);
    std::size_t best_count = 0;
    std::map<std::string, std::size_t> topic_counts;
    for (const auto& [domain, terms] : lexicons) {
        std::set<std::string> seen;
        std::size_t domain_count = 0;
        for (const std::string& term : terms) {
            const std::string folded = ascii_lower(term);
            if (!seen.insert(folded).second) continue;
            std::size_t c = count_term(tokens, folded);
            if (c == 0) continue;
            domain_count += c;
            topic_counts[folded] = c;
        }
        // Lexicons iterate in tag order, so on a tie the alphabetically first
        // domain is kept.
        if (domain_count > best_count) {
            best_count = domain_count;
            best_domain = domain;
        }
    }

    std::string topics;
    std::string counts;
    for (const auto& [term, count] : topic_counts) {
        if (!topics.empty()) topics += ",";
        topics += term;
        if (!counts.empty()) counts += ",";
        counts += term + "=" + std::to_string(count);
    }
    return {{"domain", best_domain}, {"topics", topics}, {"topic_counts", counts}};
}

LexiconSet load_lexicon_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw InputError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    LexiconSet lexicons;
    for (const auto& path : files) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw InputError("cannot read lexicon: " + path.string());
        std::vector<std::string> terms;
        std::string line;
        while (std::getline(in, line)) {
            std::string_view t = trim_view(line);
            if (t.empty() || t.front() == '#') continue;
            terms.push_back(ascii_lower(t));
        }
        lexicons[path.stem().string()] = std::move(terms);
    }
    return lexicons;
}

nlohmann::json chunk_to_json(const Chunk& chunk) {
    return {{"doc_id", chunk.doc_id},   {"index", chunk.index},
            {"token_start", chunk.token_start}, {"token_end", chunk.token_end},
            {"text", chunk.text},       {"metadata", chunk.metadata}};
}

Chunk chunk_from_json(const nlohmann::json& j, std::size_t line) {
    Chunk chunk;
    chunk.doc_id = jsonl::require(j, "doc_id", line).get<std::string>();
    chunk.index = jsonl::require(j, "index", line).get<std::size_t>();
    chunk.token_start = jsonl::require(j, "token_start", line).get<std::size_t>();
    chunk.token_end = jsonl::require(j, "token_end", line).get<std::size_t>();
    chunk.text = jsonl::require(j, "text", line).get<std::string>();
    chunk.metadata =
        jsonl::require(j, "metadata", line).get<std::map<std::string, std::string>>();
    return chunk;
}

void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks) {
    std::vector<nlohmann::json> lines;
    lines.reserve(chunks.size());
    for (const Chunk& chunk : chunks) lines.push_back(chunk_to_json(chunk));
    jsonl::write_file(path, lines);
}

std::vector<Chunk> read_chunks(const std::filesystem::path& path) {
    std::vector<Chunk> chunks;
    std::size_t line_no = 0;
    for (const nlohmann::json& j : jsonl::read_file(path)) {
        ++line_no;
        chunks.push_back(chunk_from_json(j, line_no));
    }
    return chunks;
}

} // namespace chemtown::corpus
