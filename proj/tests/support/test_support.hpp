#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "chemtown/agents.hpp"
#include "chemtown/corpus.hpp"
#include "chemtown/ontology.hpp"
#include "chemtown/townsim.hpp"
#include "chemtown/vectorstore.hpp"

namespace testsupport {

namespace ct = chemtown;

/// Seeded generator for every randomized fixture; indexing goes through
/// pick() so draws replay identically on any platform.
using Rng = std::mt19937_64;

inline std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double unit_real(Rng& rng) { return std::ldexp(static_cast<double>(rng() >> 11), -53); }

inline double signed_real(Rng& rng) { return 2.0 * unit_real(rng) - 1.0; }

inline const std::vector<std::string>& vocab() {
    static const std::vector<std::string> words = {
        "reactor",  "yield",    "catalyst", "solvent",  "pressure", "column",   "feed",
        "purge",    "kinetic",  "thermal",  "gradient", "polymer",  "ligand",   "membrane",
        "distill",  "crystal",  "slurry",   "vapor",    "reflux",   "batch",    "inline",
        "sensor",   "valve",    "impurity", "residue",  "buffer",   "titrate",  "assay",
        "protocol", "hazard",   "exotherm", "quench",   "scale",    "pilot",    "module",
        "stream",   "recycle",  "makeup",   "holdup",   "setpoint"};
    return words;
}

inline std::string random_word(Rng& rng) { return vocab()[pick(rng, vocab().size())]; }

inline std::string random_text(Rng& rng, std::size_t words) {
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
        if (i) out += ' ';
        out += random_word(rng);
    }
    return out;
}

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<unsigned long> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("chemtown-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline void write_text(const std::filesystem::path& p, const std::string& content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string lower_abbr(std::string_view abbr) {
    return ct::corpus::ascii_lower(std::string(abbr));
}

/// Complete in-memory simulation world: seven experts plus the collaboration
/// agent. Topics mention every expert's "<abbr>probe" and "<abbr>jargon"
/// terms plus the shared lexicon word "sharedfocus". Probe terms are mapped
/// pairwise across all domains; jargon terms are never mapped. So every turn
/// the speaking expert mentions one mappable and one unmappable ontology term
/// (unmapped fraction 0.5), which drives mediation with one translation and
/// one unmapped term under the default threshold.
struct WorldFixture {
    ct::townsim::World world;
    std::vector<std::string> topics;
    std::shared_ptr<ct::ontology::OntologyRegistry> registry;
    std::shared_ptr<std::map<ct::vstore::ChunkRef, std::string>> chunk_texts;
};

inline constexpr std::size_t kFixtureDim = 64;
inline constexpr std::string_view kKbTrailer = " guidance notes follow";

inline WorldFixture make_world(bool kb_enabled, std::size_t topic_count = 3) {
    WorldFixture fx;
    auto registry = std::make_shared<ct::ontology::OntologyRegistry>();

    std::string term_blob;
    for (std::string_view abbr : ct::agents::kExpertAbbrs)
        term_blob += " " + lower_abbr(abbr) + "probe " + lower_abbr(abbr) + "jargon";
    for (std::size_t r = 0; r < topic_count; ++r)
        fx.topics.push_back("briefing" + std::to_string(r) + term_blob +
                            " under sharedfocus constraints");

    for (std::string_view abbr : ct::agents::kExpertAbbrs) {
        ct::ontology::DomainOntology onto;
        onto.domain = std::string(ct::agents::default_domain(abbr));
        onto.concepts.push_back({lower_abbr(abbr) + "probe", "mapped probe concept", {}});
        onto.concepts.push_back({lower_abbr(abbr) + "jargon", "domain-only concept", {}});
        registry->register_ontology(onto);
    }
    for (std::string_view a : ct::agents::kExpertAbbrs) {
        for (std::string_view b : ct::agents::kExpertAbbrs) {
            if (a == b) continue;
            registry->add_mapping({std::string(ct::agents::default_domain(a)),
                                   lower_abbr(a) + "probe",
                                   std::string(ct::agents::default_domain(b)),
                                   lower_abbr(b) + "probe",
                                   ct::ontology::MappingRelation::exact});
        }
    }
    fx.registry = registry;
    fx.chunk_texts = std::make_shared<std::map<ct::vstore::ChunkRef, std::string>>();

    for (std::string_view abbr : ct::agents::kExpertAbbrs) {
        ct::agents::ExpertProfile p;
        p.abbr = std::string(abbr);
        p.name = "Expert " + p.abbr;
        p.domain = std::string(ct::agents::default_domain(abbr));
        p.responsibility = "Advises on the " + p.domain + " domain.";
        p.lexicon = {lower_abbr(abbr) + "probe", lower_abbr(abbr) + "jargon", "sharedfocus"};
        p.kb_enabled = kb_enabled;
        if (kb_enabled) {
            auto embedder = std::make_shared<ct::vstore::HashEmbedder>(kFixtureDim);
            auto store = std::make_shared<ct::vstore::VectorStore>(kFixtureDim, embedder->id());
            for (std::size_t t = 0; t < fx.topics.size(); ++t) {
                ct::vstore::ChunkRef ref{"kb" + lower_abbr(abbr), t};
                std::string text = fx.topics[t] + std::string(kKbTrailer);
                store->upsert({ref, embedder->embed_one(text)});
                (*fx.chunk_texts)[ref] = text;
            }
            p.kb = ct::agents::KnowledgeBinding{store, fx.chunk_texts, embedder};
        }
        fx.world.experts.push_back(std::move(p));
    }
    ct::agents::ExpertProfile ca;
    ca.abbr = std::string(ct::agents::kCollaborationAbbr);
    ca.name = "Coordinator";
    ca.domain = std::string(ct::agents::default_domain(ct::agents::kCollaborationAbbr));
    ca.responsibility = "Builds shared vocabulary across the expert domains.";
    fx.world.experts.push_back(std::move(ca));
    fx.world.registry = registry;
    return fx;
}

/// The make_world fixture written out as CLI inputs: roster, lexicons, kb
/// stores, chunk file, ontology directory, mapping file.
struct DiskWorld {
    std::filesystem::path roster;
    std::filesystem::path chunks;
    std::filesystem::path ontologies;
    std::filesystem::path mappings;
    std::vector<std::string> topics;
};

inline DiskWorld write_world_files(const std::filesystem::path& dir, bool kb_enabled,
                                   std::size_t topic_count = 3) {
    WorldFixture fx = make_world(kb_enabled, topic_count);
    DiskWorld dw;
    dw.topics = fx.topics;

    std::vector<ct::agents::RosterEntry> roster;
    for (const ct::agents::ExpertProfile& p : fx.world.experts) {
        ct::agents::RosterEntry e;
        e.abbr = p.abbr;
        e.name = p.name;
        e.domain = p.domain;
        e.responsibility = p.responsibility;
        if (!p.lexicon.empty()) {
            std::filesystem::path lex = dir / "lexicons" / (p.abbr + ".txt");
            std::string content;
            for (const std::string& term : p.lexicon) content += term + "\n";
            write_text(lex, content);
            e.lexicon_path = lex.string();
        }
        e.kb_enabled = p.kb_enabled;
        if (p.kb_enabled) {
            std::filesystem::path kb = dir / "kb" / (p.domain + ".jsonl");
            std::filesystem::create_directories(kb.parent_path());
            p.kb->store->save(kb);
            e.kb_path = kb.string();
        }
        roster.push_back(std::move(e));
    }
    dw.roster = dir / "roster.jsonl";
    ct::agents::write_roster(dw.roster, roster);

    std::vector<ct::corpus::Chunk> chunks;
    for (const auto& [ref, text] : *fx.chunk_texts) {
        ct::corpus::Chunk c;
        c.doc_id = ref.doc_id;
        c.index = ref.index;
        c.token_start = 0;
        c.token_end = ct::corpus::count_tokens(text);
        c.text = text;
        chunks.push_back(std::move(c));
    }
    dw.chunks = dir / "chunks.jsonl";
    ct::corpus::write_chunks(dw.chunks, chunks);

    dw.ontologies = dir / "ontologies";
    for (std::string_view abbr : ct::agents::kExpertAbbrs) {
        std::string domain(ct::agents::default_domain(abbr));
        std::string content = lower_abbr(abbr) + "probe|mapped probe concept|\n" +
                              lower_abbr(abbr) + "jargon|domain-only concept|\n";
        write_text(dw.ontologies / (domain + ".txt"), content);
    }

    std::string mappings;
    for (std::string_view a : ct::agents::kExpertAbbrs) {
        for (std::string_view b : ct::agents::kExpertAbbrs) {
            if (a == b) continue;
            mappings += std::string(ct::agents::default_domain(a)) + "|" + lower_abbr(a) +
                        "probe|" + std::string(ct::agents::default_domain(b)) + "|" +
                        lower_abbr(b) + "probe|exact\n";
        }
    }
    dw.mappings = dir / "mappings.txt";
    write_text(dw.mappings, mappings);
    return dw;
}

/// The published pair improvements and a distance override matrix that bins
/// them the way the source analysis does.
inline std::vector<std::pair<std::string, double>> published_pair_improvements() {
    return {{"MDE-PSE", 8.5}, {"MDE-QCE", 7.9}, {"TME-PSE", 7.8}, {"TME-QCE", 6.4},
            {"ERE-TME", 2.1}, {"POE-PSE", 1.9}, {"RME-TME", 0.8}, {"PSE-QCE", -0.5}};
}

inline std::string published_distance_matrix_text() {
    return "MDE RME POE ERE TME PSE QCE\n"
           "MDE 0.00 0.25 0.50 0.45 0.30 0.90 0.85\n"
           "RME 0.25 0.00 0.40 0.35 0.15 0.70 0.75\n"
           "POE 0.50 0.40 0.00 0.30 0.40 0.45 0.50\n"
           "ERE 0.45 0.35 0.30 0.00 0.50 0.55 0.60\n"
           "TME 0.30 0.15 0.40 0.50 0.00 0.80 0.82\n"
           "PSE 0.90 0.70 0.45 0.55 0.80 0.00 0.20\n"
           "QCE 0.85 0.75 0.50 0.60 0.82 0.20 0.00\n";
}

} // namespace testsupport
