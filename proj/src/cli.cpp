#include "chemtown/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "chemtown/agents.hpp"
#include "chemtown/backend.hpp"
#include "chemtown/corpus.hpp"
#include "chemtown/errors.hpp"
#include "chemtown/eval.hpp"
#include "chemtown/hash.hpp"
#include "chemtown/jsonl.hpp"
#include "chemtown/kgraph.hpp"
#include "chemtown/log.hpp"
#include "chemtown/ontology.hpp"
#include "chemtown/townsim.hpp"
#include "chemtown/vectorstore.hpp"

namespace chemtown::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct GlobalOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string backend = "stub";
    bool verbose = false;
};

const std::vector<std::string> kDefaultTopics = {
    "improving reactor yield under tight safety constraints",
    "screening candidate catalysts for a new synthesis route",
    "scaling a batch process to continuous operation",
    "reducing impurity carryover into the final product",
    "modeling heat transfer limits in the pilot plant",
};

std::string trim(std::string s) {
    auto is_ws = [](unsigned char c) { return c == ' ' || c == '\t'; };
    while (!s.empty() && is_ws(s.back())) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && is_ws(s[i])) ++i;
    return s.substr(i);
}

std::string fmt_double(double v) { return json(v).dump(); }

/// Flat key=value configuration with # comments.
std::map<std::string, std::string> parse_config_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read config file: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) throw FormatError("config line has no '='", line_no);
        std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw FormatError("config line has an empty key", line_no);
        kv[key] = trim(t.substr(eq + 1));
    }
    return kv;
}

double config_number(const std::map<std::string, std::string>& kv, const std::string& key,
                     double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t used = 0;
        double value = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return value;
    } catch (const std::exception&) {
        throw ConfigError("config value for " + key + " is not a number: " + it->second);
    }
}

backend::BackendConfig backend_config(const std::map<std::string, std::string>& kv) {
    backend::BackendConfig cfg;
    if (auto it = kv.find("base_url"); it != kv.end()) cfg.base_url = it->second;
    if (auto it = kv.find("api_key_env"); it != kv.end()) cfg.api_key_env = it->second;
    if (auto it = kv.find("model_id"); it != kv.end()) cfg.model_id = it->second;
    cfg.timeout_seconds = config_number(kv, "timeout_seconds", cfg.timeout_seconds);
    cfg.max_retries = static_cast<std::size_t>(
        config_number(kv, "max_retries", static_cast<double>(cfg.max_retries)));
    cfg.backoff_base_seconds = config_number(kv, "backoff_base_seconds", cfg.backoff_base_seconds);
    cfg.max_in_flight = static_cast<std::size_t>(
        config_number(kv, "max_in_flight", static_cast<double>(cfg.max_in_flight)));
    cfg.validate();
    return cfg;
}

/// Guards the output directory against concurrent runs for the lifetime of
/// the command.
struct OutputLock {
    fs::path marker;

    explicit OutputLock(const fs::path& out_dir) : marker(out_dir / ".lock") {
        fs::create_directories(out_dir);
        if (!fs::create_directory(marker))
            throw InputError("output directory is locked by another run: " + out_dir.string());
    }
    ~OutputLock() {
        std::error_code ec;
        fs::remove(marker, ec);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;
};

std::string now_iso() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Records a command run: inputs by content digest, produced artifacts, and
/// wall timestamps. Written as manifest.json next to the outputs.
struct Manifest {
    json j;

    Manifest(const std::string& command, const GlobalOpts& g) {
        j["command"] = command;
        j["config_path"] = g.config_path;
        j["seed"] = g.seed;
        j["output_dir"] = g.out_dir;
        j["inputs"] = json::object();
        j["outputs"] = json::array();
        j["timestamps"] = {{"started", now_iso()}};
    }
    void add_input(const fs::path& path) { j["inputs"][path.string()] = hash::digest_file(path); }
    void add_output(const std::string& relative) { j["outputs"].push_back(relative); }
    void write(const fs::path& out_dir) {
        j["timestamps"]["finished"] = now_iso();
        std::ofstream f(out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("cannot write manifest in " + out_dir.string());
        f << j.dump(2) << "\n";
    }
};

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write file: " + path.string());
    f << j.dump(2) << "\n";
}

json read_json_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot read file: " + path.string());
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw FormatError("malformed JSON in " + path.string());
    return j;
}

bool valid_utf8(std::string_view bytes) {
    std::size_t i = 0;
    while (i < bytes.size()) {
        unsigned char c = static_cast<unsigned char>(bytes[i]);
        if (c < 0x80) {
            ++i;
            continue;
        }
        std::size_t extra = 0;
        if ((c & 0xE0) == 0xC0)
            extra = 1;
        else if ((c & 0xF0) == 0xE0)
            extra = 2;
        else if ((c & 0xF8) == 0xF0)
            extra = 3;
        else
            return false;
        if (i + extra >= bytes.size()) return false;
        std::uint32_t cp = c & (0x3Fu >> extra);
        for (std::size_t k = 1; k <= extra; ++k) {
            unsigned char cc = static_cast<unsigned char>(bytes[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3Fu);
        }
        constexpr std::uint32_t kMins[4] = {0, 0x80, 0x800, 0x10000};
        if (cp < kMins[extra]) return false;
        if (cp > 0x10FFFF) return false;
        if (cp >= 0xD800 && cp <= 0xDFFF) return false;
        i += extra + 1;
    }
    return true;
}

std::string first_heading(const std::string& body, const std::string& fallback) {
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t level = 0;
        while (level < line.size() && line[level] == '#') ++level;
        if (level == 0 || level > 6 || level >= line.size() || line[level] != ' ') continue;
        std::string title = trim(line.substr(level + 1));
        if (!title.empty()) return title;
    }
    return fallback;
}

std::set<std::string> known_domains() {
    std::set<std::string> domains{std::string(corpus::kGeneralDomain)};
    for (std::string_view abbr : agents::kExpertAbbrs)
        domains.insert(std::string(agents::default_domain(abbr)));
    domains.insert(std::string(agents::default_domain(agents::kCollaborationAbbr)));
    return domains;
}

std::set<std::string> load_lexicon_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read lexicon file: " + path.string());
    std::set<std::string> terms;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string term = trim(line);
        if (term.empty() || term[0] == '#') continue;
        terms.insert(corpus::ascii_lower(term));
    }
    return terms;
}

/// Relative roster-referenced paths resolve against the roster's directory,
/// falling back to the working directory.
fs::path resolve_near(const fs::path& anchor_file, const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return path;
    fs::path near = anchor_file.parent_path() / path;
    if (fs::exists(near)) return near;
    return path;
}

std::pair<std::string, std::string> parse_pair_label(const std::string& label) {
    std::size_t dash = label.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 >= label.size())
        throw InputError("pair must look like MDE-PSE: " + label);
    return {label.substr(0, dash), label.substr(dash + 1)};
}

int cmd_ingest(const GlobalOpts& g, const std::string& input_dir, const std::string& lexicon_dir,
               corpus::ChunkingConfig chunk_cfg, std::ostream& out) {
    fs::path input(input_dir);
    if (!fs::is_directory(input)) throw InputError("corpus directory not found: " + input_dir);
    chunk_cfg.validate();

    corpus::LexiconSet lexicons;
    if (!lexicon_dir.empty()) lexicons = corpus::load_lexicon_dir(lexicon_dir);

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(input)) {
        if (entry.is_regular_file() && entry.path().extension() == ".md")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) log::warn("no markdown documents under " + input_dir);

    Manifest manifest("ingest", g);
    std::vector<corpus::Chunk> chunks;
    json report_docs = json::array();
    std::set<std::string> seen_ids;
    std::size_t failed = 0;
    for (const fs::path& file : files) {
        try {
            manifest.add_input(file);
            std::ifstream in(file, std::ios::binary);
            if (!in) throw InputError("cannot read file: " + file.string());
            std::string body((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
            if (!valid_utf8(body)) throw InputError("not valid UTF-8: " + file.string());

            corpus::Document doc;
            doc.id = file.stem().string();
            if (!seen_ids.insert(doc.id).second)
                throw InputError("duplicate document id: " + doc.id);
            doc.title = first_heading(body, doc.id);
            doc.body = std::move(body);
            doc.source_path = file.string();
            if (lexicons.empty())
                doc.metadata = {{"domain", std::string(corpus::kGeneralDomain)}};
            else
                doc.metadata = corpus::extract_metadata(doc, lexicons);
            doc.domain = doc.metadata.at("domain");

            std::vector<corpus::Chunk> doc_chunks = corpus::chunk_document(doc, chunk_cfg);
            report_docs.push_back({{"path", file.string()},
                                   {"doc_id", doc.id},
                                   {"domain", doc.domain},
                                   {"status", "ok"},
                                   {"chunks", doc_chunks.size()}});
            for (corpus::Chunk& c : doc_chunks) chunks.push_back(std::move(c));
        } catch (const Error& e) {
            ++failed;
            log::warn("skipping " + file.string() + ": " + e.what());
            report_docs.push_back(
                {{"path", file.string()}, {"status", "error"}, {"error", e.what()}});
        }
    }

    corpus::write_chunks(fs::path(g.out_dir) / "chunks.jsonl", chunks);
    write_json_file(fs::path(g.out_dir) / "ingest_report.json",
                    json{{"documents", report_docs},
                         {"document_count", files.size()},
                         {"failed", failed},
                         {"chunk_count", chunks.size()}});
    manifest.add_output("chunks.jsonl");
    manifest.add_output("ingest_report.json");
    manifest.write(g.out_dir);

    out << "ingested " << files.size() - failed << " of " << files.size() << " document(s), "
        << chunks.size() << " chunk(s) -> " << g.out_dir << "\n";
    if (failed == 0) return kExitOk;
    return failed == files.size() ? kExitInput : kExitPartial;
}

int cmd_build_kb(const GlobalOpts& g, const std::string& chunks_path, std::size_t dim,
                 std::size_t batch, const std::map<std::string, std::string>& cfg_kv,
                 std::ostream& out) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
    if (batch == 0) throw ConfigError("batch size must be positive");
    std::vector<corpus::Chunk> chunks = corpus::read_chunks(chunks_path);

    const std::set<std::string> known = known_domains();
    std::map<std::string, std::vector<const corpus::Chunk*>> by_domain;
    for (const corpus::Chunk& c : chunks) {
        std::string domain(corpus::kGeneralDomain);
        if (auto it = c.metadata.find("domain"); it != c.metadata.end()) domain = it->second;
        if (known.find(domain) == known.end()) {
            log::warn("unknown domain tag \"" + domain + "\" for " + c.doc_id + "#" +
                      std::to_string(c.index) + ", routed to " +
                      std::string(corpus::kGeneralDomain));
            domain = std::string(corpus::kGeneralDomain);
        }
        by_domain[domain].push_back(&c);
    }

    std::unique_ptr<vstore::Embedder> embedder;
    if (g.backend == "remote")
        embedder = std::make_unique<vstore::RemoteEmbedder>(backend_config(cfg_kv), dim);
    else
        embedder = std::make_unique<vstore::HashEmbedder>(dim);

    fs::path kb_dir = fs::path(g.out_dir) / "kb";
    fs::create_directories(kb_dir);
    Manifest manifest("build-kb", g);
    manifest.add_input(chunks_path);

    json domain_counts = json::object();
    for (const auto& [domain, domain_chunks] : by_domain) {
        fs::path store_path = kb_dir / (domain + ".jsonl");
        fs::path state_path = kb_dir / (domain + ".state.json");

        vstore::VectorStore store(dim, embedder->id());
        json digests = json::object();
        if (fs::exists(store_path) && fs::exists(state_path)) {
            try {
                json state = read_json_file(state_path);
                if (state.value("embedder_id", "") == embedder->id() &&
                    state.value("dim", std::size_t{0}) == dim && state.contains("digests")) {
                    store = vstore::VectorStore::load(store_path);
                    digests = state["digests"];
                } else {
                    log::warn("rebuilding " + domain + " store: embedder or dimension changed");
                }
            } catch (const Error& e) {
                log::warn("rebuilding " + domain + " store: " + e.what());
                store = vstore::VectorStore(dim, embedder->id());
                digests = json::object();
            }
        }

        std::vector<const corpus::Chunk*> pending;
        for (const corpus::Chunk* c : domain_chunks) {
            vstore::ChunkRef ref{c->doc_id, c->index};
            std::string label = ref.label();
            if (store.contains(ref) && digests.contains(label) &&
                digests[label] == hash::digest(c->text))
                continue;
            pending.push_back(c);
        }

        auto flush = [&]() {
            store.save(store_path);
            write_json_file(state_path, json{{"embedder_id", embedder->id()},
                                             {"dim", dim},
                                             {"digests", digests}});
        };
        try {
            for (std::size_t start = 0; start < pending.size(); start += batch) {
                std::size_t n = std::min(batch, pending.size() - start);
                std::vector<std::string> texts;
                texts.reserve(n);
                for (std::size_t i = 0; i < n; ++i) texts.push_back(pending[start + i]->text);
                std::vector<std::vector<double>> vectors = embedder->embed(texts);
                if (vectors.size() != n)
                    throw ShapeError("embedder returned " + std::to_string(vectors.size()) +
                                     " vectors for " + std::to_string(n) + " texts");
                for (std::size_t i = 0; i < n; ++i) {
                    const corpus::Chunk* c = pending[start + i];
                    vstore::ChunkRef ref{c->doc_id, c->index};
                    if (vectors[i].size() != dim)
                        throw ShapeError("embedding for " + ref.label() + " has length " +
                                         std::to_string(vectors[i].size()) + ", expected " +
                                         std::to_string(dim));
                    store.upsert({ref, std::move(vectors[i])});
                    digests[ref.label()] = hash::digest(c->text);
                }
            }
        } catch (...) {
            flush();
            throw;
        }
        flush();
        domain_counts[domain] = store.size();
        manifest.add_output("kb/" + domain + ".jsonl");
        manifest.add_output("kb/" + domain + ".state.json");
    }

    write_json_file(fs::path(g.out_dir) / "kb_report.json", json{{"domains", domain_counts}});
    manifest.add_output("kb_report.json");
    manifest.write(g.out_dir);

    out << "built " << by_domain.size() << " domain store(s) from " << chunks.size()
        << " chunk(s) -> " << (fs::path(g.out_dir) / "kb").string() << "\n";
    return kExitOk;
}

struct SimulateOpts {
    std::string roster_path;
    std::size_t rounds = 20;
    std::vector<std::string> pairs;
    std::vector<std::string> topics;
    std::string topics_file;
    bool no_ca = false;
    std::size_t turns = 2;
    std::string chunks_path;
    std::string ontology_dir;
    std::string mapping_file;
    std::string distance_matrix;
    std::string graph_path;
    double tau = ontology::kDefaultInterventionThreshold;
    std::size_t k = 5;
    double threshold = 0.75;
    std::size_t token_budget = agents::kDefaultTokenBudget;
};

int cmd_simulate(const GlobalOpts& g, const SimulateOpts& s,
                 const std::map<std::string, std::string>& cfg_kv, std::ostream& out) {
    std::vector<agents::RosterEntry> roster = agents::read_roster(s.roster_path);

    auto registry = std::make_shared<ontology::OntologyRegistry>();
    if (!s.ontology_dir.empty()) registry->load_ontology_dir(s.ontology_dir);
    if (!s.mapping_file.empty()) registry->load_mapping_file(s.mapping_file);
    if (!s.distance_matrix.empty()) registry->load_distance_matrix(s.distance_matrix);
    registry->set_intervention_threshold(s.tau);

    std::shared_ptr<std::map<vstore::ChunkRef, std::string>> chunk_texts;
    if (!s.chunks_path.empty()) {
        chunk_texts = std::make_shared<std::map<vstore::ChunkRef, std::string>>();
        for (const corpus::Chunk& c : corpus::read_chunks(s.chunks_path))
            (*chunk_texts)[{c.doc_id, c.index}] = c.text;
    }
    std::shared_ptr<const kgraph::KnowledgeGraph> graph;
    if (!s.graph_path.empty())
        graph = std::make_shared<kgraph::KnowledgeGraph>(
            kgraph::KnowledgeGraph::load(s.graph_path));

    const fs::path roster_file(s.roster_path);
    townsim::World world;
    world.registry = registry;
    for (const agents::RosterEntry& entry : roster) {
        agents::ExpertProfile profile;
        profile.abbr = entry.abbr;
        profile.name = entry.name;
        profile.domain = entry.domain;
        profile.responsibility = entry.responsibility;
        if (!entry.lexicon_path.empty())
            profile.lexicon = load_lexicon_file(resolve_near(roster_file, entry.lexicon_path));
        profile.kb_enabled = entry.kb_enabled;
        if (entry.kb_enabled) {
            if (entry.kb_path.empty())
                throw ConfigError("agent " + entry.abbr + " is kb-enabled but has no kb path");
            if (!chunk_texts)
                throw ConfigError("kb-enabled roster entries need --chunks for the chunk texts");
            auto store = std::make_shared<vstore::VectorStore>(
                vstore::VectorStore::load(resolve_near(roster_file, entry.kb_path)));
            std::shared_ptr<vstore::Embedder> embedder;
            if (store->embedder_id().rfind("remote:", 0) == 0)
                embedder =
                    std::make_shared<vstore::RemoteEmbedder>(backend_config(cfg_kv), store->dim());
            else
                embedder = std::make_shared<vstore::HashEmbedder>(store->dim());
            profile.kb = agents::KnowledgeBinding{store, chunk_texts, embedder};
        }
        profile.kg = graph;
        world.experts.push_back(std::move(profile));
    }

    townsim::SimulationConfig cfg;
    cfg.rounds = s.rounds;
    cfg.seed = g.seed;
    cfg.ca_enabled = !s.no_ca;
    cfg.turns_per_round = s.turns;
    for (const std::string& label : s.pairs) cfg.pairs.push_back(parse_pair_label(label));
    for (const std::string& topic : s.topics) {
        std::string t = trim(topic);
        if (!t.empty()) cfg.topics.push_back(t);
    }
    if (!s.topics_file.empty()) {
        std::ifstream in(s.topics_file, std::ios::binary);
        if (!in) throw InputError("cannot read topics file: " + s.topics_file);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string t = trim(line);
            if (!t.empty() && t[0] != '#') cfg.topics.push_back(t);
        }
    }
    if (cfg.topics.empty()) cfg.topics = kDefaultTopics;
    cfg.retrieval.k = s.k;
    cfg.retrieval.threshold = s.threshold;
    cfg.token_budget = s.token_budget;

    std::unique_ptr<agents::ChatBackend> backend;
    if (g.backend == "remote") {
        backend::ChatParams params;
        params.seed = g.seed;
        backend = std::make_unique<agents::RemoteBackend>(backend_config(cfg_kv), params);
    } else {
        backend = std::make_unique<agents::StubBackend>();
    }

    Manifest manifest("simulate", g);
    manifest.add_input(s.roster_path);
    if (!s.chunks_path.empty()) manifest.add_input(s.chunks_path);
    if (!s.mapping_file.empty()) manifest.add_input(s.mapping_file);
    if (!s.distance_matrix.empty()) manifest.add_input(s.distance_matrix);

    townsim::SimulationResult result = townsim::run_simulation(cfg, world, *backend);
    townsim::write_transcripts(fs::path(g.out_dir) / "transcripts.jsonl", result.transcripts);
    manifest.add_output("transcripts.jsonl");
    manifest.write(g.out_dir);

    out << "simulated " << result.transcripts.size() << " round(s), " << result.failed_rounds
        << " failed -> " << g.out_dir << "\n";
    if (result.failed_rounds == 0) return kExitOk;
    return result.failed_rounds == result.transcripts.size() ? kExitBackend : kExitPartial;
}

struct EvaluateOpts {
    std::vector<std::string> inputs;
    std::string scorer = "rubric";
    std::string roster_path;
    std::string baseline_path;
    std::string treated_path;
    std::string pair_improvements;
    std::string distance_matrix;
    std::string ontology_dir;
    double proximate_lt = 0.33;
    double medium_lt = 0.66;
};

std::vector<eval::PairImprovement> read_pair_improvements(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read pair improvements file: " + path.string());
    std::vector<eval::PairImprovement> improvements;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (line_no == 1 && t == "pair,improvement") continue;
        std::size_t comma = t.find(',');
        if (comma == std::string::npos)
            throw FormatError("expected \"A-B,value\"", line_no);
        auto [a, b] = parse_pair_label(trim(t.substr(0, comma)));
        std::string value_text = trim(t.substr(comma + 1));
        try {
            std::size_t used = 0;
            double value = std::stod(value_text, &used);
            if (used != value_text.size()) throw std::invalid_argument(value_text);
            improvements.push_back({a, b, value});
        } catch (const std::exception&) {
            throw FormatError("not a number: \"" + value_text + "\"", line_no);
        }
    }
    return improvements;
}

int cmd_evaluate(const GlobalOpts& g, const EvaluateOpts& e,
                 const std::map<std::string, std::string>& cfg_kv, std::ostream& out) {
    const bool has_comparison = !e.baseline_path.empty() || !e.treated_path.empty();
    if (e.inputs.empty() && !has_comparison && e.pair_improvements.empty())
        throw InputError(
            "nothing to evaluate: pass transcript files, --baseline/--treated, or "
            "--pair-improvements");
    if (has_comparison && (e.baseline_path.empty() || e.treated_path.empty()))
        throw InputError("--baseline and --treated go together");

    eval::RubricConfig rubric;
    if (!e.roster_path.empty()) {
        const fs::path roster_file(e.roster_path);
        for (const agents::RosterEntry& entry : agents::read_roster(e.roster_path)) {
            if (!entry.lexicon_path.empty())
                rubric.lexicons[entry.abbr] =
                    load_lexicon_file(resolve_near(roster_file, entry.lexicon_path));
        }
    }
    eval::RubricScorer scorer(rubric);

    std::unique_ptr<backend::Client> judge;
    if (e.scorer == "judge") judge = std::make_unique<backend::Client>(backend_config(cfg_kv));

    auto score_transcripts = [&](const std::vector<townsim::Transcript>& transcripts) {
        std::pair<std::vector<eval::ScoreRow>, std::map<std::string, std::vector<double>>> result;
        for (const townsim::Transcript& t : transcripts) {
            eval::ScoreCard card =
                judge ? eval::judge_score(t, *judge, rubric) : scorer.score(t);
            result.first.push_back({t.id, t.pair.first + "-" + t.pair.second, card});
            result.second[t.pair.first].push_back(card.overall);
            result.second[t.pair.second].push_back(card.overall);
        }
        return result;
    };

    Manifest manifest("evaluate", g);
    json summary = json::object();

    if (!e.inputs.empty()) {
        std::vector<townsim::Transcript> transcripts;
        for (const std::string& input : e.inputs) {
            manifest.add_input(input);
            for (townsim::Transcript& t : townsim::read_transcripts(input))
                transcripts.push_back(std::move(t));
        }
        auto [rows, by_agent] = score_transcripts(transcripts);
        eval::write_scores_csv(fs::path(g.out_dir) / "scores.csv", rows);
        manifest.add_output("scores.csv");
        summary["transcript_count"] = transcripts.size();
        json means = json::object();
        for (const auto& [abbr, scores] : by_agent) {
            double sum = 0.0;
            for (double v : scores) sum += v;
            means[abbr] = sum / static_cast<double>(scores.size());
        }
        summary["per_agent_mean"] = means;
    }

    if (has_comparison) {
        manifest.add_input(e.baseline_path);
        manifest.add_input(e.treated_path);
        auto baseline = score_transcripts(townsim::read_transcripts(e.baseline_path));
        auto treated = score_transcripts(townsim::read_transcripts(e.treated_path));
        eval::RunComparison comparison = eval::compare_runs(baseline.second, treated.second);
        json per_agent = json::object();
        for (const auto& [abbr, delta] : comparison.per_agent) {
            per_agent[abbr] = {{"baseline_mean", delta.baseline_mean},
                               {"treated_mean", delta.treated_mean},
                               {"baseline_count", delta.baseline_count},
                               {"treated_count", delta.treated_count},
                               {"improvement_pct", delta.improvement_pct}};
        }
        summary["comparison"] = {{"per_agent", per_agent},
                                 {"mean_improvement_pct", comparison.mean_improvement_pct}};
    }

    if (!e.pair_improvements.empty()) {
        manifest.add_input(e.pair_improvements);
        std::vector<eval::PairImprovement> improvements =
            read_pair_improvements(e.pair_improvements);
        auto registry = std::make_shared<ontology::OntologyRegistry>();
        if (!e.ontology_dir.empty()) registry->load_ontology_dir(e.ontology_dir);
        if (!e.distance_matrix.empty()) {
            manifest.add_input(e.distance_matrix);
            registry->load_distance_matrix(e.distance_matrix);
        }
        ontology::BinThresholds thresholds{e.proximate_lt, e.medium_lt};
        eval::DistanceFn distance = [registry](const std::string& a, const std::string& b) {
            if (registry->has_distance_override(a, b)) return registry->domain_distance(a, b);
            std::string da(agents::default_domain(a));
            std::string db(agents::default_domain(b));
            return registry->domain_distance(da, db);
        };
        eval::GapEffectReport report = eval::gap_effect(improvements, distance, thresholds);
        summary["gap_effect"] = eval::gap_report_to_json(report);
        json pairs = json::array();
        for (const eval::PairImprovement& p : improvements)
            pairs.push_back({{"pair", p.a + "-" + p.b}, {"improvement", p.improvement}});
        summary["pair_improvements"] = pairs;
    }

    write_json_file(fs::path(g.out_dir) / "summary.json", summary);
    manifest.add_output("summary.json");
    manifest.write(g.out_dir);

    out << "evaluation summary -> " << (fs::path(g.out_dir) / "summary.json").string() << "\n";
    return kExitOk;
}

int cmd_report(const GlobalOpts& g, const std::string& summary_path, std::ostream& out) {
    json summary = read_json_file(summary_path);
    Manifest manifest("report", g);
    manifest.add_input(summary_path);
    const fs::path out_dir(g.out_dir);

    {
        std::ofstream f(out_dir / "per_agent.csv", std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("cannot write file: " + (out_dir / "per_agent.csv").string());
        if (summary.contains("comparison")) {
            f << "agent,improvement_pct\n";
            for (const auto& [abbr, delta] : summary["comparison"]["per_agent"].items())
                f << abbr << "," << fmt_double(delta["improvement_pct"].get<double>()) << "\n";
        } else if (summary.contains("per_agent_mean")) {
            f << "agent,mean_overall\n";
            for (const auto& [abbr, mean] : summary["per_agent_mean"].items())
                f << abbr << "," << fmt_double(mean.get<double>()) << "\n";
        } else {
            f << "agent,value\n";
        }
    }

    std::map<std::string, double> by_label;
    if (summary.contains("pair_improvements")) {
        for (const json& item : summary["pair_improvements"]) {
            std::string label = jsonl::require(item, "pair").get<std::string>();
            double value = jsonl::require(item, "improvement").get<double>();
            by_label[label] = value;
            auto [a, b] = parse_pair_label(label);
            by_label[b + "-" + a] = value;
        }
    }
    {
        std::ofstream f(out_dir / "heatmap.csv", std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("cannot write file: " + (out_dir / "heatmap.csv").string());
        for (std::string_view abbr : agents::kExpertAbbrs) f << "," << abbr;
        f << "\n";
        for (std::string_view row : agents::kExpertAbbrs) {
            f << row;
            for (std::string_view col : agents::kExpertAbbrs) {
                f << ",";
                if (row == col) continue;
                auto it = by_label.find(std::string(row) + "-" + std::string(col));
                if (it != by_label.end()) f << fmt_double(it->second);
            }
            f << "\n";
        }
    }

    {
        std::ofstream f(out_dir / "dumbbells.csv", std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("cannot write file: " + (out_dir / "dumbbells.csv").string());
        f << "bin,pair,improvement,bin_mean\n";
        if (summary.contains("gap_effect") && summary["gap_effect"].contains("bins")) {
            const json& bins = summary["gap_effect"]["bins"];
            for (const char* bin : {"proximate", "medium", "distant"}) {
                if (!bins.contains(bin)) continue;
                const json& entry = bins[bin];
                std::string mean_text =
                    entry.contains("mean") ? fmt_double(entry["mean"].get<double>()) : "";
                for (const json& label : entry["pairs"]) {
                    std::string pair = label.get<std::string>();
                    f << bin << "," << pair << ",";
                    if (auto it = by_label.find(pair); it != by_label.end())
                        f << fmt_double(it->second);
                    f << "," << mean_text << "\n";
                }
            }
        }
    }

    manifest.add_output("per_agent.csv");
    manifest.add_output("heatmap.csv");
    manifest.add_output("dumbbells.csv");
    manifest.write(g.out_dir);

    out << "report tables -> " << g.out_dir << "\n";
    return kExitOk;
}

} // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"research-community pipeline: ingest, build-kb, simulate, evaluate, report",
                 "chemtown"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "key=value configuration file")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "seed for every randomized stage");
    app.add_option("--out", g.out_dir, "output directory")->capture_default_str();
    app.add_option("--backend", g.backend, "generation backend")
        ->check(CLI::IsMember({"stub", "remote"}))
        ->capture_default_str();
    app.add_flag("--verbose", g.verbose, "enable debug logging");
    app.set_version_flag("--version", std::string(kVersion));

    std::string ingest_input;
    std::string ingest_lexicons;
    corpus::ChunkingConfig chunk_cfg;
    CLI::App* ingest = app.add_subcommand("ingest", "chunk a markdown corpus");
    ingest->fallthrough();
    ingest->add_option("--input", ingest_input, "corpus directory")->required();
    ingest->add_option("--lexicons", ingest_lexicons, "domain lexicon directory");
    ingest->add_option("--chunk-size", chunk_cfg.chunk_size, "tokens per chunk")
        ->capture_default_str();
    ingest->add_option("--overlap", chunk_cfg.overlap, "tokens shared between neighbours")
        ->capture_default_str();

    std::string build_chunks;
    std::size_t build_dim = vstore::kDefaultDim;
    std::size_t build_batch = 128;
    CLI::App* build = app.add_subcommand("build-kb", "embed chunks into per-domain stores");
    build->fallthrough();
    build->add_option("--chunks", build_chunks, "chunk file from ingest")->required();
    build->add_option("--dim", build_dim, "embedding dimension")->capture_default_str();
    build->add_option("--batch", build_batch, "chunks embedded per call")->capture_default_str();

    SimulateOpts sim_opts;
    CLI::App* sim = app.add_subcommand("simulate", "run seeded dialogue rounds");
    sim->fallthrough();
    sim->add_option("--roster", sim_opts.roster_path, "agent roster file")->required();
    sim->add_option("--rounds", sim_opts.rounds, "dialogue rounds")->capture_default_str();
    sim->add_option("--pairs", sim_opts.pairs, "fixed expert pairs like MDE-PSE")
        ->delimiter(',');
    sim->add_option("--topics", sim_opts.topics, "topics, ';' separated")->delimiter(';');
    sim->add_option("--topics-file", sim_opts.topics_file, "file with one topic per line");
    sim->add_flag("--no-ca", sim_opts.no_ca, "disable the collaboration agent");
    sim->add_option("--turns", sim_opts.turns, "expert turns per round")->capture_default_str();
    sim->add_option("--chunks", sim_opts.chunks_path, "chunk file backing the knowledge bases");
    sim->add_option("--ontologies", sim_opts.ontology_dir, "domain ontology directory");
    sim->add_option("--mappings", sim_opts.mapping_file, "cross-domain concept mappings");
    sim->add_option("--distance-matrix", sim_opts.distance_matrix, "domain distance overrides");
    sim->add_option("--graph", sim_opts.graph_path, "knowledge graph file");
    sim->add_option("--tau", sim_opts.tau, "mediation threshold")->capture_default_str();
    sim->add_option("--k", sim_opts.k, "retrieval depth")->capture_default_str();
    sim->add_option("--threshold", sim_opts.threshold, "retrieval similarity floor")
        ->capture_default_str();
    sim->add_option("--token-budget", sim_opts.token_budget, "prompt token budget")
        ->capture_default_str();

    EvaluateOpts eval_opts;
    CLI::App* evaluate = app.add_subcommand("evaluate", "score transcripts and aggregate");
    evaluate->fallthrough();
    evaluate->add_option("inputs", eval_opts.inputs, "transcript files");
    evaluate->add_option("--scorer", eval_opts.scorer, "scoring backend")
        ->check(CLI::IsMember({"rubric", "judge"}))
        ->capture_default_str();
    evaluate->add_option("--roster", eval_opts.roster_path, "roster providing scoring lexicons");
    evaluate->add_option("--baseline", eval_opts.baseline_path, "baseline transcript file");
    evaluate->add_option("--treated", eval_opts.treated_path, "treated transcript file");
    evaluate->add_option("--pair-improvements", eval_opts.pair_improvements,
                         "CSV of A-B,improvement rows");
    evaluate->add_option("--distance-matrix", eval_opts.distance_matrix,
                         "domain distance overrides");
    evaluate->add_option("--ontologies", eval_opts.ontology_dir, "domain ontology directory");
    evaluate->add_option("--proximate-lt", eval_opts.proximate_lt, "proximate bin upper bound")
        ->capture_default_str();
    evaluate->add_option("--medium-lt", eval_opts.medium_lt, "medium bin upper bound")
        ->capture_default_str();

    std::string report_summary;
    CLI::App* report = app.add_subcommand("report", "emit plot-ready tables from a summary");
    report->fallthrough();
    report->add_option("--summary", report_summary, "summary JSON from evaluate")->required();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    struct SinkGuard {
        ~SinkGuard() {
            log::set_sink(nullptr);
            log::set_verbose(false);
        }
    } sink_guard;
    log::set_sink([&err](log::Level level, std::string_view message) {
        err << "[" << log::level_name(level) << "] " << message << "\n";
    });
    log::set_verbose(g.verbose);

    try {
        std::map<std::string, std::string> cfg_kv;
        if (!g.config_path.empty()) cfg_kv = parse_config_file(g.config_path);
        OutputLock lock(g.out_dir);
        if (app.got_subcommand(ingest))
            return cmd_ingest(g, ingest_input, ingest_lexicons, chunk_cfg, out);
        if (app.got_subcommand(build))
            return cmd_build_kb(g, build_chunks, build_dim, build_batch, cfg_kv, out);
        if (app.got_subcommand(sim)) return cmd_simulate(g, sim_opts, cfg_kv, out);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(g, eval_opts, cfg_kv, out);
        if (app.got_subcommand(report)) return cmd_report(g, report_summary, out);
        err << "error: no subcommand selected\n";
        return kExitUsage;
    } catch (const BackendError& e) {
        err << "error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

} // namespace chemtown::cli
