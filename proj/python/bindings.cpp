#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "chemtown/cli.hpp"
#include "chemtown/corpus.hpp"
#include "chemtown/errors.hpp"
#include "chemtown/eval.hpp"
#include "chemtown/kgraph.hpp"
#include "chemtown/ontology.hpp"
#include "chemtown/townsim.hpp"
#include "chemtown/vectorstore.hpp"

namespace py = pybind11;
using namespace chemtown;

namespace {

ontology::MappingRelation relation_from_name(const std::string& name) {
    if (name == "exact") return ontology::MappingRelation::exact;
    if (name == "broader") return ontology::MappingRelation::broader;
    if (name == "narrower") return ontology::MappingRelation::narrower;
    if (name == "related") return ontology::MappingRelation::related;
    throw InputError("unknown mapping relation: " + name);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Core operations for the chemtown research-community toolkit.";
    m.attr("__version__") = std::string(cli::kVersion);

    py::register_exception<Error>(m, "ChemtownError");

    // --- text and chunking ---------------------------------------------

    m.def("tokenize", [](const std::string& text) { return corpus::token_texts(text); },
          py::arg("text"), "Split text into its token strings.");
    m.def("count_tokens", [](const std::string& text) { return corpus::count_tokens(text); },
          py::arg("text"));

    py::class_<corpus::Chunk>(m, "Chunk")
        .def_readonly("doc_id", &corpus::Chunk::doc_id)
        .def_readonly("index", &corpus::Chunk::index)
        .def_readonly("token_start", &corpus::Chunk::token_start)
        .def_readonly("token_end", &corpus::Chunk::token_end)
        .def_readonly("text", &corpus::Chunk::text)
        .def_readonly("metadata", &corpus::Chunk::metadata)
        .def("__repr__", [](const corpus::Chunk& c) {
            return "<Chunk " + c.doc_id + "#" + std::to_string(c.index) + ">";
        });

    m.def(
        "chunk_text",
        [](const std::string& doc_id, const std::string& body, std::size_t chunk_size,
           std::size_t overlap, const std::string& domain) {
            corpus::Document doc;
            doc.id = doc_id;
            doc.body = body;
            doc.metadata = {{"domain", domain}};
            corpus::ChunkingConfig cfg;
            cfg.chunk_size = chunk_size;
            cfg.overlap = overlap;
            return corpus::chunk_document(doc, cfg);
        },
        py::arg("doc_id"), py::arg("body"), py::arg("chunk_size") = 512,
        py::arg("overlap") = 128, py::arg("domain") = std::string(corpus::kGeneralDomain),
        "Chunk a document body into overlapping token windows.");

    m.def(
        "extract_metadata",
        [](const std::string& doc_id, const std::string& body,
           const corpus::LexiconSet& lexicons) {
            corpus::Document doc;
            doc.id = doc_id;
            doc.body = body;
            return corpus::extract_metadata(doc, lexicons);
        },
        py::arg("doc_id"), py::arg("body"), py::arg("lexicons"),
        "Tag a document with a domain and topic terms from per-domain lexicons.");

    // --- vectors and retrieval -----------------------------------------

    m.def(
        "cosine_similarity",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            return vstore::cosine_similarity(a, b);
        },
        py::arg("a"), py::arg("b"));

    py::class_<vstore::HashEmbedder>(m, "HashEmbedder")
        .def(py::init<std::size_t>(), py::arg("dim") = vstore::kDefaultDim)
        .def_property_readonly("dim", &vstore::HashEmbedder::dim)
        .def_property_readonly("id", &vstore::HashEmbedder::id)
        .def("embed", &vstore::HashEmbedder::embed, py::arg("texts"))
        .def("embed_one", &vstore::HashEmbedder::embed_one, py::arg("text"));

    py::class_<vstore::VectorStore>(m, "VectorStore")
        .def(py::init<std::size_t, std::string>(), py::arg("dim") = vstore::kDefaultDim,
             py::arg("embedder_id") = "hash-v1")
        .def_property_readonly("dim", &vstore::VectorStore::dim)
        .def_property_readonly("size", &vstore::VectorStore::size)
        .def_property_readonly("embedder_id",
                               [](const vstore::VectorStore& s) { return s.embedder_id(); })
        .def(
            "upsert",
            [](vstore::VectorStore& store, const std::string& doc_id, std::size_t index,
               std::vector<double> vector) {
                store.upsert({{doc_id, index}, std::move(vector)});
            },
            py::arg("doc_id"), py::arg("index"), py::arg("vector"))
        .def(
            "retrieve",
            [](const vstore::VectorStore& store, const std::vector<double>& query,
               std::size_t k, double threshold) {
                vstore::RetrievalConfig cfg;
                cfg.k = k;
                cfg.threshold = threshold;
                std::vector<std::pair<std::string, double>> out;
                for (const vstore::SearchHit& hit : store.retrieve(query, cfg))
                    out.emplace_back(hit.ref.label(), hit.similarity);
                return out;
            },
            py::arg("query"), py::arg("k") = 5, py::arg("threshold") = 0.75,
            "Top-k (label, similarity) pairs strictly above the threshold.")
        .def("save", &vstore::VectorStore::save, py::arg("path"))
        .def_static("load", &vstore::VectorStore::load, py::arg("path"));

    // --- knowledge graph -----------------------------------------------

    py::class_<kgraph::KnowledgeGraph>(m, "KnowledgeGraph")
        .def(py::init<>())
        .def(
            "add_entity",
            [](kgraph::KnowledgeGraph& g, const std::string& id, const std::string& kind,
               const std::string& name, std::map<std::string, std::string> attributes) {
                kgraph::Entity e;
                e.id = id;
                e.kind = kgraph::kind_from_name(kind);
                e.name = name;
                e.attributes = std::move(attributes);
                g.add_entity(e);
            },
            py::arg("id"), py::arg("kind"), py::arg("name"),
            py::arg("attributes") = std::map<std::string, std::string>{})
        .def(
            "add_relation",
            [](kgraph::KnowledgeGraph& g, const std::string& src, const std::string& dst,
               const std::string& label, std::map<std::string, std::string> attributes) {
                g.add_relation({src, dst, label, std::move(attributes)});
            },
            py::arg("src"), py::arg("dst"), py::arg("label"),
            py::arg("attributes") = std::map<std::string, std::string>{})
        .def_property_readonly("entity_count", &kgraph::KnowledgeGraph::entity_count)
        .def_property_readonly("relation_count", &kgraph::KnowledgeGraph::relation_count)
        .def(
            "multi_hop",
            [](const kgraph::KnowledgeGraph& g, const std::string& start,
               std::size_t max_hops, std::vector<std::string> labels) {
                kgraph::PathQuery q;
                q.start = start;
                q.max_hops = max_hops;
                q.label_pattern = std::move(labels);
                std::vector<std::vector<std::string>> out;
                for (const kgraph::Path& path : g.multi_hop(q)) out.push_back(path.elements);
                return out;
            },
            py::arg("start"), py::arg("max_hops") = 6,
            py::arg("labels") = std::vector<std::string>{},
            "Paths as [node, label, node, ...] element lists.")
        .def("save", &kgraph::KnowledgeGraph::save, py::arg("path"))
        .def_static("load", &kgraph::KnowledgeGraph::load, py::arg("path"));

    // --- ontologies -----------------------------------------------------

    py::class_<ontology::OntologyRegistry>(m, "OntologyRegistry")
        .def(py::init<>())
        .def(
            "register_ontology",
            [](ontology::OntologyRegistry& reg, const std::string& domain,
               const std::vector<std::tuple<std::string, std::string, std::vector<std::string>>>&
                   concepts) {
                ontology::DomainOntology onto;
                onto.domain = domain;
                for (const auto& [term, definition, aliases] : concepts) {
                    ontology::ConceptDef def;
                    def.term = term;
                    def.definition = definition;
                    def.aliases.insert(aliases.begin(), aliases.end());
                    onto.concepts.push_back(std::move(def));
                }
                reg.register_ontology(std::move(onto));
            },
            py::arg("domain"), py::arg("concepts"),
            "Concepts are (term, definition, aliases) triples.")
        .def(
            "add_mapping",
            [](ontology::OntologyRegistry& reg, const std::string& src_domain,
               const std::string& src_term, const std::string& dst_domain,
               const std::string& dst_term, const std::string& relation) {
                reg.add_mapping({src_domain, src_term, dst_domain, dst_term,
                                 relation_from_name(relation)});
            },
            py::arg("src_domain"), py::arg("src_term"), py::arg("dst_domain"),
            py::arg("dst_term"), py::arg("relation") = "exact")
        .def("load_ontology_dir", &ontology::OntologyRegistry::load_ontology_dir,
             py::arg("dir"))
        .def("load_mapping_file", &ontology::OntologyRegistry::load_mapping_file,
             py::arg("path"))
        .def("load_distance_matrix", &ontology::OntologyRegistry::load_distance_matrix,
             py::arg("path"))
        .def("domain_tags", &ontology::OntologyRegistry::domain_tags)
        .def("has_domain", &ontology::OntologyRegistry::has_domain, py::arg("domain"))
        .def("domain_distance", &ontology::OntologyRegistry::domain_distance, py::arg("a"),
             py::arg("b"))
        .def("set_distance_override", &ontology::OntologyRegistry::set_distance_override,
             py::arg("a"), py::arg("b"), py::arg("distance"))
        .def(
            "translate",
            [](const ontology::OntologyRegistry& reg, const std::string& text,
               const std::string& src_domain, const std::string& dst_domain) {
                ontology::TranslationResult result =
                    reg.translate(text, src_domain, dst_domain);
                py::list translations;
                for (const ontology::AppliedTranslation& t : result.record.translations)
                    translations.append(py::make_tuple(t.src_term, t.dst_term));
                py::dict out;
                out["text"] = result.text;
                out["unmapped_terms"] = result.record.unmapped_terms;
                out["translations"] = translations;
                out["intervened"] = result.record.intervened;
                return out;
            },
            py::arg("text"), py::arg("src_domain"), py::arg("dst_domain"),
            "Rewrite mapped source-domain terms for the destination domain.");

    // --- evaluation -----------------------------------------------------

    m.def(
        "gap_effect_json",
        [](const std::vector<std::tuple<std::string, std::string, double>>& improvements,
           const std::function<double(const std::string&, const std::string&)>& distance) {
            std::vector<eval::PairImprovement> pairs;
            for (const auto& [a, b, value] : improvements) pairs.push_back({a, b, value});
            return eval::gap_report_to_json(eval::gap_effect(pairs, distance)).dump();
        },
        py::arg("improvements"), py::arg("distance"),
        "Bin (a, b, improvement) triples by domain distance; returns a JSON report.");

    m.def(
        "compare_runs_json",
        [](const std::map<std::string, std::vector<double>>& baseline,
           const std::map<std::string, std::vector<double>>& treated) {
            eval::RunComparison cmp = eval::compare_runs(baseline, treated);
            nlohmann::json j;
            for (const auto& [abbr, delta] : cmp.per_agent) {
                j["per_agent"][abbr] = {{"baseline_mean", delta.baseline_mean},
                                        {"treated_mean", delta.treated_mean},
                                        {"baseline_count", delta.baseline_count},
                                        {"treated_count", delta.treated_count},
                                        {"improvement_pct", delta.improvement_pct}};
            }
            j["mean_improvement_pct"] = cmp.mean_improvement_pct;
            return j.dump();
        },
        py::arg("baseline"), py::arg("treated"),
        "Per-agent improvement of treated over baseline; returns a JSON report.");

    m.def(
        "score_transcripts_json",
        [](const std::filesystem::path& path,
           const std::map<std::string, std::vector<std::string>>& lexicons) {
            eval::RubricConfig rubric;
            for (const auto& [abbr, terms] : lexicons)
                rubric.lexicons[abbr] = {terms.begin(), terms.end()};
            eval::RubricScorer scorer(rubric);
            std::vector<eval::ScoreRow> rows;
            for (const townsim::Transcript& t : townsim::read_transcripts(path)) {
                if (t.failure) continue;
                eval::ScoreRow row;
                row.conversation_id = t.id;
                row.pair_label = t.pair.first + "-" + t.pair.second;
                row.card = scorer.score(t);
                rows.push_back(std::move(row));
            }
            return eval::scores_to_json(rows).dump();
        },
        py::arg("path"), py::arg("lexicons") = std::map<std::string, std::vector<std::string>>{},
        "Score every completed transcript in a file; returns JSON score rows.");

    // --- pipeline -------------------------------------------------------

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            std::ostringstream err;
            int code = cli::run(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"),
        "Run the command-line pipeline; returns (exit_code, stdout, stderr).");
}
