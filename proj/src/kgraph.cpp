#include "chemtown/kgraph.hpp"

#include <algorithm>
#include <fstream>

#include "chemtown/errors.hpp"
#include "chemtown/jsonl.hpp"

namespace chemtown::kgraph {

std::string_view kind_name(EntityKind kind) {
    switch (kind) {
    case EntityKind::substance: return "substance";
    case EntityKind::reaction: return "reaction";
    case EntityKind::catalyst: return "catalyst";
    case EntityKind::process_parameter: return "process_parameter";
    case EntityKind::concept_node: return "concept";
    }
    return "unknown";
}

EntityKind kind_from_name(std::string_view name) {
    if (name == "substance") return EntityKind::substance;
    if (name == "reaction") return EntityKind::reaction;
    if (name == "catalyst") return EntityKind::catalyst;
    if (name == "process_parameter") return EntityKind::process_parameter;
    if (name == "concept") return EntityKind::concept_node;
    throw FormatError("unknown entity kind: " + std::string(name));
}

void KnowledgeGraph::add_entity(const Entity& entity) {
    if (entity.id.empty()) throw InputError("entity id must be non-empty");
    auto it = entities_.find(entity.id);
    if (it != entities_.end()) {
        if (it->second == entity) return;
        throw ConflictError("entity re-added with different fields: " + entity.id);
    }
    entities_.emplace(entity.id, entity);
}

void KnowledgeGraph::add_relation(const Relation& relation) {
    if (entities_.find(relation.src) == entities_.end())
        throw ReferenceError("relation source does not exist: " + relation.src);
    if (entities_.find(relation.dst) == entities_.end())
        throw ReferenceError("relation target does not exist: " + relation.dst);
    std::vector<Relation>& edges = out_[relation.src];
    auto pos = std::lower_bound(edges.begin(), edges.end(), relation,
                                [](const Relation& a, const Relation& b) {
                                    return std::tie(a.dst, a.label) < std::tie(b.dst, b.label);
                                });
    if (pos != edges.end() && pos->dst == relation.dst && pos->label == relation.label) {
        if (pos->attributes == relation.attributes) return;
        throw ConflictError("relation re-added with different attributes: " + relation.src +
                            " -" + relation.label + "-> " + relation.dst);
    }
    edges.insert(pos, relation);
    ++relation_count_;
}

const Entity* KnowledgeGraph::find_entity(const std::string& id) const {
    auto it = entities_.find(id);
    return it == entities_.end() ? nullptr : &it->second;
}

std::vector<Relation> KnowledgeGraph::relations() const {
    std::vector<Relation> out;
    out.reserve(relation_count_);
    for (const auto& [src, edges] : out_) {
        out.insert(out.end(), edges.begin(), edges.end());
    }
    return out;
}

const std::vector<Relation>& KnowledgeGraph::outgoing(const std::string& id) const {
    static const std::vector<Relation> empty;
    auto it = out_.find(id);
    return it == out_.end() ? empty : it->second;
}

namespace {

bool label_matches(const std::string& pattern, const std::string& label) {
    return pattern == kWildcardLabel || pattern == label;
}

struct PathSearch {
    const KnowledgeGraph& graph;
    const PathQuery& query;
    std::size_t max_len;
    std::vector<std::string> current;
    std::vector<std::string> visited;
    std::vector<Path> results;

    bool is_visited(const std::string& id) const {
        return std::find(visited.begin(), visited.end(), id) != visited.end();
    }

    void walk(const std::string& node, std::size_t depth) {
        if (query.label_pattern.empty()) {
            if (depth > 0) results.push_back({current});
        } else if (depth == query.label_pattern.size()) {
            results.push_back({current});
            return;
        }
        if (depth >= max_len) return;
        for (const Relation& edge : graph.outgoing(node)) {
            if (!query.label_pattern.empty() &&
                !label_matches(query.label_pattern[depth], edge.label))
                continue;
            if (is_visited(edge.dst)) continue;
            visited.push_back(edge.dst);
            current.push_back(edge.label);
            current.push_back(edge.dst);
            walk(edge.dst, depth + 1);
            current.pop_back();
            current.pop_back();
            visited.pop_back();
        }
    }
};

} // namespace

std::vector<Path> KnowledgeGraph::multi_hop(const PathQuery& q) const {
    if (entities_.find(q.start) == entities_.end())
        throw ReferenceError("path query start does not exist: " + q.start);
    std::size_t max_len = std::min(q.max_hops, hop_cap_);
    if (!q.label_pattern.empty() && q.label_pattern.size() > max_len) return {};

    PathSearch search{*this, q, max_len, {q.start}, {q.start}, {}};
    search.walk(q.start, 0);
    std::sort(search.results.begin(), search.results.end(), path_order_less);
    return search.results;
}

void KnowledgeGraph::save(const std::filesystem::path& path) const {
    std::vector<nlohmann::json> lines;
    for (const auto& [id, e] : entities_) {
        lines.push_back({{"t", "e"}, {"id", id}, {"kind", std::string(kind_name(e.kind))},
                         {"name", e.name}, {"attributes", e.attributes}});
    }
    for (const Relation& r : relations()) {
        lines.push_back({{"t", "r"}, {"src", r.src}, {"dst", r.dst}, {"label", r.label},
                         {"attributes", r.attributes}});
    }
    jsonl::write_file(path, lines);
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& path) {
    KnowledgeGraph graph;
    std::size_t line_no = 0;
    for (const nlohmann::json& j : jsonl::read_file(path)) {
        ++line_no;
        const std::string tag = jsonl::require(j, "t", line_no).get<std::string>();
        if (tag == "e") {
            Entity e;
            e.id = jsonl::require(j, "id", line_no).get<std::string>();
            e.kind = kind_from_name(jsonl::require(j, "kind", line_no).get<std::string>());
            e.name = jsonl::require(j, "name", line_no).get<std::string>();
            e.attributes = jsonl::require(j, "attributes", line_no)
                               .get<std::map<std::string, std::string>>();
            graph.add_entity(e);
        } else if (tag == "r") {
            Relation r;
            r.src = jsonl::require(j, "src", line_no).get<std::string>();
            r.dst = jsonl::require(j, "dst", line_no).get<std::string>();
            r.label = jsonl::require(j, "label", line_no).get<std::string>();
            r.attributes = jsonl::require(j, "attributes", line_no)
                               .get<std::map<std::string, std::string>>();
            graph.add_relation(r);
        } else {
            throw FormatError("unknown record tag: " + tag, line_no);
        }
    }
    return graph;
}

namespace {

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

} // namespace

void KnowledgeGraph::export_csv(const std::filesystem::path& nodes_path,
                                const std::filesystem::path& edges_path) const {
    std::ofstream nodes(nodes_path, std::ios::binary | std::ios::trunc);
    if (!nodes) throw InputError("cannot write file: " + nodes_path.string());
    nodes << "id,kind,name\n";
    for (const auto& [id, e] : entities_) {
        nodes << csv_escape(id) << "," << kind_name(e.kind) << "," << csv_escape(e.name) << "\n";
    }
    std::ofstream edges(edges_path, std::ios::binary | std::ios::trunc);
    if (!edges) throw InputError("cannot write file: " + edges_path.string());
    edges << "src,label,dst\n";
    for (const Relation& r : relations()) {
        edges << csv_escape(r.src) << "," << csv_escape(r.label) << "," << csv_escape(r.dst)
              << "\n";
    }
}

bool KnowledgeGraph::operator==(const KnowledgeGraph& other) const {
    return entities_ == other.entities_ && relations() == other.relations();
}

bool path_order_less(const Path& a, const Path& b) {
    if (a.elements.size() != b.elements.size()) return a.elements.size() < b.elements.size();
    return a.elements < b.elements;
}

} // namespace chemtown::kgraph
