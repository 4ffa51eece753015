#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace chemtown::kgraph {

enum class EntityKind { substance, reaction, catalyst, process_parameter, concept_node };

std::string_view kind_name(EntityKind kind);
EntityKind kind_from_name(std::string_view name); // throws FormatError on unknown kind

struct Entity {
    std::string id;
    EntityKind kind = EntityKind::concept_node;
    std::string name;
    std::map<std::string, std::string> attributes;

    bool operator==(const Entity&) const = default;
};

struct Relation {
    std::string src;
    std::string dst;
    std::string label; // e.g. "catalyzes", "produces", "constrains"
    std::map<std::string, std::string> attributes;

    bool operator==(const Relation&) const = default;
};

inline constexpr std::string_view kWildcardLabel = "*";

struct PathQuery {
    std::string start;
    std::vector<std::string> label_pattern; // empty = any labels, any length up to max_hops
    std::size_t max_hops = 6;
};

/// A path from the query start: entity ids alternating with relation labels,
/// e0 l0 e1 l1 ... en.
struct Path {
    std::vector<std::string> elements;

    std::size_t hops() const { return elements.empty() ? 0 : elements.size() / 2; }
    bool operator==(const Path&) const = default;
};

/// Embedded typed entity-relation graph with simple-path queries. Concurrent
/// readers are safe; mutation requires exclusive access.
class KnowledgeGraph {
public:
    /// Idempotent for an identical re-add; a re-add with changed fields throws
    /// ConflictError.
    void add_entity(const Entity& entity);

    /// Endpoints must exist (ReferenceError otherwise). A duplicate
    /// (src, dst, label) with equal attributes is idempotent; differing
    /// attributes throw ConflictError.
    void add_relation(const Relation& relation);

    const Entity* find_entity(const std::string& id) const;
    std::size_t entity_count() const { return entities_.size(); }
    std::size_t relation_count() const { return relation_count_; }
    std::vector<Relation> relations() const;

    const std::vector<Relation>& outgoing(const std::string& id) const;

    /// All simple paths (no repeated entity) from q.start whose edge labels
    /// match q.label_pattern ("*" matches anything; an empty pattern matches
    /// any labels at any length 1..max_hops; a non-empty pattern fixes the
    /// path length to the pattern length). Ordered by (length asc, then
    /// lexicographic over the element sequence).
    std::vector<Path> multi_hop(const PathQuery& q) const;

    /// Upper bound accepted for PathQuery.max_hops (default 6).
    void set_hop_cap(std::size_t cap) { hop_cap_ = cap; }
    std::size_t hop_cap() const { return hop_cap_; }

    /// JSON Lines: entity lines then relation lines, tagged {"t":"e"|"r",...},
    /// sorted so equal graphs serialize identically.
    void save(const std::filesystem::path& path) const;
    static KnowledgeGraph load(const std::filesystem::path& path);

    /// nodes/edges CSV pair for visualization.
    void export_csv(const std::filesystem::path& nodes_path,
                    const std::filesystem::path& edges_path) const;

    bool operator==(const KnowledgeGraph& other) const;

private:
    std::map<std::string, Entity> entities_;
    std::map<std::string, std::vector<Relation>> out_; // sorted by (dst, label)
    std::size_t relation_count_ = 0;
    std::size_t hop_cap_ = 6;
};

bool path_order_less(const Path& a, const Path& b);

} // namespace chemtown::kgraph
