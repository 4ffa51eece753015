#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace chemtown::ontology {

struct ConceptDef {
    std::string term;
    std::string definition;
    std::set<std::string> aliases;

    bool operator==(const ConceptDef&) const = default;
};

/// One domain's concept vocabulary. Terms are unique within the domain and
/// aliases may not collide with terms.
struct DomainOntology {
    std::string domain;
    std::vector<ConceptDef> concepts;

    void validate() const;
};

enum class MappingRelation { exact, broader, narrower, related };

std::string_view relation_name(MappingRelation relation);
MappingRelation relation_from_name(std::string_view name);

struct ConceptMapping {
    std::string src_domain;
    std::string src_term;
    std::string dst_domain;
    std::string dst_term;
    MappingRelation relation = MappingRelation::exact;

    bool operator==(const ConceptMapping&) const = default;
};

enum class GapBin { proximate, medium, distant };

std::string_view bin_name(GapBin bin);

struct BinThresholds {
    double proximate_lt = 0.33; // distance below this is proximate
    double medium_lt = 0.66;    // below this is medium, else distant

    void validate() const;
};

/// Distance bin for a distance in [0,1]; throws InputError out of range.
GapBin classify_pair(double distance, const BinThresholds& thresholds = {});

inline constexpr double kDefaultInterventionThreshold = 0.3;

/// True when the unmapped fraction reaches tau (inclusive).
bool should_intervene(double fraction, double tau = kDefaultInterventionThreshold);

struct AppliedTranslation {
    std::string src_term;
    std::string dst_term;
    MappingRelation relation = MappingRelation::exact;

    bool operator==(const AppliedTranslation&) const = default;
};

/// What the mediator did to one turn.
struct MediationRecord {
    std::string conversation_id;
    std::size_t round = 0;
    std::vector<std::string> unmapped_terms;
    std::vector<AppliedTranslation> translations;
    bool intervened = false;

    bool operator==(const MediationRecord&) const = default;
};

struct MisalignmentReport {
    double unmapped_fraction = 0.0;
    std::vector<std::string> unmapped_terms; // source-domain terms with no mapping
    std::vector<std::string> found_terms;    // all source-domain terms seen
};

struct TranslationResult {
    std::string text;
    MediationRecord record;
};

/// Domain ontologies, cross-domain concept mappings, and the distance metric.
/// Immutable after loading; all queries are pure and safe to call concurrently.
class OntologyRegistry {
public:
    void register_ontology(DomainOntology ontology);

    /// Both terms must exist in their ontologies; at most one mapping per
    /// (src_domain, src_term, dst_domain). Identical re-add is idempotent,
    /// a differing one throws ConflictError.
    void add_mapping(ConceptMapping mapping);

    bool has_domain(const std::string& domain) const;
    std::vector<std::string> domain_tags() const;
    const DomainOntology& ontology(const std::string& domain) const;
    const ConceptMapping* find_mapping(const std::string& src_domain, const std::string& src_term,
                                       const std::string& dst_domain) const;

    /// Jaccard distance over concept term sets with aliases folded in,
    /// case-insensitive: 1 - |A n B| / |A u B|. An override entry, when set,
    /// takes precedence and needs no registered ontologies; otherwise both
    /// domains must be registered (ReferenceError).
    double domain_distance(const std::string& a, const std::string& b) const;

    void set_distance_override(const std::string& a, const std::string& b, double distance);
    bool has_distance_override(const std::string& a, const std::string& b) const;

    /// Whole-token, alias-aware scan of `text` for src-domain terms. The
    /// unmapped fraction counts distinct concepts with no mapping into dst
    /// over distinct concepts found; no find means fraction 0.
    MisalignmentReport detect_misalignment(std::string_view text, const std::string& src_domain,
                                           const std::string& dst_domain) const;

    /// Rewrites each mapped src term as "dst_term (original text)". Matching is
    /// longest-first, left-to-right, single pass; produced text is never
    /// re-scanned. Unmapped terms stay intact and are recorded. The returned
    /// record has intervened=true iff at least one translation applied.
    TranslationResult translate(std::string_view text, const std::string& src_domain,
                                const std::string& dst_domain) const;

    bool should_intervene(double fraction) const;
    void set_intervention_threshold(double tau) { intervention_threshold_ = tau; }
    double intervention_threshold() const { return intervention_threshold_; }

    void set_bin_thresholds(BinThresholds thresholds);
    const BinThresholds& bin_thresholds() const { return bin_thresholds_; }
    GapBin classify_pair(double distance) const;

    /// Line-oriented ontology file: term|definition|alias1,alias2 per line.
    /// The domain tag is the file stem.
    static DomainOntology parse_ontology_file(const std::filesystem::path& path);
    void load_ontology_dir(const std::filesystem::path& dir);

    /// Mapping file: src_domain|src_term|dst_domain|dst_term|relation per line.
    void load_mapping_file(const std::filesystem::path& path);

    /// Symmetric matrix file: first line holds domain tags, each following
    /// line a row tag plus one value per column. Values must be symmetric.
    void load_distance_matrix(const std::filesystem::path& path);

private:
    /// Lowercased term and alias set of one domain.
    const std::set<std::string>& folded_terms(const std::string& domain) const;

    std::map<std::string, DomainOntology> domains_;
    std::map<std::string, std::set<std::string>> folded_; // domain -> lowercased terms+aliases
    std::map<std::tuple<std::string, std::string, std::string>, ConceptMapping> mappings_;
    std::map<std::pair<std::string, std::string>, double> overrides_; // key ordered (min,max)
    double intervention_threshold_ = kDefaultInterventionThreshold;
    BinThresholds bin_thresholds_{};
};

} // namespace chemtown::ontology
