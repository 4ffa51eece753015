#include "chemtown/ontology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "chemtown/corpus.hpp"
#include "chemtown/errors.hpp"

namespace chemtown::ontology {

namespace {

std::string_view trim_view(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(trim_view(s.substr(start)));
            return out;
        }
        out.emplace_back(trim_view(s.substr(start, pos - start)));
        start = pos + 1;
    }
}

/// One matchable surface form of a concept.
struct Pattern {
    std::vector<std::string> tokens; // lowercased
    std::string concept_term;        // canonical term
};

/// Patterns for a domain, longest first so scanning prefers the longest match.
std::vector<Pattern> build_patterns(const DomainOntology& ontology) {
    std::vector<Pattern> patterns;
    for (const ConceptDef& c : ontology.concepts) {
        patterns.push_back({corpus::lowercase_tokens(c.term), c.term});
        for (const std::string& alias : c.aliases) {
            patterns.push_back({corpus::lowercase_tokens(alias), c.term});
        }
    }
    std::sort(patterns.begin(), patterns.end(), [](const Pattern& a, const Pattern& b) {
        if (a.tokens.size() != b.tokens.size()) return a.tokens.size() > b.tokens.size();
        if (a.tokens != b.tokens) return a.tokens < b.tokens;
        return a.concept_term < b.concept_term;
    });
    return patterns;
}

std::size_t match_at(const Pattern& p, const std::vector<std::string>& tokens, std::size_t i) {
    if (p.tokens.empty() || i + p.tokens.size() > tokens.size()) return 0;
    for (std::size_t j = 0; j < p.tokens.size(); ++j) {
        if (tokens[i + j] != p.tokens[j]) return 0;
    }
    return p.tokens.size();
}

void push_unique(std::vector<std::string>& items, const std::string& value) {
    if (std::find(items.begin(), items.end(), value) == items.end()) items.push_back(value);
}

} // namespace

void DomainOntology::validate() const {
    if (domain.empty()) throw ConfigError("ontology domain tag must be non-empty");
    std::set<std::string> terms;
    for (const ConceptDef& c : concepts) {
        if (c.term.empty()) throw ConfigError("concept term must be non-empty");
        if (!terms.insert(corpus::ascii_lower(c.term)).second)
            throw ConfigError("duplicate concept term in " + domain + ": " + c.term);
    }
    for (const ConceptDef& c : concepts) {
        for (const std::string& alias : c.aliases) {
            if (terms.count(corpus::ascii_lower(alias)))
                throw ConfigError("alias collides with a term in " + domain + ": " + alias);
        }
    }
}

std::string_view relation_name(MappingRelation relation) {
    switch (relation) {
    case MappingRelation::exact: return "exact";
    case MappingRelation::broader: return "broader";
    case MappingRelation::narrower: return "narrower";
    case MappingRelation::related: return "related";
    }
    return "unknown";
}

MappingRelation relation_from_name(std::string_view name) {
    if (name == "exact") return MappingRelation::exact;
    if (name == "broader") return MappingRelation::broader;
    if (name == "narrower") return MappingRelation::narrower;
    if (name == "related") return MappingRelation::related;
    throw FormatError("unknown mapping relation: " + std::string(name));
}

std::string_view bin_name(GapBin bin) {
    switch (bin) {
    case GapBin::proximate: return "proximate";
    case GapBin::medium: return "medium";
    case GapBin::distant: return "distant";
    }
    return "unknown";
}

void BinThresholds::validate() const {
    if (proximate_lt < 0.0 || medium_lt > 1.0 || proximate_lt > medium_lt)
        throw ConfigError("bin thresholds must satisfy 0 <= proximate < medium <= 1");
}

GapBin classify_pair(double distance, const BinThresholds& thresholds) {
    thresholds.validate();
    if (distance < 0.0 || distance > 1.0)
        throw InputError("distance out of range [0, 1]: " + std::to_string(distance));
    if (distance < thresholds.proximate_lt) return GapBin::proximate;
    if (distance < thresholds.medium_lt) return GapBin::medium;
    return GapBin::distant;
}

bool should_intervene(double fraction, double tau) { return fraction >= tau; }

void OntologyRegistry::register_ontology(DomainOntology ontology) {
    ontology.validate();
    std::set<std::string> folded;
    for (const ConceptDef& c : ontology.concepts) {
        folded.insert(corpus::ascii_lower(c.term));
        for (const std::string& alias : c.aliases) folded.insert(corpus::ascii_lower(alias));
    }
    folded_[ontology.domain] = std::move(folded);
    domains_[ontology.domain] = std::move(ontology);
}

void OntologyRegistry::add_mapping(ConceptMapping mapping) {
    const DomainOntology& src = ontology(mapping.src_domain);
    const DomainOntology& dst = ontology(mapping.dst_domain);
    auto has_term = [](const DomainOntology& o, const std::string& term) {
        return std::any_of(o.concepts.begin(), o.concepts.end(),
                           [&](const ConceptDef& c) { return c.term == term; });
    };
    if (!has_term(src, mapping.src_term))
        throw ReferenceError("no concept \"" + mapping.src_term + "\" in domain " +
                             mapping.src_domain);
    if (!has_term(dst, mapping.dst_term))
        throw ReferenceError("no concept \"" + mapping.dst_term + "\" in domain " +
                             mapping.dst_domain);
    auto key = std::make_tuple(mapping.src_domain, mapping.src_term, mapping.dst_domain);
    auto it = mappings_.find(key);
    if (it != mappings_.end()) {
        if (it->second == mapping) return;
        throw ConflictError("conflicting mapping for " + mapping.src_domain + "/" +
                            mapping.src_term + " -> " + mapping.dst_domain);
    }
    mappings_.emplace(std::move(key), std::move(mapping));
}

bool OntologyRegistry::has_domain(const std::string& domain) const {
    return domains_.count(domain) != 0;
}

std::vector<std::string> OntologyRegistry::domain_tags() const {
    std::vector<std::string> tags;
    tags.reserve(domains_.size());
    for (const auto& [tag, ontology] : domains_) tags.push_back(tag);
    return tags;
}

const DomainOntology& OntologyRegistry::ontology(const std::string& domain) const {
    auto it = domains_.find(domain);
    if (it == domains_.end()) throw ReferenceError("domain not registered: " + domain);
    return it->second;
}

const ConceptMapping* OntologyRegistry::find_mapping(const std::string& src_domain,
                                                     const std::string& src_term,
                                                     const std::string& dst_domain) const {
    auto it = mappings_.find(std::make_tuple(src_domain, src_term, dst_domain));
    return it == mappings_.end() ? nullptr : &it->second;
}

double OntologyRegistry::domain_distance(const std::string& a, const std::string& b) const {
    auto key = std::minmax(a, b);
    auto it = overrides_.find({key.first, key.second});
    if (it != overrides_.end()) return it->second;
    const std::set<std::string>& fa = folded_terms(a);
    const std::set<std::string>& fb = folded_terms(b);
    std::vector<std::string> intersection;
    std::set_intersection(fa.begin(), fa.end(), fb.begin(), fb.end(),
                          std::back_inserter(intersection));
    std::size_t union_size = fa.size() + fb.size() - intersection.size();
    if (union_size == 0) return 0.0;
    return 1.0 - static_cast<double>(intersection.size()) / static_cast<double>(union_size);
}

void OntologyRegistry::set_distance_override(const std::string& a, const std::string& b,
                                             double distance) {
    if (distance < 0.0 || distance > 1.0)
        throw InputError("distance out of range [0, 1]: " + std::to_string(distance));
    auto key = std::minmax(a, b);
    overrides_[{key.first, key.second}] = distance;
}

bool OntologyRegistry::has_distance_override(const std::string& a, const std::string& b) const {
    auto key = std::minmax(a, b);
    return overrides_.count({key.first, key.second}) != 0;
}

const std::set<std::string>& OntologyRegistry::folded_terms(const std::string& domain) const {
    auto it = folded_.find(domain);
    if (it == folded_.end()) throw ReferenceError("domain not registered: " + domain);
    return it->second;
}

MisalignmentReport OntologyRegistry::detect_misalignment(std::string_view text,
                                                         const std::string& src_domain,
                                                         const std::string& dst_domain) const {
    const DomainOntology& src = ontology(src_domain);
    ontology(dst_domain); // both ends must be registered
    const std::vector<Pattern> patterns = build_patterns(src);
    const std::vector<std::string> tokens = corpus::lowercase_tokens(text);

    MisalignmentReport report;
    std::size_t i = 0;
    while (i < tokens.size()) {
        std::size_t advance = 1;
        for (const Pattern& p : patterns) {
            if (std::size_t len = match_at(p, tokens, i)) {
                push_unique(report.found_terms, p.concept_term);
                advance = len;
                break;
            }
        }
        i += advance;
    }
    for (const std::string& term : report.found_terms) {
        if (!find_mapping(src_domain, term, dst_domain))
            push_unique(report.unmapped_terms, term);
    }
    report.unmapped_fraction =
        report.found_terms.empty()
            ? 0.0
            : static_cast<double>(report.unmapped_terms.size()) /
                  static_cast<double>(report.found_terms.size());
    return report;
}

TranslationResult OntologyRegistry::translate(std::string_view text, const std::string& src_domain,
                                              const std::string& dst_domain) const {
    const DomainOntology& src = ontology(src_domain);
    ontology(dst_domain);
    const std::vector<Pattern> patterns = build_patterns(src);
    const std::vector<corpus::TokenSpan> spans = corpus::tokenize(text);
    std::vector<std::string> tokens;
    tokens.reserve(spans.size());
    for (const corpus::TokenSpan& s : spans) {
        tokens.push_back(corpus::ascii_lower(text.substr(s.begin, s.end - s.begin)));
    }

    TranslationResult result;
    std::string& out = result.text;
    MediationRecord& record = result.record;
    std::size_t copied = 0; // bytes of `text` already emitted
    std::size_t i = 0;
    while (i < tokens.size()) {
        const Pattern* matched = nullptr;
        std::size_t len = 0;
        for (const Pattern& p : patterns) {
            if (std::size_t l = match_at(p, tokens, i)) {
                matched = &p;
                len = l;
                break;
            }
        }
        if (!matched) {
            ++i;
            continue;
        }
        const ConceptMapping* mapping =
            find_mapping(src_domain, matched->concept_term, dst_domain);
        if (!mapping) {
            push_unique(record.unmapped_terms, matched->concept_term);
            i += len;
            continue;
        }
        std::size_t begin = spans[i].begin;
        std::size_t end = spans[i + len - 1].end;
        out.append(text.substr(copied, begin - copied));
        out.append(mapping->dst_term);
        out.append(" (");
        out.append(text.substr(begin, end - begin));
        out.append(")");
        copied = end;
        bool known = std::any_of(record.translations.begin(), record.translations.end(),
                                 [&](const AppliedTranslation& t) {
                                     return t.src_term == mapping->src_term &&
                                            t.dst_term == mapping->dst_term;
                                 });
        if (!known)
            record.translations.push_back(
                {mapping->src_term, mapping->dst_term, mapping->relation});
        i += len;
    }
    out.append(text.substr(copied));
    record.intervened = !record.translations.empty();
    return result;
}

bool OntologyRegistry::should_intervene(double fraction) const {
    return ontology::should_intervene(fraction, intervention_threshold_);
}

void OntologyRegistry::set_bin_thresholds(BinThresholds thresholds) {
    thresholds.validate();
    bin_thresholds_ = thresholds;
}

GapBin OntologyRegistry::classify_pair(double distance) const {
    return ontology::classify_pair(distance, bin_thresholds_);
}

DomainOntology OntologyRegistry::parse_ontology_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read ontology: " + path.string());
    DomainOntology ontology;
    ontology.domain = path.stem().string();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view t = trim_view(line);
        if (t.empty() || t.front() == '#') continue;
        std::vector<std::string> fields = split(t, '|');
        if (fields[0].empty())
            throw FormatError("concept line has an empty term in " + path.filename().string(),
                              line_no);
        ConceptDef concept_def;
        concept_def.term = fields[0];
        if (fields.size() > 1) concept_def.definition = fields[1];
        if (fields.size() > 2 && !fields[2].empty()) {
            for (const std::string& alias : split(fields[2], ',')) {
                if (!alias.empty()) concept_def.aliases.insert(alias);
            }
        }
        ontology.concepts.push_back(std::move(concept_def));
    }
    ontology.validate();
    return ontology;
}

void OntologyRegistry::load_ontology_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw InputError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) register_ontology(parse_ontology_file(path));
}

void OntologyRegistry::load_mapping_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read mapping file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view t = trim_view(line);
        if (t.empty() || t.front() == '#') continue;
        std::vector<std::string> fields = split(t, '|');
        if (fields.size() != 5)
            throw FormatError("mapping line needs 5 fields in " + path.filename().string(),
                              line_no);
        ConceptMapping mapping;
        mapping.src_domain = fields[0];
        mapping.src_term = fields[1];
        mapping.dst_domain = fields[2];
        mapping.dst_term = fields[3];
        try {
            mapping.relation = relation_from_name(fields[4]);
        } catch (const FormatError& e) {
            throw FormatError(std::string(e.what()) + " in " + path.filename().string(), line_no);
        }
        add_mapping(std::move(mapping));
    }
}

void OntologyRegistry::load_distance_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read distance matrix: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> tags;
    std::vector<std::vector<double>> values;
    std::vector<std::string> row_tags;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view t = trim_view(line);
        if (t.empty() || t.front() == '#') continue;
        std::istringstream fields{std::string(t)};
        if (tags.empty()) {
            std::string tag;
            while (fields >> tag) tags.push_back(tag);
            if (tags.empty()) throw FormatError("matrix header has no tags", line_no);
            continue;
        }
        std::string row_tag;
        fields >> row_tag;
        std::vector<double> row;
        double value = 0.0;
        while (fields >> value) row.push_back(value);
        if (row.size() != tags.size())
            throw FormatError("matrix row " + row_tag + " has " + std::to_string(row.size()) +
                                  " values, expected " + std::to_string(tags.size()),
                              line_no);
        row_tags.push_back(row_tag);
        values.push_back(std::move(row));
    }
    if (row_tags != tags)
        throw FormatError("matrix row tags must repeat the header tags in order");
    for (std::size_t r = 0; r < tags.size(); ++r) {
        for (std::size_t c = r + 1; c < tags.size(); ++c) {
            if (std::abs(values[r][c] - values[c][r]) > 1e-12)
                throw FormatError("matrix is not symmetric at " + tags[r] + "/" + tags[c]);
            set_distance_override(tags[r], tags[c], values[r][c]);
        }
    }
}

} // namespace chemtown::ontology
