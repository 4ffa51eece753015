#include "chemtown/vectorstore.hpp"

#include <algorithm>
#include <cmath>

#include "chemtown/corpus.hpp"
#include "chemtown/errors.hpp"
#include "chemtown/hash.hpp"
#include "chemtown/jsonl.hpp"

namespace chemtown::vstore {

double cosine_similarity(std::span<const double> q, std::span<const double> d) {
    if (q.size() != d.size())
        throw ShapeError("dimension mismatch: " + std::to_string(q.size()) + " vs " +
                         std::to_string(d.size()));
    double dot = 0.0;
    double qq = 0.0;
    double dd = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        dot += q[i] * d[i];
        qq += q[i] * q[i];
        dd += d[i] * d[i];
    }
    if (qq == 0.0 || dd == 0.0) throw DegenerateVectorError("zero-norm vector in similarity");
    return dot / (std::sqrt(qq) * std::sqrt(dd));
}

bool is_zero_vector(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

void RetrievalConfig::validate() const {
    if (k == 0) throw ConfigError("retrieval k must be at least 1");
    if (threshold < -1.0 || threshold > 1.0)
        throw ConfigError("retrieval threshold must lie in [-1, 1]");
}

VectorStore::VectorStore(std::size_t dim, std::string embedder_id)
    : dim_(dim), embedder_id_(std::move(embedder_id)) {
    if (dim_ == 0) throw ConfigError("store dimension must be positive");
}

void VectorStore::upsert(VectorRecord record) {
    if (record.vector.size() != dim_)
        throw ShapeError("vector has " + std::to_string(record.vector.size()) +
                         " components, store dimension is " + std::to_string(dim_));
    auto it = by_ref_.find(record.ref);
    if (it != by_ref_.end()) {
        records_[it->second].vector = std::move(record.vector);
        return;
    }
    by_ref_.emplace(record.ref, records_.size());
    records_.push_back(std::move(record));
}

bool VectorStore::contains(const ChunkRef& ref) const { return by_ref_.count(ref) != 0; }

const VectorRecord* VectorStore::find(const ChunkRef& ref) const {
    auto it = by_ref_.find(ref);
    return it == by_ref_.end() ? nullptr : &records_[it->second];
}

std::vector<SearchHit> VectorStore::retrieve(std::span<const double> query,
                                             const RetrievalConfig& cfg) const {
    cfg.validate();
    if (query.size() != dim_)
        throw ShapeError("query has " + std::to_string(query.size()) +
                         " components, store dimension is " + std::to_string(dim_));
    if (is_zero_vector(query)) throw DegenerateVectorError("zero-norm query");

    std::vector<SearchHit> hits;
    for (const VectorRecord& record : records_) {
        if (is_zero_vector(record.vector)) continue;
        double sim = cosine_similarity(query, record.vector);
        if (sim > cfg.threshold) hits.push_back({record.ref, sim});
    }
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.ref < b.ref;
    });
    if (hits.size() > cfg.k) hits.resize(cfg.k);
    return hits;
}

void VectorStore::save(const std::filesystem::path& path) const {
    std::vector<const VectorRecord*> ordered;
    ordered.reserve(records_.size());
    for (const VectorRecord& r : records_) ordered.push_back(&r);
    std::sort(ordered.begin(), ordered.end(),
              [](const VectorRecord* a, const VectorRecord* b) { return a->ref < b->ref; });

    std::vector<nlohmann::json> lines;
    lines.reserve(ordered.size() + 1);
    lines.push_back({{"dim", dim_}, {"count", records_.size()}, {"embedder_id", embedder_id_}});
    for (const VectorRecord* r : ordered) {
        lines.push_back({{"doc_id", r->ref.doc_id}, {"index", r->ref.index},
                         {"vector", r->vector}});
    }
    jsonl::write_file(path, lines);
}

VectorStore VectorStore::load(const std::filesystem::path& path) {
    const std::vector<nlohmann::json> lines = jsonl::read_file(path);
    if (lines.empty()) throw FormatError("store file has no header: " + path.string(), 1);
    const nlohmann::json& header = lines.front();
    const std::size_t dim = jsonl::require(header, "dim", 1).get<std::size_t>();
    const std::size_t count = jsonl::require(header, "count", 1).get<std::size_t>();
    VectorStore store(dim, jsonl::require(header, "embedder_id", 1).get<std::string>());
    if (lines.size() - 1 != count)
        throw FormatError("store file lists " + std::to_string(lines.size() - 1) +
                              " records, header says " + std::to_string(count),
                          lines.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const nlohmann::json& j = lines[i];
        VectorRecord record;
        record.ref.doc_id = jsonl::require(j, "doc_id", i + 1).get<std::string>();
        record.ref.index = jsonl::require(j, "index", i + 1).get<std::size_t>();
        record.vector = jsonl::require(j, "vector", i + 1).get<std::vector<double>>();
        if (record.vector.size() != dim)
            throw FormatError("record vector has " + std::to_string(record.vector.size()) +
                                  " components, store dimension is " + std::to_string(dim),
                              i + 1);
        store.upsert(std::move(record));
    }
    return store;
}

bool VectorStore::operator==(const VectorStore& other) const {
    if (dim_ != other.dim_ || embedder_id_ != other.embedder_id_ ||
        records_.size() != other.records_.size())
        return false;
    for (const VectorRecord& r : records_) {
        const VectorRecord* o = other.find(r.ref);
        if (!o || o->vector != r.vector) return false;
    }
    return true;
}

std::vector<double> Embedder::embed_one(const std::string& text) {
    return embed({text}).front();
}

HashEmbedder::HashEmbedder(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) throw ConfigError("embedder dimension must be positive");
}

std::string HashEmbedder::id() const { return "hash-v1"; }

std::size_t HashEmbedder::bucket(std::string_view token) const {
    return static_cast<std::size_t>(hash::fnv1a64(token) % dim_);
}

std::vector<std::vector<double>> HashEmbedder::embed(const std::vector<std::string>& texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const std::string& text : texts) {
        std::vector<double> v(dim_, 0.0);
        for (const std::string& token : corpus::lowercase_tokens(text)) {
            v[bucket(token)] += 1.0;
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (norm > 0.0) {
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
        }
        out.push_back(std::move(v));
    }
    return out;
}

RemoteEmbedder::RemoteEmbedder(backend::BackendConfig cfg, std::size_t dim)
    : client_(std::move(cfg)), dim_(dim) {
    if (dim_ == 0) throw ConfigError("embedder dimension must be positive");
}

std::string RemoteEmbedder::id() const { return "remote:" + client_.config().model_id; }

std::vector<std::vector<double>> RemoteEmbedder::embed(const std::vector<std::string>& texts) {
    return client_.embed(texts);
}

} // namespace chemtown::vstore
