#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chemtown/backend.hpp"

namespace chemtown::vstore {

inline constexpr std::size_t kDefaultDim = 1536;

/// Identifies the chunk a vector was embedded from.
struct ChunkRef {
    std::string doc_id;
    std::size_t index = 0;

    auto operator<=>(const ChunkRef&) const = default;
    std::string label() const { return doc_id + "#" + std::to_string(index); }
};

/// (q . d) / (|q| |d|). Throws ShapeError on dimension mismatch and
/// DegenerateVectorError when either vector has zero norm.
double cosine_similarity(std::span<const double> q, std::span<const double> d);

bool is_zero_vector(std::span<const double> v);

struct VectorRecord {
    ChunkRef ref;
    std::vector<double> vector;

    bool operator==(const VectorRecord&) const = default;
};

struct RetrievalConfig {
    std::size_t k = 5;
    double threshold = 0.75;

    void validate() const; // k >= 1, threshold in [-1, 1]
};

struct SearchHit {
    ChunkRef ref;
    double similarity = 0.0;
};

/// Exact-similarity store: linear scan under the retrieval contract, with
/// JSON Lines persistence. Any number of concurrent readers may call the
/// const members; upsert and load require exclusive access.
class VectorStore {
public:
    explicit VectorStore(std::size_t dim = kDefaultDim, std::string embedder_id = "hash-v1");

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return records_.size(); }
    const std::string& embedder_id() const { return embedder_id_; }

    /// Inserts or replaces the record for record.ref. Throws ShapeError when
    /// the vector length differs from the store dimension.
    void upsert(VectorRecord record);

    bool contains(const ChunkRef& ref) const;
    const VectorRecord* find(const ChunkRef& ref) const;
    const std::vector<VectorRecord>& records() const { return records_; }

    /// Top-k records with similarity strictly above cfg.threshold, sorted by
    /// similarity descending, ties by (doc_id, index) ascending. Records whose
    /// vector has zero norm never match. Throws DegenerateVectorError for a
    /// zero query and ShapeError on dimension mismatch.
    std::vector<SearchHit> retrieve(std::span<const double> query,
                                    const RetrievalConfig& cfg = {}) const;

    /// Writes a header line {dim, count, embedder_id} then one record per line,
    /// records ordered by ref so equal stores serialize identically.
    void save(const std::filesystem::path& path) const;
    static VectorStore load(const std::filesystem::path& path);

    bool operator==(const VectorStore& other) const;

private:
    std::size_t dim_;
    std::string embedder_id_;
    std::vector<VectorRecord> records_;
    std::map<ChunkRef, std::size_t> by_ref_;
};

/// Text -> fixed-dimension vectors.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dim() const = 0;
    virtual std::string id() const = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;

    std::vector<double> embed_one(const std::string& text);
};

/// Deterministic offline embedder: hashed-token frequency counts folded into
/// `dim` buckets and L2-normalized. A text with no tokens maps to the all-zero
/// sentinel, which similarity rejects as degenerate.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim = kDefaultDim);

    std::size_t dim() const override { return dim_; }
    std::string id() const override;
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

    /// Bucket index a token folds into; exposed for collision-aware tests.
    std::size_t bucket(std::string_view token) const;

private:
    std::size_t dim_;
};

/// Embedder backed by the remote embeddings endpoint.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(backend::BackendConfig cfg, std::size_t dim = kDefaultDim);

    std::size_t dim() const override { return dim_; }
    std::string id() const override;
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

    backend::Client& client() { return client_; }

private:
    backend::Client client_;
    std::size_t dim_;
};

} // namespace chemtown::vstore
