#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "newscast/corpus.hpp"
#include "newscast/error.hpp"

namespace newscast {

struct EmbeddingVector {
  std::string model_id;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

// Known vendor model widths; 0 for unknown models.
std::size_t declared_dimension(std::string_view model_id);

// Deterministic unit-norm stand-in for a vendor embedding model: dim standard
// normals from a counter-based generator keyed by (text, model_id, seed).
EmbeddingVector embed_offline(std::string_view text, std::string_view model_id, std::size_t dim,
                              std::uint64_t seed);

struct CacheEntry {
  HeadlineId hid = 0;
  EmbeddingVector vector;
};

// One JSON-lines record, newline-terminated.
std::string encode_cache_line(const CacheEntry& entry);

class EmbeddingStore {
 public:
  virtual ~EmbeddingStore() = default;
  virtual bool contains(HeadlineId hid, std::string_view model_id) const = 0;
  // Persists a batch. Called by writer threads under a shared append lock.
  virtual void append(std::span<const CacheEntry> batch) = 0;
};

// Append-only JSON-lines embedding cache. An empty path gives a memory-only cache.
class EmbeddingCache : public EmbeddingStore {
 public:
  using Key = std::pair<HeadlineId, std::string>;

  EmbeddingCache() = default;
  explicit EmbeddingCache(std::filesystem::path path);

  bool contains(HeadlineId hid, std::string_view model_id) const override;
  void append(std::span<const CacheEntry> batch) override;

  std::optional<EmbeddingVector> get(HeadlineId hid, std::string_view model_id) const;
  std::size_t size() const;
  // Lines dropped while loading (corrupt records or a truncated tail).
  std::size_t skipped_lines() const { return skipped_; }
  const std::filesystem::path& path() const { return path_; }
  std::map<Key, EmbeddingVector> entries() const;

 private:
  std::filesystem::path path_;
  std::size_t skipped_ = 0;
  mutable std::mutex mu_;
  std::map<Key, EmbeddingVector> entries_;
};

std::optional<EmbeddingVector> cache_get(const EmbeddingCache& cache, HeadlineId hid,
                                         std::string_view model_id);

// ---------------------------------------------------------------------------
// Providers

class TransportError : public Error {
 public:
  using Error::Error;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual const std::string& model_id() const = 0;
  virtual std::size_t dim() const = 0;
  // Must be safe to call concurrently. One vector per input text, in order.
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
};

enum class ProviderKind { Remote, Offline };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::Offline;
  std::string model_id = "text-embedding-3-small";
  std::size_t dim = 1536;
  std::uint64_t seed = 0;
  // Offline only: sleep per call to mimic vendor round trips.
  std::chrono::microseconds simulated_latency{0};

  std::string endpoint = "https://api.openai.com/v1/embeddings";
  std::string token_env = "OPENAI_API_KEY";
  std::chrono::milliseconds timeout{30000};
  std::size_t request_batch = 1;  // texts per provider call

  std::size_t workers = 500;
  std::size_t writer_count = 4;
  std::size_t flush_threshold = 100;
  std::size_t max_attempts = 3;
  std::chrono::milliseconds backoff{250};

  void validate() const;
};

class OfflineProvider : public EmbeddingProvider {
 public:
  OfflineProvider(std::string model_id, std::size_t dim, std::uint64_t seed,
                  std::chrono::microseconds latency = std::chrono::microseconds{0});
  const std::string& model_id() const override { return model_id_; }
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

 private:
  std::string model_id_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::chrono::microseconds latency_;
};

// POSTs {"model": ..., "input": [texts]} and accepts either {"vectors": [[...]]}
// or {"data": [{"index": i, "embedding": [...]}]}.
class RemoteProvider : public EmbeddingProvider {
 public:
  RemoteProvider(std::string endpoint, std::string model_id, std::size_t dim, std::string token,
                 std::chrono::milliseconds timeout);
  const std::string& model_id() const override { return model_id_; }
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

 private:
  std::string base_;  // scheme://host[:port]
  std::string path_;
  std::string model_id_;
  std::size_t dim_;
  std::string token_;
  std::chrono::milliseconds timeout_;
};

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config);

// ---------------------------------------------------------------------------
// Concurrent acquisition

struct FetchStats {
  std::size_t requested = 0;  // distinct ids in the input
  std::size_t cached = 0;     // already present, skipped
  std::size_t fetched = 0;
  std::size_t failed = 0;
  std::size_t provider_calls = 0;
  std::size_t flushes = 0;  // store.append invocations, including the final one
  std::chrono::duration<double> elapsed{0};
};

class FetchError : public Error {
 public:
  FetchError(const std::string& what, std::vector<HeadlineId> failed, FetchStats stats)
      : Error(what), failed_(std::move(failed)), stats_(stats) {}
  const std::vector<HeadlineId>& failed_ids() const { return failed_; }
  const FetchStats& stats() const { return stats_; }

 private:
  std::vector<HeadlineId> failed_;
  FetchStats stats_;
};

// Many fetch workers, few batch writers. Every record not already in `store`
// gets exactly one entry; results reach the store in batches of
// config.flush_threshold, then one final (possibly empty) flush.
FetchStats fetch_embeddings(std::span<const HeadlineRecord> records, EmbeddingProvider& provider,
                            const ProviderConfig& config, EmbeddingStore& store);

}  // namespace newscast
