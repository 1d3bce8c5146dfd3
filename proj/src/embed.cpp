#include "newscast/embed.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "json.hpp"
#include "newscast/hash.hpp"

namespace newscast {

std::size_t declared_dimension(std::string_view model_id) {
  if (model_id == "text-embedding-3-small") return 1536;
  if (model_id == "text-embedding-3-large") return 3072;
  return 0;
}

EmbeddingVector embed_offline(std::string_view text, std::string_view model_id, std::size_t dim,
                              std::uint64_t seed) {
  if (dim < 2) throw ParameterError("offline embedding dimension must be at least 2");
  const std::uint64_t key = hash_combine(hash_combine(fnv1a64(text), fnv1a64(model_id)), seed);
  EmbeddingVector out;
  out.model_id = std::string(model_id);
  out.values.resize(dim);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (std::size_t i = 0; i < dim; i += 2) {
    const double u1 = unit_open(splitmix64(key + 2 * i));
    const double u2 = unit_open(splitmix64(key + 2 * i + 1));
    const double r = std::sqrt(-2.0 * std::log(u1));
    out.values[i] = r * std::cos(two_pi * u2);
    if (i + 1 < dim) out.values[i + 1] = r * std::sin(two_pi * u2);
  }
  double norm = 0.0;
  for (double v : out.values) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : out.values) v /= norm;
  return out;
}

std::string encode_cache_line(const CacheEntry& entry) {
  nlohmann::json j;
  j["hid"] = entry.hid;
  j["model"] = entry.vector.model_id;
  j["dim"] = entry.vector.dim();
  j["v"] = entry.vector.values;
  std::string line = j.dump();
  line.push_back('\n');
  return line;
}

namespace {

bool decode_cache_line(std::string_view line, CacheEntry& out) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  if (!j.contains("hid") || !j["hid"].is_number_unsigned()) return false;
  if (!j.contains("model") || !j["model"].is_string()) return false;
  if (!j.contains("dim") || !j["dim"].is_number_unsigned()) return false;
  if (!j.contains("v") || !j["v"].is_array()) return false;
  out.hid = j["hid"].get<std::uint64_t>();
  out.vector.model_id = j["model"].get<std::string>();
  out.vector.values.clear();
  for (const auto& x : j["v"]) {
    if (!x.is_number()) return false;
    out.vector.values.push_back(x.get<double>());
  }
  if (out.vector.values.size() != j["dim"].get<std::size_t>() || out.vector.values.empty()) return false;
  return std::all_of(out.vector.values.begin(), out.vector.values.end(),
                     [](double v) { return std::isfinite(v); });
}

void write_all(int fd, const std::string& buf, const std::filesystem::path& path) {
  const char* p = buf.data();
  std::size_t left = buf.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw DataError("cache write to " + path.string() + " failed: " + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

}  // namespace

EmbeddingCache::EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  in.close();

  std::size_t pos = 0;
  std::size_t last_complete = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      ++skipped_;  // truncated tail
      break;
    }
    const std::string_view line(content.data() + pos, nl - pos);
    pos = nl + 1;
    last_complete = pos;
    if (line.empty()) continue;
    CacheEntry e;
    if (!decode_cache_line(line, e)) {
      ++skipped_;
      continue;
    }
    entries_[{e.hid, e.vector.model_id}] = std::move(e.vector);
  }
  if (last_complete < content.size()) {
    // Drop the partial record so later appends start on a fresh line.
    std::filesystem::resize_file(path_, last_complete);
  }
  if (skipped_ > 0) {
    std::clog << "warning: skipped " << skipped_ << " corrupt line(s) in " << path_.string() << "\n";
  }
}

bool EmbeddingCache::contains(HeadlineId hid, std::string_view model_id) const {
  std::lock_guard lock(mu_);
  return entries_.count({hid, std::string(model_id)}) > 0;
}

std::optional<EmbeddingVector> EmbeddingCache::get(HeadlineId hid, std::string_view model_id) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find({hid, std::string(model_id)});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::map<EmbeddingCache::Key, EmbeddingVector> EmbeddingCache::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

void EmbeddingCache::append(std::span<const CacheEntry> batch) {
  if (batch.empty()) return;
  std::string buf;
  for (const auto& e : batch) {
    if (e.vector.values.empty() ||
        !std::all_of(e.vector.values.begin(), e.vector.values.end(), [](double v) { return std::isfinite(v); })) {
      throw DataError("refusing to cache a non-finite or empty embedding");
    }
    buf += encode_cache_line(e);
  }
  std::lock_guard lock(mu_);
  if (!path_.empty()) {
    const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw DataError("cannot open cache " + path_.string() + ": " + std::strerror(errno));
    try {
      write_all(fd, buf, path_);
    } catch (...) {
      ::close(fd);
      throw;
    }
    ::fdatasync(fd);
    ::close(fd);
  }
  for (const auto& e : batch) entries_[{e.hid, e.vector.model_id}] = e.vector;
}

std::optional<EmbeddingVector> cache_get(const EmbeddingCache& cache, HeadlineId hid,
                                         std::string_view model_id) {
  return cache.get(hid, model_id);
}

// ---------------------------------------------------------------------------

void ProviderConfig::validate() const {
  if (workers < 1) throw ConfigError("provider.workers must be >= 1");
  if (writer_count < 1) throw ConfigError("provider.writer_count must be >= 1");
  if (flush_threshold < 1) throw ConfigError("provider.flush_threshold must be >= 1");
  if (request_batch < 1) throw ConfigError("provider.request_batch must be >= 1");
  if (max_attempts < 1) throw ConfigError("provider.max_attempts must be >= 1");
  if (dim < 2) throw ConfigError("provider.dim must be >= 2");
  if (model_id.empty()) throw ConfigError("provider.model must be set");
}

OfflineProvider::OfflineProvider(std::string model_id, std::size_t dim, std::uint64_t seed,
                                 std::chrono::microseconds latency)
    : model_id_(std::move(model_id)), dim_(dim), seed_(seed), latency_(latency) {}

std::vector<std::vector<double>> OfflineProvider::embed(std::span<const std::string> texts) {
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_offline(t, model_id_, dim_, seed_).values);
  return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config) {
  config.validate();
  if (config.kind == ProviderKind::Offline) {
    return std::make_unique<OfflineProvider>(config.model_id, config.dim, config.seed, config.simulated_latency);
  }
  const char* token = std::getenv(config.token_env.c_str());
  return std::make_unique<RemoteProvider>(config.endpoint, config.model_id, config.dim,
                                          token ? std::string(token) : std::string{}, config.timeout);
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
class Channel {
 public:
  void push(T item) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(item));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    return item;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

}  // namespace

FetchStats fetch_embeddings(std::span<const HeadlineRecord> records, EmbeddingProvider& provider,
                            const ProviderConfig& config, EmbeddingStore& store) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  FetchStats stats;

  std::vector<const HeadlineRecord*> pending;
  std::unordered_set<HeadlineId> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) continue;
    ++stats.requested;
    if (store.contains(r.id, provider.model_id())) {
      ++stats.cached;
    } else {
      pending.push_back(&r);
    }
  }

  const std::size_t chunk = config.request_batch;
  const std::size_t num_chunks = (pending.size() + chunk - 1) / chunk;
  const std::size_t num_workers = std::max<std::size_t>(1, std::min(config.workers, num_chunks));

  std::atomic<std::size_t> next_chunk{0};
  std::atomic<std::size_t> calls{0};
  std::atomic<bool> abort{false};

  std::mutex buffer_mu;
  std::vector<CacheEntry> buffer;
  std::vector<HeadlineId> failed;
  std::size_t fetched = 0;

  Channel<std::vector<CacheEntry>> channel;
  std::mutex append_mu;
  std::size_t flushes = 0;
  std::mutex error_mu;
  std::string write_error;

  std::vector<std::thread> writers;
  writers.reserve(config.writer_count);
  for (std::size_t w = 0; w < config.writer_count; ++w) {
    writers.emplace_back([&] {
      while (auto batch = channel.pop()) {
        if (abort.load()) continue;
        try {
          std::lock_guard lock(append_mu);
          store.append(*batch);
          ++flushes;
        } catch (const std::exception& e) {
          std::lock_guard lock(error_mu);
          if (write_error.empty()) write_error = e.what();
          abort.store(true);
        }
      }
    });
  }

  const auto worker = [&] {
    std::vector<std::string> texts;
    while (!abort.load()) {
      const std::size_t c = next_chunk.fetch_add(1);
      if (c >= num_chunks) break;
      const std::size_t lo = c * chunk;
      const std::size_t hi = std::min(pending.size(), lo + chunk);
      texts.clear();
      for (std::size_t i = lo; i < hi; ++i) texts.push_back(pending[i]->text);

      std::vector<std::vector<double>> vectors;
      bool ok = false;
      auto delay = config.backoff;
      for (std::size_t attempt = 0; attempt < config.max_attempts && !abort.load(); ++attempt) {
        if (attempt > 0) {
          std::this_thread::sleep_for(delay);
          delay *= 2;
        }
        try {
          ++calls;
          vectors = provider.embed(texts);
          if (vectors.size() != texts.size()) throw TransportError("provider returned wrong vector count");
          for (const auto& v : vectors) {
            if (v.size() != provider.dim()) throw TransportError("provider returned wrong dimension");
          }
          ok = true;
          break;
        } catch (const TransportError&) {
          // retried below
        }
      }

      std::vector<std::vector<CacheEntry>> ready;
      {
        std::lock_guard lock(buffer_mu);
        if (!ok) {
          for (std::size_t i = lo; i < hi; ++i) failed.push_back(pending[i]->id);
          continue;
        }
        for (std::size_t i = lo; i < hi; ++i) {
          buffer.push_back({pending[i]->id, {provider.model_id(), std::move(vectors[i - lo])}});
          ++fetched;
        }
        while (buffer.size() >= config.flush_threshold) {
          const auto cut = buffer.begin() + static_cast<std::ptrdiff_t>(config.flush_threshold);
          ready.emplace_back(std::make_move_iterator(buffer.begin()), std::make_move_iterator(cut));
          buffer.erase(buffer.begin(), cut);
        }
      }
      for (auto& batch : ready) channel.push(std::move(batch));
    }
  };

  std::vector<std::thread> workers;
  workers.reserve(num_workers);
  for (std::size_t i = 0; i < num_workers; ++i) workers.emplace_back(worker);
  for (auto& t : workers) t.join();

  channel.push(std::move(buffer));  // final flush, possibly empty
  channel.close();
  for (auto& t : writers) t.join();

  stats.fetched = fetched;
  stats.failed = failed.size();
  stats.provider_calls = calls.load();
  stats.flushes = flushes;
  stats.elapsed = std::chrono::steady_clock::now() - started;

  if (!write_error.empty()) throw DataError("embedding cache write failed: " + write_error);
  if (!failed.empty()) {
    std::sort(failed.begin(), failed.end());
    std::string msg = "embedding fetch failed for " + std::to_string(failed.size()) + " record(s):";
    for (std::size_t i = 0; i < failed.size() && i < 20; ++i) msg += " " + std::to_string(failed[i]);
    if (failed.size() > 20) msg += " ...";
    throw FetchError(msg, std::move(failed), stats);
  }
  return stats;
}

}  // namespace newscast
