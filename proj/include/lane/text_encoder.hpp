#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lane/corpus.hpp"
#include "lane/matrix.hpp"

namespace lane {

/// Maps text to fixed-width vectors. Implementations must be safe to call
/// from several threads at once.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  /// Stable identifier; also the cache namespace, so it must change whenever
  /// the produced vectors would.
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool deterministic() const = 0;
  /// One row per input text.
  virtual Matrix encode(std::span<const std::string> texts) = 0;
};

/// Deterministic stand-in for a sentence encoder.
///
/// The vector for `text` is computed as follows (reproducible anywhere):
///   state = mix64(fnv1a64(text) ^ mix64(seed))
///   for j in 0..dim-1: state = mix64(state); u_j = 2 * (state >> 11) * 2^-53 - 1
///   v = u / ||u||_2
/// so every output row has unit L2 norm.
class MockTextEncoder final : public TextEncoder {
 public:
  MockTextEncoder(std::size_t dim, std::uint64_t seed);
  std::string name() const override;
  std::size_t dim() const override { return dim_; }
  bool deterministic() const override { return true; }
  Matrix encode(std::span<const std::string> texts) override;

  std::vector<double> encode_one(const std::string& text) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Client for a remote sentence encoder.
///
/// Request:  POST <endpoint>  {"model": <model>, "texts": [..]}
/// Response: {"embeddings": [[d floats], ...]} in request order.
class HttpTextEncoder final : public TextEncoder {
 public:
  HttpTextEncoder(std::string endpoint, std::string model, std::size_t dim, double timeout_seconds);
  std::string name() const override { return "http:" + model_ + ":" + std::to_string(dim_); }
  std::size_t dim() const override { return dim_; }
  bool deterministic() const override { return true; }
  Matrix encode(std::span<const std::string> texts) override;

 private:
  std::string endpoint_;
  std::string model_;
  std::size_t dim_;
  double timeout_;
};

/// Environment variable naming the remote encoder endpoint.
inline constexpr const char* kEncoderEndpointEnv = "LANE_ENCODER_URL";

struct EncoderConfig {
  std::string name = "mock";  ///< "mock" or a remote model name
  std::size_t dim = 384;
  std::uint64_t seed = 0;
  std::string endpoint;  ///< falls back to $LANE_ENCODER_URL
  double timeout_seconds = 60.0;
};

std::unique_ptr<TextEncoder> make_text_encoder(const EncoderConfig& config);

/// Persistent vector cache keyed by (encoder name, text).
///
/// Layout of `dir`:
///   index.json   {"format": 1, "entries": [{"encoder", "hash", "text", "offset", "dim"}]}
///   vectors.bin  raw little-endian float64 values; entry i occupies
///                [offset, offset + dim) counted in doubles
/// `hash` is the hex FNV-1a 64 of the text. Lookups may run concurrently;
/// writes are serialized by an internal lock.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path dir);
  ~EmbeddingCache();
  EmbeddingCache(const EmbeddingCache&) = delete;
  EmbeddingCache& operator=(const EmbeddingCache&) = delete;

  std::optional<std::vector<double>> lookup(const std::string& encoder,
                                            const std::string& text) const;
  void store(const std::string& encoder, const std::string& text, std::span<const double> v);
  /// Writes both files if anything changed since the last flush.
  void flush();
  std::size_t size() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  struct Entry {
    std::string encoder;
    std::string text;
    std::vector<double> values;
  };
  static std::string key(const std::string& encoder, const std::string& text);

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> by_key_;
  bool dirty_ = false;
};

/// (|I| + 1) x d matrix; row 0 is the all-zero pad row, row k encodes item k's title.
Matrix encode_titles(const ItemCatalog& catalog, TextEncoder& encoder, EmbeddingCache* cache);

/// m x d matrix, row i encodes texts[i]. Blank texts are rejected.
Matrix encode_texts(std::span<const std::string> texts, TextEncoder& encoder,
                    EmbeddingCache* cache);

}  // namespace lane
