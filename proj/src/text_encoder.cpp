#include "lane/text_encoder.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lane/error.hpp"
#include "lane/http.hpp"
#include "lane/random.hpp"
#include "lane/text_util.hpp"

namespace lane {

using nlohmann::json;

namespace {

bool is_blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

constexpr std::size_t kBatch = 64;

/// Encodes texts through the cache. labels[i] names texts[i] in error messages.
Matrix encode_cached(std::span<const std::string> texts, std::span<const std::string> labels,
                     TextEncoder& encoder, EmbeddingCache* cache) {
  const std::size_t d = encoder.dim();
  const std::string enc_name = encoder.name();
  Matrix out(texts.size(), d);
  std::vector<std::size_t> misses;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::optional<std::vector<double>> hit;
    if (cache != nullptr) hit = cache->lookup(enc_name, texts[i]);
    if (hit && hit->size() == d) {
      out.set_row(i, *hit);
    } else {
      misses.push_back(i);
    }
  }

  auto check_rows = [&](const Matrix& m, std::span<const std::size_t> which) {
    if (m.rows() != which.size() || m.cols() != d) {
      throw EncoderError("encoder '" + enc_name + "' returned " + m.shape_string() +
                         " for a batch of " + std::to_string(which.size()) + " (dim " +
                         std::to_string(d) + ")");
    }
    for (std::size_t r = 0; r < which.size(); ++r) {
      for (const double v : m.row(r)) {
        if (!std::isfinite(v)) {
          throw EncoderError("encoder '" + enc_name + "' produced a non-finite vector for " +
                             labels[which[r]]);
        }
      }
    }
  };

  for (std::size_t start = 0; start < misses.size(); start += kBatch) {
    const std::size_t end = std::min(misses.size(), start + kBatch);
    std::span<const std::size_t> which(misses.data() + start, end - start);
    std::vector<std::string> batch;
    for (const std::size_t i : which) batch.push_back(texts[i]);
    Matrix encoded;
    try {
      encoded = encoder.encode(batch);
    } catch (const std::exception& batch_error) {
      // Locate the failing text.
      for (const std::size_t i : which) {
        try {
          (void)encoder.encode(std::span<const std::string>(&texts[i], 1));
        } catch (const std::exception& e) {
          throw EncoderError("encoding failed for " + labels[i] + ": " + e.what());
        }
      }
      throw EncoderError(std::string("encoding failed: ") + batch_error.what());
    }
    check_rows(encoded, which);
    for (std::size_t r = 0; r < which.size(); ++r) {
      out.set_row(which[r], encoded.row(r));
      if (cache != nullptr) cache->store(enc_name, texts[which[r]], encoded.row(r));
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

MockTextEncoder::MockTextEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw ConfigError("mock encoder: dim must be positive");
}

std::string MockTextEncoder::name() const {
  return "mock:" + std::to_string(dim_) + ":" + std::to_string(seed_);
}

std::vector<double> MockTextEncoder::encode_one(const std::string& text) const {
  std::vector<double> v(dim_);
  std::uint64_t state = mix64(fnv1a64(text) ^ mix64(seed_));
  double norm2 = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    state = mix64(state);
    v[j] = 2.0 * static_cast<double>(state >> 11) * 0x1.0p-53 - 1.0;
    norm2 += v[j] * v[j];
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

Matrix MockTextEncoder::encode(std::span<const std::string> texts) {
  Matrix out(texts.size(), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) out.set_row(i, encode_one(texts[i]));
  return out;
}

HttpTextEncoder::HttpTextEncoder(std::string endpoint, std::string model, std::size_t dim,
                                 double timeout_seconds)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), dim_(dim), timeout_(timeout_seconds) {
  if (endpoint_.empty()) {
    throw ConfigError(std::string("remote encoder needs an endpoint (config encoder.endpoint or $") +
                      kEncoderEndpointEnv + ")");
  }
}

Matrix HttpTextEncoder::encode(std::span<const std::string> texts) {
  json body = {{"model", model_}, {"texts", json::array()}};
  for (const auto& t : texts) body["texts"].push_back(t);
  const std::string response = http_post_json(endpoint_, body.dump(), {}, timeout_);
  json parsed;
  try {
    parsed = json::parse(response);
  } catch (const json::parse_error& e) {
    throw EncoderError(std::string("encoder response is not JSON: ") + e.what());
  }
  if (!parsed.contains("embeddings") || !parsed["embeddings"].is_array()) {
    throw EncoderError("encoder response lacks an 'embeddings' array");
  }
  const auto& rows = parsed["embeddings"];
  Matrix out(rows.size(), dim_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto v = rows[r].get<std::vector<double>>();
    if (v.size() != dim_) {
      throw EncoderError("encoder returned dimension " + std::to_string(v.size()) + ", expected " +
                         std::to_string(dim_));
    }
    out.set_row(r, v);
  }
  return out;
}

std::unique_ptr<TextEncoder> make_text_encoder(const EncoderConfig& config) {
  if (config.dim == 0) throw ConfigError("encoder.dim must be positive");
  if (config.name == "mock") return std::make_unique<MockTextEncoder>(config.dim, config.seed);
  std::string endpoint = config.endpoint;
  if (endpoint.empty()) {
    if (const char* env = std::getenv(kEncoderEndpointEnv)) endpoint = env;
  }
  return std::make_unique<HttpTextEncoder>(endpoint, config.name, config.dim,
                                           config.timeout_seconds);
}

// ---------------------------------------------------------------------------
// Cache

std::string EmbeddingCache::key(const std::string& encoder, const std::string& text) {
  std::string k = encoder;
  k.push_back('\x1f');
  k += text;
  return k;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  const auto index_path = dir_ / "index.json";
  if (!std::filesystem::exists(index_path)) return;
  std::ifstream index_in(index_path);
  json index;
  try {
    index = json::parse(index_in);
  } catch (const json::parse_error& e) {
    throw UserError("corrupt embedding cache index " + index_path.string() + ": " + e.what());
  }
  std::ifstream vin(dir_ / "vectors.bin", std::ios::binary);
  if (!vin) throw UserError("embedding cache is missing vectors.bin in " + dir_.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(vin)), std::istreambuf_iterator<char>());
  const std::size_t total = raw.size() / sizeof(double);
  for (const auto& e : index.at("entries")) {
    const auto offset = e.at("offset").get<std::size_t>();
    const auto dim = e.at("dim").get<std::size_t>();
    if (offset + dim > total) throw UserError("embedding cache entry points past vectors.bin");
    Entry entry{e.at("encoder").get<std::string>(), e.at("text").get<std::string>(),
                std::vector<double>(dim)};
    std::memcpy(entry.values.data(), raw.data() + offset * sizeof(double), dim * sizeof(double));
    by_key_[key(entry.encoder, entry.text)] = entries_.size();
    entries_.push_back(std::move(entry));
  }
}

EmbeddingCache::~EmbeddingCache() {
  try {
    flush();
  } catch (...) {
  }
}

std::optional<std::vector<double>> EmbeddingCache::lookup(const std::string& encoder,
                                                          const std::string& text) const {
  std::lock_guard lock(mutex_);
  auto it = by_key_.find(key(encoder, text));
  if (it == by_key_.end()) return std::nullopt;
  return entries_[it->second].values;
}

void EmbeddingCache::store(const std::string& encoder, const std::string& text,
                           std::span<const double> v) {
  std::lock_guard lock(mutex_);
  const auto k = key(encoder, text);
  if (auto it = by_key_.find(k); it != by_key_.end()) {
    entries_[it->second].values.assign(v.begin(), v.end());
  } else {
    by_key_[k] = entries_.size();
    entries_.push_back({encoder, text, std::vector<double>(v.begin(), v.end())});
  }
  dirty_ = true;
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void EmbeddingCache::flush() {
  std::lock_guard lock(mutex_);
  if (!dirty_) return;
  std::filesystem::create_directories(dir_);
  json index = {{"format", 1}, {"entries", json::array()}};
  const auto vec_tmp = dir_ / "vectors.bin.tmp";
  {
    std::ofstream vout(vec_tmp, std::ios::binary | std::ios::trunc);
    if (!vout) throw UserError("cannot write embedding cache in " + dir_.string());
    std::size_t offset = 0;
    for (const auto& e : entries_) {
      vout.write(reinterpret_cast<const char*>(e.values.data()),
                 static_cast<std::streamsize>(e.values.size() * sizeof(double)));
      index["entries"].push_back({{"encoder", e.encoder},
                                  {"hash", text::hex64(fnv1a64(e.text))},
                                  {"text", e.text},
                                  {"offset", offset},
                                  {"dim", e.values.size()}});
      offset += e.values.size();
    }
  }
  const auto idx_tmp = dir_ / "index.json.tmp";
  {
    std::ofstream iout(idx_tmp, std::ios::trunc);
    iout << index.dump(1) << '\n';
  }
  std::filesystem::rename(vec_tmp, dir_ / "vectors.bin");
  std::filesystem::rename(idx_tmp, dir_ / "index.json");
  dirty_ = false;
}

// ---------------------------------------------------------------------------

Matrix encode_titles(const ItemCatalog& catalog, TextEncoder& encoder, EmbeddingCache* cache) {
  if (catalog.empty()) throw UserError("encode_titles: empty catalog");
  std::vector<std::string> titles;
  std::vector<std::string> labels;
  titles.reserve(catalog.size());
  for (const auto& item : catalog.items()) {
    titles.push_back(item.title);
    labels.push_back("item '" + item.item_id + "' (title '" + item.title + "')");
  }
  const Matrix encoded = encode_cached(titles, labels, encoder, cache);
  Matrix m(catalog.size() + 1, encoder.dim());
  for (std::size_t i = 0; i < encoded.rows(); ++i) m.set_row(i + 1, encoded.row(i));
  return m;
}

Matrix encode_texts(std::span<const std::string> texts, TextEncoder& encoder,
                    EmbeddingCache* cache) {
  if (texts.empty()) throw UserError("encode_texts: no texts");
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (is_blank(texts[i])) {
      throw UserError("encode_texts: text #" + std::to_string(i) + " is blank");
    }
    labels.push_back("text #" + std::to_string(i));
  }
  return encode_cached(texts, labels, encoder, cache);
}

}  // namespace lane
