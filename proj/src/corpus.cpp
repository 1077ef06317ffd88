#include "lane/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "lane/error.hpp"

namespace lane {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Catalog

ItemIndex ItemCatalog::add(const std::string& item_id, const std::string& title) {
  if (auto it = by_id_.find(item_id); it != by_id_.end()) {
    const CatalogItem& existing = items_[static_cast<std::size_t>(it->second - 1)];
    if (existing.title != title) {
      throw IntegrityError("item '" + item_id + "' has conflicting titles '" + existing.title +
                           "' and '" + title + "'");
    }
    return it->second;
  }
  if (title.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw IntegrityError("item '" + item_id + "' has an empty title");
  }
  const auto index = static_cast<ItemIndex>(items_.size() + 1);
  items_.push_back({index, item_id, title});
  by_id_.emplace(item_id, index);
  return index;
}

std::optional<ItemIndex> ItemCatalog::find(const std::string& item_id) const {
  if (auto it = by_id_.find(item_id); it != by_id_.end()) return it->second;
  return std::nullopt;
}

ItemIndex ItemCatalog::index_of(const std::string& item_id) const {
  if (auto idx = find(item_id)) return *idx;
  throw IntegrityError("item '" + item_id + "' is not in the catalog");
}

const CatalogItem& ItemCatalog::at(ItemIndex index) const {
  if (index < 1 || static_cast<std::size_t>(index) > items_.size()) {
    throw std::out_of_range("catalog index " + std::to_string(index) + " out of range");
  }
  return items_[static_cast<std::size_t>(index - 1)];
}

InputFormat parse_input_format(const std::string& name) {
  if (name == "tsv") return InputFormat::tsv;
  if (name == "jsonl") return InputFormat::jsonl;
  throw ConfigError("unknown input format '" + name + "' (expected tsv or jsonl)");
}

// ---------------------------------------------------------------------------
// Loading

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::int64_t parse_timestamp(const std::string& text, std::size_t line_no) {
  std::int64_t value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(line_no, "timestamp '" + text + "' is not an integer");
  }
  return value;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

void add_record(LoadedCorpus& out, std::size_t line_no, std::string user, std::string item,
                const std::string& title, std::int64_t ts) {
  if (user.empty()) throw ParseError(line_no, "empty user_id");
  if (item.empty()) throw ParseError(line_no, "empty item_id");
  try {
    out.catalog.add(item, title);
  } catch (const IntegrityError& e) {
    throw IntegrityError("line " + std::to_string(line_no) + ": " + e.what());
  }
  out.log.events.push_back({std::move(user), std::move(item), ts});
}

}  // namespace

LoadedCorpus load_interactions(const std::filesystem::path& path, InputFormat format) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open interaction file " + path.string());
  LoadedCorpus out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) continue;
    if (format == InputFormat::tsv) {
      if (line_no == 1 && line.rfind("user_id\t", 0) == 0) continue;
      auto f = split_tabs(line);
      if (f.size() != 4) {
        throw ParseError(line_no, "expected 4 tab-separated fields (user_id, item_id, title, "
                                  "timestamp), got " + std::to_string(f.size()));
      }
      add_record(out, line_no, f[0], f[1], f[2], parse_timestamp(f[3], line_no));
    } else {
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
      }
      for (const char* key : {"user_id", "item_id", "title", "timestamp"}) {
        if (!rec.is_object() || !rec.contains(key)) {
          throw ParseError(line_no, std::string("missing field '") + key + "'");
        }
      }
      if (!rec["timestamp"].is_number_integer()) {
        throw ParseError(line_no, "timestamp is not an integer");
      }
      auto as_string = [&](const char* key) {
        const json& v = rec[key];
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
        throw ParseError(line_no, std::string("field '") + key + "' must be a string");
      };
      add_record(out, line_no, as_string("user_id"), as_string("item_id"), as_string("title"),
                 rec["timestamp"].get<std::int64_t>());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

InteractionLog kcore_filter(const InteractionLog& log, std::size_t min_interactions) {
  if (min_interactions == 0) throw ConfigError("kcore_filter: min_interactions must be >= 1");
  std::vector<std::uint8_t> alive(log.events.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const bool by_user : {true, false}) {
      std::unordered_map<std::string, std::size_t> counts;
      for (std::size_t i = 0; i < log.events.size(); ++i) {
        if (!alive[i]) continue;
        const auto& e = log.events[i];
        ++counts[by_user ? e.user_id : e.item_id];
      }
      for (std::size_t i = 0; i < log.events.size(); ++i) {
        if (!alive[i]) continue;
        const auto& e = log.events[i];
        if (counts[by_user ? e.user_id : e.item_id] < min_interactions) {
          alive[i] = 0;
          changed = true;
        }
      }
    }
  }
  InteractionLog out;
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    if (alive[i]) out.events.push_back(log.events[i]);
  }
  return out;
}

ItemCatalog compact_catalog(const InteractionLog& log, const ItemCatalog& catalog) {
  ItemCatalog out;
  for (const auto& e : log.events) {
    out.add(e.item_id, catalog.at(catalog.index_of(e.item_id)).title);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

std::vector<ItemIndex> UserSplit::history_before_test() const {
  std::vector<ItemIndex> h = train;
  if (valid) h.push_back(*valid);
  return h;
}

const UserSplit* SplitDataset::find(const std::string& user_id) const {
  for (const auto& u : users) {
    if (u.user_id == user_id) return &u;
  }
  return nullptr;
}

SplitDataset leave_one_out_split(const InteractionLog& log, const ItemCatalog& catalog) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> per_user;
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    auto [it, inserted] = per_user.try_emplace(log.events[i].user_id);
    if (inserted) order.push_back(log.events[i].user_id);
    it->second.push_back(i);
  }
  SplitDataset out;
  out.item_count = catalog.size();
  out.users.reserve(order.size());
  for (const auto& user : order) {
    auto& idx = per_user[user];
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return log.events[a].timestamp < log.events[b].timestamp;
    });
    std::vector<ItemIndex> seq;
    seq.reserve(idx.size());
    for (const std::size_t i : idx) seq.push_back(catalog.index_of(log.events[i].item_id));
    UserSplit u;
    u.user_id = user;
    if (seq.size() >= 3) {
      u.test = seq.back();
      u.valid = seq[seq.size() - 2];
      seq.resize(seq.size() - 2);
    }
    u.train = std::move(seq);
    out.users.push_back(std::move(u));
  }
  return out;
}

std::size_t PaddedSequence::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_mask.begin(), valid_mask.end(), 1));
}

PaddedSequence build_fixed_sequence(const std::vector<ItemIndex>& indices, std::size_t n) {
  if (n == 0) throw ConfigError("build_fixed_sequence: n must be positive");
  PaddedSequence out;
  out.indices.assign(n, kPadIndex);
  out.valid_mask.assign(n, 0);
  const std::size_t keep = std::min(n, indices.size());
  const std::size_t src = indices.size() - keep;
  const std::size_t dst = n - keep;
  for (std::size_t i = 0; i < keep; ++i) {
    out.indices[dst + i] = indices[src + i];
    out.valid_mask[dst + i] = 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL I/O

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read " + path.string());
  return in;
}

}  // namespace

void write_log_jsonl(const std::filesystem::path& path, const InteractionLog& log,
                     const ItemCatalog& catalog) {
  auto out = open_out(path);
  for (const auto& e : log.events) {
    json rec = {{"user_id", e.user_id},
                {"item_id", e.item_id},
                {"title", catalog.at(catalog.index_of(e.item_id)).title},
                {"timestamp", e.timestamp}};
    out << rec.dump() << '\n';
  }
}

void write_catalog_jsonl(const std::filesystem::path& path, const ItemCatalog& catalog) {
  auto out = open_out(path);
  for (const auto& item : catalog.items()) {
    out << json{{"item_index", item.index}, {"item_id", item.item_id}, {"title", item.title}}.dump()
        << '\n';
  }
}

void write_split_jsonl(const std::filesystem::path& path, const SplitDataset& split) {
  auto out = open_out(path);
  for (const auto& u : split.users) {
    json rec = {{"user_id", u.user_id}, {"train", u.train}};
    rec["valid"] = u.valid ? json(*u.valid) : json(nullptr);
    rec["test"] = u.test ? json(*u.test) : json(nullptr);
    out << rec.dump() << '\n';
  }
}

ItemCatalog read_catalog_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  ItemCatalog catalog;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const json rec = json::parse(line);
    const auto idx = catalog.add(rec.at("item_id").get<std::string>(), rec.at("title").get<std::string>());
    if (idx != rec.at("item_index").get<ItemIndex>()) {
      throw ParseError(line_no, "catalog indices are not contiguous");
    }
  }
  return catalog;
}

SplitDataset read_split_jsonl(const std::filesystem::path& path, std::size_t item_count) {
  auto in = open_in(path);
  SplitDataset split;
  split.item_count = item_count;
  std::string line;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    const json rec = json::parse(line);
    UserSplit u;
    u.user_id = rec.at("user_id").get<std::string>();
    u.train = rec.at("train").get<std::vector<ItemIndex>>();
    if (!rec.at("valid").is_null()) u.valid = rec["valid"].get<ItemIndex>();
    if (!rec.at("test").is_null()) u.test = rec["test"].get<ItemIndex>();
    split.users.push_back(std::move(u));
  }
  return split;
}

}  // namespace lane
