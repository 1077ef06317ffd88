#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace lane {

/// 1-based item index; 0 is the padding slot.
using ItemIndex = std::int32_t;
inline constexpr ItemIndex kPadIndex = 0;

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

/// Timestamped events in input order.
struct InteractionLog {
  std::vector<Interaction> events;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
};

struct CatalogItem {
  ItemIndex index = 0;
  std::string item_id;
  std::string title;
};

/// Items indexed contiguously from 1 in insertion order.
class ItemCatalog {
 public:
  /// Returns the index of item_id, inserting it if new. Throws IntegrityError
  /// when item_id is already present with a different title, or title is empty.
  ItemIndex add(const std::string& item_id, const std::string& title);

  std::optional<ItemIndex> find(const std::string& item_id) const;
  ItemIndex index_of(const std::string& item_id) const;
  const CatalogItem& at(ItemIndex index) const;
  const std::vector<CatalogItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

 private:
  std::vector<CatalogItem> items_;
  std::unordered_map<std::string, ItemIndex> by_id_;
};

enum class InputFormat { tsv, jsonl };
InputFormat parse_input_format(const std::string& name);

struct LoadedCorpus {
  InteractionLog log;
  ItemCatalog catalog;
};

/// TSV rows are user_id, item_id, title, timestamp (an optional header line
/// starting with "user_id" is skipped). JSONL records carry the same keys.
LoadedCorpus load_interactions(const std::filesystem::path& path, InputFormat format);

/// Alternately drops users and items with fewer than min_interactions events
/// until nothing changes. Survivors keep their input order.
InteractionLog kcore_filter(const InteractionLog& log, std::size_t min_interactions);

/// Catalog holding only items that occur in `log`, re-indexed in first-seen order.
ItemCatalog compact_catalog(const InteractionLog& log, const ItemCatalog& catalog);

struct UserSplit {
  std::string user_id;
  std::vector<ItemIndex> train;
  std::optional<ItemIndex> valid;
  std::optional<ItemIndex> test;

  /// Everything observed before the test item: train followed by valid.
  std::vector<ItemIndex> history_before_test() const;
};

struct SplitDataset {
  std::vector<UserSplit> users;  ///< first-appearance order of users in the log
  std::size_t item_count = 0;

  const UserSplit* find(const std::string& user_id) const;
};

/// Per user: sort by timestamp (stable), test = last, valid = second to last,
/// train = the rest. Users with fewer than 3 events keep everything in train.
SplitDataset leave_one_out_split(const InteractionLog& log, const ItemCatalog& catalog);

struct PaddedSequence {
  std::vector<ItemIndex> indices;
  std::vector<std::uint8_t> valid_mask;

  std::size_t length() const { return indices.size(); }
  std::size_t valid_count() const;
};

/// Keeps the last n indices, left-padding with 0 when shorter.
PaddedSequence build_fixed_sequence(const std::vector<ItemIndex>& indices, std::size_t n);

// Inspection output (JSON lines).
void write_log_jsonl(const std::filesystem::path& path, const InteractionLog& log,
                     const ItemCatalog& catalog);
void write_catalog_jsonl(const std::filesystem::path& path, const ItemCatalog& catalog);
void write_split_jsonl(const std::filesystem::path& path, const SplitDataset& split);
ItemCatalog read_catalog_jsonl(const std::filesystem::path& path);
SplitDataset read_split_jsonl(const std::filesystem::path& path, std::size_t item_count);

}  // namespace lane
