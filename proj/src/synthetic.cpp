#include "lane/synthetic.hpp"

#include <fstream>

#include "lane/error.hpp"
#include "lane/random.hpp"

namespace lane::synthetic {

namespace {

constexpr const char* kThemes[] = {"Nebula", "Harbor", "Ember",  "Glacier", "Meadow",
                                   "Canyon", "Lantern", "Orchid", "Tundra", "Cobalt"};
constexpr const char* kNouns[] = {"Chronicle", "Voyage", "Legend",   "Echo",   "Garden",
                                  "Signal",    "Portrait", "Riddle", "Anthem", "Horizon"};

std::string item_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "item%03zu", i);
  return buf;
}

std::string user_id(std::size_t u) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "user%04zu", u);
  return buf;
}

void check(const Options& o) {
  if (o.users == 0 || o.items == 0) throw ConfigError("synthetic corpus needs users and items");
  if (o.min_length < 3 || o.max_length < o.min_length) {
    throw ConfigError("synthetic lengths must satisfy 3 <= min_length <= max_length");
  }
}

}  // namespace

ItemIndex rule_next(ItemIndex a, ItemIndex b) {
  const int slot_a = (a - 1) % static_cast<int>(kThemeSize);
  const int slot_b = (b - 1) % static_cast<int>(kThemeSize);
  const int theme = (b - 1) / static_cast<int>(kThemeSize);
  return static_cast<ItemIndex>(theme * static_cast<int>(kThemeSize) +
                                (slot_a + slot_b) % static_cast<int>(kThemeSize) + 1);
}

LoadedCorpus rule_corpus(const Options& o) {
  check(o);
  if (o.items % kThemeSize != 0 || o.items > kThemeSize * std::size(kThemes)) {
    throw ConfigError("rule corpus needs a multiple of 10 items, at most 100");
  }
  LoadedCorpus c;
  for (std::size_t i = 1; i <= o.items; ++i) {
    c.catalog.add(item_id(i), std::string(kThemes[(i - 1) / kThemeSize]) + " " + kNouns[(i - 1) % kThemeSize]);
  }
  Rng rng(derive_seed(o.seed, fnv1a64("synthetic:rule")));
  const std::size_t themes = o.items / kThemeSize;
  for (std::size_t u = 0; u < o.users; ++u) {
    const std::size_t theme = rng.below(themes);
    std::size_t s0 = 0;
    std::size_t s1 = 0;
    while (s0 == 0 && s1 == 0) {  // (0, 0) would repeat one item forever
      s0 = rng.below(kThemeSize);
      s1 = rng.below(kThemeSize);
    }
    const std::size_t length = o.min_length + rng.below(o.max_length - o.min_length + 1);
    std::vector<ItemIndex> seq = {static_cast<ItemIndex>(theme * kThemeSize + s0 + 1),
                                  static_cast<ItemIndex>(theme * kThemeSize + s1 + 1)};
    while (seq.size() < length) seq.push_back(rule_next(seq[seq.size() - 2], seq.back()));
    for (std::size_t t = 0; t < seq.size(); ++t) {
      c.log.events.push_back({user_id(u), item_id(static_cast<std::size_t>(seq[t])),
                              static_cast<std::int64_t>(1000 * (u + 1) + t)});
    }
  }
  return c;
}

LoadedCorpus random_corpus(const Options& o) {
  check(o);
  LoadedCorpus c;
  for (std::size_t i = 1; i <= o.items; ++i) c.catalog.add(item_id(i), "Item " + std::to_string(i));
  Rng rng(derive_seed(o.seed, fnv1a64("synthetic:random")));
  for (std::size_t u = 0; u < o.users; ++u) {
    const std::size_t length = o.min_length + rng.below(o.max_length - o.min_length + 1);
    for (std::size_t t = 0; t < length; ++t) {
      c.log.events.push_back({user_id(u), item_id(1 + rng.below(o.items)),
                              static_cast<std::int64_t>(1000 * (u + 1) + t)});
    }
  }
  return c;
}

void write_tsv(const std::filesystem::path& path, const LoadedCorpus& corpus) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out << "user_id\titem_id\ttitle\ttimestamp\n";
  for (const auto& e : corpus.log.events) {
    out << e.user_id << '\t' << e.item_id << '\t'
        << corpus.catalog.at(corpus.catalog.index_of(e.item_id)).title << '\t' << e.timestamp << '\n';
  }
}

}  // namespace lane::synthetic
