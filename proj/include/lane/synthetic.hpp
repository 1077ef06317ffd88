#pragma once

#include <cstdint>
#include <filesystem>

#include "lane/corpus.hpp"

// Generated corpora for tests and desk-scale experiments.
namespace lane::synthetic {

struct Options {
  std::size_t users = 200;
  std::size_t items = 50;
  std::size_t min_length = 12;
  std::size_t max_length = 20;
  std::uint64_t seed = 0;
};

/// Items are grouped into themes of `kThemeSize`; item i has theme (i-1)/10 and
/// slot (i-1)%10 and the title "<Theme> <Noun>". Each user picks a theme and
/// two starting slots; afterwards
///   next(a, b) = theme(b) * 10 + (slot(a) + slot(b)) mod 10 + 1
/// so the next item is a fixed function of the previous two and every
/// sequence stays inside its theme. items must be a positive multiple of 10
/// and at most 100.
inline constexpr std::size_t kThemeSize = 10;
LoadedCorpus rule_corpus(const Options& options);
ItemIndex rule_next(ItemIndex a, ItemIndex b);

/// Items drawn uniformly at random (no structure); titles are "Item <k>".
LoadedCorpus random_corpus(const Options& options);

/// TSV in the load_interactions layout.
void write_tsv(const std::filesystem::path& path, const LoadedCorpus& corpus);

}  // namespace lane::synthetic
