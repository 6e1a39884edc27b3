#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecnet/data.hpp"

namespace ecnet {

struct PairPaths {
  std::filesystem::path rainy;
  std::filesystem::path background;
};

/// Ordered list of rainy/background file pairs.
struct DatasetIndex {
  std::vector<PairPaths> pairs;

  void shuffle(uint64_t seed);
};

/// Builds an index from either layout:
///   - a directory containing rain/ and norain/ trees paired by filename, or
///   - a manifest text file of "rainy_path<TAB>background_path" lines
///     (paths resolved relative to the manifest's directory).
/// Missing partners are reported by name.
DatasetIndex load_dataset(const std::filesystem::path& root);

/// Loads one pair, checks the shapes match (error names both files), and
/// derives rain = rainy - background plus the thresholded mask.
RainPair load_pair(const PairPaths& paths, double mask_tau);

}  // namespace ecnet
