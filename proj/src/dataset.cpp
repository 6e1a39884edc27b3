#include "ecnet/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "ecnet/image_io.hpp"
#include "ecnet/random.hpp"

namespace ecnet {

namespace fs = std::filesystem;

void DatasetIndex::shuffle(uint64_t seed) {
  Rng rng(seed);
  for (size_t i = pairs.size(); i > 1; --i)
    std::swap(pairs[i - 1], pairs[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
}

namespace {

bool is_image_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

DatasetIndex from_paired_dirs(const fs::path& root) {
  const fs::path rain_dir = root / "rain";
  const fs::path norain_dir = root / "norain";
  DatasetIndex index;
  std::vector<fs::path> rainy_files;
  for (const auto& entry : fs::directory_iterator(rain_dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) rainy_files.push_back(entry.path());
  std::sort(rainy_files.begin(), rainy_files.end());
  for (const auto& rainy : rainy_files) {
    const fs::path partner = norain_dir / rainy.filename();
    if (!fs::exists(partner))
      throw std::runtime_error("dataset: " + rainy.string() + " has no background partner " +
                               partner.string());
    index.pairs.push_back({rainy, partner});
  }
  return index;
}

DatasetIndex from_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("dataset: cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  DatasetIndex index;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("dataset: " + manifest.string() + ":" + std::to_string(line_no) +
                               ": expected rainy<TAB>background");
    fs::path rainy = line.substr(0, tab);
    fs::path background = line.substr(tab + 1);
    if (rainy.is_relative()) rainy = base / rainy;
    if (background.is_relative()) background = base / background;
    for (const fs::path& p : {rainy, background})
      if (!fs::exists(p))
        throw std::runtime_error("dataset: " + manifest.string() + ":" + std::to_string(line_no) +
                                 ": missing file " + p.string());
    index.pairs.push_back({rainy, background});
  }
  return index;
}

}  // namespace

DatasetIndex load_dataset(const fs::path& root) {
  if (fs::is_directory(root)) {
    if (fs::is_directory(root / "rain") && fs::is_directory(root / "norain"))
      return from_paired_dirs(root);
    const fs::path manifest = root / "manifest.txt";
    if (fs::is_regular_file(manifest)) return from_manifest(manifest);
    throw std::runtime_error("dataset: " + root.string() +
                             " has neither rain//norain/ trees nor a manifest.txt");
  }
  if (fs::is_regular_file(root)) return from_manifest(root);
  throw std::runtime_error("dataset: no such path " + root.string());
}

RainPair load_pair(const PairPaths& paths, double mask_tau) {
  RainPair pair;
  pair.rainy = load_image(paths.rainy);
  pair.background = load_image(paths.background);
  if (!(pair.rainy.shape() == pair.background.shape()))
    throw std::runtime_error("dataset: shape mismatch between " + paths.rainy.string() + " " +
                             pair.rainy.shape().str() + " and " + paths.background.string() + " " +
                             pair.background.shape().str());
  pair.rain = Tensor<float>::zeros(pair.rainy.shape());
  auto iv = pair.rainy.values();
  auto bv = pair.background.values();
  auto rv = pair.rain.values();
  for (size_t i = 0; i < rv.size(); ++i) rv[i] = iv[i] - bv[i];
  pair.mask = gt_mask(pair.rain, mask_tau);
  return pair;
}

}  // namespace ecnet
