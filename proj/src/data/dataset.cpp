// SPDX-License-Identifier: Apache-2.0
#include "lava/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "lava/errors.hpp"
#include "lava/rng.hpp"

namespace lava::data {

namespace fs = std::filesystem;

const char* to_string(Split s) {
  switch (s) {
    case Split::Labelled: return "labelled";
    case Split::Unlabelled: return "unlabelled";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  for (Split v : {Split::Labelled, Split::Unlabelled, Split::Validation, Split::Test})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

DatasetManifest::DatasetManifest(std::vector<std::string> classes, fs::path root)
    : root_(std::move(root)), classes_(std::move(classes)) {}

std::optional<int> DatasetManifest::class_index(std::string_view name) const {
  const auto it = std::find(classes_.begin(), classes_.end(), name);
  if (it == classes_.end()) return std::nullopt;
  return static_cast<int>(it - classes_.begin());
}

std::optional<int> DatasetManifest::label(std::size_t i) const {
  if (items_.at(i).split == Split::Unlabelled) return std::nullopt;
  return class_[i];
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].split == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetManifest::shots_per_class() const {
  std::vector<std::size_t> out(classes_.size());
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].split == Split::Labelled) ++out[static_cast<std::size_t>(class_[i])];
  return out;
}

void DatasetManifest::add(DatasetItem item, int class_id, std::optional<int> secondary) {
  const int n = static_cast<int>(classes_.size());
  if (class_id < 0 || class_id >= n) throw ConfigError("class id " + std::to_string(class_id) + " out of range");
  if (secondary && (*secondary < 0 || *secondary >= n || *secondary == class_id))
    throw ConfigError("invalid secondary class for item '" + item.path + "'");
  item.dual = secondary.has_value();
  items_.push_back(std::move(item));
  class_.push_back(class_id);
  secondary_.push_back(secondary.value_or(-1));
}

DatasetManifest make_ssl_split(const DatasetManifest& manifest, int shots, std::uint64_t seed) {
  if (shots < 0) throw ConfigError("shots per class must be non-negative");
  std::vector<std::vector<std::size_t>> pool(manifest.classes_.size());
  for (std::size_t i = 0; i < manifest.items_.size(); ++i) {
    const Split s = manifest.items_[i].split;
    if (s == Split::Labelled || s == Split::Unlabelled) pool[static_cast<std::size_t>(manifest.class_[i])].push_back(i);
  }
  DatasetManifest out = manifest;
  for (std::size_t c = 0; c < pool.size(); ++c) {
    auto& items = pool[c];
    if (static_cast<int>(items.size()) < shots)
      throw SplitError("class '" + manifest.classes_[c] + "' has " + std::to_string(items.size()) +
                       " items, fewer than " + std::to_string(shots) + " shots");
    Rng rng(derive_seed({seed, hash_string(manifest.classes_[c])}));
    rng.shuffle(items.begin(), items.end());
    for (std::size_t k = 0; k < items.size(); ++k)
      out.items_[items[k]].split = static_cast<int>(k) < shots ? Split::Labelled : Split::Unlabelled;
  }
  return out;
}

void save_dataset(const DatasetManifest& m, const fs::path& root) {
  fs::create_directories(root);
  for (const auto& c : m.classes_) fs::create_directories(root / c);
  std::ostringstream tsv;
  tsv << "relative_path\tclass\tsplit\tsecondary_class\n";
  for (std::size_t i = 0; i < m.items_.size(); ++i) {
    const auto& it = m.items_[i];
    const std::string& cls = m.classes_[static_cast<std::size_t>(m.class_[i])];
    const std::string rel = it.path.empty() ? cls + "/" + std::to_string(i) + ".ppm" : it.path;
    write_pnm(it.image, root / rel);
    tsv << rel << '\t' << cls << '\t' << to_string(it.split) << '\t'
        << (m.secondary_[i] < 0 ? std::string() : m.classes_[static_cast<std::size_t>(m.secondary_[i])]) << '\n';
  }
  const fs::path tmp = root / "manifest.tsv.tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << tsv.str();
    if (!f) throw IngestionError("cannot write " + tmp.string());
  }
  fs::rename(tmp, root / "manifest.tsv");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == '\t') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

DatasetManifest load_dataset(const fs::path& root) {
  const fs::path file = root / "manifest.tsv";
  std::ifstream in(file);
  if (!in) throw IngestionError("missing manifest file " + file.string());
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  std::sort(classes.begin(), classes.end());
  DatasetManifest m(classes, root);

  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> IngestionError {
    return IngestionError(file.string() + " line " + std::to_string(lineno) + ": " + msg);
  };
  if (!std::getline(in, line)) throw IngestionError(file.string() + ": empty manifest");
  ++lineno;
  const auto header = split_tabs(line);
  if (header.size() < 3 || header[0] != "relative_path" || header[1] != "class" || header[2] != "split")
    throw fail("header must start with relative_path, class, split");
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cols = split_tabs(line);
    if (cols.size() < 3 || cols.size() > 4 || cols[0].empty()) throw fail("malformed row");
    const auto cls = m.class_index(cols[1]);
    if (!cls) throw fail("unknown class '" + cols[1] + "'");
    Split split;
    try {
      split = parse_split(cols[2]);
    } catch (const ConfigError&) {
      throw fail("unknown split '" + cols[2] + "'");
    }
    std::optional<int> secondary;
    if (cols.size() == 4 && !cols[3].empty()) {
      secondary = m.class_index(cols[3]);
      if (!secondary) throw fail("unknown secondary class '" + cols[3] + "'");
      if (*secondary == *cls) throw fail("secondary class equals the class");
    }
    const fs::path img = root / cols[0];
    if (!fs::exists(img)) throw fail("missing image file '" + cols[0] + "'");
    DatasetItem item;
    item.path = cols[0];
    item.split = split;
    try {
      item.image = views::read_pnm(img);
    } catch (const Error& e) {
      throw fail(e.what());
    }
    m.add(std::move(item), *cls, secondary);
  }
  return m;
}

std::vector<const views::Image*> image_ptrs(const DatasetManifest& m, const std::vector<std::size_t>& indices) {
  std::vector<const views::Image*> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(&m.item(i).image);
  return out;
}

}  // namespace lava::data
