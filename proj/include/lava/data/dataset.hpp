// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lava/views/image.hpp"

namespace lava::data {

enum class Split : unsigned char { Labelled, Unlabelled, Validation, Test };

const char* to_string(Split s);
/// Throws ConfigError for anything but the four split names.
Split parse_split(std::string_view s);

/// Everything about an item that training code may see.
struct DatasetItem {
  std::string path;  // relative to the dataset root
  Split split = Split::Labelled;
  bool dual = false;
  views::Image image;

  bool operator==(const DatasetItem&) const = default;
};

class LabelOracle;

/// Items with split tags. Class ids index classes(). The class of an
/// unlabelled item is kept aside and is only reachable through LabelOracle.
class DatasetManifest {
public:
  DatasetManifest() = default;
  explicit DatasetManifest(std::vector<std::string> classes, std::filesystem::path root = {});

  const std::filesystem::path& root() const { return root_; }
  void set_root(std::filesystem::path r) { root_ = std::move(r); }
  const std::vector<std::string>& classes() const { return classes_; }
  std::optional<int> class_index(std::string_view name) const;

  std::size_t size() const { return items_.size(); }
  const DatasetItem& item(std::size_t i) const { return items_.at(i); }
  const std::vector<DatasetItem>& items() const { return items_; }

  /// Class id for items outside the unlabelled split, nothing otherwise.
  std::optional<int> label(std::size_t i) const;
  std::vector<std::size_t> indices(Split s) const;
  /// Labelled-split item count per class id.
  std::vector<std::size_t> shots_per_class() const;

  /// Throws ConfigError for an unknown class or a secondary equal to the class.
  void add(DatasetItem item, int class_id, std::optional<int> secondary = std::nullopt);

  bool operator==(const DatasetManifest&) const = default;

private:
  friend class LabelOracle;
  friend DatasetManifest make_ssl_split(const DatasetManifest&, int, std::uint64_t);
  friend void save_dataset(const DatasetManifest&, const std::filesystem::path&);

  std::filesystem::path root_;
  std::vector<std::string> classes_;
  std::vector<DatasetItem> items_;
  std::vector<int> class_;
  std::vector<int> secondary_;  // -1 when single-object
};

/// Keeps `shots` labelled items per class, chosen per class from the items
/// in the labelled or unlabelled splits; the rest of those become
/// unlabelled. Other splits are untouched. Throws SplitError when a class
/// has fewer than `shots` items.
DatasetManifest make_ssl_split(const DatasetManifest& manifest, int shots, std::uint64_t seed);

/// root/manifest.tsv plus one PPM per item under root/<class>/.
void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& root);

/// Reads manifest.tsv ("relative_path class split [secondary_class]") and
/// every image. The class list is the sorted set of class directories.
/// Throws IngestionError naming the offending line.
DatasetManifest load_dataset(const std::filesystem::path& root);

/// Pointers to the images of `indices`, in order.
std::vector<const views::Image*> image_ptrs(const DatasetManifest& m, const std::vector<std::size_t>& indices);

}  // namespace lava::data
