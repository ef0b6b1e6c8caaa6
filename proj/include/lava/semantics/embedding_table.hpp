// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lava/rng.hpp"
#include "lava/types.hpp"

namespace lava::semantics {

/// Lowercases and maps spaces to underscores.
std::string normalize_class_name(std::string_view name);

/// Class name -> unit-norm semantic vector. Immutable after construction.
class LabelEmbeddingTable {
public:
  LabelEmbeddingTable() = default;
  /// Normalizes every row. Throws FormatError on duplicate names, zero rows
  /// or a row count that does not match the names.
  LabelEmbeddingTable(std::vector<std::string> names, Matrix vectors, std::string provenance);

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  int dim() const { return static_cast<int>(vectors_.cols()); }
  const std::vector<std::string>& names() const { return names_; }
  const Matrix& vectors() const { return vectors_; }
  const std::string& provenance() const { return provenance_; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  Vector vector(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)).transpose(); }

  /// Rows for `class_names` in that order; throws ConfigError for unknown names.
  Matrix rows_for(const std::vector<std::string>& class_names) const;
  /// Sub-table restricted to `class_names`, in that order.
  LabelEmbeddingTable subset(const std::vector<std::string>& class_names) const;

private:
  std::vector<std::string> names_;
  Matrix vectors_;
  std::string provenance_;
};

/// Text format: a "d <dim>" line, then "<name> <dim floats>" per class.
LabelEmbeddingTable load_embeddings(const std::filesystem::path& path);
LabelEmbeddingTable parse_embeddings(std::istream& in, std::string provenance);
/// Writes the same format with round-trip-exact float formatting.
void save_embeddings(const LabelEmbeddingTable& table, const std::filesystem::path& path);
void write_embeddings(const LabelEmbeddingTable& table, std::ostream& out);

/// Names placed within `angle_degrees` of a shared random anchor.
struct SimilarityGroup {
  std::vector<std::string> names;
  double angle_degrees = 30.0;
};

/// Deterministic stand-in for language-model embeddings.
LabelEmbeddingTable synthesize_embeddings(const std::vector<std::string>& class_names, int dim, std::uint64_t seed,
                                          const std::vector<SimilarityGroup>& groups = {});

struct SemanticPrediction {
  std::size_t index = 0;
  std::string name;
  Vector scores;  // cosine to every class, table order
};

/// Nearest class embedding by cosine; ties go to the earlier table row.
SemanticPrediction semantic_classify(const Vector& m, const LabelEmbeddingTable& table);

/// Uniform over every class except `true_class`.
std::size_t sample_negative(std::size_t true_class, std::size_t num_classes, Rng& rng);
std::string sample_negative(std::string_view true_class, const LabelEmbeddingTable& table, Rng& rng);

}  // namespace lava::semantics
