// SPDX-License-Identifier: Apache-2.0
#include "lava/semantics/embedding_table.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <limits>
#include <unordered_set>

#include "lava/errors.hpp"

namespace lava::semantics {

std::string normalize_class_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) out.push_back(c == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

LabelEmbeddingTable::LabelEmbeddingTable(std::vector<std::string> names, Matrix vectors, std::string provenance)
    : names_(std::move(names)), vectors_(std::move(vectors)), provenance_(std::move(provenance)) {
  if (static_cast<Eigen::Index>(names_.size()) != vectors_.rows())
    throw FormatError("embedding table has mismatched name and row counts");
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!seen.insert(normalize_class_name(names_[i])).second)
      throw FormatError("duplicate class name '" + names_[i] + "' in embedding table");
    const double n = vectors_.row(static_cast<Eigen::Index>(i)).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw FormatError("zero or non-finite embedding for '" + names_[i] + "'");
    // Rows already unit-norm to rounding are kept verbatim so save/load is exact.
    if (std::abs(n - 1.0) > 4 * std::numeric_limits<double>::epsilon()) vectors_.row(static_cast<Eigen::Index>(i)) /= n;
  }
}

std::optional<std::size_t> LabelEmbeddingTable::index_of(std::string_view name) const {
  const std::string key = normalize_class_name(name);
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (normalize_class_name(names_[i]) == key) return i;
  return std::nullopt;
}

Matrix LabelEmbeddingTable::rows_for(const std::vector<std::string>& class_names) const {
  Matrix out(static_cast<Eigen::Index>(class_names.size()), vectors_.cols());
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    const auto idx = index_of(class_names[i]);
    if (!idx) throw ConfigError("class '" + class_names[i] + "' has no label embedding");
    out.row(static_cast<Eigen::Index>(i)) = vectors_.row(static_cast<Eigen::Index>(*idx));
  }
  return out;
}

LabelEmbeddingTable LabelEmbeddingTable::subset(const std::vector<std::string>& class_names) const {
  return LabelEmbeddingTable(class_names, rows_for(class_names), provenance_);
}

LabelEmbeddingTable parse_embeddings(std::istream& in, std::string provenance) {
  std::string line;
  int line_no = 0;
  int dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag >> dim;
    if (tag != "d" || ss.fail() || dim < 1) throw FormatError("embedding file: expected 'd <dim>' on line " + std::to_string(line_no));
    break;
  }
  if (dim < 1) throw FormatError("embedding file is empty");
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string name;
    ss >> name;
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw FormatError("embedding file: bad number '" + tok + "' on line " + std::to_string(line_no));
      row.push_back(v);
    }
    if (static_cast<int>(row.size()) != dim)
      throw FormatError("embedding file: line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                        " values, expected " + std::to_string(dim));
    names.push_back(name);
    rows.push_back(std::move(row));
  }
  if (names.empty()) throw FormatError("embedding file has no class rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < dim; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return LabelEmbeddingTable(std::move(names), std::move(m), std::move(provenance));
}

LabelEmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open embedding file " + path.string());
  return parse_embeddings(in, "file:" + path.string());
}

void write_embeddings(const LabelEmbeddingTable& table, std::ostream& out) {
  out << "d " << table.dim() << "\n";
  char buf[64];
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::string name = table.names()[i];
    for (char& c : name)
      if (c == ' ' || c == '\t') c = '_';
    out << name;
    for (int j = 0; j < table.dim(); ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), table.vectors()(static_cast<Eigen::Index>(i), j));
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << "\n";
  }
}

void save_embeddings(const LabelEmbeddingTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write embedding file " + path.string());
  write_embeddings(table, out);
}

namespace {

Vector random_unit(int dim, Rng& rng) {
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  } while (v.norm() < 1e-9);
  return v.normalized();
}

}  // namespace

LabelEmbeddingTable synthesize_embeddings(const std::vector<std::string>& class_names, int dim, std::uint64_t seed,
                                          const std::vector<SimilarityGroup>& groups) {
  if (dim < 2) throw ConfigError("synthetic embeddings need d >= 2");
  Matrix m(static_cast<Eigen::Index>(class_names.size()), dim);
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    const std::string key = normalize_class_name(class_names[i]);
    Rng rng(derive_seed({seed, hash_string(key)}));
    Vector v = random_unit(dim, rng);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& group = groups[g];
      bool member = false;
      for (const auto& n : group.names) member = member || normalize_class_name(n) == key;
      if (!member) continue;
      // Anchor depends on the group's member list so it is stable per group.
      std::uint64_t gh = seed;
      for (const auto& n : group.names) gh = derive_seed({gh, hash_string(normalize_class_name(n))});
      Rng anchor_rng(gh);
      const Vector anchor = random_unit(dim, anchor_rng);
      Vector ortho = v - v.dot(anchor) * anchor;
      if (ortho.norm() < 1e-9) ortho = random_unit(dim, rng) - anchor * anchor.dot(random_unit(dim, rng));
      ortho.normalize();
      const double theta = group.angle_degrees * std::numbers::pi / 180.0;
      v = std::cos(theta) * anchor + std::sin(theta) * ortho;
      break;
    }
    m.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return LabelEmbeddingTable(class_names, std::move(m), "synthetic:seed=" + std::to_string(seed));
}

SemanticPrediction semantic_classify(const Vector& m, const LabelEmbeddingTable& table) {
  if (table.empty()) throw DomainError("semantic classification against an empty table");
  if (m.size() != table.dim()) throw ContractError("semantic vector dimension does not match the table");
  const double n = m.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("semantic vector has zero norm");
  SemanticPrediction out;
  out.scores = table.vectors() * (m / n);
  for (Eigen::Index i = 1; i < out.scores.size(); ++i)
    if (out.scores[i] > out.scores[static_cast<Eigen::Index>(out.index)]) out.index = static_cast<std::size_t>(i);
  out.name = table.names()[out.index];
  return out;
}

std::size_t sample_negative(std::size_t true_class, std::size_t num_classes, Rng& rng) {
  if (num_classes < 2) throw DomainError("negative sampling needs at least two classes");
  if (true_class >= num_classes) throw ContractError("true class outside the table");
  const auto k = static_cast<std::size_t>(rng.below(num_classes - 1));
  return k >= true_class ? k + 1 : k;
}

std::string sample_negative(std::string_view true_class, const LabelEmbeddingTable& table, Rng& rng) {
  const auto idx = table.index_of(true_class);
  if (!idx) throw ContractError("class '" + std::string(true_class) + "' not in table");
  return table.names()[sample_negative(*idx, table.size(), rng)];
}

}  // namespace lava::semantics
