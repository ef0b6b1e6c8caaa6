// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lava/model/teacher_student.hpp"
#include "lava/types.hpp"

namespace lava::model {

/// Container layout (all integers little-endian):
///   "LAVACKPT" | u32 version | entries...
///   entry := u32 name_len | name bytes | u8 dtype | u32 rank | u32 dims[rank] | raw data
/// Entries run to end of file.
inline constexpr char kCheckpointMagic[8] = {'L', 'A', 'V', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2 };

struct TensorEntry {
  std::string name;
  DType dtype = DType::F64;
  std::vector<std::uint32_t> dims;
  std::vector<double> f64;
  std::vector<float> f32;
  std::vector<std::int64_t> i64;

  std::size_t numel() const;
};

class Checkpoint {
public:
  std::uint32_t version = kCheckpointVersion;

  void put_matrix(std::string name, const Matrix& m);
  void put_vector(std::string name, const Vector& v);
  void put_scalar(std::string name, double v);
  void put_ints(std::string name, const std::vector<std::int64_t>& v);
  void put(TensorEntry entry);

  const TensorEntry* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  Matrix matrix(std::string_view name) const;
  Vector vector(std::string_view name) const;
  double scalar(std::string_view name) const;
  std::vector<std::int64_t> ints(std::string_view name) const;
  void erase_prefix(std::string_view prefix);

  const std::vector<TensorEntry>& entries() const { return entries_; }

private:
  const TensorEntry& require(std::string_view name) const;
  std::vector<TensorEntry> entries_;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

/// Writes to a temporary sibling and renames it into place.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Stores both parameter sets, architecture, center, step and momentum.
void pack_pair(Checkpoint& ckpt, const TeacherStudentPair& pair);

struct UnpackedPair {
  TeacherStudentPair pair;
  /// Parameter names absent from the checkpoint; those keep a fresh init.
  std::vector<std::string> missing;
};

UnpackedPair unpack_pair(const Checkpoint& ckpt, std::uint64_t init_seed = 0);

}  // namespace lava::model
