// SPDX-License-Identifier: Apache-2.0
#include "lava/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lava/errors.hpp"

namespace lava::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::size_t TensorEntry::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void Checkpoint::put(TensorEntry entry) {
  for (auto& e : entries_)
    if (e.name == entry.name) {
      e = std::move(entry);
      return;
    }
  entries_.push_back(std::move(entry));
}

void Checkpoint::put_matrix(std::string name, const Matrix& m) {
  TensorEntry e{std::move(name), DType::F64,
                {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}, {}, {}};
  e.f64.assign(m.data(), m.data() + m.size());
  put(std::move(e));
}

void Checkpoint::put_vector(std::string name, const Vector& v) {
  TensorEntry e{std::move(name), DType::F64, {static_cast<std::uint32_t>(v.size())}, {}, {}, {}};
  e.f64.assign(v.data(), v.data() + v.size());
  put(std::move(e));
}

void Checkpoint::put_scalar(std::string name, double v) {
  put(TensorEntry{std::move(name), DType::F64, {}, {v}, {}, {}});
}

void Checkpoint::put_ints(std::string name, const std::vector<std::int64_t>& v) {
  put(TensorEntry{std::move(name), DType::I64, {static_cast<std::uint32_t>(v.size())}, {}, {}, v});
}

const TensorEntry* Checkpoint::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const TensorEntry& Checkpoint::require(std::string_view name) const {
  if (const auto* e = find(name)) return *e;
  throw FormatError("checkpoint has no entry '" + std::string(name) + "'");
}

namespace {

std::vector<double> as_doubles(const TensorEntry& e) {
  switch (e.dtype) {
    case DType::F64: return e.f64;
    case DType::F32: return {e.f32.begin(), e.f32.end()};
    case DType::I64: return {e.i64.begin(), e.i64.end()};
  }
  return {};
}

}  // namespace

Matrix Checkpoint::matrix(std::string_view name) const {
  const auto& e = require(name);
  if (e.dims.size() != 2) throw FormatError("entry '" + e.name + "' is not rank 2");
  const auto values = as_doubles(e);
  Matrix m(e.dims[0], e.dims[1]);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

Vector Checkpoint::vector(std::string_view name) const {
  const auto& e = require(name);
  if (e.dims.size() != 1) throw FormatError("entry '" + e.name + "' is not rank 1");
  const auto values = as_doubles(e);
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

double Checkpoint::scalar(std::string_view name) const {
  const auto& e = require(name);
  if (e.numel() != 1) throw FormatError("entry '" + e.name + "' is not a scalar");
  return as_doubles(e).front();
}

std::vector<std::int64_t> Checkpoint::ints(std::string_view name) const {
  const auto& e = require(name);
  if (e.dtype != DType::I64) throw FormatError("entry '" + e.name + "' is not i64");
  return e.i64;
}

void Checkpoint::erase_prefix(std::string_view prefix) {
  std::erase_if(entries_, [prefix](const TensorEntry& e) { return e.name.starts_with(prefix); });
}

namespace {

template <class T>
void put_raw(std::string& out, const T& v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
public:
  explicit Cursor(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_raw(out, ckpt.version);
  for (const auto& e : ckpt.entries()) {
    put_raw(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_raw(out, static_cast<std::uint8_t>(e.dtype));
    put_raw(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_raw(out, d);
    const std::size_t n = e.numel();
    switch (e.dtype) {
      case DType::F64:
        if (e.f64.size() != n) throw ContractError("entry size mismatch: " + e.name);
        out.append(reinterpret_cast<const char*>(e.f64.data()), n * sizeof(double));
        break;
      case DType::F32:
        if (e.f32.size() != n) throw ContractError("entry size mismatch: " + e.name);
        out.append(reinterpret_cast<const char*>(e.f32.data()), n * sizeof(float));
        break;
      case DType::I64:
        if (e.i64.size() != n) throw ContractError("entry size mismatch: " + e.name);
        out.append(reinterpret_cast<const char*>(e.i64.data()), n * sizeof(std::int64_t));
        break;
    }
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Cursor cur(bytes);
  if (cur.take(sizeof(kCheckpointMagic)) != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw FormatError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = cur.get<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  while (!cur.done()) {
    TensorEntry e;
    e.name = std::string(cur.take(cur.get<std::uint32_t>()));
    const auto tag = cur.get<std::uint8_t>();
    if (tag > 2) throw FormatError("unknown dtype tag in entry " + e.name);
    e.dtype = static_cast<DType>(tag);
    const auto rank = cur.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < rank; ++i) e.dims.push_back(cur.get<std::uint32_t>());
    const std::size_t n = e.numel();
    switch (e.dtype) {
      case DType::F64: {
        auto raw = cur.take(n * sizeof(double));
        e.f64.resize(n);
        std::memcpy(e.f64.data(), raw.data(), raw.size());
        break;
      }
      case DType::F32: {
        auto raw = cur.take(n * sizeof(float));
        e.f32.resize(n);
        std::memcpy(e.f32.data(), raw.data(), raw.size());
        break;
      }
      case DType::I64: {
        auto raw = cur.take(n * sizeof(std::int64_t));
        e.i64.resize(n);
        std::memcpy(e.i64.data(), raw.data(), raw.size());
        break;
      }
    }
    ckpt.put(std::move(e));
  }
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestionError("short write on " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

namespace {

std::vector<std::int64_t> encode(const Architecture& a) {
  return {a.channels, a.conv_channels, a.patch, a.feature_dim, a.hidden_dim,
          a.projection_dim, a.semantic_dim, a.num_classes, a.ssl_dim};
}

Architecture decode(const std::vector<std::int64_t>& v) {
  if (v.size() != 9) throw FormatError("architecture entry has wrong length");
  Architecture a;
  a.channels = static_cast<int>(v[0]);
  a.conv_channels = static_cast<int>(v[1]);
  a.patch = static_cast<int>(v[2]);
  a.feature_dim = static_cast<int>(v[3]);
  a.hidden_dim = static_cast<int>(v[4]);
  a.projection_dim = static_cast<int>(v[5]);
  a.semantic_dim = static_cast<int>(v[6]);
  a.num_classes = static_cast<int>(v[7]);
  a.ssl_dim = static_cast<int>(v[8]);
  return a;
}

}  // namespace

void pack_pair(Checkpoint& ckpt, const TeacherStudentPair& pair) {
  pair.check_layout();
  ckpt.put_ints("arch", encode(pair.student.architecture()));
  for (const auto& p : pair.student.parameters().items()) ckpt.put_matrix("student/" + p.name, p.value);
  for (const auto& p : pair.teacher.parameters().items()) ckpt.put_matrix("teacher/" + p.name, p.value);
  ckpt.put_vector("state/center", pair.center);
  ckpt.put_ints("state/step", {pair.step});
  ckpt.put_scalar("state/momentum", pair.momentum);
}

UnpackedPair unpack_pair(const Checkpoint& ckpt, std::uint64_t init_seed) {
  Architecture arch;
  try {
    arch = decode(ckpt.ints("arch"));
    arch.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad architecture in checkpoint: ") + e.what());
  }
  UnpackedPair out;
  ModelStack fresh(arch, init_seed);
  out.pair = TeacherStudentPair::from_student(fresh, 0.996);
  for (auto* stack : {&out.pair.student, &out.pair.teacher}) {
    const std::string prefix = stack == &out.pair.student ? "student/" : "teacher/";
    for (auto& p : stack->parameters().items()) {
      const auto* e = ckpt.find(prefix + p.name);
      if (!e) {
        out.missing.push_back(prefix + p.name);
        continue;
      }
      Matrix m = ckpt.matrix(prefix + p.name);
      if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
        throw FormatError("shape mismatch for " + prefix + p.name);
      p.value = std::move(m);
    }
  }
  if (const auto* c = ckpt.find("state/center"); c) {
    out.pair.center = ckpt.vector("state/center");
    if (out.pair.center.size() != arch.ssl_dim) throw FormatError("center has wrong dimension");
  }
  if (ckpt.contains("state/step")) out.pair.step = ckpt.ints("state/step").at(0);
  if (ckpt.contains("state/momentum")) out.pair.momentum = ckpt.scalar("state/momentum");
  return out;
}

}  // namespace lava::model
