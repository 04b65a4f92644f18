#pragma once

// Binary formats (all integers and floats little-endian):
//
// VMLD1 dataset
//   "VMLD1" | u32 n | u32 F1 | u32 F2
//   n x { u8 has_x1 | F1 x f64 | u8 has_x2 | F2 x f64 | 7 x f64 (px py pz qu qx qy qz) }
//   absent modalities are stored as zeros with presence byte 0.
//
// Checkpoint
//   "VMLC" | u32 version | u32 len | model config text (key=value)
//   u32 count | count x { u32 name_len | name | u32 rank | rank x u64 dims | f64 values }

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "vmloc/config.hpp"
#include "vmloc/model.hpp"
#include "vmloc/record.hpp"

namespace vmloc {

namespace io_detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string what) : buf_(std::move(buf)), what_(std::move(what)) {}
  void need(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw DataError(what_ + ": truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) + " more)");
  }
  std::string fixed(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() { return fixed(u32()); }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }
  const std::string& what() const { return what_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace io_detail

inline constexpr char kDatasetMagic[] = "VMLD1";
inline constexpr char kCheckpointMagic[] = "VMLC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct DatasetFile {
  std::size_t f1 = 0, f2 = 0;
  std::vector<SampleRecord> records;
};

inline std::vector<char> encode_dataset(std::span<const SampleRecord> recs, std::size_t f1, std::size_t f2) {
  io_detail::Writer w;
  w.bytes(kDatasetMagic, 5);
  w.u32(static_cast<std::uint32_t>(recs.size()));
  w.u32(static_cast<std::uint32_t>(f1));
  w.u32(static_cast<std::uint32_t>(f2));
  auto modality = [&](const std::optional<Features>& x, std::size_t f, std::size_t r) {
    if (x && x->size() != f)
      throw DataError("record " + std::to_string(r) + " has " + std::to_string(x->size()) + " features, expected " +
                      std::to_string(f));
    w.u8(x ? 1 : 0);
    for (std::size_t i = 0; i < f; ++i) w.f64(x ? (*x)[i] : 0.0);
  };
  for (std::size_t r = 0; r < recs.size(); ++r) {
    modality(recs[r].x1, f1, r);
    modality(recs[r].x2, f2, r);
    for (double v : recs[r].pose.p()) w.f64(v);
    for (double v : recs[r].pose.q()) w.f64(v);
  }
  return w.data();
}

inline DatasetFile decode_dataset(std::vector<char> bytes, const std::string& what = "dataset") {
  io_detail::Reader r(std::move(bytes), what);
  if (r.fixed(5) != std::string(kDatasetMagic, 5)) throw DataError(what + ": not a VMLD1 file (bad magic)");
  DatasetFile d;
  const std::uint32_t n = r.u32();
  d.f1 = r.u32();
  d.f2 = r.u32();
  d.records.reserve(n);
  auto modality = [&](std::size_t f, std::size_t idx) -> std::optional<Features> {
    const auto present = r.u8();
    if (present > 1) throw DataError(what + ": record " + std::to_string(idx) + " has presence byte " + std::to_string(present));
    Features x(f);
    for (auto& v : x) v = r.f64();
    if (!present) return std::nullopt;
    return x;
  };
  for (std::uint32_t i = 0; i < n; ++i) {
    SampleRecord rec;
    rec.x1 = modality(d.f1, i);
    rec.x2 = modality(d.f2, i);
    Vec3 p;
    Quat q;
    for (auto& v : p) v = r.f64();
    for (auto& v : q) v = r.f64();
    if (!(std::abs(quat_norm(q) - 1.0) < 1e-9))
      throw DataError(what + ": record " + std::to_string(i) + " quaternion is not unit norm");
    rec.pose = Pose(p, q);
    d.records.push_back(std::move(rec));
  }
  if (!r.done()) throw DataError(what + ": trailing bytes after " + std::to_string(n) + " records");
  return d;
}

inline void write_dataset(const std::string& path, std::span<const SampleRecord> recs, std::size_t f1, std::size_t f2) {
  io_detail::write_file(path, encode_dataset(recs, f1, f2));
}

inline DatasetFile read_dataset(const std::string& path) { return decode_dataset(io_detail::read_file(path), path); }

inline std::vector<char> encode_checkpoint(VmlocModel& m) {
  io_detail::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(to_text(m.config()));
  const auto params = m.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.u64(d);
    for (double v : p->value.data()) w.f64(v);
  }
  return w.data();
}

inline VmlocModel decode_checkpoint(std::vector<char> bytes, const std::string& what = "checkpoint") {
  io_detail::Reader r(std::move(bytes), what);
  if (r.fixed(4) != std::string(kCheckpointMagic, 4)) throw DataError(what + ": not a checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw DataError(what + ": unsupported checkpoint version " + std::to_string(v));
  VmlocModel m(parse_model_config(r.str()));
  auto params = m.parameters();
  const std::uint32_t n = r.u32();
  if (n != params.size())
    throw DataError(what + ": holds " + std::to_string(n) + " tensors, model expects " + std::to_string(params.size()));
  for (auto* p : params) {
    const std::string name = r.str();
    if (name != p->name) throw DataError(what + ": expected tensor '" + p->name + "', found '" + name + "'");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != p->value.shape())
      throw DataError(what + ": tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                      shape_str(p->value.shape()));
    for (auto& v : p->value.data()) v = r.f64();
  }
  if (!r.done()) throw DataError(what + ": trailing bytes");
  return m;
}

inline void save_checkpoint(const std::string& path, VmlocModel& m) { io_detail::write_file(path, encode_checkpoint(m)); }
inline VmlocModel load_checkpoint(const std::string& path) { return decode_checkpoint(io_detail::read_file(path), path); }

}  // namespace vmloc
