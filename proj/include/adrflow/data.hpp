#ifndef ADRFLOW_DATA_HPP
#define ADRFLOW_DATA_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "adrflow/diffusion.hpp"
#include "adrflow/model.hpp"
#include "adrflow/tensor.hpp"

namespace adrflow {

class IoError : public Error {
 public:
  using Error::Error;
};

/// A history window and the frames that follow it.
struct SequenceSample {
  HistoryWindow history;
  std::vector<Tensor> target;
};

using Sequence = std::vector<Tensor>;

// ---------------------------------------------------------------------------
// Synthetic generators. Frames are [1][1][H][W] fields.

/// Single-pixel transport task: 1.0 at the bottom-left corner moves to the
/// top-right corner.
inline SequenceSample gen_fig1(std::size_t height, std::size_t width) {
  if (height < 2 || width < 2) throw Error("gen_fig1: grid must be at least 2x2");
  Tensor source = grid(1, 1, height, width);
  Tensor target = grid(1, 1, height, width);
  source.at(0, 0, height - 1, 0) = 1.0;
  target.at(0, 0, 0, width - 1) = 1.0;
  return SequenceSample{HistoryWindow{{std::move(source)}}, {std::move(target)}};
}

struct BlobOptions {
  std::size_t height = 32, width = 32;
  Real velocity_row = 0, velocity_col = 0;  // pixels per frame
  Real sigma = 2.0;
  std::size_t steps = 20;  // number of frames
  std::uint64_t seed = 0;
  Real background = 0.0;   // constant floor; the blob peak is 1.0
};

/// Analytic Gaussian blob translated at constant velocity. The start is drawn
/// so the whole track stays at least 4 sigma inside the grid when it fits;
/// otherwise the track is centred.
inline Sequence gen_blob_sequence(const BlobOptions& o) {
  if (!(o.sigma > 0)) throw Error("gen_blob_sequence: sigma must be positive");
  if (o.background < 0 || o.background >= 1) throw Error("gen_blob_sequence: background must be in [0,1)");
  if (o.height == 0 || o.width == 0) throw Error("gen_blob_sequence: empty grid");
  std::mt19937_64 rng(o.seed);
  const Real travel = static_cast<Real>(o.steps ? o.steps - 1 : 0);
  auto pick = [&](std::size_t n, Real v) {
    const Real margin = 4 * o.sigma;
    const Real lo_track = std::min(0.0, v * travel), hi_track = std::max(0.0, v * travel);
    const Real lo = margin - lo_track;
    const Real hi = static_cast<Real>(n - 1) - margin - hi_track;
    if (hi < lo) return 0.5 * (static_cast<Real>(n - 1) - lo_track - hi_track);
    return std::uniform_real_distribution<Real>(lo, hi)(rng);
  };
  const Real r0 = pick(o.height, o.velocity_row);
  const Real c0 = pick(o.width, o.velocity_col);
  Sequence frames;
  for (std::size_t t = 0; t < o.steps; ++t) {
    const Real cr = r0 + o.velocity_row * static_cast<Real>(t);
    const Real cc = c0 + o.velocity_col * static_cast<Real>(t);
    Tensor f = grid(1, 1, o.height, o.width);
    for (std::size_t r = 0; r < o.height; ++r) {
      for (std::size_t c = 0; c < o.width; ++c) {
        const Real dr = static_cast<Real>(r) - cr, dc = static_cast<Real>(c) - cc;
        const Real g = std::exp(-(dr * dr + dc * dc) / (2 * o.sigma * o.sigma));
        f.at(0, 0, r, c) = o.background + (1 - o.background) * g;
      }
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

/// `count` blob sequences with velocities uniform over the disc of radius
/// `velocity_max` (speed = vmax sqrt(u), angle uniform).
inline std::vector<Sequence> gen_blob_dataset(std::size_t count, BlobOptions base, Real velocity_max,
                                              std::uint64_t seed) {
  if (velocity_max < 0) throw Error("gen_blob_dataset: velocity bound must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Real speed = velocity_max * std::sqrt(unit(rng));
    const Real angle = 2 * std::numbers::pi * unit(rng);
    base.velocity_row = speed * std::cos(angle);
    base.velocity_col = speed * std::sin(angle);
    base.seed = rng();
    out.push_back(gen_blob_sequence(base));
  }
  return out;
}

/// Random field evolved by exact backward-Euler diffusion: mode (i,j) of
/// frame t is the initial coefficient times (1 + h kappa lambda)^-t.
inline Sequence gen_diffusion_sequence(std::size_t height, std::size_t width, Real kappa, Real h,
                                       std::size_t steps, std::uint64_t seed) {
  if (kappa < 0) throw Error("gen_diffusion_sequence: kappa must be >= 0");
  if (!(h > 0)) throw Error("gen_diffusion_sequence: h must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> dist(0.0, 1.0);
  Tensor init = grid(1, 1, height, width);
  for (Real& v : init.data()) v = dist(rng);
  const DctPlan plan(height, width);
  const Tensor coeffs = dct2(init, plan);
  auto lambda = plan.eigenvalues();
  Sequence frames;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor c = coeffs;
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i] *= std::pow(1.0 + h * kappa * lambda[i], -static_cast<Real>(t));
    }
    frames.push_back(idct2(c, plan));
  }
  return frames;
}

/// Number of windows: floor((len - (j + 1 + l)) / stride) + 1 when
/// len >= j + 1 + l.
inline std::size_t window_count(std::size_t length, std::size_t history_len, std::size_t horizon,
                                std::size_t stride) {
  const std::size_t span = history_len + 1 + horizon;
  if (stride == 0 || length < span) return 0;
  return (length - span) / stride + 1;
}

/// Sliding windows: sample s uses frames [s*stride, s*stride + j] as history
/// and the next `horizon` frames as target.
inline std::vector<SequenceSample> window(const Sequence& seq, std::size_t history_len,
                                          std::size_t horizon, std::size_t stride = 1) {
  if (stride == 0) throw Error("window: stride must be >= 1");
  if (horizon == 0) throw Error("window: horizon must be >= 1");
  const std::size_t span = history_len + 1 + horizon;
  if (seq.size() < span) {
    throw Error("window: sequence of " + std::to_string(seq.size()) +
                " frames is shorter than history + horizon = " + std::to_string(span));
  }
  std::vector<SequenceSample> out;
  const std::size_t count = window_count(seq.size(), history_len, horizon, stride);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t s = k * stride;
    SequenceSample sample;
    sample.history.frames.assign(seq.begin() + static_cast<std::ptrdiff_t>(s),
                                 seq.begin() + static_cast<std::ptrdiff_t>(s + history_len + 1));
    sample.target.assign(seq.begin() + static_cast<std::ptrdiff_t>(s + history_len + 1),
                         seq.begin() + static_cast<std::ptrdiff_t>(s + span));
    out.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary tensor container.
//
//   "ADRT" | version u16 | entry count u32 | entries...
//   entry: name length u16 | UTF-8 name | rank u8 | dims u32 x rank |
//          dtype u8 | row-major payload
//
// All integers and payloads are little-endian. dtype 1 = float32,
// 2 = float64, 3 = raw bytes (used for text such as the checkpoint config).

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2, Bytes = 3 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::Float32: return 4;
    case DType::Float64: return 8;
    case DType::Bytes: return 1;
  }
  return 0;
}

struct ContainerEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  DType dtype = DType::Float64;
  std::vector<std::uint8_t> payload;  // little-endian bytes

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  static ContainerEntry from_tensor(std::string name, const Tensor& t, DType dtype = DType::Float64) {
    if (dtype == DType::Bytes) throw IoError("from_tensor: use from_text for byte entries");
    ContainerEntry e;
    e.name = std::move(name);
    for (auto d : t.shape().dims()) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.dtype = dtype;
    e.payload.resize(t.size() * dtype_size(dtype));
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (dtype == DType::Float64) {
        store_le(&e.payload[i * 8], std::bit_cast<std::uint64_t>(t[i]));
      } else {
        store_le(&e.payload[i * 4], std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
      }
    }
    return e;
  }

  static ContainerEntry from_text(std::string name, const std::string& text) {
    ContainerEntry e;
    e.name = std::move(name);
    e.dims = {static_cast<std::uint32_t>(text.size())};
    e.dtype = DType::Bytes;
    e.payload.assign(text.begin(), text.end());
    return e;
  }

  Tensor to_tensor() const {
    if (dtype == DType::Bytes) throw IoError("entry '" + name + "' holds bytes, not reals");
    std::vector<std::size_t> d(dims.begin(), dims.end());
    Tensor t{Shape(std::move(d))};
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (dtype == DType::Float64) {
        t[i] = std::bit_cast<double>(load_le<std::uint64_t>(&payload[i * 8]));
      } else {
        t[i] = std::bit_cast<float>(load_le<std::uint32_t>(&payload[i * 4]));
      }
    }
    return t;
  }

  std::string to_text() const { return std::string(payload.begin(), payload.end()); }

  template <class U>
  static void store_le(std::uint8_t* dst, U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) dst[b] = static_cast<std::uint8_t>(v >> (8 * b));
  }
  template <class U>
  static U load_le(const std::uint8_t* src) {
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(src[b]) << (8 * b);
    return v;
  }
};

inline constexpr std::uint16_t kContainerVersion = 1;

inline std::vector<std::uint8_t> encode_container(const std::vector<ContainerEntry>& entries) {
  std::set<std::string> names;
  std::vector<std::uint8_t> out{'A', 'D', 'R', 'T'};
  auto put = [&](auto v) {
    std::uint8_t buf[sizeof(v)];
    ContainerEntry::store_le(buf, v);
    out.insert(out.end(), buf, buf + sizeof(v));
  };
  put(kContainerVersion);
  put(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) throw IoError("duplicate container entry name '" + e.name + "'");
    if (e.name.size() > 0xFFFF) throw IoError("container entry name too long");
    if (e.dims.size() > 0xFF) throw IoError("container entry rank too large");
    if (e.payload.size() != e.numel() * dtype_size(e.dtype)) {
      throw IoError("entry '" + e.name + "': payload of " + std::to_string(e.payload.size()) +
                    " bytes does not match dims");
    }
    put(static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put(d);
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return out;
}

inline std::vector<ContainerEntry> decode_container(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      throw IoError(std::string("truncated container at offset ") + std::to_string(pos) +
                    " reading " + what + ": expected " + std::to_string(n) + " bytes, " +
                    std::to_string(bytes.size() - pos) + " available");
    }
  };
  auto get = [&]<class U>(U, const char* what) {
    need(sizeof(U), what);
    U v = ContainerEntry::load_le<U>(&bytes[pos]);
    pos += sizeof(U);
    return v;
  };
  need(4, "magic");
  if (std::memcmp(bytes.data(), "ADRT", 4) != 0) {
    throw IoError("bad container magic at offset 0 (expected \"ADRT\")");
  }
  pos = 4;
  const std::size_t version_at = pos;
  const auto version = get(std::uint16_t{}, "version");
  if (version != kContainerVersion) {
    throw IoError("unsupported container version " + std::to_string(version) + " at offset " +
                  std::to_string(version_at));
  }
  const auto count = get(std::uint32_t{}, "entry count");
  std::vector<ContainerEntry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    ContainerEntry e;
    const auto name_len = get(std::uint16_t{}, "name length");
    need(name_len, "name");
    e.name.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
    pos += name_len;
    const auto rank = get(std::uint8_t{}, "rank");
    for (std::uint8_t r = 0; r < rank; ++r) e.dims.push_back(get(std::uint32_t{}, "dims"));
    const std::size_t dtype_at = pos;
    const auto tag = get(std::uint8_t{}, "dtype");
    if (tag < 1 || tag > 3) {
      throw IoError("unknown dtype tag " + std::to_string(tag) + " at offset " +
                    std::to_string(dtype_at) + " (entry '" + e.name + "')");
    }
    e.dtype = static_cast<DType>(tag);
    const std::size_t len = e.numel() * dtype_size(e.dtype);
    if (bytes.size() - pos < len) {
      throw IoError("truncated payload for entry '" + e.name + "' at offset " + std::to_string(pos) +
                    ": expected " + std::to_string(len) + " bytes, got " +
                    std::to_string(bytes.size() - pos));
    }
    e.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    entries.push_back(std::move(e));
  }
  if (pos != bytes.size()) {
    throw IoError("trailing bytes after last entry at offset " + std::to_string(pos));
  }
  return entries;
}

inline void save_container(const std::filesystem::path& path,
                           const std::vector<ContainerEntry>& entries) {
  const auto bytes = encode_container(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<ContainerEntry> load_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

inline const ContainerEntry& find_entry(const std::vector<ContainerEntry>& entries,
                                        const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw IoError("container has no entry '" + name + "'");
}

// ---------------------------------------------------------------------------
// Dataset files: one entry per sequence, "seqNNNNN", dims [T][m][H][W].

inline std::string sequence_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "seq%05zu", i);
  return buf;
}

inline void save_sequences(const std::filesystem::path& path, const std::vector<Sequence>& seqs) {
  std::vector<ContainerEntry> entries;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const Sequence& s = seqs[i];
    if (s.empty()) throw IoError("save_sequences: empty sequence");
    const Tensor& f0 = s.front();
    Tensor packed(Shape{s.size(), f0.channels(), f0.height(), f0.width()});
    const std::size_t len = f0.channels() * f0.plane();
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s[t].shape() != Shape{1, f0.channels(), f0.height(), f0.width()}) {
        throw ShapeError("save_sequences: frames of a sequence must share shape [1][m][H][W]");
      }
      std::copy_n(s[t].data().begin(), len, packed.data().begin() + static_cast<std::ptrdiff_t>(t * len));
    }
    entries.push_back(ContainerEntry::from_tensor(sequence_name(i), packed));
  }
  save_container(path, entries);
}

inline std::vector<Sequence> load_sequences(const std::filesystem::path& path) {
  std::vector<Sequence> out;
  for (const auto& e : load_container(path)) {
    if (e.name.rfind("seq", 0) != 0) continue;
    Tensor packed = e.to_tensor();
    if (packed.rank() != 4) throw IoError("sequence entry '" + e.name + "' must have rank 4");
    const auto& d = packed.shape().dims();
    Sequence s;
    const std::size_t len = d[1] * d[2] * d[3];
    for (std::size_t t = 0; t < d[0]; ++t) {
      Tensor f = grid(1, d[1], d[2], d[3]);
      std::copy_n(packed.data().begin() + static_cast<std::ptrdiff_t>(t * len), len, f.data().begin());
      s.push_back(std::move(f));
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Whole-sequence train/validation split, deterministic in `seed`.
inline std::pair<std::vector<Sequence>, std::vector<Sequence>> split_sequences(
    std::vector<Sequence> seqs, std::size_t val_count, std::uint64_t seed) {
  if (val_count > seqs.size()) throw Error("split_sequences: more validation sequences than available");
  std::mt19937_64 rng(seed);
  for (std::size_t i = seqs.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(seqs[i - 1], seqs[j]);
  }
  std::vector<Sequence> val(std::make_move_iterator(seqs.end() - static_cast<std::ptrdiff_t>(val_count)),
                            std::make_move_iterator(seqs.end()));
  seqs.resize(seqs.size() - val_count);
  return {std::move(seqs), std::move(val)};
}

}  // namespace adrflow

#endif  // ADRFLOW_DATA_HPP
