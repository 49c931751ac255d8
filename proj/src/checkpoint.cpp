// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedpia/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "fedpia/errors.hpp"

namespace fedpia {

namespace {

constexpr char kMagic[8] = {'F', 'P', 'I', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kHasAdapters = 1;
constexpr std::uint32_t kHasHead = 2;

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void raw(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint truncated", 0);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

Matrix as_row(const Vector& v) { return Matrix(1, v.size(), v); }

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const std::size_t layer_count =
      checkpoint.adapters ? checkpoint.adapters->layers.size() : 0;

  std::vector<Matrix> ordered;
  if (checkpoint.adapters) {
    for (const auto& layer : checkpoint.adapters->layers) {
      ordered.push_back(layer.w_down);
      ordered.push_back(as_row(layer.b_down));
      ordered.push_back(layer.w_up);
      ordered.push_back(as_row(layer.b_up));
    }
  }
  if (checkpoint.head) {
    ordered.push_back(checkpoint.head->w);
    ordered.push_back(as_row(checkpoint.head->b));
  }

  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>((checkpoint.adapters ? kHasAdapters : 0) |
                       (checkpoint.head ? kHasHead : 0));
  w.put<std::uint64_t>(checkpoint.seed);
  w.put<std::uint64_t>(checkpoint.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(layer_count));
  w.put<std::uint32_t>(checkpoint.head && checkpoint.head->kind == TaskKind::kMultiLabel ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ordered.size()));
  for (const auto& m : ordered) {
    w.put<std::uint64_t>(m.rows());
    w.put<std::uint64_t>(m.cols());
  }
  for (const auto& m : ordered) w.raw(m.values().data(), m.size() * sizeof(double));
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not a checkpoint (bad magic)", 0);
  }
  if (r.get<std::uint32_t>() != kVersion) throw ParseError("unsupported checkpoint version", 0);
  const auto kind = r.get<std::uint32_t>();
  if (kind == 0 || kind > (kHasAdapters | kHasHead)) {
    throw ParseError("bad checkpoint kind", 0);
  }
  Checkpoint ck;
  ck.seed = r.get<std::uint64_t>();
  ck.step = r.get<std::uint64_t>();
  const auto layers = r.get<std::uint32_t>();
  const auto task = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();

  const std::size_t expected =
      ((kind & kHasAdapters) ? 4 * static_cast<std::size_t>(layers) : 0) +
      ((kind & kHasHead) ? 2 : 0);
  if (count != expected || task > 1 || (!(kind & kHasAdapters) && layers != 0)) {
    throw ParseError("checkpoint shape manifest is inconsistent", 0);
  }

  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes(count);
  for (auto& s : shapes) {
    s.first = r.get<std::uint64_t>();
    s.second = r.get<std::uint64_t>();
  }
  std::vector<Matrix> tensors;
  tensors.reserve(count);
  for (const auto& [rows, cols] : shapes) {
    const std::size_t n = rows * cols;
    if (cols != 0 && n / cols != rows) throw ParseError("tensor size overflow", 0);
    std::vector<double> data(n);
    std::memcpy(data.data(), r.take(n * sizeof(double)), n * sizeof(double));
    tensors.emplace_back(rows, cols, std::move(data));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint payload", 0);

  auto to_vector = [](const Matrix& m) {
    if (m.rows() != 1) throw ParseError("bias tensor must be a single row", 0);
    return Vector(m.values().begin(), m.values().end());
  };

  std::size_t t = 0;
  if (kind & kHasAdapters) {
    AdapterStack stack;
    for (std::uint32_t l = 0; l < layers; ++l) {
      AdapterLayer layer;
      layer.w_down = std::move(tensors[t++]);
      layer.b_down = to_vector(tensors[t++]);
      layer.w_up = std::move(tensors[t++]);
      layer.b_up = to_vector(tensors[t++]);
      const std::size_t h = layer.w_down.rows();
      const std::size_t b = layer.w_down.cols();
      if (layer.b_down.size() != b || layer.w_up.rows() != b || layer.w_up.cols() != h ||
          layer.b_up.size() != h) {
        throw ParseError("adapter layer " + std::to_string(l) + " has inconsistent shapes", 0);
      }
      stack.layers.push_back(std::move(layer));
    }
    ck.adapters = std::move(stack);
  }
  if (kind & kHasHead) {
    ClassifierHead head;
    head.w = std::move(tensors[t++]);
    head.b = to_vector(tensors[t++]);
    head.kind = task == 1 ? TaskKind::kMultiLabel : TaskKind::kSingleLabel;
    if (head.b.size() != head.w.cols()) throw ParseError("head bias length mismatch", 0);
    ck.head = std::move(head);
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fedpia
