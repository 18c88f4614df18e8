#include "dtsnet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dtsnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'T', 'S', 'N', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  std::string& buf() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& b, std::size_t end, std::string origin)
      : b_(b), end_(end), origin_(std::move(origin)) {}
  void raw(void* p, std::size_t n) {
    if (n > end_ - pos_) throw DataError(origin_ + ": truncated");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u64();
    if (n > end_ - pos_) throw DataError(origin_ + ": truncated string");
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::string meta_text(const std::map<std::string, std::string>& meta) {
  std::string s;
  for (const auto& [k, v] : meta) s += k + "=" + v + "\n";
  return s;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<NamedTensor>& Checkpoint::section(const std::string& name) const {
  auto it = sections.find(name);
  if (it == sections.end()) throw DataError("checkpoint: missing section '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint: missing meta key '" + key + "'");
  return it->second;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 8);
  w.u32(Checkpoint::kVersion);
  w.str(ckpt.config_text);
  w.u32(static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& [name, tensors] : ckpt.sections) {
    w.str(name);
    w.u64(tensors.size());
    for (const auto& t : tensors) {
      w.str(t.path);
      w.u32(static_cast<std::uint32_t>(t.value.rank()));
      for (Index d : t.value.shape().dims()) w.u64(static_cast<std::uint64_t>(d));
      w.raw(t.value.data(), sizeof(double) * static_cast<std::size_t>(t.value.size()));
    }
  }
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw DataError("checkpoint: meta entry '" + k + "' contains '=' or a newline");
    }
  }
  w.str(meta_text(ckpt.meta));
  const auto sum = fnv1a64(w.buf().data(), w.buf().size());
  w.u64(sum);
  return std::move(w.buf());
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw DataError(origin + ": not a checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (fnv1a64(bytes.data(), body) != stored) throw DataError(origin + ": checksum mismatch");
  Reader r(bytes, body, origin);
  char magic[8];
  r.raw(magic, 8);
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw DataError(origin + ": unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_text = r.str();
  const auto nsec = r.u32();
  for (std::uint32_t s = 0; s < nsec; ++s) {
    auto name = r.str();
    const auto n = r.u64();
    std::vector<NamedTensor> tensors;
    for (std::uint64_t i = 0; i < n; ++i) {
      NamedTensor t;
      t.path = r.str();
      const auto rank = r.u32();
      if (rank == 0 || rank > 8) throw DataError(origin + ": bad rank for " + t.path);
      std::vector<Index> dims;
      std::uint64_t numel = 1;
      for (std::uint32_t k = 0; k < rank; ++k) {
        const auto d = r.u64();
        if (d == 0 || d > (1ULL << 40) || numel > (1ULL << 40) / d) {
          throw DataError(origin + ": bad dims for " + t.path);
        }
        numel *= d;
        dims.push_back(static_cast<Index>(d));
      }
      t.value = Tensor<double>::uninitialized(Shape(std::move(dims)));
      r.raw(t.value.data(), sizeof(double) * numel);
      tensors.push_back(std::move(t));
    }
    c.sections.emplace(std::move(name), std::move(tensors));
  }
  std::istringstream meta(r.str());
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(origin + ": malformed meta line");
    c.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!r.done()) throw DataError(origin + ": trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path + ": write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError(path + ": rename failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

std::vector<NamedTensor> export_params(const ParamStore<double>& store) {
  std::vector<NamedTensor> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back({store[i].path, store[i].value});
  return out;
}

void import_params(ParamStore<double>& store, const std::vector<NamedTensor>& tensors,
                   const std::string& what) {
  if (tensors.size() != store.size()) {
    throw DataError(what + ": " + std::to_string(tensors.size()) + " tensors, expected " +
                    std::to_string(store.size()));
  }
  for (const auto& t : tensors) {
    auto* p = store.find(t.path);
    if (!p) throw DataError(what + ": unexpected tensor '" + t.path + "'");
    if (p->value.shape() != t.value.shape()) {
      throw DataError(what + ": shape of '" + t.path + "' is " + t.value.shape().str() +
                      ", expected " + p->value.shape().str());
    }
    p->value = t.value;
  }
}

}  // namespace dtsnet
