// Binary checkpoint container. Layout (all integers little-endian):
//
//   magic "ALNMTCKP" | u32 version | u32 field count | fields | u32 tensor count | tensors
//   field  := u32 name length | name bytes | i64 value
//   tensor := u32 name length | name bytes | u32 rank | u32 extent * rank | f32 * prod(extents)

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "alnmt/transformer.hpp"

namespace alnmt {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'N', 'M', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void i64(std::int64_t x) {
    const auto v = static_cast<std::uint64_t>(x);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("truncated checkpoint " + path_.string());
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<std::int64_t>(v);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw std::runtime_error("corrupt checkpoint string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

std::map<std::string, std::int64_t> config_fields(const ModelConfig& c) {
  return {{"d", static_cast<std::int64_t>(c.d)},
          {"heads", static_cast<std::int64_t>(c.heads)},
          {"d_a", static_cast<std::int64_t>(c.head_width())},
          {"d_o", static_cast<std::int64_t>(c.head_width())},
          {"layers", static_cast<std::int64_t>(c.layers)},
          {"ffn_width", static_cast<std::int64_t>(c.ffn_width)},
          {"src_vocab", static_cast<std::int64_t>(c.src_vocab)},
          {"trg_vocab", static_cast<std::int64_t>(c.trg_vocab)},
          {"max_length", static_cast<std::int64_t>(c.max_length)},
          {"scale_attention", c.scale_attention ? 1 : 0},
          {"tie_weights", c.tie_weights ? 1 : 0},
          {"positional", c.positional ? 1 : 0}};
}

ModelConfig read_header(Reader& r) {
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  std::map<std::string, std::int64_t> f;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string k = r.str();
    f[k] = r.i64();
  }
  auto get = [&](const char* k) -> std::int64_t {
    auto it = f.find(k);
    if (it == f.end()) throw std::runtime_error(std::string("checkpoint header lacks ") + k);
    return it->second;
  };
  ModelConfig c;
  c.d = static_cast<std::size_t>(get("d"));
  c.heads = static_cast<std::size_t>(get("heads"));
  c.layers = static_cast<std::size_t>(get("layers"));
  c.ffn_width = static_cast<std::size_t>(get("ffn_width"));
  c.src_vocab = static_cast<std::size_t>(get("src_vocab"));
  c.trg_vocab = static_cast<std::size_t>(get("trg_vocab"));
  c.max_length = static_cast<std::size_t>(get("max_length"));
  c.scale_attention = get("scale_attention") != 0;
  c.tie_weights = get("tie_weights") != 0;
  c.positional = get("positional") != 0;
  c.validate();
  if (static_cast<std::size_t>(get("d_a")) != c.head_width() ||
      static_cast<std::size_t>(get("d_o")) != c.head_width()) {
    throw std::runtime_error("checkpoint head widths inconsistent with d/heads");
  }
  return c;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamSet<T>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  const auto fields = config_fields(config);
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (const auto& [k, v] : fields) {
    w.str(k);
    w.i64(v);
  }
  const auto all = params.all();
  w.u32(static_cast<std::uint32_t>(all.size()));
  for (const auto* p : all) {
    w.str(p->name);
    const auto& shape = p->value.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) w.u32(static_cast<std::uint32_t>(e));
    for (auto v : p->value.values()) w.f32(static_cast<float>(v));
  }
  w.finish();
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r);
}

template <typename T>
Transformer<T> load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  const ModelConfig config = read_header(r);
  ParamSet<T> params = make_params<T>(config);
  std::map<std::string, Parameter<T>*> by_name;
  for (auto* p : params.all()) by_name[p->name] = p;
  const std::uint32_t n = r.u32();
  if (n != by_name.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(n) + " tensors, model expects " +
                             std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("unexpected tensor '" + name + "' in checkpoint");
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != it->second->value.shape()) {
      throw std::runtime_error("shape mismatch for '" + name + "': checkpoint " + shape_string(shape) +
                               ", model " + shape_string(it->second->value.shape()));
    }
    for (auto& v : it->second->value.values()) v = static_cast<T>(r.f32());
  }
  return Transformer<T>(config, std::move(params));
}

template void save_checkpoint<float>(const std::filesystem::path&, const ModelConfig&, const ParamSet<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelConfig&, const ParamSet<double>&);
template Transformer<float> load_checkpoint<float>(const std::filesystem::path&);
template Transformer<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace alnmt
