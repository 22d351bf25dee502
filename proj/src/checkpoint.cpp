#include "bayesformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "bayesformer/error.hpp"

namespace bayesformer {
namespace {

constexpr char kMagic[8] = {'B', 'A', 'Y', 'E', 'S', 'F', 'M', 'R'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  void le(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, n);
  }
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes() {
    const std::uint32_t n = u32();
    if (n > (1u << 24)) fail("implausible string length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("unexpected end of file");
  }
  [[noreturn]] void fail(const std::string& what) {
    throw ParseError("checkpoint " + path_ + ": " + what, 0);
  }

 private:
  std::uint64_t le(int n) {
    unsigned char buf[8];
    raw(reinterpret_cast<char*>(buf), static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
  std::string path_;
};

std::string format_float(float v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

std::string serialize_config(const EncoderConfig& c) {
  std::ostringstream os;
  os << "n_layers=" << c.n_layers << "\n"
     << "n_heads=" << c.n_heads << "\n"
     << "d_model=" << c.d_model << "\n"
     << "d_ffn=" << c.d_ffn << "\n"
     << "vocab_size=" << c.vocab_size << "\n"
     << "max_positions=" << c.max_positions << "\n"
     << "n_classes=" << c.n_classes << "\n"
     << "p_drop=" << format_float(c.p_drop) << "\n"
     << "ffn_activation=" << to_string(c.ffn_activation) << "\n"
     << "variant=" << to_string(c.variant) << "\n";
  return os.str();
}

EncoderConfig deserialize_config(const std::string& record) {
  std::map<std::string, std::string> kv;
  std::istringstream in(record);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config record: missing '='", line_no);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("config record: missing ") + key, 0);
    return it->second;
  };
  auto count = [&](const char* key) { return static_cast<std::size_t>(std::stoull(get(key))); };
  EncoderConfig c;
  c.n_layers = count("n_layers");
  c.n_heads = count("n_heads");
  c.d_model = count("d_model");
  c.d_ffn = count("d_ffn");
  c.vocab_size = count("vocab_size");
  c.max_positions = count("max_positions");
  c.n_classes = count("n_classes");
  c.p_drop = std::stof(get("p_drop"));
  c.ffn_activation = parse_activation(get("ffn_activation"));
  c.variant = parse_variant(get("variant"));
  c.validate();
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  checkpoint.params.validate(checkpoint.config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.bytes(serialize_config(checkpoint.config));
  const auto names = checkpoint.params.names();
  const auto tensors = checkpoint.params.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    w.bytes(names[i]);
    w.u32(static_cast<std::uint32_t>(tensors[i]->rank()));
    for (std::size_t d : tensors[i]->shape()) w.u64(d);
  }
  for (const Tensor* t : tensors)
    for (float v : t->values()) w.f32(v);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));

  Checkpoint ck;
  ck.config = deserialize_config(r.bytes());
  ck.params = EncoderParams::zeros(ck.config);
  const auto names = ck.params.names();
  auto tensors = ck.params.tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size()) {
    r.fail("manifest lists " + std::to_string(count) + " tensors, config requires " +
           std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.bytes();
    if (name != names[i]) r.fail("manifest entry " + std::to_string(i) + " is '" + name +
                                 "', expected '" + names[i] + "'");
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != tensors[i]->shape()) {
      r.fail(name + " has shape " + shape_string(shape) + ", config requires " +
             shape_string(tensors[i]->shape()));
    }
  }
  for (Tensor* t : tensors)
    for (float& v : t->values()) v = r.f32();
  return ck;
}

}  // namespace bayesformer
