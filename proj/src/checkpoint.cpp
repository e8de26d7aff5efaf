#include "patchlab/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "patchlab/errors.hpp"

namespace plab {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T get() {
    T value{};
    bytes(&value, sizeof(T));
    return value;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CheckpointFormat("truncated checkpoint " + path_);
    }
  }

 private:
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write " + path.string());
  Writer w(out);
  const ModelConfig& c = model.config();
  w.bytes("PLAB", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  for (std::size_t v : {c.n_layers, c.n_heads, c.d_model, c.d_head, c.vocab_size,
                        c.max_seq_len, c.d_mlp}) {
    w.put<std::uint64_t>(v);
  }
  w.put<std::uint64_t>(std::bit_cast<std::uint64_t>(c.rms_eps));
  w.put<std::uint64_t>(std::bit_cast<std::uint64_t>(c.rope_base));
  const auto params = model.named_parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) w.put<std::uint64_t>(dim);
    w.bytes(t.data().data(), t.numel() * sizeof(double));
  }
  out.flush();
  if (!out) throw IoFailure("write failed for " + path.string());
}

TransformerModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + path.string());
  Reader r(in, path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "PLAB", 4) != 0) throw CheckpointFormat("bad magic in " + path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointFormat("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  for (std::size_t* field : {&c.n_layers, &c.n_heads, &c.d_model, &c.d_head, &c.vocab_size,
                             &c.max_seq_len, &c.d_mlp}) {
    *field = static_cast<std::size_t>(r.get<std::uint64_t>());
  }
  c.rms_eps = std::bit_cast<double>(r.get<std::uint64_t>());
  c.rope_base = std::bit_cast<double>(r.get<std::uint64_t>());
  TransformerModel model = [&] {
    try {
      return TransformerModel(c);
    } catch (const InvalidConfig& e) {
      throw CheckpointFormat(std::string("header: ") + e.what());
    }
  }();

  auto params = model.named_parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    throw CheckpointFormat("expected " + std::to_string(params.size()) + " sections, found " +
                           std::to_string(count));
  }
  for (auto& [name, t] : params) {
    std::string got(r.get<std::uint32_t>(), '\0');
    r.bytes(got.data(), got.size());
    if (got != name) throw CheckpointFormat("expected section " + name + ", found " + got);
    Shape shape(r.get<std::uint32_t>());
    for (auto& dim : shape) dim = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (shape != t.shape()) {
      throw CheckpointFormat(name + " has shape " + shape_str(shape) + ", expected " +
                             shape_str(t.shape()));
    }
    r.bytes(t.mutable_data().data(), t.numel() * sizeof(double));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointFormat("trailing bytes in " + path.string());
  }
  return model;
}

}  // namespace plab
