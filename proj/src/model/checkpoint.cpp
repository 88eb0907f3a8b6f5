// SPDX-License-Identifier: Apache-2.0
#include "stemfit/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "stemfit/common/digest.hpp"
#include "stemfit/common/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace stemfit::model {

namespace {

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(source_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      fail(std::string("truncated while reading ") + what + " (need " + std::to_string(n) +
           " bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }
  std::string_view bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

void serialize_table(std::string& out, const std::vector<NamedTensor>& tensors) {
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
}

}  // namespace

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor& Checkpoint::at(std::string_view name) const {
  const auto* t = find(name);
  if (t == nullptr) throw FormatError("checkpoint has no tensor '" + std::string(name) + "'");
  return *t;
}

void Checkpoint::add(std::string name, const ndgrad::Tensor& tensor) {
  add(NamedTensor{std::move(name), tensor.shape(),
                  std::vector<float>(tensor.data().begin(), tensor.data().end())});
}

void Checkpoint::add(NamedTensor tensor) {
  if (find(tensor.name) != nullptr) {
    throw std::invalid_argument("checkpoint: duplicate tensor name '" + tensor.name + "'");
  }
  if (ndgrad::numel_of(tensor.shape) != tensor.data.size()) {
    throw ShapeError("checkpoint: tensor '" + tensor.name + "' payload does not match shape " +
                     ndgrad::to_string(tensor.shape));
  }
  tensors.push_back(std::move(tensor));
}

std::uint64_t tensor_table_digest(const std::vector<NamedTensor>& tensors) {
  std::string table;
  serialize_table(table, tensors);
  return fnv1a(table);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, ckpt.config_digest);
  put<std::uint32_t>(out, ckpt.phase);
  put<std::uint64_t>(out, ckpt.step);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  out += ckpt.meta;
  const std::size_t table_start = out.size();
  serialize_table(out, ckpt.tensors);
  put<std::uint64_t>(out, fnv1a(std::string_view(out).substr(table_start)));
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  Checkpoint c;
  const auto magic = r.take(4, "magic");
  if (magic != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(source + ": bad magic (not a tensor container)");
  }
  c.version = r.get<std::uint32_t>("version");
  if (c.version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported container version " + std::to_string(c.version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  c.config_digest = r.get<std::uint64_t>("config digest");
  c.phase = r.get<std::uint32_t>("phase");
  c.step = r.get<std::uint64_t>("step");
  const auto meta_len = r.get<std::uint32_t>("meta length");
  c.meta = std::string(r.take(meta_len, "meta"));
  const std::size_t table_start = r.pos();
  const auto count = r.get<std::uint64_t>("tensor count");
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    t.name = std::string(r.take(name_len, "tensor name"));
    if (!seen.insert(t.name).second) r.fail("duplicate tensor name '" + t.name + "'");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank) + " for '" + t.name + "'");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("tensor dims");
      t.shape.push_back(static_cast<std::size_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    if (n > r.remaining() / sizeof(float)) {
      r.fail("truncated payload for '" + t.name + "' (" + std::to_string(n) + " floats declared)");
    }
    const auto payload = r.take(n * sizeof(float), "tensor payload");
    t.data.resize(n);
    std::memcpy(t.data.data(), payload.data(), payload.size());
    c.tensors.push_back(std::move(t));
  }
  const std::size_t table_end = r.pos();
  const auto stored = r.get<std::uint64_t>("table digest");
  const auto actual = fnv1a(bytes.substr(table_start, table_end - table_start));
  if (stored != actual) {
    throw FormatError(source + ": tensor table digest mismatch (stored " + hex64(stored) +
                      ", computed " + hex64(actual) + ")");
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

void add_parameters(Checkpoint& ckpt, const std::string& prefix, const ndgrad::ParameterList& params) {
  for (const auto& p : params) ckpt.add(prefix + p.name, p.tensor);
}

void load_parameters(const Checkpoint& ckpt, const std::string& prefix, ndgrad::ParameterList& params) {
  for (auto& p : params) {
    const auto& t = ckpt.at(prefix + p.name);
    if (t.shape != p.tensor.shape()) {
      throw FormatError("checkpoint tensor '" + t.name + "' has shape " + ndgrad::to_string(t.shape) +
                        ", model expects " + ndgrad::to_string(p.tensor.shape()));
    }
    std::copy(t.data.begin(), t.data.end(), p.tensor.data().begin());
  }
}

}  // namespace stemfit::model
