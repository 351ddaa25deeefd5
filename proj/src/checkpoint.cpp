#include "hfgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hfgan {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'F', 'G', 'A', 'N', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw LoadError("truncated checkpoint while reading " + what);
  return v;
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void Checkpoint::set(const std::string& key, std::string value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos)
    throw ParameterError("invalid checkpoint key '" + key + "'");
  if (value.find('\n') != std::string::npos) throw ParameterError("checkpoint value for " + key + " spans lines");
  auto it = manifest_index_.find(key);
  if (it != manifest_index_.end()) {
    manifest_[it->second].second = std::move(value);
    return;
  }
  manifest_index_[key] = manifest_.size();
  manifest_.emplace_back(key, std::move(value));
}

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = manifest_index_.find(key);
  if (it == manifest_index_.end()) throw LoadError("checkpoint manifest has no key '" + key + "'");
  return manifest_[it->second].second;
}

template <typename S>
void Checkpoint::put_tensor(const std::string& name, const Tensor<S>& t) {
  Stored s;
  s.dtype = sizeof(S);
  s.shape = t.shape();
  s.values.assign(t.data(), t.data() + t.size());
  tensors_[name] = std::move(s);
}

template <typename S>
Tensor<S> Checkpoint::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LoadError("checkpoint has no tensor '" + name + "'");
  Tensor<S> t(it->second.shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(it->second.values[static_cast<std::size_t>(i)]);
  return t;
}

std::vector<std::string> Checkpoint::tensor_names() const {
  std::vector<std::string> names;
  for (const auto& [name, s] : tensors_) names.push_back(name);
  return names;
}

template <typename S>
void Checkpoint::put_store(const std::string& prefix, const ParameterStore<S>& store) {
  for (const auto& [name, p] : store.entries()) put_tensor(prefix + name, p.value());
}

template <typename S>
void Checkpoint::load_store(const std::string& prefix, ParameterStore<S>& store) const {
  for (const auto& [name, p] : store.entries()) {
    Tensor<S> t = tensor<S>(prefix + name);
    if (t.shape() != p.shape())
      throw LoadError("parameter " + name + " has shape " + shape_string(t.shape()) + " in the checkpoint but " +
                      shape_string(p.shape()) + " in the model");
    p.node()->value = std::move(t);
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::filesystem::path tmp = path;
  tmp += ".partial";
  try {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    std::ostringstream text;
    for (const auto& [k, v] : manifest_) text << k << '=' << v << '\n';
    const std::string manifest = text.str();
    write_pod<std::uint64_t>(out, manifest.size());
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    write_pod<std::uint64_t>(out, tensors_.size());
    for (const auto& [name, s] : tensors_) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint8_t>(out, s.dtype);
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.shape.size()));
      for (Index d : s.shape) write_pod<std::int64_t>(out, d);
      if (s.dtype == 4) {
        for (double v : s.values) write_pod<float>(out, static_cast<float>(v));
      } else {
        out.write(reinterpret_cast<const char*>(s.values.data()),
                  static_cast<std::streamsize>(s.values.size() * sizeof(double)));
      }
    }
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
    out.close();
    std::filesystem::rename(tmp, path);
  } catch (const std::filesystem::filesystem_error& e) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw IoError(std::string("cannot write checkpoint: ") + e.what());
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw LoadError(path.string() + " is not a checkpoint archive");
  Checkpoint ck;
  const auto manifest_size = read_pod<std::uint64_t>(in, "manifest size");
  std::string manifest(manifest_size, '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(manifest_size));
  if (!in) throw LoadError("truncated checkpoint manifest");
  std::istringstream lines(manifest);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError("malformed manifest line '" + line + "'");
    ck.set(line.substr(0, eq), line.substr(eq + 1));
  }
  const auto n = read_pod<std::uint64_t>(in, "tensor count");
  for (std::uint64_t k = 0; k < n; ++k) {
    const auto len = read_pod<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    Stored s;
    s.dtype = read_pod<std::uint8_t>(in, name);
    if (s.dtype != 4 && s.dtype != 8) throw LoadError("tensor " + name + " has unknown dtype");
    const auto rank = read_pod<std::uint32_t>(in, name);
    if (rank > 8) throw LoadError("tensor " + name + " has implausible rank");
    for (std::uint32_t r = 0; r < rank; ++r) s.shape.push_back(read_pod<std::int64_t>(in, name));
    const Index count = numel(s.shape);
    s.values.resize(static_cast<std::size_t>(count));
    if (s.dtype == 4) {
      std::vector<float> raw(static_cast<std::size_t>(count));
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
      for (std::size_t i = 0; i < raw.size(); ++i) s.values[i] = raw[i];
    } else {
      in.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)));
    }
    if (!in) throw LoadError("truncated data for tensor " + name);
    ck.tensors_[name] = std::move(s);
  }
  return ck;
}

#define HFGAN_INSTANTIATE_CHECKPOINT(S)                                                \
  template void Checkpoint::put_tensor(const std::string&, const Tensor<S>&);          \
  template Tensor<S> Checkpoint::tensor(const std::string&) const;                     \
  template void Checkpoint::put_store(const std::string&, const ParameterStore<S>&);   \
  template void Checkpoint::load_store(const std::string&, ParameterStore<S>&) const;

HFGAN_INSTANTIATE_CHECKPOINT(float)
HFGAN_INSTANTIATE_CHECKPOINT(double)

}  // namespace hfgan
