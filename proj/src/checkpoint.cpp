#include "organ/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "organ/errors.hpp"

namespace organ::nn {

namespace {

constexpr char kMagic[8] = {'O', 'R', 'G', 'A', 'N', 'C', 'K', '1'};

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

void put_string(std::string& out, std::string_view s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U le() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FileError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::set_meta(const std::string& key, std::string value) { metadata_[key] = std::move(value); }

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) throw FileError("checkpoint has no metadata key '" + key + "'");
  return it->second;
}

void Checkpoint::put(const std::string& name, Tensor tensor) {
  for (auto& [n, t] : tensors_) {
    if (n == name) {
      t = std::move(tensor);
      return;
    }
  }
  tensors_.emplace_back(name, std::move(tensor));
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return t;
  }
  throw FileError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& entry : tensors_) {
    if (entry.first == name) return true;
  }
  return false;
}

void Checkpoint::put_params(const std::string& prefix, const ParameterSet& params) {
  for (const auto& p : params) put(prefix + "." + p.name, p.value);
}

void Checkpoint::get_params(const std::string& prefix, ParameterSet& params) const {
  for (auto& p : params) {
    const Tensor& t = get(prefix + "." + p.name);
    if (!t.same_shape(p.value)) {
      throw FileError("checkpoint tensor " + prefix + "." + p.name + " has shape " + shape_string(t.shape()) +
                      ", expected " + shape_string(p.value.shape()));
    }
    p.value = t;
  }
}

void Checkpoint::put_adam(const std::string& prefix, const ParameterSet& params, const Adam& opt) {
  std::size_t i = 0;
  for (const auto& p : params) {
    put("adam." + prefix + ".m." + p.name, opt.first_moments()[i]);
    put("adam." + prefix + ".v." + p.name, opt.second_moments()[i]);
    ++i;
  }
  set_meta("adam." + prefix + ".steps", std::to_string(opt.step_count()));
}

void Checkpoint::get_adam(const std::string& prefix, const ParameterSet& params, Adam& opt) const {
  std::size_t i = 0;
  for (const auto& p : params) {
    const Tensor& m = get("adam." + prefix + ".m." + p.name);
    const Tensor& v = get("adam." + prefix + ".v." + p.name);
    if (!m.same_shape(p.value) || !v.same_shape(p.value)) {
      throw FileError("checkpoint optimizer state for " + p.name + " has the wrong shape");
    }
    opt.first_moments()[i] = m;
    opt.second_moments()[i] = v;
    ++i;
  }
  opt.set_step_count(std::stoull(meta("adam." + prefix + ".steps")));
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(metadata_.size()));
  for (const auto& [k, v] : metadata_) {
    put_string(out, k);
    put_string(out, v);
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    put_string(out, name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (in.raw(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw FileError("not a checkpoint file (bad magic)");
  }
  const auto version = in.le<std::uint32_t>();
  if (version != kVersion) throw FileError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto nmeta = in.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = in.str();
    ck.metadata_[k] = in.str();
  }
  const auto ntensors = in.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    std::string name = in.str();
    const auto rank = in.le<std::uint32_t>();
    if (rank > 8) throw FileError("checkpoint tensor " + name + " has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.le<std::uint64_t>());
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 32)) throw FileError("checkpoint tensor " + name + " too large");
    std::vector<double> data(n);
    for (double& v : data) v = std::bit_cast<double>(in.le<std::uint64_t>());
    ck.tensors_.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!in.done()) throw FileError("trailing bytes after checkpoint");
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write checkpoint '" + path + "'");
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("failed writing checkpoint '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace organ::nn
