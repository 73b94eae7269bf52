#include "rstan/core/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "rstan/core/binary_io.hpp"
#include "rstan/core/errors.hpp"

namespace rstan {
namespace {

constexpr const char* kMagic = "RSTAN-CHECKPOINT";
constexpr int kVersion = 1;

void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw ContractError(std::string("checkpoint ") + what + " '" + s +
                        "' must be non-empty without whitespace");
  }
}

}  // namespace

void ParamRegistry::add_param(std::string name, Parameter& p) {
  entries_.push_back({std::move(name), &p.value, &p});
}

void ParamRegistry::add_buffer(std::string name, Tensor& t) {
  entries_.push_back({std::move(name), &t, nullptr});
}

std::vector<Parameter*> ParamRegistry::parameters() const {
  std::vector<Parameter*> out;
  for (const Entry& e : entries_) {
    if (e.param) out.push_back(e.param);
  }
  return out;
}

std::vector<std::string> ParamRegistry::parameter_names() const {
  std::vector<std::string> out;
  for (const Entry& e : entries_) {
    if (e.param) out.push_back(e.name);
  }
  return out;
}

std::size_t ParamRegistry::parameter_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) {
    if (e.param) n += e.value->size();
  }
  return n;
}

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& registry,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open checkpoint for writing: " + path.string());
  os << kMagic << ' ' << kVersion << '\n';
  for (const auto& [k, v] : meta) {
    check_token(k, "meta key");
    if (v.find('\n') != std::string::npos) throw ContractError("checkpoint meta value has a newline");
    os << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& e : registry.entries()) {
    check_token(e.name, "tensor name");
    os << "tensor " << e.name << ' ' << e.value->rank();
    for (std::size_t d : e.value->shape()) os << ' ' << d;
    os << '\n';
  }
  os << "payload\n";
  for (const auto& e : registry.entries()) binary_io::write_f64(os, e.value->data());
  if (!os) throw ContractError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  Checkpoint ck;
  std::string line;
  auto fail = [&](const std::string& why) -> FormatError {
    const auto off = static_cast<long long>(is ? static_cast<long long>(is.tellg()) : -1);
    return FormatError("checkpoint " + path.string() + ": " + why + " (byte offset " +
                       std::to_string(off) + ")");
  };
  if (!std::getline(is, line)) throw fail("empty file");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    hs >> magic >> version;
    if (magic != kMagic) throw fail("bad magic");
    if (version != kVersion) throw fail("unsupported version " + std::to_string(version));
  }
  std::vector<Shape> shapes;
  while (true) {
    if (!std::getline(is, line)) throw fail("header ended before payload marker");
    if (line == "payload") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ck.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name;
      std::size_t rank = 0;
      if (!(ls >> name >> rank)) throw fail("malformed tensor line");
      Shape shape(rank);
      for (std::size_t& d : shape) {
        if (!(ls >> d)) throw fail("malformed dims for tensor " + name);
      }
      ck.tensors.emplace_back(name, Tensor(shape));
      shapes.push_back(shape);
    } else {
      throw fail("unknown header line '" + line + "'");
    }
  }
  for (auto& [name, t] : ck.tensors) {
    if (binary_io::read_f64(is, t.data()) != t.size()) {
      throw FormatError("checkpoint " + path.string() + ": truncated payload in tensor " + name);
    }
  }
  return ck;
}

void restore(const ParamRegistry& registry, const Checkpoint& checkpoint) {
  for (const auto& e : registry.entries()) {
    const Tensor& src = checkpoint.find(e.name);
    if (src.shape() != e.value->shape()) {
      throw DimensionError("checkpoint tensor " + e.name + " has shape " +
                           to_string(src.shape()) + ", model expects " +
                           to_string(e.value->shape()));
    }
    *e.value = src;
    if (e.param) e.param->zero_grad();
  }
}

}  // namespace rstan
