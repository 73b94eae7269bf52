#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rstan/core/tape.hpp"

namespace rstan {

// Named view over a model's trainable parameters and non-trainable buffers
// (batch-norm running statistics). Names follow
// <branch>.<stage>.<layer>.<param>.
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor* value;
    Parameter* param;  // null for buffers
  };

  void add_param(std::string name, Parameter& p);
  void add_buffer(std::string name, Tensor& t);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Parameter*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

 private:
  std::vector<Entry> entries_;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& find(const std::string& name) const;
};

// Text header (magic, meta lines, one "tensor <name> <rank> <dims...>" line per
// tensor, "payload") followed by little-endian float64 data in header order.
void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& registry,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Copies checkpoint tensors into the registry; every registry entry must be
// present with an identical shape.
void restore(const ParamRegistry& registry, const Checkpoint& checkpoint);

}  // namespace rstan
