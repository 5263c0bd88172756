#include "smoa/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace smoa {

void save_checkpoint(const std::string& path, const std::vector<ParamInfo>& params) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path + " for writing");
  out << "smoa-ckpt 1\n" << params.size() << "\n";
  char buf[64];
  for (const ParamInfo& p : params) {
    out << p.name << " " << (p.trainable ? 1 : 0) << " " << p.shape.size();
    for (std::size_t d : p.shape) out << " " << d;
    for (double v : p.tensor.values()) {
      std::snprintf(buf, sizeof(buf), " %.17g", v);
      out << buf;
    }
    out << "\n";
  }
}

void load_checkpoint(const std::string& path, std::vector<ParamInfo>& params) {
  std::ifstream in(path);
  if (!in) throw ContractError("checkpoint file not found: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "smoa-ckpt" || version != 1)
    throw ContractError("checkpoint " + path + ": unrecognized format");
  std::size_t count = 0;
  in >> count;

  struct Entry {
    bool trainable;
    Shape shape;
    std::vector<double> values;
  };
  std::unordered_map<std::string, Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    int trainable = 0;
    std::size_t ndim = 0;
    in >> name >> trainable >> ndim;
    Entry e;
    e.trainable = trainable != 0;
    e.shape.resize(ndim);
    for (std::size_t d = 0; d < ndim; ++d) in >> e.shape[d];
    e.values.resize(shape_size(e.shape));
    for (double& v : e.values) in >> v;
    if (!in) throw ContractError("checkpoint " + path + ": truncated at parameter " + name);
    entries.emplace(std::move(name), std::move(e));
  }

  for (ParamInfo& p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end())
      throw ContractError("checkpoint " + path + ": missing parameter " + p.name);
    const Entry& e = it->second;
    if (e.shape != p.shape)
      throw ShapeError("checkpoint " + path + ": parameter " + p.name + " has shape " +
                       shape_str(e.shape) + ", model expects " + shape_str(p.shape));
    if (e.trainable != p.trainable)
      throw ContractError("checkpoint " + path + ": parameter " + p.name +
                          " trainable flag mismatch");
    auto dst = p.tensor.mutable_values();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
  }
  if (entries.size() != params.size())
    throw ContractError("checkpoint " + path + ": has " + std::to_string(entries.size()) +
                        " parameters, model expects " + std::to_string(params.size()));
}

}  // namespace smoa
