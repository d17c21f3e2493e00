#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sceneglue/dataset_io.hpp"
#include "sceneglue/model.hpp"

namespace sceneglue::io {

// Versioned binary checkpoint, magic "SGCKPT1": named-parameter table plus
// optimizer moments and a verbatim config echo. Round-trips bit-exactly.

constexpr char kCheckpointMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '1', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTable {
  std::vector<std::pair<std::string, std::vector<double>>> entries;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> shapes;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::string config_json;  // stored verbatim
  NamedTable params;
  NamedTable moment_m;
  NamedTable moment_v;
};

namespace detail {

inline void write_table(std::ostream& os, const NamedTable& t) {
  write_pod(os, static_cast<std::uint64_t>(t.entries.size()));
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    const auto& [name, vals] = t.entries[i];
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, t.shapes[i].first);
    write_pod(os, t.shapes[i].second);
    write_doubles(os, vals);
  }
}

inline NamedTable read_table(std::istream& is) {
  NamedTable t;
  std::uint64_t count = 0;
  read_pod(is, count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    read_pod(is, len);
    std::string name(len, '\0');
    is.read(name.data(), len);
    std::uint64_t rows = 0, cols = 0;
    read_pod(is, rows);
    read_pod(is, cols);
    std::vector<double> vals;
    read_doubles(is, vals, rows * cols);
    t.entries.emplace_back(std::move(name), std::move(vals));
    t.shapes.emplace_back(rows, cols);
  }
  return t;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  AtomicFile file(path);
  auto& os = file.stream();
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, ckpt.step);
  detail::write_pod(os, static_cast<std::uint64_t>(ckpt.config_json.size()));
  os.write(ckpt.config_json.data(),
           static_cast<std::streamsize>(ckpt.config_json.size()));
  detail::write_table(os, ckpt.params);
  detail::write_table(os, ckpt.moment_m);
  detail::write_table(os, ckpt.moment_v);
  file.commit();
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::string(magic, 7) != "SGCKPT1")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  detail::read_pod(is, version);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ckpt;
  detail::read_pod(is, ckpt.step);
  std::uint64_t cfg_len = 0;
  detail::read_pod(is, cfg_len);
  ckpt.config_json.resize(cfg_len);
  is.read(ckpt.config_json.data(), static_cast<std::streamsize>(cfg_len));
  ckpt.params = detail::read_table(is);
  ckpt.moment_m = detail::read_table(is);
  ckpt.moment_v = detail::read_table(is);
  return ckpt;
}

inline NamedTable snapshot_params(model::ModelParams& params) {
  NamedTable t;
  model::for_each_param(params, [&t](const std::string& name, Tensor& tensor) {
    t.entries.emplace_back(name, tensor.value());
    t.shapes.emplace_back(tensor.rows(), tensor.cols());
  });
  return t;
}

inline void restore_params(model::ModelParams& params, const NamedTable& t) {
  std::size_t idx = 0;
  model::for_each_param(params, [&](const std::string& name, Tensor& tensor) {
    if (idx >= t.entries.size() || t.entries[idx].first != name)
      throw std::runtime_error("checkpoint: parameter table mismatch at " + name);
    if (t.shapes[idx] != std::make_pair<std::uint64_t, std::uint64_t>(
                             tensor.rows(), tensor.cols()))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    tensor.value() = t.entries[idx].second;
    ++idx;
  });
  if (idx != t.entries.size())
    throw std::runtime_error("checkpoint: trailing parameters in table");
}

}  // namespace sceneglue::io
