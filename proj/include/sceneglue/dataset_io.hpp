#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sceneglue/synthdata.hpp"

namespace sceneglue::io {

// Length-prefixed little-endian binary record stream, magic "SGPAIR1".
// Groundtruth labels are re-derived from the stored homography on load so
// the SyntheticPair invariant holds by construction.

constexpr char kDatasetMagic[8] = {'S', 'G', 'P', 'A', 'I', 'R', '1', '\0'};
constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("dataset: truncated file");
}

inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& is, std::vector<double>& v,
                         std::size_t count) {
  v.resize(count);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw std::runtime_error("dataset: truncated file");
}

inline void write_keypoint_set(std::ostream& os, const KeypointSet& set) {
  write_pod(os, static_cast<std::uint64_t>(set.size()));
  for (const auto& p : set.positions)
    for (double v : p) write_pod(os, v);
  for (std::size_t s = 0; s < kNumScales; ++s) write_doubles(os, set.raw_features[s]);
}

inline KeypointSet read_keypoint_set(std::istream& is, const ImageSize& size,
                                     const std::array<std::size_t, kNumScales>& dims) {
  KeypointSet set;
  set.image_size = size;
  set.scale_dims = dims;
  std::uint64_t m = 0;
  read_pod(is, m);
  set.positions.resize(m);
  for (auto& p : set.positions)
    for (double& v : p) read_pod(is, v);
  for (std::size_t s = 0; s < kNumScales; ++s)
    read_doubles(is, set.raw_features[s], m * dims[s]);
  return set;
}

}  // namespace detail

// Atomic write: stream into <path>.tmp then rename.
class AtomicFile {
 public:
  explicit AtomicFile(const std::string& path)
      : path_(path), tmp_(path + ".tmp"), os_(tmp_, std::ios::binary) {
    if (!os_) throw std::runtime_error("cannot open for writing: " + tmp_);
  }
  std::ofstream& stream() { return os_; }
  void commit() {
    os_.close();
    if (!os_.good()) throw std::runtime_error("write failed: " + tmp_);
    std::filesystem::rename(tmp_, path_);
  }

 private:
  std::string path_;
  std::string tmp_;
  std::ofstream os_;
};

inline nlohmann::json config_to_json(const synth::GenConfig& cfg) {
  return nlohmann::json{
      {"num_src", cfg.num_src},
      {"num_tgt", cfg.num_tgt},
      {"image_width", cfg.image_width},
      {"image_height", cfg.image_height},
      {"corner_jitter_frac", cfg.corner_jitter_frac},
      {"descriptor_noise", cfg.descriptor_noise},
      {"distractor_frac", cfg.distractor_frac},
      {"drop_frac", cfg.drop_frac},
      {"scale_dims", cfg.scale_dims},
      {"reproj_threshold_px", cfg.reproj_threshold_px},
      {"latent_clusters", cfg.latent_clusters},
      {"latent_unique_scale", cfg.latent_unique_scale},
      {"photometric_bias", cfg.photometric_bias},
      {"photometric_bias_sigma", cfg.photometric_bias_sigma},
      // The corner-jitter homography model is a stand-in distribution, not
      // taken from any reference dataset.
      {"homography_model", "corner-jitter-dlt"},
  };
}

inline synth::GenConfig config_from_json(const nlohmann::json& j) {
  synth::GenConfig cfg;
  cfg.num_src = j.at("num_src").get<std::size_t>();
  cfg.num_tgt = j.at("num_tgt").get<std::size_t>();
  cfg.image_width = j.at("image_width").get<double>();
  cfg.image_height = j.at("image_height").get<double>();
  cfg.corner_jitter_frac = j.at("corner_jitter_frac").get<double>();
  cfg.descriptor_noise = j.at("descriptor_noise").get<double>();
  cfg.distractor_frac = j.at("distractor_frac").get<double>();
  cfg.drop_frac = j.at("drop_frac").get<double>();
  auto dims = j.at("scale_dims").get<std::vector<std::size_t>>();
  for (std::size_t s = 0; s < kNumScales; ++s) cfg.scale_dims[s] = dims.at(s);
  cfg.reproj_threshold_px = j.at("reproj_threshold_px").get<double>();
  cfg.latent_clusters = j.at("latent_clusters").get<std::size_t>();
  cfg.latent_unique_scale = j.at("latent_unique_scale").get<double>();
  cfg.photometric_bias = j.at("photometric_bias").get<bool>();
  cfg.photometric_bias_sigma = j.at("photometric_bias_sigma").get<double>();
  return cfg;
}

inline void write_dataset(const std::string& path,
                          const std::vector<synth::SyntheticPair>& pairs,
                          const synth::GenConfig& cfg, std::uint64_t seed) {
  AtomicFile file(path);
  auto& os = file.stream();
  os.write(kDatasetMagic, sizeof(kDatasetMagic));
  detail::write_pod(os, kDatasetVersion);
  detail::write_pod(os, static_cast<std::uint64_t>(pairs.size()));
  detail::write_pod(os, cfg.reproj_threshold_px);
  for (std::size_t s = 0; s < kNumScales; ++s)
    detail::write_pod(os, static_cast<std::uint32_t>(cfg.scale_dims[s]));
  detail::write_pod(os, cfg.image_width);
  detail::write_pod(os, cfg.image_height);
  for (const auto& p : pairs) {
    for (double v : p.h.h) detail::write_pod(os, v);
    detail::write_keypoint_set(os, p.source);
    detail::write_keypoint_set(os, p.target);
  }
  file.commit();

  AtomicFile manifest(path + ".manifest.json");
  nlohmann::json j;
  j["format"] = "SGPAIR1";
  j["seed"] = seed;
  j["pair_count"] = pairs.size();
  j["config"] = config_to_json(cfg);
  manifest.stream() << j.dump(2) << "\n";
  manifest.commit();
}

struct Dataset {
  std::vector<synth::SyntheticPair> pairs;
  double reproj_threshold_px = 3.0;
  std::array<std::size_t, kNumScales> scale_dims{};
  ImageSize image_size;
};

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::string(magic, 7) != "SGPAIR1")
    throw std::runtime_error("dataset: bad magic in " + path);
  std::uint32_t version = 0;
  detail::read_pod(is, version);
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version");
  std::uint64_t count = 0;
  Dataset ds;
  detail::read_pod(is, count);
  detail::read_pod(is, ds.reproj_threshold_px);
  for (std::size_t s = 0; s < kNumScales; ++s) {
    std::uint32_t d = 0;
    detail::read_pod(is, d);
    ds.scale_dims[s] = d;
  }
  detail::read_pod(is, ds.image_size.width);
  detail::read_pod(is, ds.image_size.height);
  ds.pairs.resize(count);
  for (auto& p : ds.pairs) {
    std::array<double, 9> h;
    for (double& v : h) detail::read_pod(is, v);
    p.h = geom::Homography::from_matrix(h);
    p.source = detail::read_keypoint_set(is, ds.image_size, ds.scale_dims);
    p.target = detail::read_keypoint_set(is, ds.image_size, ds.scale_dims);
    p.gt = geom::compute_groundtruth(p.source, p.target, p.h,
                                     ds.reproj_threshold_px);
  }
  return ds;
}

// FNV-1a over file bytes; used in run manifests to pin inputs.
inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash missing file: " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!is) break;
  }
  return h;
}

}  // namespace sceneglue::io
