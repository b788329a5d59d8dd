#include "lscm/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lscm/errors.hpp"

namespace lscm::io {

static_assert(std::endian::native == std::endian::little, "array files are little-endian");

namespace {

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const char* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw IoError("short write to " + path.string());
}

std::size_t meta_size(const json& meta, const char* key) {
  if (!meta.contains(key) || !meta[key].is_number_unsigned()) {
    throw DataError(std::string("meta.json: missing or invalid '") + key + "'");
  }
  return meta[key].get<std::size_t>();
}

}  // namespace

void write_f64(const fs::path& path, const Matrix& m) {
  write_bytes(path, reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
}

Matrix read_f64(const fs::path& path, std::size_t rows, std::size_t cols) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != rows * cols * sizeof(double)) {
    throw DataError(path.filename().string() + ": expected " + std::to_string(rows) + " x " +
                    std::to_string(cols) + " float64 values, found " +
                    std::to_string(bytes.size()) + " bytes");
  }
  Matrix m(rows, cols);
  std::memcpy(m.data(), bytes.data(), bytes.size());
  return m;
}

void write_mask_u8(const fs::path& path, const Matrix& masks) {
  std::vector<char> bytes(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) bytes[i] = masks[i] != 0.0 ? 1 : 0;
  write_bytes(path, bytes.data(), bytes.size());
}

Matrix read_mask_u8(const fs::path& path, std::size_t rows, std::size_t cols) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != rows * cols) {
    throw DataError(path.filename().string() + ": expected " + std::to_string(rows * cols) +
                    " mask bytes, found " + std::to_string(bytes.size()));
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != 0 && bytes[i] != 1) throw DataError("mask entries must be 0 or 1");
    m[i] = bytes[i];
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

Matrix matrix_from_json(const json& j) {
  try {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed matrix: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

json ground_truth_to_json(const synth::GroundTruth& gt) {
  json j;
  j["d"] = gt.d();
  j["D"] = gt.obs_dim();
  j["permutation"] = gt.scm.perm.indices();
  j["lower"] = matrix_to_json(gt.scm.lower);
  j["log_sigma"] = gt.scm.noise.log_sigma;
  const auto& p = gt.projection;
  j["projection"] = synth::projection_name(p.kind);
  switch (p.kind) {
    case synth::ProjectionKind::linear: j["linear"] = matrix_to_json(p.linear); break;
    case synth::ProjectionKind::mlp3:
      for (std::size_t l = 0; l < p.mlp_w.size(); ++l) {
        j["mlp_w"].push_back(matrix_to_json(p.mlp_w[l]));
        j["mlp_b"].push_back(matrix_to_json(p.mlp_b[l]));
      }
      break;
    case synth::ProjectionKind::blocks: {
      j["height"] = p.geometry.height;
      j["width"] = p.geometry.width;
      for (const auto& b : p.geometry.blocks) j["blocks"].push_back({b.row0, b.col0, b.rows, b.cols});
      break;
    }
  }
  return j;
}

synth::GroundTruth ground_truth_from_json(const json& j) {
  try {
    synth::GroundTruth gt;
    gt.scm.perm = scm::Permutation(j.at("permutation").get<std::vector<std::size_t>>());
    gt.scm.lower = matrix_from_json(j.at("lower"));
    gt.scm.noise.log_sigma = j.at("log_sigma").get<double>();
    scm::require_strictly_lower(gt.scm.lower);
    if (gt.scm.lower.rows() != gt.scm.perm.size()) throw DataError("ground truth: d mismatch");
    auto& p = gt.projection;
    p.kind = synth::parse_projection(j.at("projection").get<std::string>());
    switch (p.kind) {
      case synth::ProjectionKind::linear: p.linear = matrix_from_json(j.at("linear")); break;
      case synth::ProjectionKind::mlp3:
        for (const auto& w : j.at("mlp_w")) p.mlp_w.push_back(matrix_from_json(w));
        for (const auto& b : j.at("mlp_b")) p.mlp_b.push_back(matrix_from_json(b));
        break;
      case synth::ProjectionKind::blocks:
        p.geometry.height = j.at("height").get<std::size_t>();
        p.geometry.width = j.at("width").get<std::size_t>();
        for (const auto& b : j.at("blocks")) {
          synth::Rect r{b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(),
                        b.at(2).get<std::size_t>(), b.at(3).get<std::size_t>()};
          if (r.row0 + r.rows > p.geometry.height || r.col0 + r.cols > p.geometry.width) {
            throw DataError("ground truth: block outside image");
          }
          p.geometry.blocks.push_back(r);
        }
        break;
    }
    if (p.latent_dim() != gt.d()) throw DataError("ground truth: projection input width != d");
    if (j.contains("D") && j["D"].get<std::size_t>() != p.obs_dim()) {
      throw DataError("ground truth: projection output width != D");
    }
    return gt;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed ground truth: ") + e.what());
  } catch (const ArgumentError& e) {
    throw DataError(std::string("invalid ground truth: ") + e.what());
  }
}

json plan_to_json(const synth::InterventionPlan& plan) {
  json j = json::array();
  for (const auto& s : plan) j.push_back({{"mask", s.mask}, {"count", s.count}});
  return j;
}

synth::InterventionPlan plan_from_json(const json& j) {
  synth::InterventionPlan plan;
  for (const auto& s : j) {
    plan.push_back({s.at("mask").get<scm::InterventionMask>(), s.at("count").get<std::size_t>()});
  }
  return plan;
}

void write_dataset(const fs::path& dir, const synth::Dataset& data, const synth::GroundTruth* gt,
                   const json& meta) {
  fs::create_directories(dir);
  json m;
  m["format"] = "lscm-dataset-1";
  m["d"] = data.d();
  m["D"] = data.obs_dim();
  m["N"] = data.size();
  m["n_obs"] = data.n_obs;
  for (const auto& [k, v] : meta.items()) m[k] = v;
  if (gt != nullptr) m["projection"] = synth::projection_name(gt->projection.kind);
  write_f64(dir / "x.f64", data.x);
  write_mask_u8(dir / "masks.u8", data.masks);
  write_f64(dir / "z_true.f64", data.z_true);
  write_f64(dir / "intervention_values.f64", data.intervention_values);
  if (gt != nullptr) write_json(dir / "ground_truth.json", ground_truth_to_json(*gt));
  write_json(dir / "meta.json", m);
}

LoadedDataset read_dataset(const fs::path& dir) {
  LoadedDataset out;
  out.meta = read_json(dir / "meta.json");
  const std::size_t d = meta_size(out.meta, "d");
  const std::size_t obs_dim = meta_size(out.meta, "D");
  const std::size_t n = meta_size(out.meta, "N");
  const std::size_t n_obs = meta_size(out.meta, "n_obs");
  if (d == 0 || d > obs_dim) throw DataError("meta.json: need 0 < d <= D");
  if (n_obs > n) throw DataError("meta.json: n_obs exceeds N");
  auto& data = out.data;
  data.n_obs = n_obs;
  data.x = read_f64(dir / "x.f64", n, obs_dim);
  data.masks = read_mask_u8(dir / "masks.u8", n, d);
  data.z_true = read_f64(dir / "z_true.f64", n, d);
  data.intervention_values = read_f64(dir / "intervention_values.f64", n, d);
  for (std::size_t r = 0; r < n_obs; ++r)
    for (std::size_t i = 0; i < d; ++i)
      if (data.masks(r, i) != 0.0) throw DataError("observational rows must have empty masks");
  if (fs::exists(dir / "ground_truth.json")) {
    auto gt = ground_truth_from_json(read_json(dir / "ground_truth.json"));
    if (gt.d() != d || gt.obs_dim() != obs_dim) {
      throw DataError("ground_truth.json disagrees with meta.json on d or D");
    }
    out.gt = std::move(gt);
  }
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.filename().string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

void write_pgm(const fs::path& path, std::span<const double> pixels, std::size_t height,
               std::size_t width) {
  if (pixels.size() != height * width) throw ArgumentError("write_pgm: pixel count");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (double v : pixels) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  write_text(path, out);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace lscm::io
