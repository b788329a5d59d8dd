#pragma once

// On-disk dataset container:
//   meta.json                 d, D, N, n_obs, projection kind, plan, seeds, ...
//   x.f64                     N x D   little-endian float64, row-major
//   masks.u8                  N x d   uint8 0/1
//   z_true.f64                N x d
//   intervention_values.f64   N x d
//   ground_truth.json         permutation, L, log sigma, projection arrays
// Readers check every array size against meta.json.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "json.hpp"
#include "lscm/synth.hpp"

namespace lscm::io {

namespace fs = std::filesystem;
using nlohmann::json;

void write_f64(const fs::path& path, const Matrix& m);
Matrix read_f64(const fs::path& path, std::size_t rows, std::size_t cols);
void write_mask_u8(const fs::path& path, const Matrix& masks);
Matrix read_mask_u8(const fs::path& path, std::size_t rows, std::size_t cols);

json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

json ground_truth_to_json(const synth::GroundTruth& gt);
synth::GroundTruth ground_truth_from_json(const json& j);

json plan_to_json(const synth::InterventionPlan& plan);
synth::InterventionPlan plan_from_json(const json& j);

// `meta` is merged into meta.json after the shape fields.
void write_dataset(const fs::path& dir, const synth::Dataset& data, const synth::GroundTruth* gt,
                   const json& meta = json::object());

struct LoadedDataset {
  synth::Dataset data;
  std::optional<synth::GroundTruth> gt;
  json meta;
};
LoadedDataset read_dataset(const fs::path& dir);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);
void write_text(const fs::path& path, const std::string& text);

// 8-bit binary PGM, values clamped to [0, 1].
void write_pgm(const fs::path& path, std::span<const double> pixels, std::size_t height,
               std::size_t width);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace lscm::io
