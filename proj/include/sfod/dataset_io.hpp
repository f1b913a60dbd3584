#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfod/synth.hpp"

namespace sfod {

/// Missing or malformed dataset/checkpoint content; the message names the
/// offending file or entry.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes `dir/images/<id>.ppm` (binary P6, 8-bit), `dir/annotations.jsonl`
/// and `dir/manifest.json` (count plus `extra`). Creates `dir` if needed.
void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir,
                   const nlohmann::json& extra = nlohmann::json::object());

std::vector<Scene> read_dataset(const std::filesystem::path& dir);
nlohmann::json read_manifest(const std::filesystem::path& dir);

void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Pixel values snapped to the 8-bit grid a PPM round trip produces.
Image quantize8(const Image& image);

nlohmann::json domain_spec_to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j);

/// Split directory names under a benchmark root.
inline constexpr const char* kSourceTrain = "source_train";
inline constexpr const char* kSourceTest = "source_test";
inline constexpr const char* kTargetTrain = "target_train";
inline constexpr const char* kTargetTest = "target_test";

/// Generates all four splits of a benchmark with seed-derived streams and
/// writes them under `root`.
void make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed, const std::filesystem::path& root);

/// Scenes of one split, generated in memory (identical to what
/// make_benchmark writes, before 8-bit quantization).
std::vector<Scene> generate_split(const BenchmarkSpec& spec, std::uint64_t seed, const std::string& split);

}  // namespace sfod
