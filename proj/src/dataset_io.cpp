#include "sfod/dataset_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sfod {

namespace fs = std::filesystem;

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::string scene_file(const Scene& scene, std::size_t index) {
  if (!scene.id.empty()) return scene.id + ".ppm";
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index << ".ppm";
  return os.str();
}

// Next whitespace-delimited header token of a PPM, skipping # comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image quantize8(const Image& image) {
  Image out = image;
  for (float& p : out.pixels) p = static_cast<float>(to_byte(p)) / 255.0f;
  return out;
}

void write_ppm(const Image& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image '" + path.string() + "'");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<char> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(to_byte(image.pixels[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing image '" + path.string() + "'");
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing image '" + path.string() + "'");
  if (ppm_token(in) != "P6") throw DataError("image '" + path.string() + "' is not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw DataError("image '" + path.string() + "' has a corrupt header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("image '" + path.string() + "' has unsupported dimensions or depth");
  Image image(h, w);
  std::vector<char> bytes(image.pixels.size());
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError("image '" + path.string() + "' is truncated");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    image.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[i])) / 255.0f;
  }
  return image;
}

void write_dataset(const std::vector<Scene>& scenes, const fs::path& dir, const nlohmann::json& extra) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw DataError("cannot create dataset directory '" + dir.string() + "': " + ec.message());
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw DataError("cannot write '" + (dir / "annotations.jsonl").string() + "'");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    const std::string file = scene_file(s, i);
    write_ppm(s.image, dir / "images" / file);
    nlohmann::json boxes = nlohmann::json::array(), labels = nlohmann::json::array();
    for (const auto& a : s.annotations) {
      boxes.push_back({a.box.x1, a.box.y1, a.box.x2, a.box.y2});
      labels.push_back(a.class_id);
    }
    ann << nlohmann::json{{"file", file}, {"boxes", boxes}, {"labels", labels}}.dump() << "\n";
  }
  nlohmann::json manifest = extra;
  manifest["count"] = scenes.size();
  manifest["format"] = "sfod-dataset-1";
  std::ofstream m(dir / "manifest.json");
  m << manifest.dump(2) << "\n";
  if (!ann || !m) throw DataError("failed writing dataset '" + dir.string() + "'");
}

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing manifest '" + (dir / "manifest.json").string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest '" + (dir / "manifest.json").string() + "': " + e.what());
  }
}

std::vector<Scene> read_dataset(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  const fs::path ann_path = dir / "annotations.jsonl";
  std::ifstream ann(ann_path);
  if (!ann) throw DataError("missing annotations '" + ann_path.string() + "'");
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = ann_path.string() + ":" + std::to_string(line_no);
    Scene s;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string file = j.at("file").get<std::string>();
      const auto& boxes = j.at("boxes");
      const auto& labels = j.at("labels");
      if (boxes.size() != labels.size()) throw DataError("annotation " + where + ": boxes/labels length mismatch");
      s.id = fs::path(file).stem().string();
      s.image = read_ppm(dir / "images" / file);
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        const auto& b = boxes[k];
        if (b.size() != 4) throw DataError("annotation " + where + ": box " + std::to_string(k) + " needs 4 numbers");
        Annotation a{{b[0].get<float>(), b[1].get<float>(), b[2].get<float>(), b[3].get<float>()},
                     labels[k].get<int>()};
        if (!a.box.valid() || a.class_id < 0) {
          throw DataError("annotation " + where + ": invalid box or label at index " + std::to_string(k));
        }
        s.annotations.push_back(a);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("annotation " + where + " is malformed: " + e.what());
    }
    scenes.push_back(std::move(s));
  }
  const auto count = manifest.value("count", static_cast<std::size_t>(0));
  if (count != scenes.size()) {
    throw DataError("dataset '" + dir.string() + "': manifest lists " + std::to_string(count) + " scenes, annotations have " +
                    std::to_string(scenes.size()));
  }
  return scenes;
}

nlohmann::json domain_spec_to_json(const DomainSpec& s) {
  return {{"image_size", s.image_size},     {"noise_scale", s.noise_scale},   {"base_color_min", s.base_color_min},
          {"base_color_max", s.base_color_max}, {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
          {"min_size", s.min_size},         {"max_size", s.max_size},         {"shift", shift_kind_name(s.shift)},
          {"fog_strength", s.fog_strength}, {"haze_color", s.haze_color},     {"color_cast", s.color_cast},
          {"fog_blur", s.fog_blur},         {"sensor_noise", s.sensor_noise}, {"scale_factor", s.scale_factor}};
}

DomainSpec domain_spec_from_json(const nlohmann::json& j) {
  DomainSpec s;
  s.image_size = j.value("image_size", s.image_size);
  s.noise_scale = j.value("noise_scale", s.noise_scale);
  s.base_color_min = j.value("base_color_min", s.base_color_min);
  s.base_color_max = j.value("base_color_max", s.base_color_max);
  s.min_objects = j.value("min_objects", s.min_objects);
  s.max_objects = j.value("max_objects", s.max_objects);
  s.min_size = j.value("min_size", s.min_size);
  s.max_size = j.value("max_size", s.max_size);
  s.shift = shift_kind_from_name(j.value("shift", std::string(shift_kind_name(s.shift))));
  s.fog_strength = j.value("fog_strength", s.fog_strength);
  s.haze_color = j.value("haze_color", s.haze_color);
  s.color_cast = j.value("color_cast", s.color_cast);
  s.fog_blur = j.value("fog_blur", s.fog_blur);
  s.sensor_noise = j.value("sensor_noise", s.sensor_noise);
  s.scale_factor = j.value("scale_factor", s.scale_factor);
  s.validate();
  return s;
}

std::vector<Scene> generate_split(const BenchmarkSpec& spec, std::uint64_t seed, const std::string& split) {
  const DomainSpec* domain = nullptr;
  int count = 0;
  std::uint64_t split_id = 0;
  if (split == kSourceTrain) {
    domain = &spec.source, count = spec.source_train, split_id = 1;
  } else if (split == kSourceTest) {
    domain = &spec.source, count = spec.source_test, split_id = 2;
  } else if (split == kTargetTrain) {
    domain = &spec.target, count = spec.target_train, split_id = 3;
  } else if (split == kTargetTest) {
    domain = &spec.target, count = spec.target_test, split_id = 4;
  } else {
    throw std::invalid_argument("unknown split '" + split + "'");
  }
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = derive_rng(seed, {split_id, static_cast<std::uint64_t>(i)});
    std::ostringstream id;
    id << std::setw(5) << std::setfill('0') << i;
    scenes.push_back(generate_scene(*domain, rng, id.str()));
  }
  return scenes;
}

void make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed, const fs::path& root) {
  spec.source.validate();
  spec.target.validate();
  for (const char* split : {kSourceTrain, kSourceTest, kTargetTrain, kTargetTest}) {
    const bool target = std::string(split).rfind("target", 0) == 0;
    nlohmann::json extra{{"split", split},
                         {"seed", seed},
                         {"domain", domain_spec_to_json(target ? spec.target : spec.source)}};
    write_dataset(generate_split(spec, seed, split), root / split, extra);
  }
}

}  // namespace sfod
