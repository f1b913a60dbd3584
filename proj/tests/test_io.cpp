#include <gtest/gtest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sfod/checkpoint.hpp"
#include "sfod/config.hpp"
#include "sfod/dataset_io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace sfod {
namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sfod_io_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }
  static void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
  }

  fs::path dir_;
};

std::vector<Scene> some_scenes(int n, std::uint64_t seed) {
  DomainSpec spec;
  spec.shift = ShiftKind::Fog;
  spec.fog_strength = 0.4f;
  std::vector<Scene> out;
  for (int i = 0; i < n; ++i) {
    Rng rng = derive_rng(seed, {static_cast<std::uint64_t>(i)});
    out.push_back(generate_scene(spec, rng, "img" + std::to_string(i)));
  }
  return out;
}

using DatasetIo = TempDir;

TEST_F(DatasetIo, RoundTripIsExactAfterQuantization) {
  const auto scenes = some_scenes(10, 1);
  write_dataset(scenes, dir_ / "d", {{"note", "x"}});
  const auto back = read_dataset(dir_ / "d");
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(back[i].id, scenes[i].id);
    EXPECT_EQ(back[i].annotations, scenes[i].annotations);
    EXPECT_EQ(back[i].image, quantize8(scenes[i].image));
  }
  EXPECT_EQ(read_manifest(dir_ / "d")["note"], "x");
  // A second write of what was read reproduces the files byte for byte.
  write_dataset(back, dir_ / "e", {{"note", "x"}});
  for (const char* f : {"annotations.jsonl", "manifest.json", "images/img3.ppm"}) {
    EXPECT_EQ(slurp(dir_ / "d" / f), slurp(dir_ / "e" / f)) << f;
  }
}

TEST_F(DatasetIo, EmptyDatasetHasManifest) {
  write_dataset({}, dir_ / "empty");
  EXPECT_TRUE(fs::exists(dir_ / "empty" / "manifest.json"));
  EXPECT_TRUE(read_dataset(dir_ / "empty").empty());
}

TEST_F(DatasetIo, ErrorsNameTheOffendingEntry) {
  write_dataset(some_scenes(3, 2), dir_ / "d");
  fs::remove(dir_ / "d" / "images" / "img1.ppm");
  try {
    read_dataset(dir_ / "d");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("img1.ppm"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_dataset(dir_ / "missing"), DataError);
}

TEST_F(DatasetIo, CorruptAnnotationsAreRejected) {
  write_dataset(some_scenes(2, 3), dir_ / "d");
  const fs::path ann = dir_ / "d" / "annotations.jsonl";
  const std::string good = slurp(ann);
  spit(ann, good + "{not json\n");
  EXPECT_THROW(read_dataset(dir_ / "d"), DataError);
  spit(ann, good.substr(0, good.find('\n') + 1));
  EXPECT_THROW(read_dataset(dir_ / "d"), DataError);  // manifest count disagrees
}

TEST_F(DatasetIo, TruncatedImageIsRejected) {
  write_dataset(some_scenes(1, 4), dir_ / "d");
  const fs::path img = dir_ / "d" / "images" / "img0.ppm";
  const std::string bytes = slurp(img);
  spit(img, bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_dataset(dir_ / "d"), DataError);
}

TEST_F(DatasetIo, PpmRoundTrip) {
  Image im(3, 5);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<float>(i % 256) / 255.0f;
  write_ppm(im, dir_ / "a.ppm");
  EXPECT_EQ(read_ppm(dir_ / "a.ppm"), quantize8(im));
  EXPECT_EQ(quantize8(quantize8(im)), quantize8(im));
}

TEST_F(DatasetIo, BenchmarkOnDiskMatchesInMemory) {
  BenchmarkSpec spec = BenchmarkSpec::defaults();
  spec.source_train = 2;
  spec.source_test = spec.target_train = spec.target_test = 1;
  make_benchmark(spec, 9, dir_ / "bench");
  for (const char* split : {kSourceTrain, kSourceTest, kTargetTrain, kTargetTest}) {
    const auto disk = read_dataset(dir_ / "bench" / split);
    const auto mem = generate_split(spec, 9, split);
    ASSERT_EQ(disk.size(), mem.size());
    for (std::size_t i = 0; i < mem.size(); ++i) {
      EXPECT_EQ(disk[i].annotations, mem[i].annotations);
      EXPECT_EQ(disk[i].image, quantize8(mem[i].image));
    }
  }
}

TEST(DomainSpecJson, RoundTrip) {
  DomainSpec s;
  s.shift = ShiftKind::Color;
  s.color_cast = {0.9f, 1.1f, 0.7f};
  s.fog_blur = 2.5f;
  s.sensor_noise = 0.02f;
  s.max_objects = 5;
  const DomainSpec back = domain_spec_from_json(nlohmann::json::parse(domain_spec_to_json(s).dump()));
  EXPECT_EQ(domain_spec_to_json(back), domain_spec_to_json(s));
}

using CheckpointIo = TempDir;

TEST_F(CheckpointIo, RoundTripIsBitExact) {
  Checkpoint ck{init_model(test::tiny_arch(), 3), {{"step", 17}, {"seed", 3}}};
  ck.model.at("backbone.bn0.running_var")[1] = 1.2345678e-7f;
  ck.model.at("roi.cls.bias")[0] = -0.0f;
  save_checkpoint(ck, dir_ / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir_ / "a.ckpt", test::tiny_arch());
  EXPECT_EQ(back, ck);
  for (std::size_t i = 0; i < ck.model.entries().size(); ++i) {
    const auto& a = ck.model.entries()[i].value;
    const auto& b = back.model.entries()[i].value;
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()), 0);
  }
  save_checkpoint(back, dir_ / "b.ckpt");
  EXPECT_EQ(slurp(dir_ / "a.ckpt"), slurp(dir_ / "b.ckpt"));
}

TEST_F(CheckpointIo, RejectsMismatchAndCorruption) {
  save_checkpoint({init_model(test::tiny_arch(), 1), {}}, dir_ / "a.ckpt");
  EXPECT_THROW(load_checkpoint(dir_ / "a.ckpt", ArchDescriptor{}), DataError);
  const std::string bytes = slurp(dir_ / "a.ckpt");
  spit(dir_ / "t.ckpt", bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(dir_ / "t.ckpt"), DataError);
  spit(dir_ / "x.ckpt", bytes + "junk");
  EXPECT_THROW(load_checkpoint(dir_ / "x.ckpt"), DataError);
  spit(dir_ / "m.ckpt", "NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(dir_ / "m.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir_ / "absent.ckpt"), DataError);
}

TEST(ConfigHash, StableAndSensitive) {
  EXPECT_EQ(config_hash("a=1"), config_hash("a=1"));
  EXPECT_NE(config_hash("a=1"), config_hash("a=2"));
  EXPECT_EQ(config_hash(""), "cbf29ce484222325");  // FNV-1a 64-bit offset basis
}

TEST(Config, ParsesTypedValues) {
  const Config c = Config::parse("# comment\nalpha = 0.5\n\nsteps=12\nflag = true\nname = sf ut  # trailing\n");
  EXPECT_DOUBLE_EQ(c.get_double("alpha", 0), 0.5);
  EXPECT_EQ(c.get_int("steps", 0), 12);
  EXPECT_TRUE(c.get_bool("flag", false));
  EXPECT_EQ(c.get_string("name", ""), "sf ut");
  EXPECT_EQ(c.get_int("missing", 7), 7);
  EXPECT_EQ(c.unknown_keys({"alpha", "steps", "flag"}), std::vector<std::string>{"name"});
  EXPECT_EQ(Config::parse(c.dump()).values(), c.values());
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(Config::parse("no equals sign"), ConfigError);
  EXPECT_THROW(Config::parse("x = abc").get_double("x", 0), ConfigError);
  EXPECT_THROW(Config::parse("x = 1.5").get_int("x", 0), ConfigError);
  EXPECT_THROW(Config::parse("x = maybe").get_bool("x", false), ConfigError);
}

TEST(Config, BenchmarkRoundTrip) {
  BenchmarkSpec spec = BenchmarkSpec::defaults();
  spec.target.fog_strength = 0.35f;
  spec.target.haze_color = {0.9f, 0.8f, 0.7f};
  spec.target_test = 17;
  const BenchmarkSpec back = benchmark_from_config(benchmark_to_config(spec));
  EXPECT_EQ(domain_spec_to_json(back.target), domain_spec_to_json(spec.target));
  EXPECT_EQ(domain_spec_to_json(back.source), domain_spec_to_json(spec.source));
  EXPECT_EQ(back.target_test, 17);
  EXPECT_THROW(benchmark_from_config(Config::parse("target.fog = 0.3")), ConfigError);
  EXPECT_THROW(benchmark_from_config(Config::parse("target.fog_strength = 2")), ConfigError);
}

}  // namespace
}  // namespace sfod
