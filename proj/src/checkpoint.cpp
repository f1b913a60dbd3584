#include "sfod/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <iomanip>

#include "sfod/dataset_io.hpp"

namespace sfod {

namespace {

constexpr char kMagic[8] = {'S', 'F', 'O', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& where) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("checkpoint '" + where + "' is truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["arch"] = ckpt.model.arch();
  header["metadata"] = ckpt.metadata;
  header["arrays"] = nlohmann::json::array();
  for (const auto& e : ckpt.model.entries()) {
    header["arrays"].push_back({{"name", e.name}, {"kind", param_kind_name(e.kind)}, {"shape", e.value.shape()}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : ckpt.model.entries()) {
    const auto& a = e.value.array();
    for (Index i = 0; i < a.size(); ++i) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(a[i]));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ArchDescriptor>& expected) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint '" + where + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("'" + where + "' is not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in, where);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint '" + where + "' has unsupported version " + std::to_string(version));
  }
  const auto length = get_le<std::uint64_t>(in, where);
  if (length > (std::uint64_t{1} << 30)) throw DataError("checkpoint '" + where + "' has an implausible header length");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw DataError("checkpoint '" + where + "' is truncated");

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    const auto arch = header.at("arch").get<ArchDescriptor>();
    if (expected && !(*expected == arch)) {
      throw DataError("checkpoint '" + where + "' architecture " + nlohmann::json(arch).dump() +
                      " does not match expected " + nlohmann::json(*expected).dump());
    }
    ckpt.model = ModelState(arch);
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& a : header.at("arrays")) {
      TensorF t(a.at("shape").get<Shape>());
      for (Index i = 0; i < t.size(); ++i) t.array()[i] = std::bit_cast<float>(get_le<std::uint32_t>(in, where));
      ckpt.model.add(a.at("name").get<std::string>(), param_kind_from_name(a.at("kind").get<std::string>()), std::move(t));
    }
    ckpt.model.require_compatible(init_model(ckpt.model.arch(), 0), "arrays");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + where + "' has a corrupt header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError("checkpoint '" + where + "': " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint '" + where + "' has trailing bytes");
  return ckpt;
}

}  // namespace sfod
