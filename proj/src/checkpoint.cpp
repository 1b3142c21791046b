#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rosd/errors.hpp"
#include "rosd/policy.hpp"

namespace rosd {

namespace {

constexpr char kMagic[8] = {'R', 'O', 'S', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model) {
  const auto& c = model.config();
  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"role", to_string(model.role())},
      {"config",
       {{"vocab", c.vocab}, {"layers", c.layers}, {"width", c.width}, {"heads", c.heads}, {"mlp", c.mlp},
        {"context", c.context}}},
      {"vocab", grammar_tokenizer().vocab()},
      {"num_params", model.net().num_params()},
  };
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto& p = model.net().params();
    out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(float)));
    if (!out) throw InputError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

PolicyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw InputError("not a checkpoint: " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw InputError("unsupported checkpoint format version " + std::to_string(version));
  }
  const auto len = read_pod<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  const auto& jc = header.at("config");
  ModelConfig c;
  c.vocab = jc.at("vocab").get<int>();
  c.layers = jc.at("layers").get<int>();
  c.width = jc.at("width").get<int>();
  c.heads = jc.at("heads").get<int>();
  c.mlp = jc.at("mlp").get<int>();
  c.context = jc.at("context").get<int>();
  if (header.at("vocab").get<std::vector<std::string>>() != grammar_tokenizer().vocab()) {
    throw ConfigError("checkpoint vocabulary does not match this build's tokenizer");
  }
  PolicyModel model(c, parse_role(header.at("role").get<std::string>()));
  auto& p = model.net().params();
  if (header.at("num_params").get<std::size_t>() != p.size()) throw InputError("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(float)));
  if (!in) throw InputError("checkpoint truncated");
  return model;
}

}  // namespace rosd
