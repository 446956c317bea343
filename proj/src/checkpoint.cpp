#include "flowlab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& in, std::size_t& pos) {
  require(pos + 4 <= in.size(), "E_CKPT", "truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
  return v;
}

std::uint64_t read_u64(const std::string& in, std::size_t& pos) {
  require(pos + 8 <= in.size(), "E_CKPT", "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
  return v;
}

void append_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  append_u64(out, bits);
}

double read_f64(const std::string& in, std::size_t& pos) {
  const std::uint64_t bits = read_u64(in, pos);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {
      {"data_dim", cfg.data_dim},
      {"hidden_dim", cfg.hidden_dim},
      {"num_layers", cfg.num_layers},
      {"time_embed_dim", cfg.time_embed_dim},
      {"cond_dropout_prob", cfg.cond_dropout_prob},
      {"activation", to_string(cfg.activation)},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.data_dim = j.at("data_dim").get<std::size_t>();
  cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  cfg.num_layers = j.at("num_layers").get<std::size_t>();
  cfg.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
  cfg.cond_dropout_prob = j.at("cond_dropout_prob").get<double>();
  cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  cfg.validate();
  return cfg;
}

}  // namespace

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["model"] = config_to_json(ckpt.config);
  header["metadata"] = ckpt.metadata;
  header["param_version"] = ckpt.params.version();
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.params.count(); ++i) {
    const auto& e = ckpt.params.entry(i);
    tensors.push_back({{"name", e.name}, {"shape", e.value.shape}});
  }
  header["tensors"] = tensors;
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kMagic, 4);
  append_u32(out, kFormatVersion);
  append_u64(out, header_bytes.size());
  out += header_bytes;
  for (std::size_t i = 0; i < ckpt.params.count(); ++i)
    for (double d : ckpt.params.entry(i).value.data) append_f64(out, d);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "E_IO", "cannot open checkpoint file for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "E_IO", "short write to checkpoint file: " + path);
  f.close();

  std::ofstream manifest(path + ".manifest", std::ios::trunc);
  require(manifest.good(), "E_IO", "cannot open manifest for writing: " + path + ".manifest");
  manifest << "format_version " << kFormatVersion << "\n"
           << "bytes " << out.size() << "\n"
           << "fnv1a64 " << fnv1a64_hex(out) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "E_IO", "cannot open checkpoint file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string in = buf.str();

  std::size_t pos = 0;
  require(in.size() >= 4 && std::memcmp(in.data(), kMagic, 4) == 0, "E_CKPT",
          "not a checkpoint file: " + path);
  pos = 4;
  const std::uint32_t version = read_u32(in, pos);
  require(version == kFormatVersion, "E_CKPT",
          "unsupported checkpoint format version " + std::to_string(version));
  const std::uint64_t header_len = read_u64(in, pos);
  require(pos + header_len <= in.size(), "E_CKPT", "truncated checkpoint header");
  nlohmann::json header = nlohmann::json::parse(in.substr(pos, header_len));
  pos += header_len;

  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("model"));
  ckpt.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
  for (const auto& t : header.at("tensors")) {
    Tensor value(t.at("shape").get<std::vector<std::size_t>>());
    for (double& d : value.data) d = read_f64(in, pos);
    ckpt.params.add(t.at("name").get<std::string>(), std::move(value));
  }
  ckpt.params.set_version(header.at("param_version").get<std::uint64_t>());
  require(pos == in.size(), "E_CKPT", "trailing bytes in checkpoint: " + path);
  return ckpt;
}

}  // namespace flowlab
