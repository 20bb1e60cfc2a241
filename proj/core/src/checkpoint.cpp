#include "adaspan/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace adaspan {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

const std::string& require(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorCode::CheckpointFormat, "manifest lacks '" + key + "'");
  return it->second;
}

std::size_t to_size(const std::string& s, const std::string& key) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::CheckpointFormat, "bad integer for '" + key + "': " + s);
  }
  return v;
}

double to_double(const std::string& s, const std::string& key) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::CheckpointFormat, "bad number for '" + key + "': " + s);
  }
  return v;
}

std::string shape_token(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape(const std::string& token, const std::string& key) {
  Shape shape;
  std::stringstream ss(token);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(to_size(part, key));
  if (shape.empty()) throw Error(ErrorCode::CheckpointFormat, "empty shape for '" + key + "'");
  return shape;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

template <typename T>
void write_blob(const fs::path& file, const BasicTensor<T>& t) {
  std::vector<std::uint32_t> words(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const float f = static_cast<float>(t[i]);
    std::uint32_t w;
    std::memcpy(&w, &f, sizeof w);
    words[i] = to_le(w);
  }
  std::ofstream out(file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) throw Error(ErrorCode::CheckpointFormat, "cannot write " + file.string());
}

template <typename T>
void read_blob(const fs::path& file, BasicTensor<T>& t) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "missing blob " + file.string());
  std::vector<std::uint32_t> words(t.numel());
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (in.gcount() != static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)) ||
      in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::CheckpointFormat, "blob " + file.string() + " has wrong length");
  }
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::uint32_t w = to_le(words[i]);
    float f;
    std::memcpy(&f, &w, sizeof f);
    t[i] = static_cast<T>(f);
  }
}

KeyValues read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw Error(ErrorCode::MissingFile, "no manifest.txt in " + dir.string());
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::CheckpointFormat, "malformed manifest line: " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

KeyValues model_config_to_kv(const ModelConfig& c) {
  KeyValues kv;
  kv["primitive"] = std::string(to_string(c.primitive));
  kv["size"] = std::string(to_string(c.size));
  kv["num_classes"] = std::to_string(c.num_classes);
  kv["heads"] = std::to_string(c.heads);
  kv["ramp"] = std::to_string(c.ramp);
  kv["fixed_extent"] = std::to_string(c.fixed_extent);
  kv["conv_extent"] = std::to_string(c.conv_extent);
  kv["init_span"] = fmt_double(c.init_span);
  kv["input_size"] = std::to_string(c.input_size);
  kv["in_channels"] = std::to_string(c.in_channels);
  kv["stem_channels"] = std::to_string(c.stem_channels);
  kv["expansion"] = std::to_string(c.expansion);
  std::string blocks;
  for (const auto& b : c.blocks) {
    if (!blocks.empty()) blocks += ',';
    blocks += std::to_string(b.width) + ':' + std::to_string(b.stride);
  }
  kv["blocks"] = blocks;
  return kv;
}

ModelConfig model_config_from_kv(const KeyValues& kv) {
  ModelConfig c;
  c.primitive = parse_primitive(require(kv, "primitive"));
  c.size = parse_size_class(require(kv, "size"));
  c.num_classes = to_size(require(kv, "num_classes"), "num_classes");
  c.heads = to_size(require(kv, "heads"), "heads");
  c.ramp = static_cast<int>(to_size(require(kv, "ramp"), "ramp"));
  c.fixed_extent = to_size(require(kv, "fixed_extent"), "fixed_extent");
  c.conv_extent = to_size(require(kv, "conv_extent"), "conv_extent");
  c.init_span = to_double(require(kv, "init_span"), "init_span");
  c.input_size = to_size(require(kv, "input_size"), "input_size");
  c.in_channels = to_size(require(kv, "in_channels"), "in_channels");
  c.stem_channels = to_size(require(kv, "stem_channels"), "stem_channels");
  c.expansion = to_size(require(kv, "expansion"), "expansion");
  std::stringstream ss(require(kv, "blocks"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::CheckpointFormat, "bad block " + item);
    c.blocks.push_back({to_size(item.substr(0, colon), "blocks"),
                        to_size(item.substr(colon + 1), "blocks")});
  }
  return c;
}

template <typename T>
void save_checkpoint(const fs::path& dir, BasicModel<T>& model, int epoch,
                     const KeyValues& metrics) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "format_version=" << kCheckpointFormatVersion << '\n';
  manifest << "epoch=" << epoch << '\n';
  for (const auto& [k, v] : model_config_to_kv(model.config())) {
    manifest << "config." << k << '=' << v << '\n';
  }
  for (const auto& [k, v] : metrics) manifest << "metric." << k << '=' << v << '\n';
  for (const auto& p : model.parameters()) {
    manifest << "param." << p.name << '=' << shape_token(p.tensor.shape()) << '\n';
    write_blob(dir / (p.name + ".f32"), p.tensor);
  }
  for (const auto& b : model.buffers()) {
    manifest << "buffer." << b.name << '=' << shape_token(b.tensor.shape()) << '\n';
    write_blob(dir / (b.name + ".f32"), b.tensor);
  }
  std::ofstream out(dir / "manifest.txt");
  out << manifest.str();
  if (!out) throw Error(ErrorCode::CheckpointFormat, "cannot write manifest in " + dir.string());
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  const auto kv = read_manifest(dir);
  CheckpointMeta meta;
  meta.format_version = static_cast<int>(to_size(require(kv, "format_version"), "format_version"));
  if (meta.format_version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::CheckpointFormat,
                "unsupported checkpoint version " + std::to_string(meta.format_version));
  }
  meta.epoch = static_cast<int>(to_size(require(kv, "epoch"), "epoch"));
  KeyValues config;
  for (const auto& [k, v] : kv) {
    if (k.rfind("config.", 0) == 0) config[k.substr(7)] = v;
    if (k.rfind("metric.", 0) == 0) meta.metrics[k.substr(7)] = v;
  }
  meta.config = model_config_from_kv(config);
  return meta;
}

template <typename T>
BasicModel<T> load_checkpoint(const fs::path& dir, CheckpointMeta* meta_out) {
  const auto kv = read_manifest(dir);
  const auto meta = read_checkpoint_meta(dir);
  auto model = build_model<T>(meta.config, 0);
  auto check = [&](const std::string& key, const Shape& shape) {
    const auto stored = parse_shape(require(kv, key), key);
    if (stored != shape) {
      throw Error(ErrorCode::CheckpointFormat, key + " stored as " + shape_str(stored) +
                                                   ", model expects " + shape_str(shape));
    }
  };
  for (auto& p : model.parameters()) {
    check("param." + p.name, p.tensor.shape());
    read_blob(dir / (p.name + ".f32"), p.tensor);
  }
  for (auto& b : model.buffers()) {
    check("buffer." + b.name, b.tensor.shape());
    read_blob(dir / (b.name + ".f32"), b.tensor);
  }
  if (meta_out) *meta_out = meta;
  return model;
}

std::size_t checkpoint_parameter_scalars(const fs::path& dir) {
  std::size_t total = 0;
  for (const auto& [k, v] : read_manifest(dir)) {
    if (k.rfind("param.", 0) != 0) continue;
    const auto name = k.substr(6);
    const auto bytes = fs::file_size(dir / (name + ".f32"));
    if (bytes != numel_of(parse_shape(v, k)) * sizeof(float)) {
      throw Error(ErrorCode::CheckpointFormat, "blob size mismatch for " + name);
    }
    total += bytes / sizeof(float);
  }
  return total;
}

template void save_checkpoint(const fs::path&, BasicModel<float>&, int, const KeyValues&);
template void save_checkpoint(const fs::path&, BasicModel<double>&, int, const KeyValues&);
template BasicModel<float> load_checkpoint(const fs::path&, CheckpointMeta*);
template BasicModel<double> load_checkpoint(const fs::path&, CheckpointMeta*);

}  // namespace adaspan
