#include "adaspan/analysis.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace adaspan {

namespace fs = std::filesystem;

std::string layer_of(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  const std::size_t keep = !parts.empty() && parts[0] == "blocks" ? 3 : 1;
  std::string out;
  for (std::size_t i = 0; i < std::min(keep, parts.size()); ++i) {
    if (i) out += '.';
    out += parts[i];
  }
  return out;
}

std::size_t conv2d_params(std::size_t in, std::size_t out, std::size_t kernel, bool bias) {
  return kernel * kernel * in * out + (bias ? out : 0);
}

std::size_t linear_params(std::size_t in, std::size_t out, bool bias) {
  return conv2d_params(in, out, 1, bias);
}

std::uint64_t conv2d_flops(std::size_t in, std::size_t out, std::size_t kernel, std::size_t out_side) {
  return 2ULL * kernel * kernel * in * out * out_side * out_side;
}

namespace {

LayerCost& layer(CostReport& r, const std::string& name) {
  for (auto& l : r.layers) {
    if (l.name == name) return l;
  }
  r.layers.push_back({name});
  return r.layers.back();
}

template <typename T>
CostReport blank(const BasicModel<T>& model) {
  CostReport r;
  r.primitive = std::string(to_string(model.config().primitive));
  r.size_class = std::string(to_string(model.config().size));
  r.input_size = model.config().input_size;
  return r;
}

void total(CostReport& r) {
  r.total_params = 0;
  r.total_mac_flops = 0;
  r.total_flops = 0;
  for (const auto& l : r.layers) {
    r.total_params += l.params;
    r.total_mac_flops += l.mac_flops;
    r.total_flops += l.flops();
  }
}

template <typename T>
void add_params(CostReport& r, BasicModel<T>& model) {
  for (const auto& p : model.parameters()) layer(r, layer_of(p.name)).params += p.tensor.numel();
}

template <typename T>
void add_flops(CostReport& r, BasicModel<T>& model) {
  using U = std::uint64_t;
  const auto& cfg = model.config();
  U s = cfg.input_size;
  U cin = cfg.stem_channels;
  {
    auto& l = layer(r, "stem");
    l.mac_flops += conv2d_flops(cfg.in_channels, cin, 3, s);
    l.other_flops += 2 * cin * s * s;  // batch norm + relu
  }
  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    const auto& b = model.blocks()[i];
    const std::string p = "blocks." + std::to_string(i);
    const U w = b.width, out = b.out_channels, so = s / b.stride;
    auto& reduce = layer(r, p + ".reduce");
    reduce.mac_flops += conv2d_flops(cin, w, 1, s);
    reduce.other_flops += 2 * w * s * s;

    auto& spatial = layer(r, p + ".spatial");
    if (b.primitive == Primitive::Conv) {
      spatial.mac_flops += conv2d_flops(w, w, b.spatial_weight.size(3), s);
    } else {
      const U e = attention_extent(b.attention, b.attention_config);
      const U heads = b.attention_config.heads, dh = b.attention_config.head_dim();
      spatial.extent = static_cast<std::size_t>(e);
      spatial.mac_flops += 3 * conv2d_flops(w, w, 1, s);          // query, key, value
      spatial.mac_flops += 2 * 2 * heads * dh * e * e * s * s;  // logits + weighted sum
      spatial.other_flops += 4 * heads * e * e * s * s;         // max, exp, mask, normalize
    }
    if (b.stride == 2) spatial.other_flops += w * s * s;  // 2x2 average pool
    spatial.other_flops += 2 * w * so * so;

    auto& expand = layer(r, p + ".expand");
    expand.mac_flops += conv2d_flops(w, out, 1, so);
    expand.other_flops += out * so * so;
    if (b.shortcut) {
      auto& sc = layer(r, p + ".shortcut");
      sc.mac_flops += conv2d_flops(cin, out, 1, so);
      sc.other_flops += out * so * so;
    } else if (b.stride == 2) {
      layer(r, p + ".shortcut").other_flops += out * s * s;
    }
    layer(r, p + ".residual").other_flops += 2 * out * so * so;  // add + relu
    cin = out;
    s = so;
  }
  layer(r, "pool").other_flops += cin * s * s;
  auto& head = layer(r, "head");
  head.mac_flops += conv2d_flops(cin, cfg.num_classes, 1, 1);
  head.other_flops += cfg.num_classes;
}

}  // namespace

template <typename T>
CostReport count_params(BasicModel<T>& model) {
  auto r = blank(model);
  add_params(r, model);
  total(r);
  return r;
}

template <typename T>
CostReport count_flops(BasicModel<T>& model) {
  auto r = blank(model);
  add_flops(r, model);
  total(r);
  return r;
}

template <typename T>
CostReport cost_report(BasicModel<T>& model) {
  auto r = blank(model);
  add_params(r, model);
  add_flops(r, model);
  total(r);
  return r;
}

std::string cost_report_json(const CostReport& r) {
  nlohmann::ordered_json j;
  j["primitive"] = r.primitive;
  j["size_class"] = r.size_class;
  j["input_size"] = r.input_size;
  j["total_params"] = r.total_params;
  j["total_flops"] = r.total_flops;
  j["total_mac_flops"] = r.total_mac_flops;
  auto& layers = j["layers"];
  layers = nlohmann::ordered_json::array();
  for (const auto& l : r.layers) {
    nlohmann::ordered_json e;
    e["name"] = l.name;
    e["params"] = l.params;
    e["flops"] = l.flops();
    e["mac_flops"] = l.mac_flops;
    if (l.extent) e["extent"] = l.extent;
    layers.push_back(e);
  }
  return j.dump(2);
}

std::string format_cost_table(const CostReport& r) {
  std::ostringstream os;
  os << r.size_class << '/' << r.primitive << " at " << r.input_size << 'x' << r.input_size << '\n';
  os << std::left << std::setw(22) << "layer" << std::right << std::setw(12) << "params"
     << std::setw(16) << "flops" << std::setw(8) << "extent" << '\n';
  for (const auto& l : r.layers) {
    os << std::left << std::setw(22) << l.name << std::right << std::setw(12) << l.params
       << std::setw(16) << l.flops() << std::setw(8);
    if (l.extent) {
      os << l.extent;
    } else {
      os << '-';
    }
    os << '\n';
  }
  os << std::fixed << std::setprecision(3) << "total params " << r.total_params / 1e6
     << "M, FLOPS " << std::setprecision(1) << r.total_flops / 1e6 << "M\n";
  return os.str();
}

ScalingFiles export_scaling_tables(const ScalingRuns& runs, const fs::path& dir) {
  if (runs.size_sweep.empty() && runs.fraction_sweep.empty()) {
    throw Error(ErrorCode::MissingRun, "no completed runs to export");
  }
  fs::create_directories(dir);
  ScalingFiles files{dir / "accuracy_vs_cost.csv", dir / "accuracy_vs_fraction.csv"};
  {
    std::ofstream out(files.accuracy_vs_cost);
    out << "params,flops,acc,primitive,size_class\n";
    for (const auto& r : runs.size_sweep) {
      out << r.params << ',' << r.flops << ',' << r.accuracy << ',' << r.primitive << ','
          << r.size_class << '\n';
    }
  }
  {
    std::ofstream out(files.accuracy_vs_fraction);
    out << "fraction,acc,primitive\n";
    for (const auto& r : runs.fraction_sweep) {
      out << r.fraction << ',' << r.accuracy << ',' << r.primitive << '\n';
    }
  }
  return files;
}

template CostReport count_params(BasicModel<float>&);
template CostReport count_params(BasicModel<double>&);
template CostReport count_flops(BasicModel<float>&);
template CostReport count_flops(BasicModel<double>&);
template CostReport cost_report(BasicModel<float>&);
template CostReport cost_report(BasicModel<double>&);

}  // namespace adaspan
