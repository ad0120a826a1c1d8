#include "urbandit/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace urbandit {

Checkpoint Checkpoint::capture(const Denoiser& model) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto* p : model.parameters()) ck.params.emplace_back(p->name, p->value);
  return ck;
}

Denoiser Checkpoint::restore() const {
  Denoiser model(config);
  if (model.parameters().size() != params.size())
    throw Error("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                std::to_string(model.parameters().size()));
  for (const auto& p : params) {
    ad::Parameter& dst = model.param(p.name);
    if (dst.value.rows() != p.value.rows() || dst.value.cols() != p.value.cols())
      throw Error("checkpoint parameter '" + p.name + "' has shape " + shape_str(p.value) + ", model expects " +
                  shape_str(dst.value));
    dst.value = p.value;
    dst.zero_grad();
  }
  return model;
}

nlohmann::json norm_to_json(const NormStats& s) {
  return {{"kind", to_string(s.kind)}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
}

NormStats norm_from_json(const nlohmann::json& j) {
  NormStats s;
  s.kind = parse_norm_kind(j.at("kind").get<std::string>());
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.min = j.at("min").get<double>();
  s.max = j.at("max").get<double>();
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json h;
  h["config"] = ck.config.to_json();
  h["norm"] = nlohmann::json::object();
  for (const auto& [name, s] : ck.norm) h["norm"][name] = norm_to_json(s);
  h["meta"] = ck.meta;
  h["params"] = nlohmann::json::array();
  for (const auto& p : ck.params) h["params"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  const std::string header = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = header.size();
  out.write("UDCK", 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : ck.params)
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, "UDCK", 4) != 0) throw Error(path.string() + " is not a checkpoint file");
  if (version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("truncated checkpoint header in " + path.string());

  const auto h = nlohmann::json::parse(header);
  Checkpoint ck;
  ck.config = ModelConfig::from_json(h.at("config"));
  for (const auto& [name, s] : h.at("norm").items()) ck.norm[name] = norm_from_json(s);
  ck.meta = h.at("meta");
  for (const auto& pj : h.at("params")) {
    Mat v(pj.at("rows").get<Index>(), pj.at("cols").get<Index>());
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw Error("truncated parameter data in " + path.string());
    ck.params.emplace_back(pj.at("name").get<std::string>(), std::move(v));
  }
  return ck;
}

}  // namespace urbandit
