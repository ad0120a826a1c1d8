#include "urbandit/checkpoint.hpp"
#include "urbandit/cli.hpp"
#include "urbandit/config.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

using namespace urbandit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("urbandit_cc_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny() {
  ModelConfig c = ModelConfig::from_preset("S");
  c.dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.pool_size = 4;
  c.f_max = 4;
  c.freq_embed_dim = 8;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("config parsing") {
  const Config c = Config::parse("top = 1\n[model]\npreset = M\ndim = 128\n\n[data]\ntasks = forward, impute\n");
  CHECK(c.get_string("top") == "1");
  CHECK(c.get_string("model.preset") == "M");
  CHECK(c.get_int("model.dim") == 128);
  CHECK(c.get_list("data.tasks") == std::vector<std::string>{"forward", "impute"});
  CHECK(c.get_int("model.layers", 7) == 7);
  CHECK_THROWS_AS(c.get_int("model.preset"), Error);
  CHECK_THROWS_AS(c.get_string("missing"), Error);
  CHECK_THROWS_AS(Config::parse("[model\nx = 1\n"), Error);
  const Config back = Config::parse(c.to_string());
  CHECK(back.values() == c.values());
}

TEST_CASE("config layering: env over file, set over env") {
  Config user = Config::parse("[model]\ndim = 32\nlayers = 2\n");
  ::setenv("URBANDIT_MODEL_DIM", "48", 1);
  user.apply_env(kEnvPrefix, known_config_keys());
  ::unsetenv("URBANDIT_MODEL_DIM");
  CHECK(user.get_int("model.dim") == 48);
  user.set("model.layers", "3");
  const Config r = resolve_config(user);
  CHECK(r.get_int("model.dim") == 48);
  CHECK(r.get_int("model.layers") == 3);
  CHECK(r.get_int("model.heads") == 4);  // untouched preset default
  CHECK(model_config_from(r).dim == 48);
}

TEST_CASE("unknown or malformed keys are rejected") {
  CHECK_THROWS_AS(resolve_config(Config::parse("[model]\ndimension = 3\n")), Error);
  CHECK_THROWS_AS(resolve_config(Config::parse("[diffusion]\ninference_steps = 0\n")), Error);
  CHECK_THROWS_AS(resolve_config(Config::parse("[model]\nfft_mode = median\n")), Error);
  CHECK_THROWS_AS(resolve_config(Config::parse("[model]\npreset = XL\n")), Error);
  CHECK_NOTHROW(resolve_config(Config{}));
}

TEST_CASE("presets resolve to their sizes") {
  for (const char* p : {"S", "M", "L"}) {
    Config u;
    u.set("model.preset", p);
    const ModelConfig m = model_config_from(resolve_config(u));
    CHECK(m.dim == ModelConfig::from_preset(p).dim);
    CHECK(m.layers == ModelConfig::from_preset(p).layers);
  }
}

TEST_CASE("checkpoint round trip reproduces forward passes bit for bit") {
  const fs::path dir = scratch("roundtrip");
  Denoiser m(tiny());
  // perturb adaptive weights so the round trip covers non-trivial values
  for (auto* p : m.parameters()) p->value.array() += 0.01 * std::sin(static_cast<double>(p->value.size()));
  Checkpoint ck = Checkpoint::capture(m);
  NormStats s;
  s.mean = 3.25;
  s.std = 0.5;
  ck.norm["grid"] = s;
  ck.meta["epoch"] = 4;
  save_checkpoint(dir / "m.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.meta["epoch"] == 4);
  CHECK(back.norm.at("grid").mean == 3.25);
  CHECK(back.norm.at("grid").std == 0.5);
  CHECK(back.config.to_json() == m.config().to_json());
  Denoiser r = back.restore();
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    CHECK(r.parameters()[i]->value == m.parameters()[i]->value);

  SpatialShape space = SpatialShape::grid(2, 2);
  Mat x(4, 4), mask = Mat::Ones(4, 4);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = std::cos(0.3 * i);
  mask.bottomRows(2).setZero();
  CHECK(m.predict_velocity(x, mask, 0.4, space) == r.predict_velocity(x, mask, 0.4, space));
}

TEST_CASE("checkpoint loading errors") {
  const fs::path dir = scratch("errors");
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), Error);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint at all";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), Error);

  save_checkpoint(dir / "ok.ckpt", Checkpoint::capture(Denoiser(tiny())));
  {
    std::fstream f(dir / "ok.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "ok.ckpt"), Error);

  save_checkpoint(dir / "cut.ckpt", Checkpoint::capture(Denoiser(tiny())));
  fs::resize_file(dir / "cut.ckpt", fs::file_size(dir / "cut.ckpt") - 16);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), Error);
}
