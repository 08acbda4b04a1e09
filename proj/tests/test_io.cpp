// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "dgconv/checkpoint.hpp"
#include "dgconv/config.hpp"
#include "dgconv/trainer.hpp"
#include "test_util.hpp"

using namespace dgconv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dgconv_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.widths = {8, 16};
  cfg.blocks = {1, 1};
  cfg.stem_channels = 8;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("model config echo round trip") {
  ModelConfig cfg = small_config();
  cfg.mode = ConvMode::FixedGroup;
  cfg.fixed_groups = 4;
  cfg.classes = 7;
  const ModelConfig back = parse_model_config(serialize_model_config(cfg));
  REQUIRE(back.widths == cfg.widths);
  REQUIRE(back.blocks == cfg.blocks);
  REQUIRE(back.expansion == cfg.expansion);
  REQUIRE(back.stem_channels == cfg.stem_channels);
  REQUIRE(back.classes == 7);
  REQUIRE(back.mode == ConvMode::FixedGroup);
  REQUIRE(back.fixed_groups == 4);
  REQUIRE_THROWS_AS(parse_model_config("bogus_key=1\n"), ParseError);
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp;
  GroupableNet<float> net(small_config());
  init_gates(net, 17);
  // give the gates distinctive values and the bn buffers some state
  auto dgs = net.dg_layers();
  dgs[0]->gates = {0.25, -0.75, 0.5};
  Tensor4<float> x(2, 3, 16, 16);
  std::mt19937_64 rng(1);
  fill_normal(x, rng);
  net.forward(x, true);

  save_checkpoint(net, 123, tmp.file("a.dgcv"));
  auto lc = load_checkpoint(tmp.file("a.dgcv"));
  REQUIRE(lc.step == 123);
  REQUIRE(lc.net->config.widths == net.config.widths);
  REQUIRE(lc.net->dg_layers()[0]->gates == dgs[0]->gates);

  SECTION("forward pass is bit-identical after reload") {
    auto want = net.forward(x, false);
    auto got = lc.net->forward(x, false);
    REQUIRE(want.v == got.v);
  }
  SECTION("serialization is byte-stable") {
    save_checkpoint(net, 123, tmp.file("b.dgcv"));
    REQUIRE(slurp(tmp.file("a.dgcv")) == slurp(tmp.file("b.dgcv")));
  }
  SECTION("corrupted files are rejected") {
    std::string data = slurp(tmp.file("a.dgcv"));
    {
      std::ofstream f(tmp.file("bad_magic.dgcv"), std::ios::binary);
      f << "NOPE" << data.substr(4);
    }
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("bad_magic.dgcv")), ParseError);
    {
      std::ofstream f(tmp.file("trunc.dgcv"), std::ios::binary);
      f.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
    }
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("trunc.dgcv")), ParseError);
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("missing.dgcv")), ParseError);
  }
}

TEST_CASE("export round trip") {
  TempDir tmp;
  GroupableNet<float> net(small_config());
  init_gates(net, 23);
  auto dgs = net.dg_layers();
  dgs[0]->gates = {0.5, -0.5, 0.5};   // G=2
  dgs[1]->gates = {-0.5, -0.5, 0.5, 0.5};  // G=4
  Tensor4<float> x(2, 3, 16, 16);
  std::mt19937_64 rng(2);
  fill_normal(x, rng);
  net.forward(x, true);  // populate bn running stats

  export_compiled(net, tmp.file("m.dgcx"));
  auto le = load_exported(tmp.file("m.dgcx"));

  SECTION("logits agree with the original network") {
    auto want = net.forward(x, false);
    auto got = le.net->forward(x, false);
    REQUIRE(testutil::rel_err(got, want) <= 1e-5);
  }
  SECTION("export is smaller than the checkpoint when any gate is zero") {
    save_checkpoint(net, 1, tmp.file("m.dgcv"));
    REQUIRE(fs::file_size(tmp.file("m.dgcx")) < fs::file_size(tmp.file("m.dgcv")));
  }
  SECTION("savings json records the connection counts") {
    auto j = nlohmann::json::parse(le.savings_json);
    REQUIRE(j["total_dense"].get<std::uint64_t>() == 8 * 8 + 16 * 16);
    std::uint64_t want = 0;
    for (auto* l : net.dg_layers()) want += nnz_oracle(l->relationship());
    REQUIRE(j["total_connections"].get<std::uint64_t>() == want);
  }
  SECTION("all-dense export records ratio 1.0") {
    for (auto* l : net.dg_layers())
      for (double& g : l->gates) g = 1.0;
    export_compiled(net, tmp.file("dense.dgcx"));
    auto dense = load_exported(tmp.file("dense.dgcx"));
    auto j = nlohmann::json::parse(dense.savings_json);
    REQUIRE(j["ratio_vs_dense"].get<double>() == 1.0);
  }
  SECTION("compiled layers refuse training") {
    Tensor4<float> y(1, 3, 16, 16);
    fill_normal(y, rng);
    REQUIRE_THROWS_AS(le.net->forward(y, true), ConfigError);
  }
}

TEST_CASE("run config parsing") {
  const std::string good = R"(
# run description
[model]
widths = 8,16
blocks = 1,1
stem = 8
mode = dgconv

[train]
epochs = 2
batch = 32
base_lr = 0.1
seed = 5

[budget]
b = 16
alpha = -0.02

[data]
kind = synth10
count = 256
test_count = 64
augment = true

[output]
dir = /tmp/run1
)";
  SECTION("valid file") {
    const RunConfig rc = parse_run_config_text(good);
    REQUIRE(rc.model.widths == std::vector<int>{8, 16});
    REQUIRE(rc.model.mode == ConvMode::DGConv);
    REQUIRE(rc.train.epochs == 2);
    REQUIRE(rc.train.base_lr == 0.1);
    REQUIRE(rc.train.seed == 5);
    REQUIRE(rc.budget.b == 16.0);
    REQUIRE(rc.budget.alpha == -0.02);
    REQUIRE(rc.data.kind == "synth10");
    REQUIRE(rc.data.synth_count == 256);
    REQUIRE(rc.test_count == 64);
    REQUIRE(rc.data.augment);
    REQUIRE(rc.out_dir == "/tmp/run1");
  }
  SECTION("unknown key is rejected with its location") {
    const std::string bad = "[model]\nwidths = 8\nblocks = 1\nbogus = 3\n"
                            "[train]\n[budget]\n[data]\n";
    try {
      parse_run_config_text(bad);
      FAIL("expected ConfigParseError");
    } catch (const ConfigParseError& e) {
      REQUIRE(e.line == 4);
      REQUIRE(std::string(e.what()).find("bogus") != std::string::npos);
    }
  }
  SECTION("unknown section rejected") {
    REQUIRE_THROWS_AS(parse_run_config_text("[mystery]\n"), ConfigParseError);
  }
  SECTION("missing sections rejected") {
    REQUIRE_THROWS_AS(parse_run_config_text("[model]\n[train]\n"), ConfigParseError);
  }
  SECTION("non-negative alpha rejected") {
    const std::string bad =
        "[model]\n[train]\n[budget]\nalpha = 0.02\n[data]\n";
    REQUIRE_THROWS_AS(parse_run_config_text(bad), ConfigParseError);
  }
  SECTION("key outside any section rejected") {
    REQUIRE_THROWS_AS(parse_run_config_text("stray = 1\n"), ConfigParseError);
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(parse_run_config("/nonexistent/config.ini"), ConfigParseError);
  }
}
