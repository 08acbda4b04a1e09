// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: train / eval / analyze / export / verify.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "dgconv/checkpoint.hpp"
#include "dgconv/compile.hpp"
#include "dgconv/config.hpp"
#include "dgconv/selfcheck.hpp"
#include "dgconv/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// "key=value,key=value" dataset spec for eval, e.g.
// "kind=synth10,count=2000,seed=1" or "kind=cifar-bin,path=test.bin".
struct DataSpec {
  dgconv::DatasetHandle handle;
  std::uint64_t seed = 1;
};

DataSpec parse_data_spec(const std::string& spec) {
  DataSpec d;
  d.handle.augment = false;
  std::istringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw dgconv::ConfigError("data spec: expected key=value, got '" + tok + "'");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "kind")
      d.handle.kind = val;
    else if (key == "path")
      d.handle.path = val;
    else if (key == "labels_path")
      d.handle.labels_path = val;
    else if (key == "count")
      d.handle.synth_count = std::stoi(val);
    else if (key == "subset")
      d.handle.subset = std::stoi(val);
    else if (key == "seed")
      d.seed = std::stoull(val);
    else
      throw dgconv::ConfigError("data spec: unknown key '" + key + "'");
  }
  return d;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
  fs::rename(tmp, path);
}

int cmd_train(const std::string& config_path, std::string out_dir) {
  dgconv::RunConfig rc = dgconv::parse_run_config(config_path);
  if (out_dir.empty()) out_dir = rc.out_dir;
  if (out_dir.empty()) {
    std::cerr << "train: no output directory (use --out or [output] dir)\n";
    return 2;
  }
  fs::create_directories(out_dir);

  dgconv::GroupableNet<float> net(rc.model);
  dgconv::init_gates(net, rc.train.seed);

  dgconv::DatasetHandle train_handle = rc.data;
  dgconv::Dataset trainset = dgconv::load_dataset(train_handle, rc.train.seed, true);
  dgconv::DatasetHandle test_handle = rc.data;
  test_handle.augment = false;
  test_handle.synth_count = rc.test_count;
  dgconv::Dataset testset = dgconv::load_dataset(test_handle, rc.train.seed, false);

  const long steps_per_epoch =
      (trainset.count() + rc.train.batch - 1) / rc.train.batch;
  const int L = static_cast<int>(net.dg_layers().size());

  std::ofstream metrics(out_dir + "/metrics.csv", std::ios::trunc);
  metrics << dgconv::DynamicsLog::csv_header(L) << "\n";
  metrics.flush();

  auto on_step = [&](const dgconv::DynamicsRecord& rec) {
    metrics << dgconv::DynamicsLog::csv_row(rec) << "\n";
    if ((rec.step + 1) % steps_per_epoch == 0) {
      metrics.flush();
      dgconv::save_checkpoint(net, rec.step + 1, out_dir + "/checkpoint.dgcv");
    }
  };

  dgconv::TrainResult result =
      dgconv::train(net, trainset, train_handle, rc.budget, rc.train, on_step);
  metrics.close();
  dgconv::save_checkpoint(net, steps_per_epoch * rc.train.epochs,
                          out_dir + "/checkpoint.dgcv");

  dgconv::EvalResult ev = dgconv::evaluate(net, testset, test_handle);
  json summary;
  summary["test_accuracy"] = ev.accuracy;
  summary["test_loss"] = ev.loss;
  summary["final_train_acc"] = result.final_train_acc;
  if (L > 0) {
    summary["zeta"] = result.final_state.zeta;
    summary["zeta_initial"] = result.initial_state.zeta;
    summary["o"] = result.final_state.o;
    summary["constraint_satisfied"] =
        double(result.final_state.zeta) <= result.final_state.o;
    json groups = json::array();
    for (auto* l : net.dg_layers()) groups.push_back(l->group_count());
    summary["group_counts"] = groups;
  }
  write_text_atomic(out_dir + "/summary.json", summary.dump(2) + "\n");
  std::cout << "train: done; test accuracy " << ev.accuracy << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_spec) {
  DataSpec spec = parse_data_spec(data_spec);
  dgconv::Dataset data = dgconv::load_dataset(spec.handle, spec.seed, false);

  std::ifstream probe(ckpt_path, std::ios::binary);
  char magic[5] = {};
  probe.read(magic, 5);
  probe.close();
  dgconv::EvalResult ev;
  if (std::memcmp(magic, dgconv::kExportMagic, 5) == 0) {
    dgconv::LoadedExport le = dgconv::load_exported(ckpt_path);
    ev = dgconv::evaluate(*le.net, data, spec.handle);
  } else {
    dgconv::LoadedCheckpoint lc = dgconv::load_checkpoint(ckpt_path);
    ev = dgconv::evaluate(*lc.net, data, spec.handle);
  }
  std::cout << "loss " << ev.loss << "\naccuracy " << ev.accuracy << "\n";
  return 0;
}

int cmd_analyze(const std::string& ckpt_path, const std::string& out_path, double b) {
  dgconv::LoadedCheckpoint lc = dgconv::load_checkpoint(ckpt_path);
  auto dgs = lc.net->dg_layers();
  json report;
  report["checkpoint"] = ckpt_path;
  report["step"] = lc.step;
  json layers = json::array();
  std::uint64_t zeta = 0;
  double dense = 0;
  for (std::size_t i = 0; i < dgs.size(); ++i) {
    const auto g = dgs[i]->binary_gates();
    const std::uint64_t zl = dgconv::layer_complexity(g, dgs[i]->cin());
    zeta += zl;
    dense += double(dgs[i]->cin()) * dgs[i]->cin();
    layers.push_back({{"layer", i},
                      {"channels", dgs[i]->cin()},
                      {"groups", dgconv::group_count(g)},
                      {"zeta", zl}});
    std::cout << "layer " << i << ": C=" << dgs[i]->cin()
              << " G=" << dgconv::group_count(g) << " zeta=" << zl << "\n";
  }
  const double o = dense / b;
  report["layers"] = layers;
  report["zeta"] = zeta;
  report["b"] = b;
  report["o"] = o;
  report["satisfied"] = double(zeta) <= o;
  std::cout << "network: zeta=" << zeta << " o=" << o
            << (double(zeta) <= o ? " (satisfied)" : " (violated)") << "\n";
  write_text_atomic(out_path, report.dump(2) + "\n");
  return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& out_path) {
  dgconv::LoadedCheckpoint lc = dgconv::load_checkpoint(ckpt_path);
  if (lc.net->config.mode == dgconv::ConvMode::DGConv)
    for (auto* l : lc.net->dg_layers())
      if (l->cin() != l->cout()) {
        std::cerr << "export: unsupported non-square DGConv layer (C "
                  << l->cin() << "x" << l->cout() << ")\n";
        return 2;
      }
  dgconv::export_compiled(*lc.net, out_path);
  std::cout << "export: wrote " << out_path << "\n";
  return 0;
}

int cmd_verify() {
  const char* corrupt_env = std::getenv("DGCONV_VERIFY_CORRUPT");
  const auto results = dgconv::run_selfchecks(corrupt_env ? corrupt_env : "");
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << "\n";
    if (!r.pass) ++failed;
  }
  if (failed) {
    std::cout << failed << " check(s) failed\n";
    return 1;
  }
  std::cout << "all " << results.size() << " checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic grouping convolution toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, ckpt, data_spec, analyze_out = "analysis.json";
  double analyze_b = 32.0;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run config path")->required();
  train->add_option("--out", out, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or exported model");
  eval->add_option("--ckpt", ckpt, "checkpoint / export path")->required();
  eval->add_option("--data", data_spec, "dataset spec, e.g. kind=synth10,count=2000")
      ->required();

  auto* analyze = app.add_subcommand("analyze", "report learned grouping of a checkpoint");
  analyze->add_option("--ckpt", ckpt, "checkpoint path")->required();
  analyze->add_option("--out", analyze_out, "analysis json path");
  analyze->add_option("--b", analyze_b, "budget divisor for the o report");

  auto* exp = app.add_subcommand("export", "lower a checkpoint to group convolutions");
  exp->add_option("--ckpt", ckpt, "checkpoint path")->required();
  exp->add_option("--out", out, "output path")->required();

  app.add_subcommand("verify", "run the oracle / invariant suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train")) return cmd_train(config_path, out);
    if (app.got_subcommand("eval")) return cmd_eval(ckpt, data_spec);
    if (app.got_subcommand("analyze")) return cmd_analyze(ckpt, analyze_out, analyze_b);
    if (app.got_subcommand("export")) return cmd_export(ckpt, out);
    if (app.got_subcommand("verify")) return cmd_verify();
  } catch (const dgconv::ConfigParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dgconv::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const dgconv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dgconv::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
