// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dgconv/complexity.hpp"
#include "dgconv/data.hpp"
#include "dgconv/model.hpp"
#include "dgconv/trainer.hpp"

namespace dgconv {

/// Config-file error with source location.
struct ConfigParseError : std::runtime_error {
  ConfigParseError(const std::string& what, int line, int col)
      : std::runtime_error(what + " (line " + std::to_string(line) + ", column " +
                           std::to_string(col) + ")"),
        line(line),
        col(col) {}
  int line, col;
};

/// Everything one training run needs. Parsed from a flat sectioned key=value
/// file; unknown sections or keys are rejected with their location.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  ComplexityBudget budget;
  DatasetHandle data;
  int test_count = 2000;
  std::string out_dir;
};

inline RunConfig parse_run_config_text(const std::string& text) {
  RunConfig rc;
  std::istringstream ss(text);
  std::string line;
  std::string section;
  int lineno = 0;
  bool saw_model = false, saw_train = false, saw_budget = false, saw_data = false;

  auto ints = [&](const std::string& s, int col) {
    std::vector<int> v;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        v.push_back(std::stoi(tok));
      } catch (...) {
        throw ConfigParseError("expected integer list, got '" + s + "'", lineno, col);
      }
    }
    return v;
  };

  while (std::getline(ss, line)) {
    ++lineno;
    // strip comment and whitespace
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string trimmed = line.substr(first, last - first + 1);

    if (trimmed.front() == '[') {
      if (trimmed.back() != ']')
        throw ConfigParseError("unterminated section header", lineno, int(first) + 1);
      section = trimmed.substr(1, trimmed.size() - 2);
      if (section == "model")
        saw_model = true;
      else if (section == "train")
        saw_train = true;
      else if (section == "budget")
        saw_budget = true;
      else if (section == "data")
        saw_data = true;
      else if (section != "output")
        throw ConfigParseError("unknown section '" + section + "'", lineno,
                               int(first) + 1);
      continue;
    }

    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ConfigParseError("expected 'key = value'", lineno, int(first) + 1);
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    const std::string key = strip(trimmed.substr(0, eq));
    const std::string val = strip(trimmed.substr(eq + 1));
    const int col = int(first) + 1;
    auto to_int = [&](const std::string& s) {
      try {
        return std::stoi(s);
      } catch (...) {
        throw ConfigParseError("expected integer, got '" + s + "'", lineno, col);
      }
    };
    auto to_double = [&](const std::string& s) {
      try {
        return std::stod(s);
      } catch (...) {
        throw ConfigParseError("expected number, got '" + s + "'", lineno, col);
      }
    };
    auto to_bool = [&](const std::string& s) {
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
      throw ConfigParseError("expected true/false, got '" + s + "'", lineno, col);
    };

    if (section == "model") {
      if (key == "widths")
        rc.model.widths = ints(val, col);
      else if (key == "blocks")
        rc.model.blocks = ints(val, col);
      else if (key == "expansion")
        rc.model.expansion = to_int(val);
      else if (key == "stem")
        rc.model.stem_channels = to_int(val);
      else if (key == "classes")
        rc.model.classes = to_int(val);
      else if (key == "image_size")
        rc.model.image_size = to_int(val);
      else if (key == "in_channels")
        rc.model.in_channels = to_int(val);
      else if (key == "fixed_groups")
        rc.model.fixed_groups = to_int(val);
      else if (key == "mode") {
        if (val == "dense")
          rc.model.mode = ConvMode::Dense;
        else if (val == "fixed-group")
          rc.model.mode = ConvMode::FixedGroup;
        else if (val == "dgconv")
          rc.model.mode = ConvMode::DGConv;
        else
          throw ConfigParseError("unknown mode '" + val + "'", lineno, col);
      } else
        throw ConfigParseError("unknown key '" + key + "' in [model]", lineno, col);
    } else if (section == "train") {
      if (key == "epochs")
        rc.train.epochs = to_int(val);
      else if (key == "batch")
        rc.train.batch = to_int(val);
      else if (key == "base_lr")
        rc.train.base_lr = to_double(val);
      else if (key == "momentum")
        rc.train.momentum = to_double(val);
      else if (key == "weight_decay")
        rc.train.weight_decay = to_double(val);
      else if (key == "seed")
        rc.train.seed = static_cast<std::uint64_t>(to_int(val));
      else
        throw ConfigParseError("unknown key '" + key + "' in [train]", lineno, col);
    } else if (section == "budget") {
      if (key == "b")
        rc.budget.b = to_double(val);
      else if (key == "alpha")
        rc.budget.alpha = to_double(val);
      else
        throw ConfigParseError("unknown key '" + key + "' in [budget]", lineno, col);
    } else if (section == "data") {
      if (key == "kind")
        rc.data.kind = val;
      else if (key == "path")
        rc.data.path = val;
      else if (key == "labels_path")
        rc.data.labels_path = val;
      else if (key == "subset")
        rc.data.subset = to_int(val);
      else if (key == "count")
        rc.data.synth_count = to_int(val);
      else if (key == "test_count")
        rc.test_count = to_int(val);
      else if (key == "augment")
        rc.data.augment = to_bool(val);
      else
        throw ConfigParseError("unknown key '" + key + "' in [data]", lineno, col);
    } else if (section == "output") {
      if (key == "dir")
        rc.out_dir = val;
      else
        throw ConfigParseError("unknown key '" + key + "' in [output]", lineno, col);
    } else {
      throw ConfigParseError("key outside any section", lineno, col);
    }
  }
  if (!saw_model || !saw_train || !saw_budget || !saw_data)
    throw ConfigParseError(
        "missing required section(s): need [model], [train], [budget], [data]", lineno,
        1);
  if (rc.budget.alpha >= 0)
    throw ConfigParseError("budget alpha must be negative", lineno, 1);
  return rc;
}

inline RunConfig parse_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigParseError("cannot open config file " + path, 0, 0);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config_text(ss.str());
}

}  // namespace dgconv
