#include "intflow/config.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace intflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  std::string value;
  int line = 0;
};

std::int64_t parse_int(const Entry& e, const std::string& key) {
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigParseError(e.line, "expected an integer for " + key + ", got '" + e.value + "'");
  }
}

FixedScalar parse_fixed(const std::string& text, int line, const std::string& key) {
  const auto star = text.find("*2^");
  if (star == std::string::npos)
    throw ConfigParseError(line, key + " must use the exact form mantissa*2^exp (e.g. 26*2^-9), " +
                                     "got '" + text + "'");
  try {
    std::size_t p1 = 0, p2 = 0;
    const std::string mant = trim(text.substr(0, star));
    const std::string expo = trim(text.substr(star + 3));
    const std::int64_t m = std::stoll(mant, &p1);
    const int e = std::stoi(expo, &p2);
    if (p1 != mant.size() || p2 != expo.size()) throw std::invalid_argument("");
    return FixedScalar{m, e};
  } catch (const std::exception&) {
    throw ConfigParseError(line, "malformed fixed-point literal '" + text + "' for " + key);
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (out.empty()) out.push_back("");
  return out;
}

LayerSpec parse_layer(const Entry& e) {
  const std::vector<std::string> tok = [&] {
    std::vector<std::string> t;
    std::stringstream ss(e.value);
    std::string w;
    while (ss >> w) t.push_back(w);
    return t;
  }();
  if (tok.empty()) throw ConfigParseError(e.line, "empty layer definition");
  bool has_bn = true, quantized = true, relu = true;
  std::size_t nums_end = tok.size();
  for (std::size_t i = 1; i < tok.size(); ++i) {
    if (tok[i] == "nobn" || tok[i] == "norelu" || tok[i] == "fp") {
      nums_end = std::min(nums_end, i);
      if (tok[i] == "nobn") has_bn = false;
      if (tok[i] == "norelu") relu = false;
      if (tok[i] == "fp") quantized = false;
    }
  }
  auto num = [&](std::size_t i) -> std::int64_t {
    try {
      return std::stoll(tok[i]);
    } catch (const std::exception&) {
      throw ConfigParseError(e.line, "expected a number in layer definition, got '" + tok[i] + "'");
    }
  };
  try {
    if (tok[0] == "dense") {
      if (nums_end != 3)
        throw ConfigParseError(e.line, "dense layer needs: dense IN OUT [nobn] [norelu] [fp]");
      return LayerSpec::dense(num(1), num(2), has_bn, quantized, relu);
    }
    if (tok[0] == "conv") {
      if (nums_end != 6)
        throw ConfigParseError(e.line, "conv layer needs: conv IN OUT K S P [nobn] [norelu] [fp]");
      return LayerSpec::conv(num(1), num(2), static_cast<int>(num(3)), static_cast<int>(num(4)),
                             static_cast<int>(num(5)), has_bn, quantized, relu);
    }
  } catch (const ConfigParseError&) {
    throw;
  } catch (const ConfigError& err) {
    throw ConfigParseError(e.line, err.what());
  }
  throw ConfigParseError(e.line, "unknown layer kind '" + tok[0] + "' (dense or conv)");
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  std::map<std::string, Entry> kv;
  std::map<int, Entry> layer_entries;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigParseError(lineno, "expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigParseError(lineno, "missing key");
    if (key.rfind("layer.", 0) == 0) {
      int idx = 0;
      try {
        idx = std::stoi(key.substr(6));
      } catch (const std::exception&) {
        throw ConfigParseError(lineno, "bad layer index in '" + key + "'");
      }
      if (!layer_entries.emplace(idx, Entry{value, lineno}).second)
        throw ConfigParseError(lineno, "duplicate key " + key);
      continue;
    }
    if (!kv.emplace(key, Entry{value, lineno}).second)
      throw ConfigParseError(lineno, "duplicate key " + key);
  }

  static const char* known[] = {
      "k_w",        "k_a",       "k_bn",        "k_mu",       "k_sigma",     "k_gamma",
      "k_beta",     "k_e1",      "k_e2",        "k_gw",       "k_mom",       "k_acc",
      "k_lr",       "k_gc",      "k_wu",        "e2_mode",    "quantize",    "bn_backward",
      "rounding",   "momentum",  "lr",          "lr_schedule", "dr_schedule", "epsilon",
      "batch",      "epochs",    "seed",        "log_interval", "train_subset", "test_subset",
      "histograms", "checkpoint_keep", "train_images", "train_labels", "test_images",
      "test_labels", "out_dir"};
  for (const auto& [key, entry] : kv) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&key](const char* k) { return key == k; }) == std::end(known))
      throw ConfigParseError(entry.line, "unknown key '" + key + "'");
  }

  TrainConfig cfg;
  auto get_int = [&kv](const char* key, std::int64_t dflt) -> std::int64_t {
    const auto it = kv.find(key);
    return it == kv.end() ? dflt : parse_int(it->second, key);
  };

  BitWidthConfig w;
  const auto it_mode = kv.find("e2_mode");
  if (it_mode != kv.end()) {
    if (it_mode->second.value == "flag")
      w.e2_mode = E2Mode::flag;
    else if (it_mode->second.value == "plain")
      w.e2_mode = E2Mode::plain_shift;
    else
      throw ConfigParseError(it_mode->second.line, "e2_mode must be flag or plain");
  }
  w.k_e2 = w.e2_mode == E2Mode::flag ? 8 : 16;
  w.k_w = static_cast<int>(get_int("k_w", w.k_w));
  w.k_a = static_cast<int>(get_int("k_a", w.k_a));
  w.k_bn = static_cast<int>(get_int("k_bn", w.k_bn));
  w.k_mu = static_cast<int>(get_int("k_mu", w.k_mu));
  w.k_sigma = static_cast<int>(get_int("k_sigma", w.k_sigma));
  w.k_gamma = static_cast<int>(get_int("k_gamma", w.k_gamma));
  w.k_beta = static_cast<int>(get_int("k_beta", w.k_beta));
  w.k_e1 = static_cast<int>(get_int("k_e1", w.k_e1));
  w.k_e2 = static_cast<int>(get_int("k_e2", w.k_e2));
  w.k_gw = static_cast<int>(get_int("k_gw", w.k_gw));
  w.k_mom = static_cast<int>(get_int("k_mom", w.k_mom));
  w.k_acc = static_cast<int>(get_int("k_acc", w.k_acc));
  w.k_lr = static_cast<int>(get_int("k_lr", w.k_lr));
  w.k_gc = static_cast<int>(get_int("k_gc", w.k_mom + w.k_acc - 1));
  w.k_ggamma = w.k_gbeta = w.k_gc;
  w.k_wu = static_cast<int>(get_int("k_wu", w.k_gc + w.k_lr - 1));
  w.k_gammau = w.k_betau = w.k_wu;
  cfg.widths = w;

  if (const auto it = kv.find("quantize"); it != kv.end()) {
    const std::string& v = it->second.value;
    if (v == "all") {
      cfg.policy = QuantPolicy::all();
    } else if (v == "none") {
      cfg.policy = QuantPolicy::none();
    } else {
      cfg.policy = QuantPolicy::none();
      for (const std::string& part : split(v, ',')) {
        if (part == "w")
          cfg.policy.w = true;
        else if (part == "a")
          cfg.policy.a = true;
        else if (part == "bn")
          cfg.policy.bn = true;
        else if (part == "g")
          cfg.policy.g = true;
        else if (part == "e1")
          cfg.policy.e1 = true;
        else if (part == "e2")
          cfg.policy.e2 = true;
        else if (part == "u")
          cfg.policy.u = true;
        else
          throw ConfigParseError(it->second.line, "unknown quantize flag '" + part + "'");
      }
    }
  }

  if (const auto it = kv.find("bn_backward"); it != kv.end()) {
    if (it->second.value == "frozen")
      cfg.bn_backward = BnBackwardMode::frozen;
    else if (it->second.value == "full")
      cfg.bn_backward = BnBackwardMode::full;
    else
      throw ConfigParseError(it->second.line, "bn_backward must be frozen or full");
  }
  if (const auto it = kv.find("rounding"); it != kv.end()) {
    if (it->second.value == "stochastic")
      cfg.rounding = Rounding::stochastic;
    else if (it->second.value == "nearest")
      cfg.rounding = Rounding::nearest;
    else
      throw ConfigParseError(it->second.line, "rounding must be stochastic or nearest");
  }

  if (const auto it = kv.find("momentum"); it != kv.end()) {
    cfg.momentum = parse_fixed(it->second.value, it->second.line, "momentum");
    if (!cfg.momentum.representable_in(w.k_mom))
      throw ConfigParseError(it->second.line, "momentum is off the " + std::to_string(w.k_mom) +
                                                  "-bit grid");
  }
  if (const auto it = kv.find("lr"); it != kv.end()) {
    cfg.lr = parse_fixed(it->second.value, it->second.line, "lr");
    if (!cfg.lr.representable_in(w.k_lr))
      throw ConfigParseError(it->second.line,
                             "lr is off the " + std::to_string(w.k_lr) + "-bit grid");
  }
  if (const auto it = kv.find("epsilon"); it != kv.end())
    cfg.epsilon = parse_fixed(it->second.value, it->second.line, "epsilon");

  if (const auto it = kv.find("lr_schedule"); it != kv.end()) {
    for (const std::string& part : split(it->second.value, ',')) {
      const auto colon = part.find(':');
      if (colon == std::string::npos)
        throw ConfigParseError(it->second.line, "lr_schedule entries are epoch:mantissa*2^exp");
      LrPoint p;
      try {
        p.epoch = std::stoi(part.substr(0, colon));
      } catch (const std::exception&) {
        throw ConfigParseError(it->second.line, "bad epoch in lr_schedule entry '" + part + "'");
      }
      p.lr = parse_fixed(part.substr(colon + 1), it->second.line, "lr_schedule");
      if (!p.lr.representable_in(w.k_lr))
        throw ConfigParseError(it->second.line, "scheduled lr '" + part + "' is off the " +
                                                    std::to_string(w.k_lr) + "-bit grid");
      cfg.lr_schedule.push_back(p);
    }
  }

  if (const auto it = kv.find("dr_schedule"); it != kv.end()) {
    std::vector<std::pair<int, int>> pts;
    for (const std::string& part : split(it->second.value, ',')) {
      const auto colon = part.find(':');
      if (colon == std::string::npos)
        throw ConfigParseError(it->second.line, "dr_schedule entries are epoch:bits");
      try {
        pts.emplace_back(std::stoi(part.substr(0, colon)), std::stoi(part.substr(colon + 1)));
      } catch (const std::exception&) {
        throw ConfigParseError(it->second.line, "bad dr_schedule entry '" + part + "'");
      }
    }
    try {
      cfg.dr_schedule = DrSchedule::validated(std::move(pts));
    } catch (const ConfigError& e) {
      throw ConfigParseError(it->second.line, e.what());
    }
  } else {
    cfg.dr_schedule = DrSchedule::single(w.k_gw);
  }

  cfg.batch = static_cast<int>(get_int("batch", cfg.batch));
  cfg.epochs = static_cast<int>(get_int("epochs", cfg.epochs));
  cfg.seed = static_cast<std::uint64_t>(get_int("seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.log_interval = static_cast<int>(get_int("log_interval", cfg.log_interval));
  cfg.train_subset = get_int("train_subset", cfg.train_subset);
  cfg.test_subset = get_int("test_subset", cfg.test_subset);
  cfg.histograms = get_int("histograms", cfg.histograms ? 1 : 0) != 0;
  cfg.checkpoint_keep = static_cast<int>(get_int("checkpoint_keep", cfg.checkpoint_keep));

  auto get_str = [&kv](const char* key) -> std::string {
    const auto it = kv.find(key);
    return it == kv.end() ? "" : it->second.value;
  };
  cfg.train_images = get_str("train_images");
  cfg.train_labels = get_str("train_labels");
  cfg.test_images = get_str("test_images");
  cfg.test_labels = get_str("test_labels");
  cfg.out_dir = get_str("out_dir");

  if (layer_entries.empty()) throw ConfigParseError(lineno, "no layer.<i> entries");
  int expect = 0;
  for (const auto& [idx, entry] : layer_entries) {
    if (idx != expect)
      throw ConfigParseError(entry.line, "layer indices must be contiguous from 0; found layer." +
                                             std::to_string(idx));
    ++expect;
    cfg.layers.push_back(parse_layer(entry));
  }
  return cfg;
}

namespace {

std::string fixed_str(const FixedScalar& f) {
  return std::to_string(f.mantissa) + "*2^" + std::to_string(f.resolution_exp);
}

}  // namespace

std::string render_config(const TrainConfig& cfg) {
  std::ostringstream out;
  const BitWidthConfig& w = cfg.widths;
  out << "k_w = " << w.k_w << "\nk_a = " << w.k_a << "\nk_bn = " << w.k_bn
      << "\nk_mu = " << w.k_mu << "\nk_sigma = " << w.k_sigma << "\nk_gamma = " << w.k_gamma
      << "\nk_beta = " << w.k_beta << "\nk_e1 = " << w.k_e1 << "\nk_e2 = " << w.k_e2
      << "\nk_gw = " << w.k_gw << "\nk_mom = " << w.k_mom << "\nk_acc = " << w.k_acc
      << "\nk_lr = " << w.k_lr << "\nk_gc = " << w.k_gc << "\nk_wu = " << w.k_wu << "\n";
  out << "e2_mode = " << (w.e2_mode == E2Mode::flag ? "flag" : "plain") << "\n";
  const QuantPolicy& p = cfg.policy;
  out << "quantize = ";
  if (p.w && p.a && p.bn && p.g && p.e1 && p.e2 && p.u) {
    out << "all";
  } else if (!(p.w || p.a || p.bn || p.g || p.e1 || p.e2 || p.u)) {
    out << "none";
  } else {
    bool first = true;
    auto item = [&](bool on, const char* name) {
      if (!on) return;
      if (!first) out << ',';
      out << name;
      first = false;
    };
    item(p.w, "w");
    item(p.a, "a");
    item(p.bn, "bn");
    item(p.g, "g");
    item(p.e1, "e1");
    item(p.e2, "e2");
    item(p.u, "u");
  }
  out << "\n";
  out << "bn_backward = " << (cfg.bn_backward == BnBackwardMode::frozen ? "frozen" : "full")
      << "\n";
  out << "rounding = " << (cfg.rounding == Rounding::stochastic ? "stochastic" : "nearest")
      << "\n";
  out << "momentum = " << fixed_str(cfg.momentum) << "\nlr = " << fixed_str(cfg.lr) << "\n";
  if (!cfg.lr_schedule.empty()) {
    out << "lr_schedule = ";
    for (std::size_t i = 0; i < cfg.lr_schedule.size(); ++i)
      out << (i ? "," : "") << cfg.lr_schedule[i].epoch << ':' << fixed_str(cfg.lr_schedule[i].lr);
    out << "\n";
  }
  out << "dr_schedule = ";
  for (std::size_t i = 0; i < cfg.dr_schedule.points.size(); ++i)
    out << (i ? "," : "") << cfg.dr_schedule.points[i].first << ':'
        << cfg.dr_schedule.points[i].second;
  out << "\n";
  out << "epsilon = " << fixed_str(cfg.epsilon) << "\n";
  out << "batch = " << cfg.batch << "\nepochs = " << cfg.epochs << "\nseed = " << cfg.seed
      << "\nlog_interval = " << cfg.log_interval << "\ntrain_subset = " << cfg.train_subset
      << "\ntest_subset = " << cfg.test_subset << "\nhistograms = " << (cfg.histograms ? 1 : 0)
      << "\ncheckpoint_keep = " << cfg.checkpoint_keep << "\n";
  if (!cfg.train_images.empty()) out << "train_images = " << cfg.train_images << "\n";
  if (!cfg.train_labels.empty()) out << "train_labels = " << cfg.train_labels << "\n";
  if (!cfg.test_images.empty()) out << "test_images = " << cfg.test_images << "\n";
  if (!cfg.test_labels.empty()) out << "test_labels = " << cfg.test_labels << "\n";
  if (!cfg.out_dir.empty()) out << "out_dir = " << cfg.out_dir << "\n";
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& s = cfg.layers[i];
    out << "layer." << i << " = ";
    if (s.kind == LayerKind::dense) {
      out << "dense " << s.n_in << ' ' << s.n_out;
    } else {
      out << "conv " << s.n_in << ' ' << s.n_out << ' ' << s.kernel << ' ' << s.stride << ' '
          << s.pad;
    }
    if (!s.has_bn) out << " nobn";
    if (!s.relu) out << " norelu";
    if (!s.quantized) out << " fp";
    out << "\n";
  }
  return out.str();
}

}  // namespace intflow
