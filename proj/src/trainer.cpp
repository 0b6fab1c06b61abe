#include "intflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "intflow/checkpoint.hpp"
#include "intflow/log.hpp"

namespace intflow {

void TrainConfig::validate() const {
  if (layers.empty()) throw ConfigError("model has no layers");
  BitWidthConfig::checked(widths);
  if (batch < 2) throw ConfigError("batch size must be >= 2");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
  if (policy.u && !policy.g)
    throw ConfigError("quantized updates (u) require quantized gradients (g)");
  FixedHyper::make(momentum, lr, widths);
  int prev = -1;
  for (const LrPoint& p : lr_schedule) {
    if (p.epoch <= prev) throw ConfigError("lr schedule epochs must be strictly increasing");
    prev = p.epoch;
    FixedHyper::make(momentum, p.lr, widths);
  }
  DrSchedule::validated(dr_schedule.points);
  if (dr_schedule.points.front().second != widths.k_gw)
    throw ConfigError("dr schedule must start at k_gw = " + std::to_string(widths.k_gw));
  for (const auto& [e, k] : dr_schedule.points)
    if (k > widths.k_gc) throw ConfigError("dr schedule bit width exceeds k_gc");
}

FixedScalar TrainConfig::lr_at(int epoch) const {
  FixedScalar v = lr;
  for (const LrPoint& p : lr_schedule)
    if (p.epoch <= epoch) v = p.lr;
  return v;
}

OptimizerState OptimizerState::for_model(const Model& model) {
  OptimizerState s;
  s.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerState& l = model.layers[i];
    const bool grid = l.w.grid;
    s.layers[i].w = grid ? ParamOptState::zeros_grid(l.w.shape(), model.widths)
                         : ParamOptState::zeros_fp(l.w.shape());
    if (l.spec.has_bn) {
      s.layers[i].gamma = grid ? ParamOptState::zeros_grid(l.gamma.shape(), model.widths)
                               : ParamOptState::zeros_fp(l.gamma.shape());
      s.layers[i].beta = grid ? ParamOptState::zeros_grid(l.beta.shape(), model.widths)
                              : ParamOptState::zeros_fp(l.beta.shape());
    }
  }
  return s;
}

std::int64_t OptimizerState::saturation_total() const {
  std::int64_t t = 0;
  for (const PerLayer& l : layers)
    t += l.w.saturation_count + l.gamma.saturation_count + l.beta.saturation_count;
  return t;
}

RealTensor sample_weight_init(const LayerSpec& spec, Rng& rng) {
  RealTensor w = RealTensor::zeros(spec.weight_shape());
  const double stddev = 1.0 / std::sqrt(static_cast<double>(spec.fan_in()));
  for (double& v : w.values) v = rng.next_normal(0.0, stddev);
  return w;
}

QTensor init_weights(const LayerSpec& spec, const BitWidthConfig& cfg, Rng& rng) {
  const RealTensor raw = sample_weight_init(spec, rng);
  const double bound = 1.0 - grid_step(cfg.k_wu);
  return to_fixed(clip(q_direct(raw, cfg.k_wu), -bound, bound), cfg.k_wu);
}

namespace {

Param init_scale_param(std::int64_t channels, bool grid, int k_store, double value) {
  Param p;
  if (grid) {
    const double bound = 1.0 - grid_step(k_store);
    const RealTensor v = clip(q_direct(RealTensor::full({channels}, value), k_store), -bound, bound);
    p.grid = true;
    p.q = to_fixed(v, k_store);
  } else {
    p.fp = RealTensor::full({channels}, value);
  }
  return p;
}

void update_param(Param& p, ParamOptState& st, const DualTensor& g, const FixedHyper& hyper,
                  const BitWidthConfig& widths, int k_store) {
  if (p.grid) {
    if (!g.q) throw StateError("quantized update requires a gradient on the k_gc grid");
    const RealTensor acc_pre = momentum_step(st, *g.q, hyper, widths);
    p.q = apply_update(p.q, acc_pre, hyper, widths, k_store);
  } else {
    momentum_step_fp(st.acc_fp, g.real, hyper.mom.value());
    apply_update_fp(p.fp, st.acc_fp, hyper.lr.value());
  }
}

void write_histogram_csv(const std::string& path, const std::vector<double>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "bin_left,bin_right,count\n";
  if (samples.empty()) return;
  constexpr int kBins = 64;
  double lo = samples[0], hi = samples[0];
  for (double v : samples) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / kBins;
  std::vector<std::int64_t> count(kBins, 0);
  for (double v : samples) {
    int b = static_cast<int>((v - lo) / width);
    b = std::min(std::max(b, 0), kBins - 1);
    ++count[b];
  }
  out.precision(17);
  for (int b = 0; b < kBins; ++b)
    out << lo + b * width << ',' << lo + (b + 1) * width << ',' << count[b] << '\n';
}

void append(std::vector<double>& dst, const RealTensor& t) {
  dst.insert(dst.end(), t.values.begin(), t.values.end());
}

std::vector<std::int64_t> batch_indices(const std::vector<std::int64_t>& order, std::int64_t start,
                                        std::int64_t count) {
  return std::vector<std::int64_t>(order.begin() + start, order.begin() + start + count);
}

}  // namespace

Model build_model(const TrainConfig& cfg, Rng& init_rng) {
  Model m;
  m.widths = BitWidthConfig::checked(cfg.widths);
  m.policy = cfg.policy;
  m.epsilon_q = cfg.epsilon;
  m.bn_backward = cfg.bn_backward;
  m.layers.resize(cfg.layers.size());
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    LayerState& l = m.layers[i];
    l.spec = cfg.layers[i];
    const bool grid = l.spec.quantized && cfg.policy.u;
    if (grid) {
      l.w.grid = true;
      l.w.q = init_weights(l.spec, m.widths, init_rng);
    } else {
      l.w.fp = sample_weight_init(l.spec, init_rng);
    }
    if (l.spec.has_bn) {
      l.gamma = init_scale_param(l.spec.n_out, grid, m.widths.k_gammau, 1.0);
      l.beta = init_scale_param(l.spec.n_out, grid, m.widths.k_betau, 0.0);
    }
  }
  return m;
}

double evaluate(Model& model, const Dataset& data, int batch) {
  const std::int64_t n = data.size();
  if (n == 0) return 0.0;
  std::int64_t correct = 0, pos = 0;
  std::vector<std::int64_t> idx;
  while (pos < n) {
    std::int64_t take = std::min<std::int64_t>(batch, n - pos);
    if (n - pos - take == 1) ++take;  // keep the last BN batch >= 2
    idx.resize(static_cast<std::size_t>(take));
    std::iota(idx.begin(), idx.end(), pos);
    const RealTensor logits = inference_forward(model, data.gather(idx));
    const std::vector<int> labels = data.gather_labels(idx);
    const std::int64_t classes = logits.shape[1];
    for (std::int64_t i = 0; i < take; ++i) {
      const double* row = logits.values.data() + i * classes;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      correct += (best == labels[static_cast<std::size_t>(i)]);
    }
    pos += take;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& test_data) {
  cfg.validate();
  const Dataset train_set = train_data.subset(cfg.train_subset);
  const Dataset test_set = test_data.subset(cfg.test_subset);
  if (cfg.epochs > 0 && train_set.size() < cfg.batch)
    throw ConfigError("training set is smaller than one batch");

  const Rng master(cfg.seed);
  Rng init_rng = master.fork(1);
  Rng shuffle_rng = master.fork(2);
  Rng sr_rng = master.fork(3);

  TrainResult res;
  res.model = build_model(cfg, init_rng);
  res.opt = OptimizerState::for_model(res.model);
  Model& model = res.model;

  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  double last_train_acc = 0.0, last_test_acc = 0.0, last_loss = 0.0;
  std::int64_t step = 0;
  std::vector<std::string> kept;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const FixedScalar lr_now = cfg.lr_at(epoch);
    const FixedHyper hyper = FixedHyper::make(cfg.momentum, lr_now, model.widths);
    const int dr_bits = cfg.dr_schedule.bits_at(epoch);
    const std::int64_t dr = std::int64_t(1) << (dr_bits - 1);

    std::vector<std::int64_t> order(static_cast<std::size_t>(train_set.size()));
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t i = train_set.size() - 1; i > 0; --i) {
      const std::int64_t j =
          static_cast<std::int64_t>(shuffle_rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    const std::int64_t steps_per_epoch = train_set.size() / cfg.batch;
    std::vector<GradientSet> grads(model.layers.size());
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const auto idx = batch_indices(order, s * cfg.batch, cfg.batch);
      const RealTensor x = train_set.gather(idx);
      const std::vector<int> labels = train_set.gather_labels(idx);

      const RealTensor logits = model_forward(model, x, true);
      auto [loss, e_top] = loss_and_error(logits, labels);
      last_loss = loss;

      const StepContext ctx{dr_bits, cfg.rounding, &sr_rng};
      ErrorTensor e = ErrorTensor::top(std::move(e_top));
      for (std::int64_t l = static_cast<std::int64_t>(model.layers.size()) - 1; l >= 0; --l)
        e = backward_layer(model.layers[static_cast<std::size_t>(l)], e, model, ctx,
                           grads[static_cast<std::size_t>(l)]);

      if (s == steps_per_epoch - 1) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
          if (!model.layers[l].spec.quantized) continue;
          const RealTensor& pre = grads[l].e3_pre;
          if (pre.numel() == 0) continue;
          res.metrics.coverage.push_back(
              {epoch, static_cast<int>(l),
               coverage_ratio(pre, model.widths.k_e2, model.widths.e2_mode)});
        }
      }

      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        LayerState& layer = model.layers[l];
        OptimizerState::PerLayer& ol = res.opt.layers[l];
        update_param(layer.w, ol.w, grads[l].g_wq, hyper, model.widths, model.widths.k_wu);
        if (layer.spec.has_bn) {
          update_param(layer.gamma, ol.gamma, grads[l].g_gammaq, hyper, model.widths,
                       model.widths.k_gammau);
          update_param(layer.beta, ol.beta, grads[l].g_betaq, hyper, model.widths,
                       model.widths.k_betau);
        }
      }

      ++step;
      if (step % cfg.log_interval == 0)
        res.metrics.rows.push_back({epoch, step, last_loss, last_train_acc, last_test_acc,
                                    lr_now.mantissa, lr_now.resolution_exp, dr,
                                    res.opt.saturation_total()});
    }

    last_train_acc = evaluate(model, train_set, cfg.batch);
    last_test_acc = evaluate(model, test_set, cfg.batch);
    res.metrics.rows.push_back({epoch, step, last_loss, last_train_acc, last_test_acc,
                                lr_now.mantissa, lr_now.resolution_exp, dr,
                                res.opt.saturation_total()});
    log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(last_loss) +
             " train_acc " + std::to_string(last_train_acc) + " test_acc " +
             std::to_string(last_test_acc));

    if (!cfg.out_dir.empty()) {
      Checkpoint ck;
      ck.model = model;
      ck.opt = res.opt;
      ck.sr_state = sr_rng.state();
      ck.shuffle_state = shuffle_rng.state();
      ck.step = step;
      ck.batch = cfg.batch;
      ck.input_shape = train_set.sample_shape();
      const std::string path = cfg.out_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".wgbn";
      save_checkpoint(ck, path);
      kept.push_back(path);
      while (static_cast<int>(kept.size()) > cfg.checkpoint_keep) {
        std::filesystem::remove(kept.front());
        kept.erase(kept.begin());
      }
    }
  }

  res.sr_state = sr_rng.state();
  res.shuffle_state = shuffle_rng.state();
  res.step = step;

  if (!cfg.out_dir.empty()) {
    write_metrics_csv(res.metrics, cfg.out_dir + "/metrics.csv");
    write_coverage_csv(res.metrics, cfg.out_dir + "/coverage.csv");
    if (cfg.histograms && train_set.size() >= 2)
      emit_histograms(model, train_set, cfg.batch, cfg.out_dir, master.fork(4),
                      cfg.dr_schedule.bits_at(std::max(cfg.epochs - 1, 0)), cfg.rounding);
  }
  return res;
}

void emit_histograms(Model& model, const Dataset& data, int batch, const std::string& out_dir,
                     Rng rng, int dr_bits, Rounding rounding) {
  const std::int64_t take = std::min<std::int64_t>(batch, data.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(take));
  std::iota(idx.begin(), idx.end(), 0);
  const RealTensor x = data.gather(idx);
  const std::vector<int> labels = data.gather_labels(idx);

  const RealTensor logits = model_forward(model, x, true);
  auto [loss, e_top] = loss_and_error(logits, labels);
  (void)loss;
  const StepContext ctx{dr_bits, rounding, &rng};
  std::vector<GradientSet> grads(model.layers.size());

  // Collect activation pre/post before backward consumes nothing it needs;
  // the caches stay valid until backward_layer runs.
  std::vector<double> w_pre, w_post, bn_pre, bn_post, a_pre, a_post, g_pre, g_post, e_pre, e_post;
  const Quantizer qz(model.widths);
  for (LayerState& l : model.layers) {
    if (!l.spec.quantized) continue;
    append(w_pre, l.w.real());
    append(w_post, l.cache.w_used.real);
    if (l.spec.has_bn) {
      append(bn_pre, l.cache.x_hat);
      append(bn_post, l.cache.x2.real);
    }
    append(a_pre, l.cache.act_pre);
    a_post.reserve(a_post.size() + l.cache.act_pre.values.size());
    if (model.policy.a) {
      append(a_post, qz.activation(l.cache.act_pre));
    } else {
      append(a_post, l.cache.act_pre);
    }
  }

  ErrorTensor e = ErrorTensor::top(std::move(e_top));
  for (std::int64_t l = static_cast<std::int64_t>(model.layers.size()) - 1; l >= 0; --l)
    e = backward_layer(model.layers[static_cast<std::size_t>(l)], e, model, ctx,
                       grads[static_cast<std::size_t>(l)]);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!model.layers[l].spec.quantized) continue;
    append(g_pre, grads[l].g_w);
    append(g_post, grads[l].g_wq.real);
    append(e_pre, grads[l].e3_pre);
    append(e_post, grads[l].e3_post);
  }

  write_histogram_csv(out_dir + "/hist_w_pre.csv", w_pre);
  write_histogram_csv(out_dir + "/hist_w_post.csv", w_post);
  write_histogram_csv(out_dir + "/hist_bn_pre.csv", bn_pre);
  write_histogram_csv(out_dir + "/hist_bn_post.csv", bn_post);
  write_histogram_csv(out_dir + "/hist_a_pre.csv", a_pre);
  write_histogram_csv(out_dir + "/hist_a_post.csv", a_post);
  write_histogram_csv(out_dir + "/hist_g_pre.csv", g_pre);
  write_histogram_csv(out_dir + "/hist_g_post.csv", g_post);
  write_histogram_csv(out_dir + "/hist_e_pre.csv", e_pre);
  write_histogram_csv(out_dir + "/hist_e_post.csv", e_post);
}

std::int64_t MemoryReport::total_bits() const {
  std::int64_t t = 0;
  for (const Row& r : rows) t += r.total_bits();
  return t;
}

MemoryReport memory_report(const Model& model, const Shape& input_shape) {
  MemoryReport rep;
  Shape cur = input_shape;
  const BitWidthConfig& k = model.widths;
  const QuantPolicy& pol = model.policy;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& s = model.layers[i].spec;
    const std::string base = "layer" + std::to_string(i);
    const bool q = s.quantized;
    const std::int64_t n_w = shape_numel(s.weight_shape());

    if (s.kind == LayerKind::dense) {
      if (shape_numel(cur) != s.n_in)
        throw ShapeError("memory_report: dense input " + shape_str(cur) + " has " +
                         std::to_string(shape_numel(cur)) + " values, expected " +
                         std::to_string(s.n_in));
      cur = {s.n_out};
    } else {
      if (cur.size() != 3 || cur[0] != s.n_in)
        throw ShapeError("memory_report: conv input must be [C,H,W] with C = " +
                         std::to_string(s.n_in) + ", got " + shape_str(cur));
      cur = {s.n_out, conv_out_dim(cur[1], s.kernel, s.stride, s.pad),
             conv_out_dim(cur[2], s.kernel, s.stride, s.pad)};
    }
    const std::int64_t n_a = shape_numel(cur);

    const int w_store = q && pol.u ? k.k_wu : 32;
    const int w_compute = q && pol.w ? k.k_w : 32;
    const int a_bits = q && pol.a ? k.k_a : 32;
    rep.rows.push_back({base + ".w.store", n_w, w_store});
    rep.rows.push_back({base + ".w.compute", n_w, w_compute});
    rep.rows.push_back({base + ".act", n_a, a_bits});
    rep.inference_bits += n_w * w_compute + n_a * a_bits;
    rep.inference_bits_fp32 += 32 * (n_w + n_a);

    if (s.has_bn) {
      const bool qbn = q && pol.bn;
      rep.rows.push_back({base + ".gamma", s.n_out, q && pol.u ? k.k_gammau : 32});
      rep.rows.push_back({base + ".beta", s.n_out, q && pol.u ? k.k_betau : 32});
      rep.rows.push_back({base + ".mu", s.n_out, qbn ? k.k_mu : 32});
      rep.rows.push_back({base + ".sigma", s.n_out, qbn ? k.k_sigma : 32});
    }
    const int acc_bits = q && pol.u ? k.k_acc : 32;
    rep.rows.push_back({base + ".acc_w", n_w, acc_bits});
    if (s.has_bn) {
      rep.rows.push_back({base + ".acc_gamma", s.n_out, acc_bits});
      rep.rows.push_back({base + ".acc_beta", s.n_out, acc_bits});
    }
  }
  rep.inference_ratio32 =
      static_cast<double>(rep.inference_bits_fp32) / static_cast<double>(rep.inference_bits);
  return rep;
}

void write_metrics_csv(const Metrics& metrics, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "epoch,step,loss,train_acc,test_acc,lr_mantissa,lr_exp,dr,acc_saturation\n";
  out.precision(17);
  for (const MetricsRow& r : metrics.rows)
    out << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.train_acc << ',' << r.test_acc
        << ',' << r.lr_mantissa << ',' << r.lr_exp << ',' << r.dr << ',' << r.acc_saturation
        << '\n';
}

void write_coverage_csv(const Metrics& metrics, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "epoch,layer,coverage\n";
  out.precision(17);
  for (const CoverageRow& r : metrics.coverage)
    out << r.epoch << ',' << r.layer << ',' << r.coverage << '\n';
}

}  // namespace intflow
