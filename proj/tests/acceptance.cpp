// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any hard criterion fails; the dataset-scale criterion only reports.

#include "astgcn/pipeline.hpp"
#include "gradcheck.hpp"

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace astgcn;
using graph::Matrix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool soft = false;
};

std::string fmt_e(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor normal(Shape s, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::normal(std::move(s), 0.0, stddev, rng);
}

std::string scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("astgcn_acceptance_" + name);
  fs::remove_all(p);
  return p.string();
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_correctness() {
  auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = 4;
  model::ModelConfig mc;
  mc.num_nodes = n;
  mc.input_length = 12;
  mc.input_dim = 2;
  model::AstGcn net(mc, 1);
  // Unit-scale embeddings keep e1·e2ᵀ away from the relu kink.
  auto adj = graph::AdjacencyMatrix::eaam(normal({n, 10}, 2), normal({n, 10}, 3));
  Tensor x = normal({2, 12, n, 2}, 4);
  const double h = 1e-5;
  const std::size_t sample = 24;

  std::vector<Tensor> all{x};
  for (const auto& p : train::trainable_parameters(net, adj)) all.push_back(p.tensor);
  auto end_to_end = oracle::grad_check([&] { return oracle::random_readout(net.forward(x, adj), 5); }, all, h, sample);

  // Per layer, each on its own inputs and parameters.
  double layer_max = 0.0;
  std::string layer_worst;
  auto layer = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
    auto r = oracle::grad_check([&] { return oracle::random_readout(f(), 6); }, std::move(inputs), h, sample);
    if (r.max_rel_error >= layer_max) {
      layer_max = r.max_rel_error;
      layer_worst = name;
    }
  };
  graph::Matrix w = graph::Matrix::Zero(n, n);
  w << 0, 0.8, 0.3, 0, 0.8, 0, 0.5, 0.2, 0.3, 0.5, 0, 0.9, 0, 0.2, 0.9, 0;
  auto basis = graph::chebyshev_basis(graph::to_tensor(w), mc.cheb_order);
  const auto& b0 = net.blocks()[0];
  const auto& b1 = net.blocks()[1];
  Tensor x0 = normal({2, 12, n, 2}, 7);
  Tensor h1 = normal({2, 10, n, 64}, 8);
  Tensor h2 = normal({2, 10, n, 16}, 9);
  Tensor h3 = normal({2, 8, n, 128}, 10);
  Tensor hh = normal({2, 4, n, 128}, 11);
  layer("tgc", [&] { return b0.tgc1.forward(x0); }, {x0, b0.tgc1.weight, b0.tgc1.bias});
  layer("sgc", [&] { return b0.sgc.forward(h1, basis); }, {h1, b0.sgc.theta, b0.sgc.bias});
  layer("tgc-narrow", [&] { return b0.tgc2.forward(h2); }, {h2, b0.tgc2.weight, b0.tgc2.bias});
  layer("tgc-projection", [&] { return b1.tgc1.forward(h3); },
        {h3, b1.tgc1.weight, b1.tgc1.bias, b1.tgc1.projection});
  Tensor a1 = normal({2, 10, n, 64}, 12), a2 = normal({2, 8, n, 64}, 13);
  layer("tam", [&] { return model::temporal_attention(a1, a2); }, {a1, a2});
  Tensor bx = normal({2, 12, n, 2}, 14);
  layer("block", [&] { return b0.forward(bx, basis).output; },
        {bx, b0.tgc1.weight, b0.sgc.theta, b0.tgc2.weight});
  const auto& head = net.head();
  layer("head", [&] { return head.forward(hh); },
        {hh, head.collapse.weight, head.collapse.bias, head.weight, head.bias});
  Tensor e1 = normal({n, 10}, 15), e2 = normal({n, 10}, 16);
  layer("eaam", [&] { return graph::eaam_weights(e1, e2); }, {e1, e2});
  Tensor wt = graph::to_tensor(w);
  layer("chebyshev", [&] { return graph::chebyshev_basis(wt, 3).terms[2]; }, {wt});

  double secs = seconds_since(t0);
  Outcome o;
  o.pass = end_to_end.max_rel_error < 1e-5 && layer_max < 1e-6 && secs < 60.0;
  o.detail = "end-to-end max rel " + fmt_e(end_to_end.max_rel_error) + " (< 1e-5, " +
             std::to_string(end_to_end.checked) + " entries), per-layer max " + fmt_e(layer_max) + " [" +
             layer_worst + "] (< 1e-6), " + fmt_e(secs) + " s (< 60 s)";
  return o;
}

// ---- 2 -------------------------------------------------------------------

Outcome st_gcn_equivalence() {
  const std::size_t n = 6;
  model::ModelConfig mc;
  mc.num_nodes = n;
  mc.input_dim = 3;
  mc.attention = false;
  model::AstGcn net(mc, 21);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  graph::Matrix w = graph::Matrix::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) w(i, j) = w(j, i) = u(rng);
  auto basis = graph::chebyshev_basis(graph::to_tensor(w), mc.cheb_order);
  std::size_t equal = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Tensor x = normal({1, 12, n, 3}, 100 + s);
    // Plain ST-GCN: TGC -> SGC -> TGC per block, then the head.
    Tensor h = x;
    for (const auto& blk : net.blocks()) h = blk.tgc2.forward(blk.sgc.forward(blk.tgc1.forward(h), basis));
    Tensor ref = net.head().forward(h);
    Tensor y = net.forward(x, basis);
    if (std::equal(y.values().begin(), y.values().end(), ref.values().begin(), ref.values().end())) ++equal;
  }
  return {equal == 100, std::to_string(equal) + "/100 random inputs bitwise equal"};
}

// ---- 3 -------------------------------------------------------------------

// Normalized Laplacian with identity rows for isolated nodes, by loops.
Matrix brute_laplacian(const Matrix& w) {
  Eigen::Index n = w.rows();
  Matrix lap = Matrix::Identity(n, n);
  std::vector<double> deg(n, 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) deg[i] += w(i, j);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (deg[i] > 0 && deg[j] > 0) lap(i, j) -= w(i, j) / std::sqrt(deg[i] * deg[j]);
  return lap;
}

Outcome graph_conv_oracle() {
  double worst = 0.0, worst_lambda = 0.0;
  std::size_t graphs = 0, cases = 0;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (std::size_t n = 1; n <= 5; ++n) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    for (std::size_t mask = 0; mask < (std::size_t{1} << pairs.size()); ++mask) {
      Matrix w = Matrix::Zero(n, n);
      for (std::size_t e = 0; e < pairs.size(); ++e)
        if (mask >> e & 1) w(pairs[e].first, pairs[e].second) = w(pairs[e].second, pairs[e].first) = u(rng);
      ++graphs;
      Matrix lap = brute_laplacian(w);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
      for (std::size_t ks = 1; ks <= 3; ++ks) {
        auto basis = graph::chebyshev_basis(graph::to_tensor(w), ks);
        if (ks > 1) worst_lambda = std::max(worst_lambda, std::fabs(basis.lambda_max - es.eigenvalues().maxCoeff()));
        // Chebyshev terms by the recurrence on the brute-force Laplacian.
        Matrix lt = 2.0 / basis.lambda_max * lap - Matrix::Identity(n, n);
        std::vector<Matrix> t{Matrix::Identity(n, n)};
        if (ks > 1) t.push_back(lt);
        if (ks > 2) t.push_back(2.0 * lt * t[1] - t[0]);

        std::mt19937_64 lr(1000 + cases);
        model::SpatialGraphConv sgc(2, 3, ks, lr);
        for (double& b : sgc.bias.mutable_values()) b = 0.1;
        Tensor x = normal({2, 2, n, 2}, 2000 + cases);
        Tensor y = sgc.forward(x, basis);
        for (std::size_t b = 0; b < 2; ++b)
          for (std::size_t tt = 0; tt < 2; ++tt)
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t o = 0; o < 3; ++o) {
                double s = sgc.bias.values()[o];
                for (std::size_t k = 0; k < ks; ++k)
                  for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t c = 0; c < 2; ++c)
                      s += t[k](i, j) * x.at({b, tt, j, c}) * sgc.theta.at({k, c, o});
                worst = std::max(worst, std::fabs(std::max(s, 0.0) - y.at({b, tt, i, o})));
              }
        ++cases;
      }
    }
  }
  Outcome o;
  o.pass = worst < 1e-10 && worst_lambda < 1e-6;
  o.detail = std::to_string(graphs) + " graphs (every edge pattern, N <= 5) x Ks 1..3: max abs diff " + fmt_e(worst) +
             " (< 1e-10); lambda_max vs eigensolver " + fmt_e(worst_lambda) + " (< 1e-6)";
  return o;
}

// ---- 4 -------------------------------------------------------------------

Outcome adjacency_invariants() {
  std::vector<std::string> bad;
  double row_err = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::size_t n = 3 + s % 6;
    Tensor w = graph::eaam_weights(normal({n, 10}, 300 + s), normal({n, 10}, 400 + s));
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        r += w.at({i, j});
        if (w.at({i, j}) < 0.0) bad.push_back("negative EAAM entry");
      }
      row_err = std::max(row_err, std::fabs(r - 1.0));
    }
  }
  if (row_err > 1e-6) bad.push_back("EAAM row sums off by " + fmt_e(row_err));

  // Gaussian kernel against brute force, with the two boundary pairs.
  const double sigma = 0.2, eps = 0.368;
  const std::size_t n = 6;
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 0.6);
  Matrix d = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d(i, j) = d(j, i) = u(rng);
  d(0, 1) = d(1, 0) = std::sqrt(0.19);
  d(2, 3) = d(3, 2) = std::sqrt(0.21);
  Matrix g = graph::gaussian_kernel(d, sigma, eps);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double v = std::exp(-d(i, j) * d(i, j) / sigma);
      double expect = (i != j && v >= eps) ? v : 0.0;
      if (std::fabs(g(i, j) - expect) > 1e-15) ++mismatches;
    }
  if (mismatches) bad.push_back(std::to_string(mismatches) + " kernel entries differ from brute force");
  if (!(std::fabs(g(0, 1) - std::exp(-0.95)) < 1e-15)) bad.push_back("exp(-0.95) pair not kept");
  if (g(2, 3) != 0.0) bad.push_back("exp(-1.05) pair not pruned");

  // Pearson: symmetric, unit self-correlation before the diagonal is zeroed.
  Matrix series(5, 40);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Eigen::Index i = 0; i < series.size(); ++i) series.data()[i] = nd(rng);
  Matrix r = graph::pearson_correlation(series);
  double asym = (r - r.transpose()).cwiseAbs().maxCoeff();
  double diag = (r.diagonal().array() - 1.0).abs().maxCoeff();
  Matrix pw = graph::pearson_weights(series, 0.05);
  if (asym != 0.0) bad.push_back("Pearson matrix not symmetric");
  if (diag > 1e-12) bad.push_back("Pearson self-correlation off by " + fmt_e(diag));
  if (pw.diagonal().cwiseAbs().maxCoeff() != 0.0) bad.push_back("Pearson diagonal not zeroed");

  Outcome o;
  o.pass = bad.empty();
  o.detail = "EAAM row-sum error " + fmt_e(row_err) + "; kernel exp(-0.95)=" + fmt_e(g(0, 1)) +
             " kept, exp(-1.05) pruned; Pearson asymmetry " + fmt_e(asym) + ", |diag-1| " + fmt_e(diag);
  for (const auto& b : bad) o.detail += "; " + b;
  return o;
}

// ---- 5 -------------------------------------------------------------------

Outcome optimizer_and_schedule() {
  // Scalar Adam written out from the update rule.
  double worst = 0.0;
  for (double wd : {0.0, 1e-3}) {
    Tensor w = Tensor::from({2}, {0.3, -1.2}, true);
    train::Adam adam({{"w", w}}, wd);
    double p[2] = {0.3, -1.2}, m[2] = {0, 0}, v[2] = {0, 0};
    const double g[2] = {0.7, -0.2};
    for (int s = 1; s <= 3; ++s) {
      backward(sum(mul(w, Tensor::from({2}, {0.7, -0.2}))));
      adam.step(1e-3);
      adam.zero_grad();
      for (int i = 0; i < 2; ++i) {
        double gi = g[i] + wd * p[i];
        m[i] = 0.9 * m[i] + 0.1 * gi;
        v[i] = 0.999 * v[i] + 0.001 * gi * gi;
        double mh = m[i] / (1.0 - std::pow(0.9, s)), vh = v[i] / (1.0 - std::pow(0.999, s));
        p[i] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
        worst = std::max(worst, std::fabs(p[i] - w.values()[i]));
      }
    }
  }
  train::Schedule cos;
  cos.initial_lr = 1e-3;
  cos.max_epochs = 100;
  train::Schedule step;
  step.kind = train::ScheduleKind::Step;
  step.initial_lr = 1e-4;
  step.interval = 10;
  step.factor = 0.5;
  bool cos_ok = cos.lr(0) == 1e-3 && cos.lr(100) == 1e-3 / 100.0;
  bool step_ok = step.lr(25) == 2.5e-5;
  Outcome o;
  o.pass = worst < 1e-12 && cos_ok && step_ok;
  o.detail = "3-step Adam max diff " + fmt_e(worst) + " (< 1e-12); cosine lr(0)=" + fmt_e(cos.lr(0)) +
             ", lr(E)=" + fmt_e(cos.lr(100)) + (cos_ok ? " exact" : " NOT exact") + "; step lr(25)=" +
             fmt_e(step.lr(25)) + (step_ok ? " exact" : " NOT exact");
  return o;
}

// ---- 6 -------------------------------------------------------------------

Outcome synthetic_overfit() {
  auto t0 = std::chrono::steady_clock::now();
  data::SyntheticSpec spec;  // 8 nodes
  auto ds = data::make_dataset(data::synthetic_sinusoid(spec, 0), data::fractional_split(spec.steps, 0.6, 0.2), 1,
                               spec.bin_seconds);
  auto sets = ds.windows(12, 3);
  model::ModelConfig mc;
  mc.num_nodes = spec.nodes;
  model::AstGcn net(mc, 0);
  std::mt19937_64 rng(1);
  auto adj = graph::AdjacencyMatrix::eaam(spec.nodes, rng);
  train::TrainConfig tc;
  tc.schedule.max_epochs = 500;
  tc.patience = 500;
  double train_mae = std::numeric_limits<double>::infinity();
  std::size_t epochs = 0;
  tc.on_epoch_end = [&](const train::EpochRecord& r) {
    auto f = eval::predict(net, adj, sets[0], ds.scaler, 256);
    train_mae = eval::mae(f.pred, f.truth);
    epochs = r.epoch + 1;
    return !(train_mae < 0.05) && seconds_since(t0) < 300.0;
  };
  train::fit(net, adj, sets[0], sets[1], ds.scaler, tc);
  // fit restores the best-validation parameters; measure those.
  auto f = eval::predict(net, adj, sets[0], ds.scaler, 256);
  double final_mae = eval::mae(f.pred, f.truth);
  double secs = seconds_since(t0);
  Outcome o;
  o.pass = final_mae < 0.05 && epochs <= 500 && secs < 300.0;
  o.detail = "8-node sinusoid, AST-GCN+EAAM: train MAE " + fmt_e(final_mae) + " (< 0.05) after " +
             std::to_string(epochs) + " epochs (<= 500), " + fmt_e(secs) + " s (< 300 s)";
  return o;
}

// ---- 7 -------------------------------------------------------------------

Outcome shape_contracts() {
  std::string detail;
  bool ok = true;
  for (auto kind : {pipeline::DatasetKind::Dublin, pipeline::DatasetKind::Nyc}) {
    auto cfg = pipeline::RunConfig::preset(kind);
    std::size_t stations = kind == pipeline::DatasetKind::Dublin ? 110 : 250;
    model::ModelConfig mc = cfg.model;
    mc.num_nodes = stations;
    mc.output_dim = cfg.target_channels();
    mc.input_dim = data::FeatureSet::parse(cfg.features).dim(cfg.target_channels());
    model::AstGcn net(mc, 1);
    std::mt19937_64 rng(2);
    auto adj = graph::AdjacencyMatrix::eaam(stations, rng);
    const std::size_t batch = 2;
    NoGradGuard guard;
    Tensor y = net.forward(normal({batch, mc.input_length, stations, mc.input_dim}, 3), adj);
    Shape expect = kind == pipeline::DatasetKind::Dublin ? Shape{batch, 3, 110, 1} : Shape{batch, 12, 250, 2};
    ok = ok && y.shape() == expect;
    detail += (detail.empty() ? "" : "; ") + pipeline::dataset_name(kind) + " (d=" + std::to_string(mc.input_dim) +
              ") -> " + to_string(y.shape());
  }
  return {ok, detail + " with B=2"};
}

// ---- 8 -------------------------------------------------------------------

Outcome dataset_reproduction() {
  Outcome o;
  o.soft = true;
  const char* cfg_path = std::getenv("ASTGCN_DUBLIN_CONFIG");
  if (!cfg_path) {
    o.detail = "NOT RUN: set ASTGCN_DUBLIN_CONFIG to a config over the Dublinbikes 2020-Q3 extract";
    return o;
  }
  try {
    auto cfg = pipeline::load_config(cfg_path);
    auto s = pipeline::cmd_compare(cfg, false);
    double base = s["baseline_mae"].is_number() ? s["baseline_mae"].get<double>() : NAN;
    double diaam = NAN, eaam = NAN, best = INFINITY;
    std::string best_cell;
    for (const auto& c : s["cells"]) {
      if (!c["ok"].get<bool>()) continue;
      double m = c["mae"].get<double>();
      if (c["model"] == "AST-GCN" && c["adjacency"] == "diaam") diaam = m;
      if (c["model"] == "AST-GCN" && c["adjacency"] == "eaam") eaam = m;
      if (m < best) {
        best = m;
        best_cell = c["model"].get<std::string>() + "+" + c["adjacency"].get<std::string>();
      }
    }
    double gain = -eval::percent_change(diaam, base);
    bool a = gain >= 10.0, b = eaam == best, c = best <= 1.5;
    o.pass = a && b && c;
    o.detail = std::string("(a) DIAAM gain ") + fmt_e(gain) + "% " + (a ? "ok" : "MISSED") + "; (b) best cell " +
               best_cell + (b ? " ok" : " MISSED") + "; (c) best MAE " + fmt_e(best) + (c ? " ok" : " MISSED");
  } catch (const std::exception& e) {
    o.detail = std::string("run failed: ") + e.what();
  }
  return o;
}

// ---- 9 -------------------------------------------------------------------

Outcome metric_exactness() {
  std::vector<std::string> bad;
  if (eval::mae(std::vector<double>{0, 0, 0}, std::vector<double>{1, 2, 3}) != 2.0) bad.push_back("mae example");
  if (eval::mae(std::vector<double>{1, 2}, std::vector<double>{1, 2}) != 0.0) bad.push_back("mae zero");
  Tensor hist = Tensor::from({1, 3, 1, 1}, {1, 2, 3});
  Tensor ha = eval::ha_forecast(hist, 2, 1);
  if (ha.values()[0] != 2.0 || ha.values()[1] != 2.0) bad.push_back("ha example");

  // Fixture data: windows of raw availability, closed-form HA and MAE by loops.
  auto cfg = pipeline::load_config("fixtures/dublin_small/config.json");
  cfg.out = scratch("metrics");
  auto ds = pipeline::cmd_ingest(cfg).dataset;
  const auto& raw = ds.raw;
  const std::size_t m = 12, hz = 3, n = raw.nodes(), d = raw.width();
  const std::size_t windows = raw.steps() - m - hz + 1;
  std::vector<double> x(windows * m * n * d);
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t t = 0; t < m; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) x[((w * m + t) * n + i) * d + c] = raw.at(w + t, i, c);
  Tensor y = eval::ha_forecast(Tensor::from({windows, m, n, d}, std::move(x)), hz, 1);
  std::vector<double> pred, truth;
  std::size_t ha_mismatch = 0;
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t h = 0; h < hz; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t t = 0; t < m; ++t) s += raw.at(w + t, i, 0);
        if (y.at({w, h, i, 0}) != s / static_cast<double>(m)) ++ha_mismatch;
        pred.push_back(y.at({w, h, i, 0}));
        truth.push_back(raw.at(w + m + h, i, 0));
      }
  double abs_sum = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) abs_sum += std::fabs(pred[k] - truth[k]);
  double closed = abs_sum / static_cast<double>(pred.size());
  double got = eval::mae(pred, truth);
  if (ha_mismatch) bad.push_back(std::to_string(ha_mismatch) + " HA values differ");
  if (got != closed) bad.push_back("fixture MAE differs from closed form");

  eval::Forecast f{windows, hz, n, 1, pred, truth};
  auto report = eval::evaluate(f, raw.station_ids());
  double recon = std::fabs(report.station_weighted_mean() - report.overall);
  if (recon > 1e-9) bad.push_back("station decomposition off by " + fmt_e(recon));

  Outcome o;
  o.pass = bad.empty();
  o.detail = "fixture HA MAE " + fmt_e(got) + " equals closed form " + (got == closed ? "exactly" : "NOT exactly") +
             "; HA mismatches " + std::to_string(ha_mismatch) + "; station reconciliation " + fmt_e(recon) +
             " (< 1e-9)";
  for (const auto& b : bad) o.detail += "; " + b;
  return o;
}

// ---- 10 ------------------------------------------------------------------

Outcome determinism() {
  auto run = [](const std::string& name) {
    auto cfg = pipeline::load_config("fixtures/dublin_small/config.json");
    cfg.out = scratch(name);
    return pipeline::cmd_train(cfg);
  };
  auto a = run("det_a");
  auto b = run("det_b");
  std::string la = pipeline::sha256_file(a.log_path), lb = pipeline::sha256_file(b.log_path);
  bool ok = la == lb && a.checkpoint_sha256 == b.checkpoint_sha256 && !a.result.log.empty();
  return {ok, "two runs: epoch logs " + std::string(la == lb ? "identical" : "DIFFER") + ", checkpoints " +
                  (a.checkpoint_sha256 == b.checkpoint_sha256 ? "identical" : "DIFFER") + " (sha256 " +
                  a.checkpoint_sha256.substr(0, 12) + ")"};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "ST-GCN equivalence", st_gcn_equivalence},
      {3, "graph-conv oracle", graph_conv_oracle},
      {4, "adjacency invariants", adjacency_invariants},
      {5, "optimizer/schedule oracles", optimizer_and_schedule},
      {6, "synthetic overfit", synthetic_overfit},
      {7, "shape contracts", shape_contracts},
      {8, "dataset reproduction (soft)", dataset_reproduction},
      {9, "metric/baseline exactness", metric_exactness},
      {10, "determinism", determinism},
  };
  int hard_failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::string tag = o.pass ? "PASS" : (o.soft ? "SOFT" : "FAIL");
    if (!o.pass && !o.soft) ++hard_failures;
    std::cout << "[" << tag << "] " << c.id << ". " << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (hard_failures ? std::to_string(hard_failures) + " criteria failed" : "all hard criteria passed")
            << std::endl;
  return hard_failures ? 1 : 0;
}
