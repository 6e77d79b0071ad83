#include "astgcn/train.hpp"

#include "astgcn/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>

namespace astgcn::train {

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + to_string(pred.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  return mean(abs(sub(pred, target)));
}

// ---------------------------------------------------------------------------

nlohmann::json AdamState::to_json() const {
  nlohmann::json moments = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i) moments.push_back({{"name", names[i]}, {"m", m[i]}, {"v", v[i]}});
  return {{"step", step}, {"moments", moments}};
}

AdamState AdamState::from_json(const nlohmann::json& j) {
  AdamState s;
  s.step = j.at("step").get<std::size_t>();
  for (const auto& e : j.at("moments")) {
    s.names.push_back(e.at("name").get<std::string>());
    s.m.push_back(e.at("m").get<std::vector<double>>());
    s.v.push_back(e.at("v").get<std::vector<double>>());
  }
  return s;
}

Adam::Adam(std::vector<NamedTensor> params, double weight_decay, AdamHyper hyper)
    : params_(std::move(params)), weight_decay_(weight_decay), hyper_(hyper) {
  if (weight_decay < 0.0) throw std::invalid_argument("Adam: weight decay must be >= 0");
  for (const auto& p : params_) {
    state_.names.push_back(p.name);
    state_.m.emplace_back(p.tensor.numel(), 0.0);
    state_.v.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  for (const auto& p : params_) {
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw TrainingError("non-finite gradient in parameter '" + p.name + "' at index " + std::to_string(i));
      }
    }
  }
  ++state_.step;
  double t = static_cast<double>(state_.step);
  double c1 = 1.0 - std::pow(hyper_.beta1, t);
  double c2 = 1.0 - std::pow(hyper_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor param = params_[k].tensor;
    std::vector<double> g = param.grad();
    auto w = param.mutable_values();
    auto& m = state_.m[k];
    auto& v = state_.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = g[i] + weight_decay_ * w[i];
      m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * gi;
      v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * gi * gi;
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void Adam::load_state(const AdamState& s) {
  if (s.names != state_.names) throw std::invalid_argument("Adam: optimizer state is for different parameters");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (s.m[k].size() != params_[k].tensor.numel() || s.v[k].size() != params_[k].tensor.numel()) {
      throw std::invalid_argument("Adam: moment size mismatch for '" + s.names[k] + "'");
    }
  }
  state_ = s;
}

// ---------------------------------------------------------------------------

double Schedule::lr(std::size_t epoch) const {
  if (epoch > max_epochs) throw std::invalid_argument("lr_schedule: epoch beyond max_epochs");
  switch (kind) {
    case ScheduleKind::Cosine: {
      double lr_min = initial_lr / 100.0;
      double frac = static_cast<double>(epoch) / static_cast<double>(max_epochs);
      return lr_min + 0.5 * (initial_lr - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
    }
    case ScheduleKind::Step:
      return initial_lr * std::pow(factor, static_cast<double>(epoch / interval));
  }
  throw std::invalid_argument("lr_schedule: unknown kind");
}

ScheduleKind Schedule::parse_kind(const std::string& name) {
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "step") return ScheduleKind::Step;
  throw std::invalid_argument("unknown learning-rate schedule '" + name + "' (cosine or step)");
}

std::string schedule_name(ScheduleKind k) { return k == ScheduleKind::Cosine ? "cosine" : "step"; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(schedule.initial_lr > 0.0)) fail("initial_lr must be > 0");
  if (batch_size == 0 || eval_batch_size == 0) fail("batch sizes must be >= 1");
  if (schedule.max_epochs == 0) fail("max_epochs must be >= 1");
  if (patience > schedule.max_epochs) fail("patience must not exceed max_epochs");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (schedule.interval == 0) fail("step interval must be >= 1");
  if (!(schedule.factor > 0.0 && schedule.factor <= 1.0)) fail("step factor must be in (0, 1]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"initial_lr", c.schedule.initial_lr},
                     {"weight_decay", c.weight_decay},
                     {"schedule", schedule_name(c.schedule.kind)},
                     {"step_interval", c.schedule.interval},
                     {"step_factor", c.schedule.factor},
                     {"max_epochs", c.schedule.max_epochs},
                     {"patience", c.patience},
                     {"seed", c.seed},
                     {"eval_batch_size", c.eval_batch_size}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.schedule.initial_lr = j.value("initial_lr", d.schedule.initial_lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.schedule.kind = Schedule::parse_kind(j.value("schedule", schedule_name(d.schedule.kind)));
  c.schedule.interval = j.value("step_interval", d.schedule.interval);
  c.schedule.factor = j.value("step_factor", d.schedule.factor);
  c.schedule.max_epochs = j.value("max_epochs", d.schedule.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.seed = j.value("seed", d.seed);
  c.eval_batch_size = j.value("eval_batch_size", d.eval_batch_size);
}

// ---------------------------------------------------------------------------

std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& params) {
  std::vector<NamedTensor> out;
  for (const auto& p : params) {
    out.push_back({p.name, Tensor::from(p.tensor.shape(),
                                        std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()))});
  }
  return out;
}

std::vector<NamedTensor> trainable_parameters(const model::AstGcn& model,
                                              const graph::AdjacencyMatrix& adjacency) {
  auto params = model.parameters();
  for (auto& p : adjacency.parameters()) params.push_back(p);
  return params;
}

TrainResult fit(const model::AstGcn& model, graph::AdjacencyMatrix& adjacency,
                const data::SampleSet& train_set, const data::SampleSet& val_set,
                const data::Scaler& scaler, const TrainConfig& config) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw TrainingError("training and validation splits must both contain windows");
  }
  auto params = trainable_parameters(model, adjacency);
  Adam adam(params, config.weight_decay);
  std::mt19937_64 rng(config.seed);
  std::size_t cheb = model.config().cheb_order;
  std::optional<graph::ChebyshevBasis> fixed_basis;
  if (!adjacency.trainable()) fixed_basis = graph::chebyshev_basis(adjacency, cheb);

  TrainResult result;
  result.best_parameters = snapshot(params);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.schedule.max_epochs; ++epoch) {
    auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = config.schedule.lr(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + config.batch_size)));
        Tensor pred = fixed_basis ? model.forward(train_set.inputs(idx), *fixed_basis)
                                  : model.forward(train_set.inputs(idx), adjacency);
        Tensor loss = l1_loss(pred, train_set.targets(idx));
        if (!std::isfinite(loss.item())) throw TrainingError("training loss became non-finite at epoch " + std::to_string(epoch));
        loss_sum += loss.item() * static_cast<double>(idx.size());
        backward(loss);
        adam.step(rec.lr);
        adam.zero_grad();
        adjacency.project();
      }
    } catch (const TrainingError& e) {
      spdlog::error("{}; restoring epoch {} parameters", e.what(), result.best_epoch);
      result.diverged = true;
      result.stop_reason = e.what();
      break;
    }
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    auto forecast = eval::predict(model, adjacency, val_set, scaler, config.eval_batch_size);
    rec.val_mae = eval::mae(forecast.pred, forecast.truth);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    spdlog::info("epoch {:3d} lr {:.3g} train_loss {:.6f} val_mae {:.6f} ({:.1f}s)", epoch, rec.lr,
                 rec.train_loss, rec.val_mae, rec.seconds);

    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      result.best_parameters = snapshot(params);
      result.optimizer = adam.state();
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= config.patience) {
      result.stop_reason = "no validation improvement for " + std::to_string(config.patience) + " epochs";
      break;
    }
    if (config.on_epoch_end && !config.on_epoch_end(rec)) {
      result.stop_reason = "stopped by callback";
      break;
    }
  }
  if (result.stop_reason.empty()) result.stop_reason = "reached max_epochs";
  if (result.log.empty()) result.optimizer = adam.state();
  model::load_parameters(params, result.best_parameters);
  return result;
}

void write_epoch_log(const std::string& path, const std::vector<EpochRecord>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << std::setprecision(17) << "epoch,lr,train_loss,val_mae\n";
  for (const auto& r : log) out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.val_mae << '\n';
}

}  // namespace astgcn::train
