#pragma once

#include "astgcn/data.hpp"
#include "astgcn/graph.hpp"
#include "astgcn/model.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace astgcn::train {

// Divergence, non-finite gradients, or an unusable training setup.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mean of |pred - target| over all elements; subgradient 0 at ties.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> m, v;

  nlohmann::json to_json() const;
  static AdamState from_json(const nlohmann::json& j);
};

// Adam with L2-coupled weight decay: g <- grad + weight_decay * param.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, double weight_decay, AdamHyper hyper = {});

  // Applies one update from the accumulated gradients. Throws TrainingError
  // naming the parameter when a gradient is non-finite; nothing is changed then.
  void step(double lr);
  void zero_grad();

  const AdamState& state() const { return state_; }
  void load_state(const AdamState& s);
  const std::vector<NamedTensor>& parameters() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  double weight_decay_;
  AdamHyper hyper_;
  AdamState state_;
};

enum class ScheduleKind { Cosine, Step };

struct Schedule {
  ScheduleKind kind = ScheduleKind::Cosine;
  double initial_lr = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t interval = 10;  // step schedule
  double factor = 0.5;        // step schedule

  // Cosine: lr_min + (lr0 - lr_min)(1 + cos(π e / E)) / 2 with lr_min = lr0 / 100.
  // Step: lr0 factor^floor(e / interval).
  double lr(std::size_t epoch) const;
  static ScheduleKind parse_kind(const std::string& name);
};

std::string schedule_name(ScheduleKind k);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // scaled-space L1, averaged over windows
  double val_mae = 0.0;     // original units
  double seconds = 0.0;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double weight_decay = 1e-3;
  Schedule schedule;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  std::size_t eval_batch_size = 64;
  // Called after every epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch_end;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  std::vector<NamedTensor> best_parameters;  // model then adjacency tensors, copied
  AdamState optimizer;
  bool diverged = false;
  std::string stop_reason;
};

// Trains in place. On return the model and adjacency hold the parameters of
// the epoch with the lowest validation MAE.
TrainResult fit(const model::AstGcn& model, graph::AdjacencyMatrix& adjacency,
                const data::SampleSet& train_set, const data::SampleSet& val_set,
                const data::Scaler& scaler, const TrainConfig& config);

std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& params);
std::vector<NamedTensor> trainable_parameters(const model::AstGcn& model,
                                              const graph::AdjacencyMatrix& adjacency);

void write_epoch_log(const std::string& path, const std::vector<EpochRecord>& log);

}  // namespace astgcn::train
