#pragma once

#include "astgcn/graph.hpp"
#include "astgcn/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace astgcn::model {

struct ModelConfig {
  std::size_t num_nodes = 0;                 // N
  std::size_t input_length = 12;             // m
  std::size_t horizon = 3;                   // n
  std::size_t input_dim = 1;                 // d
  std::size_t output_dim = 1;                // c
  std::size_t temporal_kernel = 3;           // Kt
  std::size_t cheb_order = 3;                // Ks
  std::array<std::size_t, 3> channels{64, 16, 64};
  std::size_t blocks = 2;
  bool attention = true;

  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  // Time steps left after all blocks: m - 2 * blocks * (Kt - 1).
  std::size_t remaining_steps() const;
  // Channels leaving a block (c3, plus c1 when attention is on).
  std::size_t block_output_channels() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Gated 1-D convolution along time: (P + residual) ⊙ sigmoid(Q).
struct TemporalGatedConv {
  std::size_t in_channels = 0, out_channels = 0, kernel = 0;
  Tensor weight;      // [Kt, c_in, 2 c_out]
  Tensor bias;        // [2 c_out]
  Tensor projection;  // [c_in, c_out], only when c_in > c_out

  TemporalGatedConv() = default;
  TemporalGatedConv(std::size_t cin, std::size_t cout, std::size_t kt, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  // Input cropped to the output time range with channels matched to c_out.
  Tensor residual(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// relu(Σ_k T_k · x · θ_k + b) at every time step.
struct SpatialGraphConv {
  std::size_t in_channels = 0, out_channels = 0, order = 0;
  Tensor theta;  // [Ks, c_in, c_out]
  Tensor bias;   // [c_out]

  SpatialGraphConv() = default;
  SpatialGraphConv(std::size_t cin, std::size_t cout, std::size_t ks, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, const graph::ChebyshevBasis& basis) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// sigmoid(relu(channel-mean(last T2 steps of x1) + channel-mean(x2))),
// shape [B, T2, N, 1].
Tensor temporal_attention(const Tensor& x1, const Tensor& x2);

struct BlockActivations {
  Tensor x1;         // first TGC output     [B, T1, N, c1]
  Tensor xs;         // SGC output           [B, T1, N, c2]
  Tensor x2;         // second TGC output    [B, T2, N, c3]
  Tensor attention;  // [B, T2, N, 1], undefined when attention is off
  Tensor output;
};

struct StConvBlock {
  TemporalGatedConv tgc1;
  SpatialGraphConv sgc;
  TemporalGatedConv tgc2;
  bool attention = false;

  StConvBlock() = default;
  StConvBlock(std::size_t cin, const std::array<std::size_t, 3>& channels, std::size_t kt,
              std::size_t ks, bool attention, std::mt19937_64& rng);

  BlockActivations forward(const Tensor& x, const graph::ChebyshevBasis& basis) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Temporal convolution over the remaining steps, then a per-node dense map
// to horizon · output_dim values.
struct OutputHead {
  TemporalGatedConv collapse;
  Tensor weight;  // [c_head, n · c]
  Tensor bias;    // [n · c]
  std::size_t horizon = 0, output_dim = 0;

  OutputHead() = default;
  OutputHead(std::size_t cin, std::size_t steps, std::size_t horizon, std::size_t output_dim,
             std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// ST-GCN when config.attention is false, AST-GCN otherwise.
class AstGcn {
 public:
  AstGcn(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // x: [B, m, N, d] -> [B, n, N, c]
  Tensor forward(const Tensor& x, const graph::ChebyshevBasis& basis) const;
  // Rebuilds the Chebyshev basis from the adjacency on every call.
  Tensor forward(const Tensor& x, const graph::AdjacencyMatrix& adjacency) const;
  std::vector<BlockActivations> forward_blocks(const Tensor& x,
                                               const graph::ChebyshevBasis& basis) const;

  const std::vector<StConvBlock>& blocks() const { return blocks_; }
  const OutputHead& head() const { return head_; }

  // Canonical, stable names ("block0.tgc1.weight", ..., "head.dense.bias").
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

 private:
  void check_input(const Tensor& x) const;

  ModelConfig config_;
  std::vector<StConvBlock> blocks_;
  OutputHead head_;
};

// Copies values by name; every target must be present with the same shape.
void load_parameters(const std::vector<NamedTensor>& targets,
                     const std::vector<NamedTensor>& source);

// ---- checkpoint container ----

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  ModelConfig config;
  std::string config_hash;
  nlohmann::json adjacency;  // adjacency spec (kind + parameters)
  nlohmann::json scaler;
  std::vector<NamedTensor> parameters;  // model and adjacency tensors
  nlohmann::json optimizer;             // null when absent
  nlohmann::json extra;                 // free-form metadata

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace astgcn::model
