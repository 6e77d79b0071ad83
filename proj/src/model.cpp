#include "astgcn/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace astgcn::model {

namespace {

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform(std::move(shape), -limit, limit, rng, true);
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (num_nodes == 0) fail("num_nodes must be >= 1");
  if (input_length == 0 || horizon == 0) fail("input and output lengths must be >= 1");
  if (input_dim == 0 || output_dim == 0) fail("input_dim and output_dim must be >= 1");
  if (output_dim > input_dim) fail("output_dim cannot exceed input_dim (targets are input channels)");
  if (temporal_kernel == 0) fail("temporal_kernel must be >= 1");
  if (cheb_order == 0) fail("cheb_order must be >= 1");
  if (blocks == 0) fail("blocks must be >= 1");
  for (std::size_t c : channels)
    if (c == 0) fail("block channel widths must be >= 1");
  std::size_t shrink = 2 * blocks * (temporal_kernel - 1);
  if (input_length < shrink + 1) {
    fail("input_length " + std::to_string(input_length) + " leaves no time steps after " +
         std::to_string(blocks) + " blocks with kernel " + std::to_string(temporal_kernel));
  }
}

std::size_t ModelConfig::remaining_steps() const {
  return input_length - 2 * blocks * (temporal_kernel - 1);
}

std::size_t ModelConfig::block_output_channels() const {
  return channels[2] + (attention ? channels[0] : 0);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_nodes", c.num_nodes},
                     {"input_length", c.input_length},
                     {"horizon", c.horizon},
                     {"input_dim", c.input_dim},
                     {"output_dim", c.output_dim},
                     {"temporal_kernel", c.temporal_kernel},
                     {"cheb_order", c.cheb_order},
                     {"channels", c.channels},
                     {"blocks", c.blocks},
                     {"attention", c.attention}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.num_nodes = j.value("num_nodes", d.num_nodes);
  c.input_length = j.value("input_length", d.input_length);
  c.horizon = j.value("horizon", d.horizon);
  c.input_dim = j.value("input_dim", d.input_dim);
  c.output_dim = j.value("output_dim", d.output_dim);
  c.temporal_kernel = j.value("temporal_kernel", d.temporal_kernel);
  c.cheb_order = j.value("cheb_order", d.cheb_order);
  c.channels = j.value("channels", d.channels);
  c.blocks = j.value("blocks", d.blocks);
  c.attention = j.value("attention", d.attention);
}

// ---------------------------------------------------------------------------

TemporalGatedConv::TemporalGatedConv(std::size_t cin, std::size_t cout, std::size_t kt,
                                     std::mt19937_64& rng)
    : in_channels(cin), out_channels(cout), kernel(kt) {
  weight = xavier({kt, cin, 2 * cout}, kt * cin, kt * 2 * cout, rng);
  bias = Tensor::zeros({2 * cout}, true);
  if (cin > cout) projection = xavier({cin, cout}, cin, cout, rng);
}

Tensor TemporalGatedConv::residual(const Tensor& x) const {
  std::size_t steps = x.dim(1) - kernel + 1;
  Tensor r = slice(x, 1, kernel - 1, steps);
  if (in_channels == out_channels) return r;
  if (in_channels > out_channels) return matmul(r, projection);
  Tensor pad = Tensor::zeros({x.dim(0), steps, x.dim(2), out_channels - in_channels});
  return concat({r, pad}, 3);
}

Tensor TemporalGatedConv::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(3) != in_channels) {
    throw ShapeError("temporal gated conv expects [B, T, N, " + std::to_string(in_channels) +
                     "], got " + to_string(x.shape()));
  }
  if (x.dim(1) < kernel) {
    throw ShapeError("temporal gated conv: " + std::to_string(x.dim(1)) +
                     " time steps is shorter than kernel " + std::to_string(kernel));
  }
  Tensor conv = add(temporal_conv(x, weight), bias);
  Tensor p = slice(conv, 3, 0, out_channels);
  Tensor q = slice(conv, 3, out_channels, out_channels);
  return mul(add(p, residual(x)), sigmoid(q));
}

void TemporalGatedConv::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
  if (projection.defined()) out.push_back({prefix + ".projection", projection});
}

// ---------------------------------------------------------------------------

SpatialGraphConv::SpatialGraphConv(std::size_t cin, std::size_t cout, std::size_t ks,
                                   std::mt19937_64& rng)
    : in_channels(cin), out_channels(cout), order(ks) {
  theta = xavier({ks, cin, cout}, ks * cin, cout, rng);
  bias = Tensor::zeros({cout}, true);
}

Tensor SpatialGraphConv::forward(const Tensor& x, const graph::ChebyshevBasis& basis) const {
  if (x.rank() != 4 || x.dim(3) != in_channels) {
    throw ShapeError("spatial graph conv expects [B, T, N, " + std::to_string(in_channels) +
                     "], got " + to_string(x.shape()));
  }
  if (basis.terms.size() != order) {
    throw std::invalid_argument("spatial graph conv: basis has " +
                                std::to_string(basis.terms.size()) + " terms, expected " +
                                std::to_string(order));
  }
  if (basis.terms[0].dim(0) != x.dim(2)) {
    throw ShapeError("spatial graph conv: basis is over " + std::to_string(basis.terms[0].dim(0)) +
                     " nodes but input has " + std::to_string(x.dim(2)));
  }
  Tensor acc;
  for (std::size_t k = 0; k < order; ++k) {
    Tensor theta_k = reshape(slice(theta, 0, k, 1), {in_channels, out_channels});
    Tensor z = matmul(x, theta_k);
    // T_0 is the identity.
    Tensor term = k == 0 ? z : matmul_axis(basis.terms[k], z, 2);
    acc = k == 0 ? term : add(acc, term);
  }
  return relu(add(acc, bias));
}

void SpatialGraphConv::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".theta", theta});
  out.push_back({prefix + ".bias", bias});
}

// ---------------------------------------------------------------------------

Tensor temporal_attention(const Tensor& x1, const Tensor& x2) {
  if (x1.rank() != 4 || x2.rank() != 4 || x1.dim(0) != x2.dim(0) || x1.dim(2) != x2.dim(2) ||
      x2.dim(1) > x1.dim(1)) {
    throw ShapeError("temporal attention: incompatible activations " + to_string(x1.shape()) +
                     " and " + to_string(x2.shape()));
  }
  std::size_t t2 = x2.dim(1);
  Tensor a1 = mean_axis(slice(x1, 1, x1.dim(1) - t2, t2), 3);
  Tensor a2 = mean_axis(x2, 3);
  return sigmoid(relu(add(a1, a2)));
}

StConvBlock::StConvBlock(std::size_t cin, const std::array<std::size_t, 3>& channels,
                         std::size_t kt, std::size_t ks, bool attention_enabled,
                         std::mt19937_64& rng)
    : tgc1(cin, channels[0], kt, rng),
      sgc(channels[0], channels[1], ks, rng),
      tgc2(channels[1], channels[2], kt, rng),
      attention(attention_enabled) {}

BlockActivations StConvBlock::forward(const Tensor& x, const graph::ChebyshevBasis& basis) const {
  BlockActivations a;
  a.x1 = tgc1.forward(x);
  a.xs = sgc.forward(a.x1, basis);
  a.x2 = tgc2.forward(a.xs);
  if (!attention) {
    a.output = a.x2;
    return a;
  }
  std::size_t t2 = a.x2.dim(1);
  a.attention = temporal_attention(a.x1, a.x2);
  Tensor attended = mul(a.attention, slice(a.x1, 1, a.x1.dim(1) - t2, t2));
  a.output = concat({a.x2, attended}, 3);
  return a;
}

void StConvBlock::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  tgc1.collect(prefix + ".tgc1", out);
  sgc.collect(prefix + ".sgc", out);
  tgc2.collect(prefix + ".tgc2", out);
}

// ---------------------------------------------------------------------------

OutputHead::OutputHead(std::size_t cin, std::size_t steps, std::size_t n, std::size_t c,
                       std::mt19937_64& rng)
    : horizon(n), output_dim(c) {
  std::size_t head_channels = cin;
  collapse = TemporalGatedConv(cin, head_channels, steps, rng);
  weight = xavier({head_channels, n * c}, head_channels, n * c, rng);
  bias = Tensor::zeros({n * c}, true);
}

Tensor OutputHead::forward(const Tensor& x) const {
  Tensor h = collapse.forward(x);  // [B, 1, N, c_head]
  Tensor y = add(matmul(h, weight), bias);
  std::size_t batch = x.dim(0), nodes = x.dim(2);
  return permute(reshape(y, {batch, nodes, horizon, output_dim}), {0, 2, 1, 3});
}

void OutputHead::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  collapse.collect(prefix + ".tconv", out);
  out.push_back({prefix + ".dense.weight", weight});
  out.push_back({prefix + ".dense.bias", bias});
}

// ---------------------------------------------------------------------------

AstGcn::AstGcn(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t cin = config_.input_dim;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    blocks_.emplace_back(cin, config_.channels, config_.temporal_kernel, config_.cheb_order,
                         config_.attention, rng);
    cin = config_.block_output_channels();
  }
  head_ = OutputHead(cin, config_.remaining_steps(), config_.horizon, config_.output_dim, rng);
}

void AstGcn::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.input_length || x.dim(2) != config_.num_nodes ||
      x.dim(3) != config_.input_dim) {
    throw ShapeError("model input must be [B, " + std::to_string(config_.input_length) + ", " +
                     std::to_string(config_.num_nodes) + ", " + std::to_string(config_.input_dim) +
                     "], got " + to_string(x.shape()));
  }
}

std::vector<BlockActivations> AstGcn::forward_blocks(const Tensor& x,
                                                     const graph::ChebyshevBasis& basis) const {
  check_input(x);
  std::vector<BlockActivations> acts;
  Tensor h = x;
  for (const auto& block : blocks_) {
    acts.push_back(block.forward(h, basis));
    h = acts.back().output;
  }
  return acts;
}

Tensor AstGcn::forward(const Tensor& x, const graph::ChebyshevBasis& basis) const {
  auto acts = forward_blocks(x, basis);
  return head_.forward(acts.back().output);
}

Tensor AstGcn::forward(const Tensor& x, const graph::AdjacencyMatrix& adjacency) const {
  if (adjacency.size() != config_.num_nodes) {
    throw ShapeError("adjacency has " + std::to_string(adjacency.size()) + " nodes, model expects " +
                     std::to_string(config_.num_nodes));
  }
  return forward(x, graph::chebyshev_basis(adjacency, config_.cheb_order));
}

std::vector<NamedTensor> AstGcn::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect("block" + std::to_string(b), out);
  head_.collect("head", out);
  return out;
}

std::size_t AstGcn::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void load_parameters(const std::vector<NamedTensor>& targets,
                     const std::vector<NamedTensor>& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.tensor;
  for (const auto& t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw std::runtime_error("missing parameter '" + t.name + "'");
    if (it->second->shape() != t.tensor.shape()) {
      throw std::runtime_error("parameter '" + t.name + "' has shape " +
                               to_string(it->second->shape()) + ", expected " +
                               to_string(t.tensor.shape()));
    }
    Tensor target = t.tensor;
    auto src = it->second->values();
    std::copy(src.begin(), src.end(), target.mutable_values().begin());
  }
}

// ---------------------------------------------------------------------------

nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor::from(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : parameters) {
    auto e = tensor_to_json(p.tensor);
    e["name"] = p.name;
    params.push_back(std::move(e));
  }
  return {{"format_version", format_version},
          {"config", config},
          {"config_hash", config_hash},
          {"adjacency", adjacency},
          {"scaler", scaler},
          {"parameters", std::move(params)},
          {"optimizer", optimizer},
          {"extra", extra}};
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  Checkpoint c;
  c.format_version = j.at("format_version").get<int>();
  if (c.format_version != kCheckpointFormatVersion) {
    throw std::runtime_error("unsupported checkpoint format version " +
                             std::to_string(c.format_version));
  }
  c.config = j.at("config").get<ModelConfig>();
  c.config_hash = j.at("config_hash").get<std::string>();
  c.adjacency = j.value("adjacency", nlohmann::json());
  c.scaler = j.value("scaler", nlohmann::json());
  for (const auto& p : j.at("parameters")) {
    c.parameters.push_back({p.at("name").get<std::string>(), tensor_from_json(p)});
  }
  c.optimizer = j.value("optimizer", nlohmann::json());
  c.extra = j.value("extra", nlohmann::json());
  return c;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << to_json().dump() << '\n';
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return from_json(nlohmann::json::parse(in));
}

}  // namespace astgcn::model
