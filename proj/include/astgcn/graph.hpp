#pragma once

#include "astgcn/tensor.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace astgcn::graph {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor to_tensor(const Matrix& m, bool requires_grad = false);
Matrix to_matrix(const Tensor& t);

struct Station {
  std::string id;
  double latitude = 0.0;   // degrees
  double longitude = 0.0;  // degrees
};

// Bike stations as graph nodes. Ids are unique and coordinates valid.
class StationGraph {
 public:
  explicit StationGraph(std::vector<Station> stations);
  // `series` is N x T, one row per station.
  StationGraph(std::vector<Station> stations, Matrix series);

  std::size_t size() const { return stations_.size(); }
  const std::vector<Station>& stations() const { return stations_; }
  std::vector<std::string> ids() const;
  const std::optional<Matrix>& series() const { return series_; }

 private:
  std::vector<Station> stations_;
  std::optional<Matrix> series_;
};

enum class DistanceMetric { EuclideanNormalized, GreatCircleKm };

inline constexpr double kEarthRadiusKm = 6371.0;

double haversine_km(double lat1, double lon1, double lat2, double lon2);

// Pairwise distances. Euclidean distances are taken on min-max normalized
// (lat, lon) so that both coordinates span [0, 1].
Matrix distance_matrix(const StationGraph& g, DistanceMetric metric);

enum class Category { S, T, ST, ADistanceInit, AEmbedding };

std::string category_label(Category c);

// w_ij = exp(-d_ij^2 / sigma), dropped below epsilon; zero diagonal.
Matrix gaussian_kernel(const Matrix& dist, double sigma, double epsilon);

// Full Pearson correlation of the rows of `series` (N x T). Stations with
// zero variance get an all-zero row and column.
Matrix pearson_correlation(const Matrix& series);
// |r_ij| where |r_ij| >= threshold, zero diagonal.
Matrix pearson_weights(const Matrix& series, double threshold);

struct StEmbedding {
  Matrix weights;     // N x N
  Matrix embeddings;  // N x k, rows are station embeddings
  std::size_t dim = 0;
};

// Embeddings are the leading left-singular directions of the column-centred
// demand matrix scaled by their singular values; w_ij = exp(-|e_i - e_j|^2 / sigma).
StEmbedding st_embedding(const Matrix& demand, std::size_t feature_dim, double sigma);

// row-softmax(relu(e1 · e2ᵀ)).
Tensor eaam_weights(const Tensor& e1, const Tensor& e2);

inline constexpr std::size_t kEaamEmbeddingDim = 10;
inline constexpr double kEaamInitStd = 0.01;

// N x N adjacency tagged with how it was built. Adaptive variants own their
// trainable tensors; fixed ones are symmetric with zero diagonal.
class AdjacencyMatrix {
 public:
  static AdjacencyMatrix fixed(Matrix w, Category category);
  // Trainable copy of a Gaussian-kernel adjacency.
  static AdjacencyMatrix diaam(const AdjacencyMatrix& init);
  static AdjacencyMatrix eaam(std::size_t n, std::mt19937_64& rng,
                              std::size_t embedding_dim = kEaamEmbeddingDim);
  static AdjacencyMatrix eaam(Tensor e1, Tensor e2);

  Category category() const { return category_; }
  bool trainable() const { return category_ == Category::ADistanceInit ||
                                  category_ == Category::AEmbedding; }
  std::size_t size() const { return n_; }

  // Current weights; for EAAM this records a fresh graph each call.
  Tensor weights() const;
  Matrix values() const;

  std::vector<NamedTensor> parameters() const;
  // Post-step constraint: DIAAM entries are clamped to [0, 1].
  void project();

 private:
  AdjacencyMatrix() = default;
  Category category_ = Category::S;
  std::size_t n_ = 0;
  Tensor w_;       // fixed values or DIAAM parameter
  Tensor e1_, e2_; // EAAM source embeddings
};

struct ChebyshevBasis {
  std::size_t order = 0;       // K
  double lambda_max = 2.0;
  std::vector<Tensor> terms;   // T_0 .. T_{K-1}, each N x N
};

inline constexpr double kPowerIterationTol = 1e-8;
inline constexpr int kPowerIterationMaxIter = 1000;

// Largest eigenvalue of a symmetric PSD matrix; nullopt when not converged.
std::optional<double> power_iteration_max_eigenvalue(const Matrix& m, double rel_tol = kPowerIterationTol,
                                                     int max_iter = kPowerIterationMaxIter);

// L = I - D^{-1/2} W D^{-1/2} with D the row sums; isolated nodes get an
// identity row.
Matrix normalized_laplacian(const Matrix& w);

// T_0 = I, T_1 = L̃, T_k = 2 L̃ T_{k-1} - T_{k-2} with L̃ = 2L/λ_max - I.
// For a fixed `w`, λ_max comes from power iteration (fallback 2). When `w`
// requires grad, λ_max is held at 2 and the whole basis stays on the tape.
ChebyshevBasis chebyshev_basis(const Tensor& w, std::size_t order);
// Picks the λ_max rule from adj.trainable(), so a trainable adjacency gets the
// same basis with or without gradient recording.
ChebyshevBasis chebyshev_basis(const AdjacencyMatrix& adj, std::size_t order);

// Adjacency CSV: header of station ids, then N rows of N values.
void write_adjacency_csv(std::ostream& out, const std::vector<std::string>& ids, const Matrix& w);
void write_adjacency_csv(const std::string& path, const std::vector<std::string>& ids,
                         const Matrix& w);
struct LabelledMatrix {
  std::vector<std::string> ids;
  Matrix w;
};
LabelledMatrix read_adjacency_csv(std::istream& in);
LabelledMatrix read_adjacency_csv(const std::string& path);

}  // namespace astgcn::graph
