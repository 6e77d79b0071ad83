#include "astgcn/graph.hpp"
#include "astgcn/csv.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <stdexcept>

namespace astgcn::graph {

Tensor to_tensor(const Matrix& m, bool requires_grad) {
  std::vector<double> v(m.data(), m.data() + m.size());
  return Tensor::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                      std::move(v), requires_grad);
}

Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("to_matrix: expected rank 2, got " + to_string(t.shape()));
  Matrix m(t.dim(0), t.dim(1));
  std::copy(t.values().begin(), t.values().end(), m.data());
  return m;
}

// ---------------------------------------------------------------------------

namespace {

void validate_stations(const std::vector<Station>& stations) {
  std::set<std::string> seen;
  for (const auto& s : stations) {
    if (!seen.insert(s.id).second) throw std::invalid_argument("duplicate station id " + s.id);
    if (!(s.latitude >= -90.0 && s.latitude <= 90.0) ||
        !(s.longitude >= -180.0 && s.longitude <= 180.0)) {
      throw std::invalid_argument("station " + s.id + " has invalid coordinates");
    }
  }
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(what) + ": matrix is " + std::to_string(m.rows()) +
                                "x" + std::to_string(m.cols()) + ", expected square");
  }
}

}  // namespace

StationGraph::StationGraph(std::vector<Station> stations) : stations_(std::move(stations)) {
  validate_stations(stations_);
}

StationGraph::StationGraph(std::vector<Station> stations, Matrix series)
    : stations_(std::move(stations)), series_(std::move(series)) {
  validate_stations(stations_);
  if (static_cast<std::size_t>(series_->rows()) != stations_.size()) {
    throw std::invalid_argument("series has " + std::to_string(series_->rows()) +
                                " rows for " + std::to_string(stations_.size()) + " stations");
  }
}

std::vector<std::string> StationGraph::ids() const {
  std::vector<std::string> out;
  for (const auto& s : stations_) out.push_back(s.id);
  return out;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double rad = std::numbers::pi / 180.0;
  double dlat = (lat2 - lat1) * rad;
  double dlon = (lon2 - lon1) * rad;
  double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
             std::cos(lat1 * rad) * std::cos(lat2 * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

Matrix distance_matrix(const StationGraph& g, DistanceMetric metric) {
  const auto& st = g.stations();
  const auto n = static_cast<Eigen::Index>(st.size());
  if (n < 2) throw std::invalid_argument("distance_matrix needs at least 2 stations");
  Matrix d = Matrix::Zero(n, n);
  if (metric == DistanceMetric::GreatCircleKm) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        d(i, j) = d(j, i) = haversine_km(st[i].latitude, st[i].longitude, st[j].latitude,
                                         st[j].longitude);
    return d;
  }
  double lat_lo = st[0].latitude, lat_hi = lat_lo, lon_lo = st[0].longitude, lon_hi = lon_lo;
  for (const auto& s : st) {
    lat_lo = std::min(lat_lo, s.latitude);
    lat_hi = std::max(lat_hi, s.latitude);
    lon_lo = std::min(lon_lo, s.longitude);
    lon_hi = std::max(lon_hi, s.longitude);
  }
  auto norm = [](double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; };
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double dl = norm(st[i].latitude, lat_lo, lat_hi) - norm(st[j].latitude, lat_lo, lat_hi);
      double dn = norm(st[i].longitude, lon_lo, lon_hi) - norm(st[j].longitude, lon_lo, lon_hi);
      d(i, j) = d(j, i) = std::sqrt(dl * dl + dn * dn);
    }
  return d;
}

std::string category_label(Category c) {
  switch (c) {
    case Category::S: return "S";
    case Category::T: return "T";
    case Category::ST: return "ST";
    case Category::ADistanceInit: return "S+A";
    case Category::AEmbedding: return "ST+A";
  }
  return "?";
}

Matrix gaussian_kernel(const Matrix& dist, double sigma, double epsilon) {
  require_square(dist, "gaussian_kernel");
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("gaussian_kernel: epsilon must lie in [0, 1)");
  }
  const auto n = dist.rows();
  Matrix w = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (dist(i, i) != 0.0) throw std::invalid_argument("gaussian_kernel: nonzero diagonal distance");
    for (Eigen::Index j = 0; j < n; ++j) {
      double d = dist(i, j);
      if (!(d >= 0.0) || !std::isfinite(d)) {
        throw std::invalid_argument("gaussian_kernel: negative or non-finite distance at (" +
                                    std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      if (d != dist(j, i)) {
        throw std::invalid_argument("gaussian_kernel: distance matrix is not symmetric at (" +
                                    std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      if (i == j) continue;
      double v = std::exp(-d * d / sigma);
      w(i, j) = v >= epsilon ? v : 0.0;
    }
  }
  return w;
}

Matrix pearson_correlation(const Matrix& series) {
  const auto n = series.rows();
  const auto t = series.cols();
  if (t < 2) throw std::invalid_argument("pearson_correlation: need at least 2 time steps");
  Matrix centred = series.colwise() - series.rowwise().mean();
  Eigen::VectorXd norms = centred.rowwise().norm();
  Matrix r = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (norms(i) == 0.0) {
      spdlog::warn("station row {} has zero variance; its correlations are set to 0", i);
      continue;
    }
    for (Eigen::Index j = i; j < n; ++j) {
      if (norms(j) == 0.0) continue;
      double v = i == j ? 1.0 : centred.row(i).dot(centred.row(j)) / (norms(i) * norms(j));
      r(i, j) = r(j, i) = std::clamp(v, -1.0, 1.0);
    }
  }
  return r;
}

Matrix pearson_weights(const Matrix& series, double threshold) {
  Matrix r = pearson_correlation(series);
  Matrix w = Matrix::Zero(r.rows(), r.cols());
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    for (Eigen::Index j = 0; j < r.cols(); ++j)
      if (i != j && std::fabs(r(i, j)) >= threshold) w(i, j) = std::fabs(r(i, j));
  return w;
}

StEmbedding st_embedding(const Matrix& demand, std::size_t feature_dim, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("st_embedding: sigma must be positive");
  if (feature_dim == 0) throw std::invalid_argument("st_embedding: feature_dim must be >= 1");
  const auto n = demand.rows();
  Matrix centred = demand.rowwise() - demand.colwise().mean();
  Eigen::BDCSVD<Matrix> svd(centred, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  double tol = static_cast<double>(std::max(demand.rows(), demand.cols())) *
               (sv.size() ? sv(0) : 0.0) * std::numeric_limits<double>::epsilon();
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++rank;
  std::size_t k = feature_dim;
  if (rank < k) {
    spdlog::warn("st_embedding: demand rank {} is below feature_dim {}; using {}", rank, k,
                 std::max<std::size_t>(rank, 1));
    k = std::max<std::size_t>(rank, 1);
  }
  StEmbedding out;
  out.dim = k;
  const auto ki = static_cast<Eigen::Index>(k);
  out.embeddings = svd.matrixU().leftCols(ki) * sv.head(ki).asDiagonal();
  out.weights = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double d2 = (out.embeddings.row(i) - out.embeddings.row(j)).squaredNorm();
      out.weights(i, j) = out.weights(j, i) = std::exp(-d2 / sigma);
    }
  return out;
}

Tensor eaam_weights(const Tensor& e1, const Tensor& e2) {
  if (e1.rank() != 2 || e2.rank() != 2 || e1.shape() != e2.shape()) {
    throw ShapeError("eaam: embeddings must both be N x e, got " + to_string(e1.shape()) +
                     " and " + to_string(e2.shape()));
  }
  return softmax(relu(matmul(e1, transpose(e2))), 1);
}

// ---------------------------------------------------------------------------

AdjacencyMatrix AdjacencyMatrix::fixed(Matrix w, Category category) {
  require_square(w, "AdjacencyMatrix::fixed");
  if (category == Category::ADistanceInit || category == Category::AEmbedding) {
    throw std::invalid_argument("fixed adjacency cannot carry an adaptive category");
  }
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (w(i, i) != 0.0) throw std::invalid_argument("fixed adjacency must have zero diagonal");
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (!std::isfinite(w(i, j)) || w(i, j) < 0.0 || w(i, j) > 1.0 || w(i, j) != w(j, i)) {
        throw std::invalid_argument("fixed adjacency entries must be symmetric and in [0, 1]");
      }
    }
  }
  AdjacencyMatrix a;
  a.category_ = category;
  a.n_ = static_cast<std::size_t>(w.rows());
  a.w_ = to_tensor(w);
  return a;
}

AdjacencyMatrix AdjacencyMatrix::diaam(const AdjacencyMatrix& init) {
  if (init.category_ != Category::S) {
    throw std::invalid_argument("DIAAM must be initialised from a distance (S) adjacency");
  }
  AdjacencyMatrix a;
  a.category_ = Category::ADistanceInit;
  a.n_ = init.n_;
  a.w_ = init.w_.detach();
  a.w_.set_requires_grad(true);
  return a;
}

AdjacencyMatrix AdjacencyMatrix::eaam(std::size_t n, std::mt19937_64& rng,
                                      std::size_t embedding_dim) {
  return eaam(Tensor::normal({n, embedding_dim}, 0.0, kEaamInitStd, rng, true),
              Tensor::normal({n, embedding_dim}, 0.0, kEaamInitStd, rng, true));
}

AdjacencyMatrix AdjacencyMatrix::eaam(Tensor e1, Tensor e2) {
  if (e1.rank() != 2 || e1.shape() != e2.shape()) {
    throw ShapeError("eaam: embeddings must both be N x e");
  }
  AdjacencyMatrix a;
  a.category_ = Category::AEmbedding;
  a.n_ = e1.dim(0);
  a.e1_ = std::move(e1);
  a.e2_ = std::move(e2);
  a.e1_.set_requires_grad(true);
  a.e2_.set_requires_grad(true);
  return a;
}

Tensor AdjacencyMatrix::weights() const {
  if (category_ == Category::AEmbedding) return eaam_weights(e1_, e2_);
  return w_;
}

Matrix AdjacencyMatrix::values() const { return to_matrix(weights()); }

std::vector<NamedTensor> AdjacencyMatrix::parameters() const {
  switch (category_) {
    case Category::ADistanceInit: return {{"adjacency.weight", w_}};
    case Category::AEmbedding: return {{"adjacency.e1", e1_}, {"adjacency.e2", e2_}};
    default: return {};
  }
}

void AdjacencyMatrix::project() {
  if (category_ != Category::ADistanceInit) return;
  for (double& v : w_.mutable_values()) v = std::clamp(v, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

std::optional<double> power_iteration_max_eigenvalue(const Matrix& m, double rel_tol,
                                                     int max_iter) {
  require_square(m, "power_iteration");
  const auto n = m.rows();
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng) * ((i % 2) ? -1.0 : 1.0);
  v.normalize();
  double lambda = v.dot(m * v);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = m * v;
    double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    double next = v.dot(m * v);
    if (std::fabs(next - lambda) <= rel_tol * std::fabs(next)) return next;
    lambda = next;
  }
  return std::nullopt;
}

Matrix normalized_laplacian(const Matrix& w) {
  require_square(w, "normalized_laplacian");
  Eigen::VectorXd deg = w.rowwise().sum();
  Eigen::VectorXd dinv = deg.unaryExpr([](double d) { return d > 0.0 ? 1.0 / std::sqrt(d) : 0.0; });
  Matrix l = -(dinv.asDiagonal() * w * dinv.asDiagonal());
  l.diagonal().array() += 1.0;
  return l;
}

namespace {

ChebyshevBasis build_basis(const Tensor& w, std::size_t order, bool learned) {
  if (order < 1) throw std::invalid_argument("chebyshev_basis: order K must be >= 1");
  if (w.rank() != 2 || w.dim(0) != w.dim(1)) {
    throw ShapeError("chebyshev_basis: adjacency must be square, got " + to_string(w.shape()));
  }
  const std::size_t n = w.dim(0);
  ChebyshevBasis basis;
  basis.order = order;
  Tensor eye = Tensor::identity(n);
  basis.terms.push_back(eye);
  if (order == 1) return basis;

  Tensor scaled;
  if (learned) {
    basis.lambda_max = 2.0;
    Tensor dinv = inv_sqrt_or_zero(sum_axis(w, 1));  // N x 1
    Tensor norm = mul(mul(dinv, w), reshape(dinv, {1, n}));
    // L̃ = 2(I - norm)/2 - I = -norm
    scaled = scale(norm, -1.0);
  } else {
    Matrix lap = normalized_laplacian(to_matrix(w));
    auto lambda = power_iteration_max_eigenvalue(lap);
    if (!lambda || *lambda <= 0.0) {
      if (!lambda) spdlog::warn("power iteration did not converge; using lambda_max = 2");
      lambda = 2.0;
    }
    basis.lambda_max = *lambda;
    Matrix lt = (2.0 / *lambda) * lap - Matrix::Identity(lap.rows(), lap.cols());
    scaled = to_tensor(lt);
  }
  basis.terms.push_back(scaled);
  for (std::size_t k = 2; k < order; ++k) {
    const Tensor& prev = basis.terms[k - 1];
    const Tensor& prev2 = basis.terms[k - 2];
    basis.terms.push_back(sub(scale(matmul(scaled, prev), 2.0), prev2));
  }
  return basis;
}

}  // namespace

ChebyshevBasis chebyshev_basis(const Tensor& w, std::size_t order) {
  return build_basis(w, order, w.requires_grad());
}

ChebyshevBasis chebyshev_basis(const AdjacencyMatrix& adj, std::size_t order) {
  return build_basis(adj.weights(), order, adj.trainable());
}

// ---------------------------------------------------------------------------

void write_adjacency_csv(std::ostream& out, const std::vector<std::string>& ids, const Matrix& w) {
  if (static_cast<Eigen::Index>(ids.size()) != w.rows() || w.rows() != w.cols()) {
    throw std::invalid_argument("write_adjacency_csv: ids do not match matrix size");
  }
  out << std::setprecision(17);
  for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? "," : "") << ids[i];
  out << '\n';
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) out << (j ? "," : "") << w(i, j);
    out << '\n';
  }
}

void write_adjacency_csv(const std::string& path, const std::vector<std::string>& ids,
                         const Matrix& w) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_adjacency_csv(out, ids, w);
}

LabelledMatrix read_adjacency_csv(std::istream& in) {
  csv::Table t = csv::read(in);
  const auto n = static_cast<Eigen::Index>(t.header.size());
  if (static_cast<Eigen::Index>(t.rows.size()) != n) {
    throw std::runtime_error("adjacency CSV has " + std::to_string(t.rows.size()) +
                             " rows for " + std::to_string(n) + " station ids");
  }
  LabelledMatrix out{t.header, Matrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.fields.size()) != n) {
      throw std::runtime_error("line " + std::to_string(row.line) + ": expected " +
                               std::to_string(n) + " values");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      out.w(i, j) = csv::parse_double(row.fields[static_cast<std::size_t>(j)], "weight", row.line);
    }
  }
  return out;
}

LabelledMatrix read_adjacency_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_adjacency_csv(in);
}

}  // namespace astgcn::graph
