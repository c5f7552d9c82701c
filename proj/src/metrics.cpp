#include "sslcrop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "sslcrop/error.hpp"
#include "sslcrop/rng.hpp"
#include "sslcrop/text.hpp"

namespace sslcrop::metrics {
namespace {

constexpr std::size_t kChunk = 256;

struct HeadOutputs {
  ad::Tensor z, p;
};

// Eval mode uses running statistics, so rows do not interact.
HeadOutputs head_outputs(const nn::ModelState& state, const std::vector<const ad::Tensor*>& samples,
                         double input_scale) {
  const std::size_t dim = state.heads.head_out;
  HeadOutputs out{ad::Tensor({samples.size(), dim}), ad::Tensor({samples.size(), dim})};
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - lo);
    std::vector<const ad::Tensor*> chunk(samples.begin() + lo, samples.begin() + lo + n);
    ad::Tape tape;
    nn::Graph g(tape, state, {}, nn::Mode::Eval);
    const ad::Var z = nn::project(g, nn::encode(g, nn::make_batch(chunk, input_scale)));
    const ad::Var p = nn::predict(g, z);
    std::copy(z.value().values().begin(), z.value().values().end(), out.z.data() + lo * dim);
    std::copy(p.value().values().begin(), p.value().values().end(), out.p.data() + lo * dim);
  }
  return out;
}

std::vector<double> unit(std::span<const double> row) {
  double sq = 0.0;
  for (double v : row) sq += v * v;
  const double norm = std::max(std::sqrt(sq), 1e-12);
  std::vector<double> out(row.begin(), row.end());
  for (double& v : out) v /= norm;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void require_heads(const nn::ModelState& state) {
  if (!state.has_heads()) throw ContractError("contrastive classification needs projector and predictor heads");
}

ContrastiveResult classify_row(const std::vector<double>& z1, const std::vector<double>& p1,
                               const std::vector<std::vector<double>>& ref_z,
                               const std::vector<std::vector<double>>& ref_p,
                               const ContrastiveReference& ref) {
  std::array<double, kNumClasses> sums{};
  for (std::size_t n = 0; n < ref_z.size(); ++n) {
    const double loss = 0.5 * -dot(p1, ref_z[n]) + 0.5 * -dot(ref_p[n], z1);
    sums[ref.class_slots[n]] += loss;
  }
  ContrastiveResult r;
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (ref.class_counts[c] == 0) continue;
    r.mean_loss[c] = sums[c] / static_cast<double>(ref.class_counts[c]);
    if (!best || *r.mean_loss[c] < *r.mean_loss[*best]) best = c;
  }
  r.predicted = data::class_from_slot(*best);
  return r;
}

std::vector<std::vector<double>> unit_rows(const ad::Tensor& t) {
  std::vector<std::vector<double>> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back(unit(t.row(r)));
  return out;
}

}  // namespace

double overall_accuracy(std::span<const CropClass> pred, std::span<const CropClass> truth) {
  if (pred.size() != truth.size()) {
    throw ContractError("prediction count " + std::to_string(pred.size()) + " != truth count " +
                        std::to_string(truth.size()));
  }
  if (pred.empty()) throw ContractError("overall accuracy of zero samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) t += v;
  }
  return t;
}

std::uint64_t ConfusionMatrix::correct() const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) t += counts[c][c];
  return t;
}

double ConfusionMatrix::overall_accuracy() const {
  const auto n = total();
  if (n == 0) throw ContractError("overall accuracy of an empty confusion matrix");
  return static_cast<double>(correct()) / static_cast<double>(n);
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const CropClass> pred,
                                                  std::span<const CropClass> truth) {
  if (pred.size() != truth.size()) {
    throw ContractError("prediction count " + std::to_string(pred.size()) + " != truth count " +
                        std::to_string(truth.size()));
  }
  ConfusionMatrix m;
  for (std::size_t i = 0; i < pred.size(); ++i) m.add(truth[i], pred[i]);
  return m;
}

std::array<std::optional<double>, kNumClasses> per_class_accuracy(const ConfusionMatrix& conf) {
  std::array<std::optional<double>, kNumClasses> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::uint64_t row = 0;
    for (auto v : conf.counts[c]) row += v;
    if (row > 0) out[c] = static_cast<double>(conf.counts[c][c]) / static_cast<double>(row);
  }
  return out;
}

ContrastiveReference prepare_reference(const nn::ModelState& state, const data::Dataset& reference,
                                       double input_scale, bool allow_missing_classes) {
  require_heads(state);
  if (reference.empty()) throw ContractError("empty contrastive reference");
  ContrastiveReference ref;
  std::vector<const ad::Tensor*> samples;
  for (const auto& s : reference.samples) {
    if (!s.label) throw ContractError("reference sample " + s.field_id + " has no label");
    const std::size_t slot = data::class_slot(*s.label);
    ref.class_slots.push_back(slot);
    ++ref.class_counts[slot];
    samples.push_back(&s.reflectance);
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (ref.class_counts[c] == 0 && !allow_missing_classes) {
      throw ContractError("reference has no sample of class " +
                          std::string(data::class_name(data::class_from_slot(c))));
    }
  }
  auto heads = head_outputs(state, samples, input_scale);
  ref.z = std::move(heads.z);
  ref.p = std::move(heads.p);
  return ref;
}

std::vector<ContrastiveResult> contrastive_classify_all(const nn::ModelState& state,
                                                        const data::Dataset& queries,
                                                        const ContrastiveReference& reference,
                                                        double input_scale) {
  require_heads(state);
  if (queries.empty()) return {};
  std::vector<const ad::Tensor*> samples;
  for (const auto& s : queries.samples) samples.push_back(&s.reflectance);
  const auto q = head_outputs(state, samples, input_scale);
  const auto ref_z = unit_rows(reference.z), ref_p = unit_rows(reference.p);
  std::vector<ContrastiveResult> out;
  out.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.push_back(classify_row(unit(q.z.row(i)), unit(q.p.row(i)), ref_z, ref_p, reference));
  }
  return out;
}

ContrastiveResult contrastive_classify(const nn::ModelState& state, const data::Sample& x1,
                                       const ContrastiveReference& reference, double input_scale) {
  data::Dataset one;
  one.samples.push_back(x1);
  return contrastive_classify_all(state, one, reference, input_scale).front();
}

ContrastiveResult contrastive_classify(const nn::ModelState& state, const data::Sample& x1,
                                       const data::Dataset& reference, double input_scale) {
  return contrastive_classify(state, x1, prepare_reference(state, reference, input_scale), input_scale);
}

PcaResult pca_project(const ad::Tensor& x, std::size_t k, const PcaOptions& options) {
  if (x.rank() != 2) throw ContractError("pca expects a matrix, got " + ad::shape_string(x.shape()));
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw ContractError("pca needs at least 2 rows");
  if (k == 0 || k > d) throw ContractError("pca k must be in [1, " + std::to_string(d) + "]");

  ad::Tensor centered = x;
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += x.at(r, c);
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) centered.at(r, c) -= mean;
  }
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += centered.at(r, i) * centered.at(r, j);
      cov[i * d + j] = cov[j * d + i] = acc / static_cast<double>(n - 1);
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += cov[i * d + i];

  PcaResult result{ad::Tensor({n, k}), ad::Tensor({k, d}), {}};
  std::vector<std::vector<double>> found;
  Rng rng(0x5ca1ab1e);
  auto multiply = [&](const std::vector<double>& v) {
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) out[i] += cov[i * d + j] * v[j];
    }
    return out;
  };
  auto orthonormalize = [&](std::vector<double>& v) {
    for (const auto& u : found) {
      const double proj = dot(v, u);
      for (std::size_t i = 0; i < d; ++i) v[i] -= proj * u[i];
    }
    const double norm = std::sqrt(dot(v, v));
    for (double& e : v) e /= norm;
  };

  for (std::size_t comp = 0; comp < k; ++comp) {
    std::vector<double> v(d);
    for (double& e : v) e = rng.normal();
    orthonormalize(v);
    double lambda = 0.0;
    bool converged = false;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      std::vector<double> w = multiply(v);
      lambda = dot(v, w);
      double residual = 0.0;
      for (std::size_t i = 0; i < d; ++i) residual += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
      if (std::sqrt(residual) <= options.tolerance * std::max(total, 1e-300)) {
        converged = true;
        break;
      }
      v = std::move(w);
      orthonormalize(v);
    }
    if (!converged) {
      throw ConvergenceError(options.max_iterations,
                             "pca component " + std::to_string(comp + 1) + " did not converge");
    }
    std::size_t big = 0;
    for (std::size_t i = 1; i < d; ++i) {
      if (std::abs(v[i]) > std::abs(v[big])) big = i;
    }
    if (v[big] < 0.0) {
      for (double& e : v) e = -e;
    }
    // Deflate so the next iteration finds the next component.
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] -= lambda * v[i] * v[j];
    }
    result.explained.push_back(total > 0.0 ? std::max(lambda, 0.0) / total : 0.0);
    for (std::size_t i = 0; i < d; ++i) result.components.at(comp, i) = v[i];
    for (std::size_t r = 0; r < n; ++r) result.coordinates.at(r, comp) = dot(centered.row(r), v);
    found.push_back(std::move(v));
  }
  return result;
}

void write_embedding_csv(const data::Dataset& d, const ad::Tensor& coordinates, std::ostream& out) {
  if (coordinates.rank() != 2 || coordinates.rows() != d.size() || coordinates.cols() < 2) {
    throw ContractError("embedding coordinates " + ad::shape_string(coordinates.shape()) +
                        " do not match " + std::to_string(d.size()) + " samples x 2");
  }
  out << "sample_id,class,pc1,pc2\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.samples[i];
    out << s.field_id << ',';
    if (s.label) out << data::class_index(*s.label);
    out << ',' << format_double(coordinates.at(i, 0)) << ',' << format_double(coordinates.at(i, 1))
        << '\n';
  }
}

}  // namespace sslcrop::metrics
