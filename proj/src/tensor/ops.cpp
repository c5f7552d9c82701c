#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "sslcrop/autodiff.hpp"
#include "sslcrop/error.hpp"

namespace sslcrop::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

void require_same_tape(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ContractError("operands must live on the same tape");
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rows_of(const char* op, const Tensor& a, std::size_t steps) {
  if (a.rank() < 2 || steps == 0 || a.rows() % steps != 0) {
    throw DimensionError(std::string(op) + ": " + shape_string(a.shape()) +
                         " is not a stack of " + std::to_string(steps) + "-step blocks");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() != 2 || av.cols() != bv.shape()[0]) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(av.shape()) +
                         " and " + shape_string(bv.shape()));
  }
  Shape out_shape = av.shape();
  out_shape.back() = bv.cols();
  Tensor out(out_shape);
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);

  return a.tape()->record(std::move(out), {a, b}, [](const BackwardArgs& g) {
    const auto grad = as_matrix(g.output_grad);
    if (g.input_grads[0]) {
      as_matrix(*g.input_grads[0]).noalias() += grad * as_matrix(*g.inputs[1]).transpose();
    }
    if (g.input_grads[1]) {
      as_matrix(*g.input_grads[1]).noalias() += as_matrix(*g.inputs[0]).transpose() * grad;
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out += b.value();
  return a.tape()->record(std::move(out), {a, b}, [](const BackwardArgs& g) {
    for (Tensor* dst : g.input_grads) {
      if (dst) *dst += g.output_grad;
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [](const BackwardArgs& g) {
    if (g.input_grads[0]) *g.input_grads[0] += g.output_grad;
    if (Tensor* db = g.input_grads[1]) {
      for (std::size_t i = 0; i < db->size(); ++i) (*db)[i] -= g.output_grad[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [](const BackwardArgs& g) {
    for (int k = 0; k < 2; ++k) {
      Tensor* dst = g.input_grads[k];
      if (!dst) continue;
      const Tensor& other = *g.inputs[1 - k];
      for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] += g.output_grad[i] * other[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return a.tape()->record(std::move(out), {a}, [factor](const BackwardArgs& g) {
    Tensor& dst = *g.input_grads[0];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * g.output_grad[i];
  });
}

Var add_bias(Var a, Var bias) {
  require_same_tape(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || bv.size() != av.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) +
                         " does not match last axis of " + shape_string(av.shape()));
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return a.tape()->record(std::move(out), {a, bias}, [](const BackwardArgs& g) {
    if (g.input_grads[0]) *g.input_grads[0] += g.output_grad;
    if (Tensor* db = g.input_grads[1]) {
      for (std::size_t r = 0; r < g.output_grad.rows(); ++r) {
        auto row = g.output_grad.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) (*db)[c] += row[c];
      }
    }
  });
}

Var scale_columns(Var a, Var factors) {
  require_same_tape(a, factors);
  const Tensor& x = a.value();
  const Tensor& f = factors.value();
  if (f.shape() != Shape{x.cols()}) {
    throw DimensionError("scale_columns: factors must be [" + std::to_string(x.cols()) + "], got " +
                         shape_string(f.shape()));
  }
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] *= f[c];
  }
  return a.tape()->record(std::move(out), {a, factors}, [](const BackwardArgs& g) {
    const Tensor& x = *g.inputs[0];
    const Tensor& f = *g.inputs[1];
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto dy = g.output_grad.row(r);
      if (Tensor* dx = g.input_grads[0]) {
        auto dst = dx->row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += dy[c] * f[c];
      }
      if (Tensor* df = g.input_grads[1]) {
        auto xr = x.row(r);
        for (std::size_t c = 0; c < xr.size(); ++c) (*df)[c] += dy[c] * xr[c];
      }
    }
  });
}

Var batch_norm(Var a, Var gain, Var bias, double eps, BatchStats* stats) {
  require_same_tape(a, gain);
  require_same_tape(a, bias);
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("batch_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_string(gain.value().shape()) + " and " +
                         shape_string(bias.value().shape()));
  }
  if (n == 0) throw DimensionError("batch_norm: empty batch");
  if (!(eps > 0.0)) throw ContractError("batch_norm: eps must be positive");

  Tensor mean({d}), var({d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += x.at(r, c);
  }
  for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) var[c] += (x.at(r, c) - mean[c]) * (x.at(r, c) - mean[c]);
  }
  for (std::size_t c = 0; c < d; ++c) var[c] /= static_cast<double>(n);
  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  Tensor normalized(x.shape()), out(x.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      normalized.at(r, c) = (x.at(r, c) - mean[c]) * inv_std[c];
      out.at(r, c) = normalized.at(r, c) * gv[c] + bv[c];
    }
  }
  if (stats) *stats = {std::move(mean), std::move(var), n};

  return a.tape()->record(
      std::move(out), {a, gain, bias},
      [normalized = std::move(normalized), inv_std = std::move(inv_std)](const BackwardArgs& g) {
        const std::size_t n = normalized.rows(), d = normalized.cols();
        const Tensor& gv = *g.inputs[1];
        std::vector<double> sum_dxh(d, 0.0), sum_dxh_xh(d, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            const double dy = g.output_grad.at(r, c);
            if (Tensor* dg = g.input_grads[1]) (*dg)[c] += dy * normalized.at(r, c);
            if (Tensor* db = g.input_grads[2]) (*db)[c] += dy;
            const double dxh = dy * gv[c];
            sum_dxh[c] += dxh;
            sum_dxh_xh[c] += dxh * normalized.at(r, c);
          }
        }
        Tensor* dx = g.input_grads[0];
        if (!dx) return;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            const double dxh = g.output_grad.at(r, c) * gv[c];
            dx->at(r, c) += inv_std[c] * (dxh - inv_n * sum_dxh[c] -
                                          normalized.at(r, c) * inv_n * sum_dxh_xh[c]);
          }
        }
      });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.tape()->record(std::move(out), {a}, [](const BackwardArgs& g) {
    Tensor& dst = *g.input_grads[0];
    const Tensor& x = *g.inputs[0];
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (x[i] > 0.0) dst[i] += g.output_grad[i];
    }
  });
}

Var softmax_rows(Var a) {
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return a.tape()->record(std::move(out), {a}, [](const BackwardArgs& g) {
    Tensor& dst = *g.input_grads[0];
    for (std::size_t r = 0; r < g.output.rows(); ++r) {
      auto y = g.output.row(r);
      auto dy = g.output_grad.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * dy[c];
      auto dx = dst.row(r);
      for (std::size_t c = 0; c < y.size(); ++c) dx[c] += y[c] * (dy[c] - dot);
    }
  });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  require_same_tape(a, gain);
  require_same_tape(a, bias);
  const Tensor& x = a.value();
  const std::size_t d = x.cols();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_string(gain.value().shape()) + " and " +
                         shape_string(bias.value().shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");

  Tensor normalized(x.shape());
  std::vector<double> inv_std(x.rows());
  Tensor out(x.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto xh = normalized.row(r);
    auto y = out.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      xh[c] = (in[c] - mu) * inv_std[r];
      y[c] = xh[c] * gv[c] + bv[c];
    }
  }

  return a.tape()->record(
      std::move(out), {a, gain, bias},
      [normalized = std::move(normalized), inv_std = std::move(inv_std)](const BackwardArgs& g) {
        const std::size_t d = normalized.cols();
        const Tensor& gv = *g.inputs[1];
        std::vector<double> dxh(d);
        for (std::size_t r = 0; r < normalized.rows(); ++r) {
          auto xh = normalized.row(r);
          auto dy = g.output_grad.row(r);
          if (Tensor* dg = g.input_grads[1]) {
            for (std::size_t c = 0; c < d; ++c) (*dg)[c] += dy[c] * xh[c];
          }
          if (Tensor* db = g.input_grads[2]) {
            for (std::size_t c = 0; c < d; ++c) (*db)[c] += dy[c];
          }
          if (Tensor* dx = g.input_grads[0]) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dxh[c] = dy[c] * gv[c];
              mean_dxh += dxh[c];
              mean_dxh_xh += dxh[c] * xh[c];
            }
            mean_dxh /= static_cast<double>(d);
            mean_dxh_xh /= static_cast<double>(d);
            auto out_row = dx->row(r);
            for (std::size_t c = 0; c < d; ++c) {
              out_row[c] += inv_std[r] * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
            }
          }
        }
      });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.tape()->record(Tensor::scalar(total), {a}, [](const BackwardArgs& g) {
    const double s = g.output_grad[0];
    for (double& v : g.input_grads[0]->values()) v += s;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var l2_normalize_rows(Var a, double eps) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double sq = 0.0;
    for (double v : in) sq += v * v;
    norms[r] = std::sqrt(sq);
    const double denom = std::max(norms[r], eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] / denom;
  }
  return a.tape()->record(
      std::move(out), {a}, [norms = std::move(norms), eps](const BackwardArgs& g) {
        Tensor& dst = *g.input_grads[0];
        for (std::size_t r = 0; r < g.output.rows(); ++r) {
          auto y = g.output.row(r);
          auto dy = g.output_grad.row(r);
          auto dx = dst.row(r);
          if (norms[r] > eps) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * dy[c];
            for (std::size_t c = 0; c < y.size(); ++c) dx[c] += (dy[c] - y[c] * dot) / norms[r];
          } else {
            // Constant denominator branch.
            for (std::size_t c = 0; c < y.size(); ++c) dx[c] += dy[c] / eps;
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.rows() != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = z.rows();
  Tensor probs(z.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= z.cols()) throw ContractError("cross_entropy: label out of range");
    auto in = z.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double v : in) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    total += lse - in[labels[r]];
    auto p = probs.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) p[c] = std::exp(in[c] - lse);
  }
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return logits.tape()->record(
      Tensor::scalar(total / static_cast<double>(n)), {logits},
      [probs = std::move(probs), targets = std::move(targets)](const BackwardArgs& g) {
        Tensor& dst = *g.input_grads[0];
        const double s = g.output_grad[0] / static_cast<double>(targets.size());
        for (std::size_t r = 0; r < targets.size(); ++r) {
          auto p = probs.row(r);
          auto dx = dst.row(r);
          for (std::size_t c = 0; c < p.size(); ++c) {
            dx[c] += s * (p[c] - (c == targets[r] ? 1.0 : 0.0));
          }
        }
      });
}

Var attention_scores(Var q, Var k, std::size_t steps, std::size_t heads) {
  require_same_tape(q, k);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  require_same_shape("attention_scores", qv, kv);
  require_rows_of("attention_scores", qv, steps);
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention_scores: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t batch = qv.rows() / steps;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out({batch * heads * steps, steps});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < steps; ++i) {
        const double* qi = qv.data() + (b * steps + i) * d + h * dh;
        double* orow = out.data() + ((b * heads + h) * steps + i) * steps;
        for (std::size_t j = 0; j < steps; ++j) {
          const double* kj = kv.data() + (b * steps + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          orow[j] = s * inv_sqrt;
        }
      }
    }
  }

  return q.tape()->record(
      std::move(out), {q, k}, [steps, heads, batch, d, dh, inv_sqrt](const BackwardArgs& g) {
        const Tensor& qv = *g.inputs[0];
        const Tensor& kv = *g.inputs[1];
        Tensor* dq = g.input_grads[0];
        Tensor* dk = g.input_grads[1];
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < steps; ++i) {
              const double* grow = g.output_grad.data() + ((b * heads + h) * steps + i) * steps;
              const std::size_t qoff = (b * steps + i) * d + h * dh;
              for (std::size_t j = 0; j < steps; ++j) {
                const double w = grow[j] * inv_sqrt;
                if (w == 0.0) continue;
                const std::size_t koff = (b * steps + j) * d + h * dh;
                if (dq) {
                  for (std::size_t c = 0; c < dh; ++c) (*dq)[qoff + c] += w * kv[koff + c];
                }
                if (dk) {
                  for (std::size_t c = 0; c < dh; ++c) (*dk)[koff + c] += w * qv[qoff + c];
                }
              }
            }
          }
        }
      });
}

Var attention_apply(Var weights, Var v, std::size_t steps, std::size_t heads) {
  require_same_tape(weights, v);
  const Tensor& wv = weights.value();
  const Tensor& vv = v.value();
  require_rows_of("attention_apply", vv, steps);
  const std::size_t d = vv.cols();
  const std::size_t batch = vv.rows() / steps;
  if (heads == 0 || d % heads != 0 || wv.rank() != 2 || wv.cols() != steps ||
      wv.rows() != batch * heads * steps) {
    throw DimensionError("attention_apply: weights " + shape_string(wv.shape()) +
                         " incompatible with values " + shape_string(vv.shape()));
  }
  const std::size_t dh = d / heads;

  Tensor out(vv.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < steps; ++i) {
        const double* wrow = wv.data() + ((b * heads + h) * steps + i) * steps;
        double* orow = out.data() + (b * steps + i) * d + h * dh;
        for (std::size_t j = 0; j < steps; ++j) {
          const double* vj = vv.data() + (b * steps + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += wrow[j] * vj[c];
        }
      }
    }
  }

  return weights.tape()->record(
      std::move(out), {weights, v}, [steps, heads, batch, d, dh](const BackwardArgs& g) {
        const Tensor& wv = *g.inputs[0];
        const Tensor& vv = *g.inputs[1];
        Tensor* dw = g.input_grads[0];
        Tensor* dv = g.input_grads[1];
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < steps; ++i) {
              const std::size_t wrow = ((b * heads + h) * steps + i) * steps;
              const double* gi = g.output_grad.data() + (b * steps + i) * d + h * dh;
              for (std::size_t j = 0; j < steps; ++j) {
                const std::size_t voff = (b * steps + j) * d + h * dh;
                if (dw) {
                  double s = 0.0;
                  for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vv[voff + c];
                  (*dw)[wrow + j] += s;
                }
                if (dv) {
                  const double w = wv[wrow + j];
                  for (std::size_t c = 0; c < dh; ++c) (*dv)[voff + c] += w * gi[c];
                }
              }
            }
          }
        }
      });
}

Var max_pool_steps(Var a, std::size_t steps) {
  const Tensor& x = a.value();
  require_rows_of("max_pool_steps", x, steps);
  const std::size_t d = x.cols();
  const std::size_t batch = x.rows() / steps;
  Tensor out({batch, d});
  std::vector<std::size_t> argmax(batch * d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t best = 0;
      double best_v = x.at(b * steps, c);
      for (std::size_t t = 1; t < steps; ++t) {
        const double v = x.at(b * steps + t, c);
        if (v > best_v) {
          best_v = v;
          best = t;
        }
      }
      out.at(b, c) = best_v;
      argmax[b * d + c] = (b * steps + best) * d + c;
    }
  }
  return a.tape()->record(std::move(out), {a},
                          [argmax = std::move(argmax)](const BackwardArgs& g) {
                            Tensor& dst = *g.input_grads[0];
                            for (std::size_t i = 0; i < argmax.size(); ++i) {
                              dst[argmax[i]] += g.output_grad[i];
                            }
                          });
}

}  // namespace sslcrop::ad
