// SPDX-License-Identifier: Apache-2.0
#include "lava/model/model_stack.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lava/errors.hpp"
#include "lava/model/softmax.hpp"
#include "lava/rng.hpp"

namespace lava::model {

namespace {

constexpr double kNormFloor = 1e-12;

void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
}

Matrix gelu_of(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

Matrix gelu_backward(const Matrix& pre, const Matrix& upstream) {
  return upstream.cwiseProduct(pre.unaryExpr([](double v) { return gelu_grad(v); }));
}

// y = x W^T + b
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

// Effective weight g_i * v_i / |v_i| of a weight-normalized layer.
Matrix weight_norm_weight(const Matrix& direction, const Matrix& magnitude) {
  Matrix w = direction;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double n = std::max(direction.row(i).norm(), kNormFloor);
    w.row(i) *= magnitude(0, i) / n;
  }
  return w;
}

// Chain rule from dL/dW to the direction and magnitude parameters. A null
// magnitude means unit rows.
void weight_norm_backward(const Matrix& d_weight, Parameter& direction, Parameter* magnitude) {
  for (Eigen::Index i = 0; i < direction.value.rows(); ++i) {
    const double n = std::max(direction.value.row(i).norm(), kNormFloor);
    const RowVector unit = direction.value.row(i) / n;
    const double along = d_weight.row(i).dot(unit);
    const double g = magnitude ? magnitude->value(0, i) : 1.0;
    if (magnitude) magnitude->grad(0, i) += along;
    direction.grad.row(i) += (g / n) * (d_weight.row(i) - along * unit);
  }
}

Matrix unit_rows(const Matrix& direction) {
  return direction.array().colwise() / direction.rowwise().norm().cwiseMax(kNormFloor).array();
}

void accumulate_affine(const Matrix& input, const Matrix& d_out, Parameter& w, Parameter* b) {
  w.grad.noalias() += d_out.transpose() * input;
  if (b) b->grad.row(0) += d_out.colwise().sum();
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void Architecture::validate() const {
  if (channels <= 0 || conv_channels <= 0 || patch <= 0 || feature_dim <= 0 || hidden_dim <= 0 ||
      projection_dim <= 0 || semantic_dim <= 0 || num_classes <= 0 || ssl_dim <= 0)
    throw ConfigError("architecture sizes must be positive");
}

bool Trainable::contains(Group g) const {
  switch (g) {
    case Group::Backbone: return backbone;
    case Group::Projection: return projection;
    case Group::Semantic: return semantic;
    case Group::Classifier: return classifier;
    case Group::Ssl: return ssl;
  }
  return false;
}

ModelStack::ModelStack(const Architecture& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  build(seed);
}

ModelStack ModelStack::from_parameters(const Architecture& arch, ParameterSet params) {
  arch.validate();
  ModelStack reference(arch, 0);
  if (!reference.params_.same_layout(params))
    throw ContractError("parameter layout does not match the architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    params.items()[i].group = reference.params_.items()[i].group;
    params.items()[i].decay = reference.params_.items()[i].decay;
    params.items()[i].buffer = reference.params_.items()[i].buffer;
    params.items()[i].grad = Matrix::Zero(params.items()[i].value.rows(), params.items()[i].value.cols());
  }
  ModelStack s;
  s.arch_ = arch;
  s.params_ = std::move(params);
  return s;
}

void ModelStack::build(std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x5EEDULL}));
  const auto& a = arch_;
  const int conv_in = a.channels * 9;
  const int patch_in = a.conv_channels * a.patch * a.patch;

  auto linear = [&](const std::string& name, Group g, int out, int in, double gain) {
    fill_normal(params_.add(name + ".weight", g, out, in, true).value, rng, gain / std::sqrt(static_cast<double>(in)));
    params_.add(name + ".bias", g, 1, out, false);
  };
  auto weight_norm = [&](const std::string& name, Group g, int out, int in, bool bias) {
    fill_normal(params_.add(name + ".direction", g, out, in, true).value, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    params_.add(name + ".magnitude", g, 1, out, false).value.setOnes();
    if (bias) params_.add(name + ".bias", g, 1, out, false);
  };
  // Unit rows with no learnable gain, so the head cannot shrink its logits.
  auto normalized = [&](const std::string& name, Group g, int out, int in) {
    fill_normal(params_.add(name + ".direction", g, out, in, true).value, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  };

  linear("backbone.conv", Group::Backbone, a.conv_channels, conv_in, std::numbers::sqrt2);
  linear("backbone.patch", Group::Backbone, a.feature_dim, patch_in, std::numbers::sqrt2);
  params_.add("projection.input_mean", Group::Projection, 1, a.feature_dim, false).buffer = true;
  linear("projection.0", Group::Projection, a.hidden_dim, a.feature_dim, std::numbers::sqrt2);
  linear("projection.1", Group::Projection, a.hidden_dim, a.hidden_dim, std::numbers::sqrt2);
  linear("projection.2", Group::Projection, a.projection_dim, a.hidden_dim, 1.0);
  weight_norm("semantic.0", Group::Semantic, a.hidden_dim, a.projection_dim, true);
  weight_norm("semantic.1", Group::Semantic, a.semantic_dim, a.hidden_dim, true);
  normalized("ssl", Group::Ssl, a.ssl_dim, a.projection_dim);
  add_classifier(derive_seed({seed, 0xC1A55ULL}));
}

void ModelStack::add_classifier(std::uint64_t seed) {
  Rng rng(seed);
  auto& dir = params_.add("classifier.direction", Group::Classifier, arch_.num_classes, arch_.projection_dim, true);
  fill_normal(dir.value, rng, 1.0 / std::sqrt(static_cast<double>(arch_.projection_dim)));
  params_.add("classifier.magnitude", Group::Classifier, 1, arch_.num_classes, false).value.setOnes();
}

void ModelStack::update_input_mean(const Vector& batch_mean, double momentum) {
  Matrix& mu = params_.at("projection.input_mean").value;
  if (batch_mean.size() != mu.cols()) throw ContractError("feature mean has the wrong dimension");
  if (momentum < 0.0 || momentum > 1.0) throw DomainError("feature mean momentum outside [0, 1]");
  if (mu.isZero(0.0))
    mu.row(0) = batch_mean.transpose();
  else
    mu.row(0) = momentum * mu.row(0) + (1.0 - momentum) * batch_mean.transpose();
}

void ModelStack::reset_classifier(int num_classes, std::uint64_t seed) {
  if (num_classes <= 0) throw ConfigError("classifier needs at least one class");
  auto& items = params_.items();
  std::erase_if(items, [](const Parameter& p) { return p.group == Group::Classifier; });
  arch_.num_classes = num_classes;
  add_classifier(seed);
}

void ModelStack::check_input(const views::Image& img) const {
  if (img.channels != arch_.channels)
    throw ConfigError("image has " + std::to_string(img.channels) + " channels, backbone expects " +
                      std::to_string(arch_.channels));
  if (img.height < arch_.patch || img.width < arch_.patch || img.height % arch_.patch != 0 ||
      img.width % arch_.patch != 0)
    throw ConfigError("image size " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                      " is not a positive multiple of the patch size " + std::to_string(arch_.patch));
}

StackOutputs ModelStack::forward(std::span<const views::Image* const> images, ForwardCache* cache) const {
  if (images.empty()) throw ContractError("forward on an empty batch");
  const auto& a = arch_;
  const views::Image& first = *images.front();
  check_input(first);
  for (const auto* img : images)
    if (!img->same_shape(first)) throw ContractError("forward batch mixes image shapes");

  const Eigen::Index n = static_cast<Eigen::Index>(images.size());
  const int h = first.height;
  const int w = first.width;
  const int ch = a.channels;
  const Eigen::Index pixels = static_cast<Eigen::Index>(h) * w;

  // im2col for a 3x3 kernel with zero padding 1; column order (c, ky, kx).
  Matrix cols = Matrix::Zero(n * pixels, ch * 9);
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& img = *images[static_cast<std::size_t>(b)];
    // Per-channel median subtraction; the background maps to zero like the padding.
    std::vector<double> mean(static_cast<std::size_t>(ch), 0.0);
    std::vector<double> values(static_cast<std::size_t>(pixels));
    for (int c = 0; c < ch; ++c) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) values[static_cast<std::size_t>(y * w + x)] = img.at(c, y, x);
      const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
      std::nth_element(values.begin(), mid, values.end());
      mean[static_cast<std::size_t>(c)] = *mid;
    }
    // Scale to unit RMS so brightness and contrast shifts cancel.
    double sq = 0.0;
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double v = img.at(c, y, x) - mean[static_cast<std::size_t>(c)];
          sq += v * v;
        }
    const double inv_scale = 1.0 / std::max(std::sqrt(sq / static_cast<double>(ch * pixels)), 1e-3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double* row = cols.row(b * pixels + y * w + x).data();
        for (int c = 0; c < ch; ++c)
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= w) continue;
              row[c * 9 + ky * 3 + kx] = (img.at(c, sy, sx) - mean[static_cast<std::size_t>(c)]) * inv_scale;
            }
          }
      }
  }
  Matrix conv_pre = affine(cols, params_.at("backbone.conv.weight").value, params_.at("backbone.conv.bias").value);
  const Matrix conv_act = gelu_of(conv_pre);

  // Non-overlapping patches; column order (c, dy, dx).
  const int p = a.patch;
  const int ph = h / p;
  const int pw = w / p;
  const Eigen::Index per_image = static_cast<Eigen::Index>(ph) * pw;
  const int cc = a.conv_channels;
  Matrix patches(n * per_image, cc * p * p);
  for (Eigen::Index b = 0; b < n; ++b)
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        double* row = patches.row(b * per_image + py * pw + px).data();
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const double* src = conv_act.row(b * pixels + (py * p + dy) * w + px * p + dx).data();
            for (int c = 0; c < cc; ++c) row[c * p * p + dy * p + dx] = src[c];
          }
      }
  Matrix patch_pre = affine(patches, params_.at("backbone.patch.weight").value, params_.at("backbone.patch.bias").value);
  const Matrix patch_act = gelu_of(patch_pre);
  // Max pool over patches; ties go to the first patch.
  Matrix z(n, a.feature_dim);
  std::vector<Eigen::Index> winners(static_cast<std::size_t>(n * a.feature_dim));
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index f = 0; f < a.feature_dim; ++f) {
      Eigen::Index best = 0;
      z(b, f) = patch_act.col(f).segment(b * per_image, per_image).maxCoeff(&best);
      winners[static_cast<std::size_t>(b * a.feature_dim + f)] = b * per_image + best;
    }

  StackOutputs out = forward_heads(z, cache);
  if (cache) {
    cache->height = h;
    cache->width = w;
    cache->cols = std::move(cols);
    cache->conv_pre = std::move(conv_pre);
    cache->patches = std::move(patches);
    cache->patch_pre = std::move(patch_pre);
    cache->pool_winners = std::move(winners);
  }
  return out;
}

StackOutputs ModelStack::forward_heads(const Matrix& z, ForwardCache* cache) const {
  if (z.rows() == 0 || z.cols() != arch_.feature_dim) throw ContractError("feature matrix has the wrong shape");
  const Eigen::Index n = z.rows();
  Matrix zc = z.rowwise() - params_.at("projection.input_mean").value.row(0);
  Matrix pre0 = affine(zc, params_.at("projection.0.weight").value, params_.at("projection.0.bias").value);
  Matrix act0 = gelu_of(pre0);
  Matrix pre1 = affine(act0, params_.at("projection.1.weight").value, params_.at("projection.1.bias").value);
  Matrix act1 = gelu_of(pre1);
  Matrix q = affine(act1, params_.at("projection.2.weight").value, params_.at("projection.2.bias").value);

  Matrix sem_pre = affine(q, weight_norm_weight(params_.at("semantic.0.direction").value, params_.at("semantic.0.magnitude").value),
                          params_.at("semantic.0.bias").value);
  Matrix sem_act = gelu_of(sem_pre);
  Matrix m = affine(sem_act, weight_norm_weight(params_.at("semantic.1.direction").value, params_.at("semantic.1.magnitude").value),
                    params_.at("semantic.1.bias").value);

  Vector q_norm = q.rowwise().norm().cwiseMax(kNormFloor);
  Matrix q_unit = q.array().colwise() / q_norm.array();
  Matrix logits = q_unit * weight_norm_weight(params_.at("classifier.direction").value, params_.at("classifier.magnitude").value).transpose();
  Matrix ssl = q_unit * unit_rows(params_.at("ssl.direction").value).transpose();

  StackOutputs out{z, q, m, std::move(logits), std::move(ssl)};
  if (cache) {
    cache->batch = n;
    cache->cols.resize(0, 0);
    cache->z = std::move(zc);
    cache->proj_pre0 = std::move(pre0);
    cache->proj_act0 = std::move(act0);
    cache->proj_pre1 = std::move(pre1);
    cache->proj_act1 = std::move(act1);
    cache->q = std::move(q);
    cache->q_norm = std::move(q_norm);
    cache->q_unit = std::move(q_unit);
    cache->sem_pre = std::move(sem_pre);
    cache->sem_act = std::move(sem_act);
  }
  return out;
}

void ModelStack::backward(const ForwardCache& cache, const OutputGrads& grads, const Trainable& trainable) {
  const auto& a = arch_;
  const Eigen::Index n = cache.batch;
  auto check_rows = [n](const Matrix& g, Eigen::Index cols, const char* what) {
    if (g.size() != 0 && (g.rows() != n || g.cols() != cols))
      throw ContractError(std::string("gradient shape mismatch for ") + what);
  };
  check_rows(grads.m, a.semantic_dim, "m");
  check_rows(grads.logits, a.num_classes, "logits");
  check_rows(grads.ssl_logits, a.ssl_dim, "ssl logits");

  const bool need_q = trainable.projection || trainable.backbone;
  Matrix d_q = Matrix::Zero(n, a.projection_dim);
  Matrix d_q_unit = Matrix::Zero(n, a.projection_dim);

  auto unit_head = [&](const Matrix& d_out, const char* prefix, bool train, bool has_magnitude) {
    if (d_out.size() == 0) return;
    auto& dir = params_.at(std::string(prefix) + ".direction");
    Parameter* mag = has_magnitude ? &params_.at(std::string(prefix) + ".magnitude") : nullptr;
    if (train) weight_norm_backward(d_out.transpose() * cache.q_unit, dir, mag);
    if (need_q) d_q_unit.noalias() += d_out * (mag ? weight_norm_weight(dir.value, mag->value) : unit_rows(dir.value));
  };
  unit_head(grads.logits, "classifier", trainable.classifier, true);
  unit_head(grads.ssl_logits, "ssl", trainable.ssl, false);

  if (grads.m.size() != 0) {
    auto& dir1 = params_.at("semantic.1.direction");
    auto& mag1 = params_.at("semantic.1.magnitude");
    auto& b1 = params_.at("semantic.1.bias");
    auto& dir0 = params_.at("semantic.0.direction");
    auto& mag0 = params_.at("semantic.0.magnitude");
    auto& b0 = params_.at("semantic.0.bias");
    if (trainable.semantic) {
      weight_norm_backward(grads.m.transpose() * cache.sem_act, dir1, &mag1);
      b1.grad.row(0) += grads.m.colwise().sum();
    }
    const Matrix d_sem_pre = gelu_backward(cache.sem_pre, grads.m * weight_norm_weight(dir1.value, mag1.value));
    if (trainable.semantic) {
      weight_norm_backward(d_sem_pre.transpose() * cache.q, dir0, &mag0);
      b0.grad.row(0) += d_sem_pre.colwise().sum();
    }
    if (need_q) d_q.noalias() += d_sem_pre * weight_norm_weight(dir0.value, mag0.value);
  }
  if (!need_q) return;

  // Through q_unit = q / |q|.
  for (Eigen::Index r = 0; r < n; ++r) {
    const double along = d_q_unit.row(r).dot(cache.q_unit.row(r));
    d_q.row(r) += (d_q_unit.row(r) - along * cache.q_unit.row(r)) / cache.q_norm[r];
  }

  auto& w2 = params_.at("projection.2.weight");
  auto& w1 = params_.at("projection.1.weight");
  auto& w0 = params_.at("projection.0.weight");
  if (trainable.projection) accumulate_affine(cache.proj_act1, d_q, w2, &params_.at("projection.2.bias"));
  const Matrix d_pre1 = gelu_backward(cache.proj_pre1, d_q * w2.value);
  if (trainable.projection) accumulate_affine(cache.proj_act0, d_pre1, w1, &params_.at("projection.1.bias"));
  const Matrix d_pre0 = gelu_backward(cache.proj_pre0, d_pre1 * w1.value);
  if (trainable.projection) accumulate_affine(cache.z, d_pre0, w0, &params_.at("projection.0.bias"));
  if (!trainable.backbone) return;
  if (cache.cols.size() == 0) throw ContractError("backbone gradient needs a full forward cache");
  const Matrix d_z = d_pre0 * w0.value;

  const int p = a.patch;
  const int h = cache.height;
  const int w = cache.width;
  const int pw = w / p;
  const Eigen::Index per_image = static_cast<Eigen::Index>(h / p) * pw;
  const Eigen::Index pixels = static_cast<Eigen::Index>(h) * w;
  const int cc = a.conv_channels;

  Matrix d_patch_act = Matrix::Zero(n * per_image, a.feature_dim);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index f = 0; f < a.feature_dim; ++f)
      d_patch_act(cache.pool_winners[static_cast<std::size_t>(b * a.feature_dim + f)], f) = d_z(b, f);
  const Matrix d_patch_pre = gelu_backward(cache.patch_pre, d_patch_act);
  auto& wp = params_.at("backbone.patch.weight");
  accumulate_affine(cache.patches, d_patch_pre, wp, &params_.at("backbone.patch.bias"));
  const Matrix d_patches = d_patch_pre * wp.value;

  Matrix d_conv_act(n * pixels, cc);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index pi = 0; pi < per_image; ++pi) {
      const int py = static_cast<int>(pi / pw);
      const int px = static_cast<int>(pi % pw);
      const double* row = d_patches.row(b * per_image + pi).data();
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx) {
          double* dst = d_conv_act.row(b * pixels + (py * p + dy) * w + px * p + dx).data();
          for (int c = 0; c < cc; ++c) dst[c] = row[c * p * p + dy * p + dx];
        }
    }
  const Matrix d_conv_pre = gelu_backward(cache.conv_pre, d_conv_act);
  accumulate_affine(cache.cols, d_conv_pre, params_.at("backbone.conv.weight"), &params_.at("backbone.conv.bias"));
}

ForwardResult forward(const ModelStack& stack, const views::Image& image, double tau) {
  if (!(tau > 0.0)) throw DomainError("temperature must be > 0");
  const views::Image* batch[] = {&image};
  StackOutputs out = stack.forward(batch);
  return ForwardResult{out.z.row(0).transpose(), out.q.row(0).transpose(), out.m.row(0).transpose(),
                       temperature_softmax(Vector(out.logits.row(0).transpose()), tau),
                       out.ssl_logits.row(0).transpose()};
}

}  // namespace lava::model
