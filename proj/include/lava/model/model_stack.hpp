// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lava/model/parameters.hpp"
#include "lava/types.hpp"
#include "lava/views/image.hpp"

namespace lava::model {

/// Layer widths of the stack. Defaults are the desk-scale sizes.
struct Architecture {
  int channels = 3;
  int conv_channels = 16;
  int patch = 4;
  int feature_dim = 64;      // |z|
  int hidden_dim = 128;      // projection and semantic hidden width
  int projection_dim = 32;   // |q|
  int semantic_dim = 16;     // |m|, must match the embedding table
  int num_classes = 10;      // classifier outputs
  int ssl_dim = 128;         // self-distillation head outputs

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

/// Outputs for a batch, one row per input image.
struct StackOutputs {
  Matrix z;
  Matrix q;
  Matrix m;
  Matrix logits;
  Matrix ssl_logits;
};

/// Intermediate activations kept by a training forward pass.
struct ForwardCache {
  Eigen::Index batch = 0;
  int height = 0;
  int width = 0;
  Matrix cols;
  Matrix conv_pre;
  Matrix patches;
  Matrix patch_pre;
  std::vector<Eigen::Index> pool_winners;  // patch row chosen per (image, feature)
  Matrix z;  // centered features
  Matrix proj_pre0, proj_act0, proj_pre1, proj_act1;
  Matrix q;
  Vector q_norm;
  Matrix q_unit;
  Matrix sem_pre, sem_act;
};

/// Upstream gradients w.r.t. the head outputs. An empty matrix means the
/// corresponding head receives no gradient.
struct OutputGrads {
  Matrix m;
  Matrix logits;
  Matrix ssl_logits;
};

/// Parameter groups that receive gradients.
struct Trainable {
  bool backbone = true;
  bool projection = true;
  bool semantic = true;
  bool classifier = true;
  bool ssl = true;

  bool contains(Group g) const;
  static Trainable all() { return {}; }
  static Trainable only_semantic() { return {false, false, true, false, false}; }
  static Trainable frozen_backbone() { return {false, true, true, true, true}; }
};

/// Backbone f (3x3 conv, patchify conv, max pool), projection g (3-layer
/// MLP on z minus a running feature mean), semantic head (2 weight-normalized layers), classifier
/// (weight-normalized) and self-distillation head (unit rows, no gain), both
/// on the unit-normalized q.
///
/// forward() is const and never touches gradients, so a frozen stack can be
/// evaluated from many threads. backward() accumulates into Parameter::grad.
class ModelStack {
public:
  ModelStack() = default;
  ModelStack(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Throws ConfigError unless the image fits the backbone input contract.
  void check_input(const views::Image& img) const;

  /// All images must share one shape.
  StackOutputs forward(std::span<const views::Image* const> images, ForwardCache* cache = nullptr) const;

  /// Heads only, from precomputed features z. A cache filled here supports
  /// backward() with a frozen backbone.
  StackOutputs forward_heads(const Matrix& z, ForwardCache* cache = nullptr) const;

  /// Throws ContractError when the backbone is trainable and the cache came
  /// from forward_heads().
  void backward(const ForwardCache& cache, const OutputGrads& grads, const Trainable& trainable = {});

  /// Moves the running feature mean toward `batch_mean` (first call copies it).
  /// The mean is subtracted from z before the projection head.
  void update_input_mean(const Vector& batch_mean, double momentum);

  /// Fresh classifier with `num_classes` outputs.
  void reset_classifier(int num_classes, std::uint64_t seed);

  /// Rebuilds from an architecture and an already-populated parameter set.
  static ModelStack from_parameters(const Architecture& arch, ParameterSet params);

private:
  void build(std::uint64_t seed);
  void add_classifier(std::uint64_t seed);

  Architecture arch_;
  ParameterSet params_;
};

/// Single-image convenience wrapper.
struct ForwardResult {
  Vector z;
  Vector q;
  Vector m;
  Distribution p;
  Vector ssl_logits;
};

/// p = temperature_softmax(classifier(q), tau).
ForwardResult forward(const ModelStack& stack, const views::Image& image, double tau);

/// Exact GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);

}  // namespace lava::model
