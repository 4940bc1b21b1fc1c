#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lula/numerics.hpp"

namespace lula {

enum class Activation { relu, selu, tanh, identity };

std::string_view to_string(Activation act);
/// Throws FormatError for unknown names.
Activation activation_from_string(std::string_view name);

/// SELU constants, full double precision.
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

double activate(Activation act, double a);
/// Derivative of the activation with respect to its pre-activation input.
double activate_derivative(Activation act, double a);

/// One affine layer followed by an activation. `weight` is out_dim x in_dim.
struct Layer {
  Matrix weight;
  Vector bias;
  Activation activation = Activation::identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// Feedforward network f(x; theta).
///
/// Invariants: at least one layer, consecutive dimensions chain, and the last
/// layer uses the identity activation.
///
/// Parameter flattening order (used by every module): layers in order; within a
/// layer all weights row-major (weight(0,0), weight(0,1), ...) followed by the
/// bias entries.
class Network {
 public:
  Network() = default;
  /// Validates the invariants; throws DimensionMismatch / InvalidArgument.
  explicit Network(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }
  std::size_t depth() const { return layers_.size(); }

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  /// Sum over layers of out_dim * (in_dim + 1).
  Eigen::Index parameter_count() const;
  /// Offset of layer l's first weight in the flattened parameter vector.
  Eigen::Index parameter_offset(std::size_t l) const;
  /// Layer widths (n_0, n_1, ..., n_L).
  std::vector<Eigen::Index> dims() const;

  Vector flatten() const;
  void unflatten(const Vector& theta);

  /// Checks the invariants again after direct mutation.
  void validate() const;

 private:
  std::vector<Layer> layers_;
};

/// Per-layer quantities of a batched forward pass.
/// post[0] is the input batch, post[l] = h^(l); pre[l-1] = a^(l).
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> post;

  const Matrix& output() const { return post.back(); }
};

/// Gradients in network layout plus the input gradient.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;

  /// Flattened in the network's parameter order.
  Vector flatten() const;
};

/// Forward pass on a batch (one sample per row).
ForwardTrace forward(const Network& net, const Matrix& x);
/// Convenience: only the outputs.
Matrix predict(const Network& net, const Matrix& x);

/// Reverse-mode gradients of sum(output_grad .* output) with respect to every
/// weight, bias and input row.
Gradients backward(const Network& net, const ForwardTrace& trace, const Matrix& output_grad);

/// Same as backward() but starting from a gradient on the hidden activation
/// h^(layer) (1 <= layer <= depth). Layers above `layer` receive zero gradients.
Gradients backward_from(const Network& net, const ForwardTrace& trace, std::size_t layer,
                        const Matrix& hidden_grad);

/// k x d Jacobian of the outputs at a single input with respect to the flattened
/// parameters.
Matrix output_jacobian(const Network& net, const Vector& x);

/// Writes the structured-text model format (17 significant digits).
void save_network(const Network& net, const std::filesystem::path& path);
void save_network(const Network& net, std::ostream& out);
/// Throws FormatError on malformed content or an unsupported version.
Network load_network(const std::filesystem::path& path);
Network load_network(std::istream& in);

}  // namespace lula
