#include "lula/network.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "lula/error.hpp"

namespace lula {
namespace {

constexpr std::string_view kModelMagic = "lula-network";
constexpr int kModelVersion = 1;

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (ec != std::errc()) throw FormatError("cannot format value");
  return std::string(buf, end);
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string next(std::string_view what) {
    std::string tok;
    if (!(in_ >> tok)) throw FormatError("model file truncated: expected " + std::string(what));
    return tok;
  }

  void expect(std::string_view keyword) {
    const std::string tok = next(keyword);
    if (tok != keyword) {
      throw FormatError("model file malformed: expected '" + std::string(keyword) + "', found '" +
                        tok + "'");
    }
  }

  long integer(std::string_view what) {
    const std::string tok = next(what);
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw FormatError("model file malformed: bad integer '" + tok + "' for " +
                        std::string(what));
    }
    return v;
  }

  double real(std::string_view what) {
    const std::string tok = next(what);
    double v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw FormatError("model file malformed: bad number '" + tok + "' for " +
                        std::string(what));
    }
    return v;
  }

 private:
  std::istream& in_;
};

}  // namespace

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::relu: return "relu";
    case Activation::selu: return "selu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "selu") return Activation::selu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw FormatError("unknown activation '" + std::string(name) + "'");
}

double activate(Activation act, double a) {
  switch (act) {
    case Activation::relu: return a > 0.0 ? a : 0.0;
    case Activation::selu: return a > 0.0 ? kSeluScale * a : kSeluScale * kSeluAlpha * std::expm1(a);
    case Activation::tanh: return std::tanh(a);
    case Activation::identity: return a;
  }
  return a;
}

double activate_derivative(Activation act, double a) {
  switch (act) {
    case Activation::relu: return a > 0.0 ? 1.0 : 0.0;
    case Activation::selu: return a > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(a);
    case Activation::tanh: {
      const double t = std::tanh(a);
      return 1.0 - t * t;
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

void Network::validate() const {
  if (layers_.empty()) throw InvalidArgument("network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.weight.rows() == 0 || layer.weight.cols() == 0) {
      throw InvalidArgument("layer " + std::to_string(l) + " has an empty weight matrix");
    }
    if (layer.bias.size() != layer.weight.rows()) {
      throw DimensionMismatch("layer " + std::to_string(l) + ": bias has " +
                              std::to_string(layer.bias.size()) + " entries, expected " +
                              std::to_string(layer.weight.rows()));
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      throw DimensionMismatch("layer " + std::to_string(l) + " takes " +
                              std::to_string(layer.weight.cols()) + " inputs but layer " +
                              std::to_string(l - 1) + " produces " +
                              std::to_string(layers_[l - 1].weight.rows()));
    }
  }
  if (layers_.back().activation != Activation::identity) {
    throw InvalidArgument("the output layer must use the identity activation");
  }
}

Eigen::Index Network::input_dim() const { return layers_.front().in_dim(); }

Eigen::Index Network::output_dim() const { return layers_.back().out_dim(); }

Eigen::Index Network::parameter_count() const {
  Eigen::Index d = 0;
  for (const auto& layer : layers_) d += layer.out_dim() * (layer.in_dim() + 1);
  return d;
}

Eigen::Index Network::parameter_offset(std::size_t l) const {
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < l; ++i) offset += layers_[i].out_dim() * (layers_[i].in_dim() + 1);
  return offset;
}

std::vector<Eigen::Index> Network::dims() const {
  std::vector<Eigen::Index> out{input_dim()};
  for (const auto& layer : layers_) out.push_back(layer.out_dim());
  return out;
}

Vector Network::flatten() const {
  Vector theta(parameter_count());
  Eigen::Index k = 0;
  for (const auto& layer : layers_) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) theta(k++) = layer.weight(i, j);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) theta(k++) = layer.bias(i);
  }
  return theta;
}

void Network::unflatten(const Vector& theta) {
  if (theta.size() != parameter_count()) {
    throw DimensionMismatch("unflatten: got " + std::to_string(theta.size()) +
                            " parameters, network has " + std::to_string(parameter_count()));
  }
  Eigen::Index k = 0;
  for (auto& layer : layers_) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = theta(k++);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = theta(k++);
  }
}

Vector Gradients::flatten() const {
  Eigen::Index d = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) d += weight[l].size() + bias[l].size();
  Vector out(d);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    for (Eigen::Index i = 0; i < weight[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < weight[l].cols(); ++j) out(k++) = weight[l](i, j);
    }
    for (Eigen::Index i = 0; i < bias[l].size(); ++i) out(k++) = bias[l](i);
  }
  return out;
}

ForwardTrace forward(const Network& net, const Matrix& x) {
  if (x.cols() != net.input_dim()) {
    throw DimensionMismatch("forward: input has " + std::to_string(x.cols()) +
                            " columns, network expects " + std::to_string(net.input_dim()));
  }
  ForwardTrace trace;
  trace.pre.reserve(net.depth());
  trace.post.reserve(net.depth() + 1);
  trace.post.push_back(x);
  for (const Layer& layer : net.layers()) {
    const Matrix& h = trace.post.back();
    Matrix a(h.rows(), layer.out_dim());
    Matrix out(h.rows(), layer.out_dim());
    // Fixed left-to-right summation per unit: results do not depend on the batch
    // position, and trailing zero weights leave the sums bit-identical.
    for (Eigen::Index s = 0; s < h.rows(); ++s) {
      const double* hs = h.row(s).data();
      for (Eigen::Index u = 0; u < layer.out_dim(); ++u) {
        const double* w = layer.weight.row(u).data();
        double acc = 0.0;
        for (Eigen::Index j = 0; j < layer.in_dim(); ++j) acc += w[j] * hs[j];
        acc += layer.bias(u);
        a(s, u) = acc;
        out(s, u) = activate(layer.activation, acc);
      }
    }
    trace.pre.push_back(std::move(a));
    trace.post.push_back(std::move(out));
  }
  return trace;
}

Matrix predict(const Network& net, const Matrix& x) { return forward(net, x).post.back(); }

Gradients backward_from(const Network& net, const ForwardTrace& trace, std::size_t layer,
                        const Matrix& hidden_grad) {
  const std::size_t depth = net.depth();
  if (trace.pre.size() != depth || trace.post.size() != depth + 1) {
    throw DimensionMismatch("backward: trace does not belong to this network");
  }
  if (layer < 1 || layer > depth) {
    throw InvalidArgument("backward: layer index " + std::to_string(layer) + " out of range");
  }
  const Matrix& h = trace.post[layer];
  if (hidden_grad.rows() != h.rows() || hidden_grad.cols() != h.cols()) {
    throw DimensionMismatch("backward: gradient is " + std::to_string(hidden_grad.rows()) + "x" +
                            std::to_string(hidden_grad.cols()) + ", expected " +
                            std::to_string(h.rows()) + "x" + std::to_string(h.cols()));
  }
  Gradients grads;
  grads.weight.resize(depth);
  grads.bias.resize(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    grads.weight[l] = Matrix::Zero(net.layer(l).out_dim(), net.layer(l).in_dim());
    grads.bias[l] = Vector::Zero(net.layer(l).out_dim());
  }
  Matrix grad = hidden_grad;
  for (std::size_t l = layer; l-- > 0;) {
    const Layer& cur = net.layer(l);
    const Matrix& a = trace.pre[l];
    Matrix delta(grad.rows(), grad.cols());
    for (Eigen::Index s = 0; s < grad.rows(); ++s) {
      for (Eigen::Index u = 0; u < grad.cols(); ++u) {
        delta(s, u) = grad(s, u) * activate_derivative(cur.activation, a(s, u));
      }
    }
    grads.weight[l].noalias() = delta.transpose() * trace.post[l];
    grads.bias[l] = delta.colwise().sum().transpose();
    grad.noalias() = delta * cur.weight;
  }
  grads.input = std::move(grad);
  return grads;
}

Gradients backward(const Network& net, const ForwardTrace& trace, const Matrix& output_grad) {
  return backward_from(net, trace, net.depth(), output_grad);
}

Matrix output_jacobian(const Network& net, const Vector& x) {
  const ForwardTrace trace = forward(net, x.transpose());
  const Eigen::Index k = net.output_dim();
  Matrix jac(k, net.parameter_count());
  Matrix seed = Matrix::Zero(1, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    seed.setZero();
    seed(0, i) = 1.0;
    jac.row(i) = backward(net, trace, seed).flatten().transpose();
  }
  return jac;
}

void save_network(const Network& net, std::ostream& out) {
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "layers " << net.depth() << '\n';
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const Layer& layer = net.layer(l);
    out << "layer " << l << " in " << layer.in_dim() << " out " << layer.out_dim()
        << " activation " << to_string(layer.activation) << '\n';
    out << "weight\n";
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        if (j) out << ' ';
        out << format_double(layer.weight(i, j));
      }
      out << '\n';
    }
    out << "bias\n";
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      if (i) out << ' ';
      out << format_double(layer.bias(i));
    }
    out << '\n';
  }
  out << "end\n";
}

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  save_network(net, out);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Network load_network(std::istream& in) {
  TokenReader reader(in);
  reader.expect(kModelMagic);
  const long version = reader.integer("version");
  if (version != kModelVersion) {
    throw FormatError("unsupported model file version " + std::to_string(version));
  }
  reader.expect("layers");
  const long depth = reader.integer("layer count");
  if (depth <= 0 || depth > 1024) throw FormatError("model file malformed: bad layer count");
  std::vector<Layer> layers;
  for (long l = 0; l < depth; ++l) {
    reader.expect("layer");
    if (reader.integer("layer index") != l) throw FormatError("model file malformed: layer index");
    reader.expect("in");
    const long in_dim = reader.integer("in dimension");
    reader.expect("out");
    const long out_dim = reader.integer("out dimension");
    if (in_dim <= 0 || out_dim <= 0) throw FormatError("model file malformed: bad dimensions");
    reader.expect("activation");
    Layer layer;
    layer.activation = activation_from_string(reader.next("activation name"));
    layer.weight.resize(out_dim, in_dim);
    layer.bias.resize(out_dim);
    reader.expect("weight");
    for (long i = 0; i < out_dim; ++i) {
      for (long j = 0; j < in_dim; ++j) layer.weight(i, j) = reader.real("weight entry");
    }
    reader.expect("bias");
    for (long i = 0; i < out_dim; ++i) layer.bias(i) = reader.real("bias entry");
    layers.push_back(std::move(layer));
  }
  reader.expect("end");
  try {
    return Network(std::move(layers));
  } catch (const Error& e) {
    throw FormatError(std::string("model file describes an invalid network: ") + e.what());
  }
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model file '" + path.string() + "'");
  return load_network(in);
}

}  // namespace lula
