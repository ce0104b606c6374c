#include "cmhe/network.hpp"

#include <cmath>

#include "cmhe/data.hpp"
#include "cmhe/rng.hpp"

namespace cmhe {

void NetworkShape::validate() const {
  if (input_dim < 1) throw Error("network: input dimension must be >= 1");
  if (k < 1) throw Error("network: K must be >= 1");
  if (m < 1) throw Error("network: M must be >= 1");
  for (const int h : hidden) {
    if (h < 1) throw Error("network: hidden layer widths must be >= 1");
  }
}

std::size_t parameter_count(const NetworkShape& shape) {
  std::size_t count = 0;
  int in = shape.input_dim;
  for (const int h : shape.hidden) {
    count += static_cast<std::size_t>(in * h + h);
    in = h;
  }
  const auto r = static_cast<std::size_t>(in);
  const auto k = static_cast<std::size_t>(shape.k);
  const auto m = static_cast<std::size_t>(shape.m);
  return count + (r * k + k) + (r * m + m) + r * k + m;
}

NetworkShape CmheParams::shape() const {
  NetworkShape s;
  s.input_dim = static_cast<int>(encoder.empty() ? head_f.in_dim() : encoder.front().in_dim());
  for (const auto& layer : encoder) s.hidden.push_back(static_cast<int>(layer.out_dim()));
  s.k = static_cast<int>(head_f.out_dim());
  s.m = static_cast<int>(head_g.out_dim());
  return s;
}

std::size_t CmheParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += b.values.size();
  return n;
}

CmheParams CmheParams::zeros_like() const {
  CmheParams z = *this;
  for (auto& b : z.blocks()) std::fill(b.values.begin(), b.values.end(), 0.0);
  return z;
}

namespace {

template <typename Span, typename Params, typename Out>
void collect_blocks(Params& p, Out& out) {
  auto add = [&](std::string name, auto& array) {
    if (array.size() > 0) out.push_back({std::move(name), Span(array.data(), static_cast<std::size_t>(array.size()))});
  };
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    add("encoder." + std::to_string(l) + ".weight", p.encoder[l].weight);
    add("encoder." + std::to_string(l) + ".bias", p.encoder[l].bias);
  }
  add("head_f.weight", p.head_f.weight);
  add("head_f.bias", p.head_f.bias);
  add("head_g.weight", p.head_g.weight);
  add("head_g.bias", p.head_g.bias);
  add("head_h.weight", p.head_h.weight);
  add("omega", p.omega);
}

Linear make_linear(int in, int out, bool bias, Rng& rng) {
  Linear layer;
  layer.weight.resize(out, in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  // fill row-major so the draw order matches the serialized layout
  for (int r = 0; r < out; ++r) {
    for (int c = 0; c < in; ++c) layer.weight(r, c) = bound * (2.0 * uniform_open(rng) - 1.0);
  }
  if (bias) layer.bias = Eigen::VectorXd::Zero(out);
  return layer;
}

Eigen::MatrixXd affine(const Eigen::MatrixXd& x, const Linear& layer) {
  Eigen::MatrixXd z = x * layer.weight.transpose();
  if (layer.has_bias()) z.rowwise() += layer.bias.transpose();
  return z;
}

void accumulate_linear(Linear& grad, const Linear& layer, const Eigen::MatrixXd& input,
                       const Eigen::MatrixXd& d_out) {
  grad.weight.noalias() += d_out.transpose() * input;
  if (layer.has_bias()) grad.bias.noalias() += d_out.colwise().sum().transpose();
}

}  // namespace

std::vector<CmheParams::Block> CmheParams::blocks() {
  std::vector<Block> out;
  collect_blocks<std::span<double>>(*this, out);
  return out;
}

std::vector<CmheParams::ConstBlock> CmheParams::blocks() const {
  std::vector<ConstBlock> out;
  collect_blocks<std::span<const double>>(*this, out);
  return out;
}

CmheParams init_params(const NetworkShape& shape, std::uint64_t seed) {
  shape.validate();
  Rng rng = make_rng(seed, Stream::init);
  CmheParams p;
  int in = shape.input_dim;
  for (const int h : shape.hidden) {
    p.encoder.push_back(make_linear(in, h, true, rng));
    in = h;
  }
  p.head_f = make_linear(in, shape.k, true, rng);
  p.head_g = make_linear(in, shape.m, true, rng);
  p.head_h = make_linear(in, shape.k, false, rng);
  p.omega = Eigen::VectorXd::Zero(shape.m);
  return p;
}

ForwardOutput forward(const CmheParams& params, const Eigen::MatrixXd& x) {
  const auto expected = params.encoder.empty() ? params.head_f.in_dim() : params.encoder.front().in_dim();
  if (x.cols() != expected) {
    throw Error("forward: expected " + std::to_string(expected) + " features, got " +
                std::to_string(x.cols()));
  }
  ForwardOutput out;
  out.activations.reserve(params.encoder.size() + 1);
  out.activations.push_back(x);
  for (const auto& layer : params.encoder) {
    out.activations.push_back(affine(out.activations.back(), layer).array().tanh().matrix());
  }
  const auto& repr = out.activations.back();
  out.f_logits = affine(repr, params.head_f);
  out.g_logits = affine(repr, params.head_g);
  out.h_values = affine(repr, params.head_h);
  return out;
}

CmheParams backward(const CmheParams& params, const Eigen::MatrixXd& x,
                    const UpstreamGradients& upstream) {
  const ForwardOutput fwd = forward(params, x);
  const Eigen::Index n = x.rows();
  auto check = [&](const Eigen::MatrixXd& g, const Eigen::MatrixXd& like, const char* name) {
    if (g.rows() != n || g.cols() != like.cols()) {
      throw Error(std::string("backward: upstream gradient '") + name + "' has the wrong shape");
    }
  };
  check(upstream.f_logits, fwd.f_logits, "f_logits");
  check(upstream.g_logits, fwd.g_logits, "g_logits");
  check(upstream.h_values, fwd.h_values, "h_values");

  CmheParams grad = params.zeros_like();
  const auto& repr = fwd.repr();
  accumulate_linear(grad.head_f, params.head_f, repr, upstream.f_logits);
  accumulate_linear(grad.head_g, params.head_g, repr, upstream.g_logits);
  accumulate_linear(grad.head_h, params.head_h, repr, upstream.h_values);

  Eigen::MatrixXd d_act = upstream.f_logits * params.head_f.weight +
                          upstream.g_logits * params.head_g.weight +
                          upstream.h_values * params.head_h.weight;
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    const auto& act = fwd.activations[l + 1];
    const Eigen::MatrixXd d_pre = (d_act.array() * (1.0 - act.array().square())).matrix();
    accumulate_linear(grad.encoder[l], params.encoder[l], fwd.activations[l], d_pre);
    if (l > 0) d_act = d_pre * params.encoder[l].weight;
  }
  return grad;
}

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

OptimizerState make_optimizer_state(const CmheParams& params, const AdamOptions& options) {
  OptimizerState state;
  state.options = options;
  for (const auto& b : params.blocks()) {
    const auto size = static_cast<Eigen::Index>(b.values.size());
    state.first_moment.push_back(Eigen::VectorXd::Zero(size));
    state.second_moment.push_back(Eigen::VectorXd::Zero(size));
  }
  return state;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, long step, const AdamOptions& options) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size()) {
    throw Error("adam: shape mismatch");
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * grads[i];
    v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * grads[i] * grads[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    params[i] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
  }
}

void adam_step(CmheParams& params, const CmheParams& grads, OptimizerState& state) {
  auto p_blocks = params.blocks();
  const auto g_blocks = grads.blocks();
  if (p_blocks.size() != g_blocks.size() || p_blocks.size() != state.first_moment.size()) {
    throw Error("adam: parameter/gradient/state block count mismatch");
  }
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    if (p_blocks[b].values.size() != g_blocks[b].values.size() ||
        static_cast<Eigen::Index>(p_blocks[b].values.size()) != state.first_moment[b].size()) {
      throw Error("adam: shape mismatch in block " + p_blocks[b].name);
    }
    for (const double g : g_blocks[b].values) {
      if (!std::isfinite(g)) throw Error("adam: non-finite gradient in block " + p_blocks[b].name);
    }
  }
  ++state.step;
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    adam_update(p_blocks[b].values, g_blocks[b].values, {m.data(), static_cast<std::size_t>(m.size())},
                {v.data(), static_cast<std::size_t>(v.size())}, state.step, state.options);
  }
}

}  // namespace cmhe
