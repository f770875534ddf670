#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "slotalign/nn.hpp"
#include "slotalign/ops.hpp"
#include "slotalign/rng.hpp"

namespace slotalign::nn {

struct BlockShape {
  std::size_t model_dim = 64;
  std::size_t n_heads = 4;
  std::size_t mlp_mult = 4;
};

/// Parameter handles of one pre-norm transformer block.
template <typename T>
struct BlockParams {
  Parameter<T>* ln1_gain;
  Parameter<T>* ln1_bias;
  Parameter<T>* qkv_w;
  Parameter<T>* qkv_b;
  Parameter<T>* out_w;
  Parameter<T>* out_b;
  Parameter<T>* ln2_gain;
  Parameter<T>* ln2_bias;
  Parameter<T>* fc1_w;
  Parameter<T>* fc1_b;
  Parameter<T>* fc2_w;
  Parameter<T>* fc2_b;
};

template <typename T>
BlockParams<T> add_block(ParameterSet<T>& ps, const std::string& prefix, const BlockShape& shape,
                         Rng& rng) {
  const std::size_t d = shape.model_dim, h = shape.mlp_mult * d;
  BlockParams<T> b{};
  b.ln1_gain = &ps.add(prefix + ".ln1.gain", 1, d);
  b.ln1_bias = &ps.add(prefix + ".ln1.bias", 1, d);
  b.qkv_w = &ps.add(prefix + ".attn.qkv.w", d, 3 * d);
  b.qkv_b = &ps.add(prefix + ".attn.qkv.b", 1, 3 * d);
  b.out_w = &ps.add(prefix + ".attn.out.w", d, d);
  b.out_b = &ps.add(prefix + ".attn.out.b", 1, d);
  b.ln2_gain = &ps.add(prefix + ".ln2.gain", 1, d);
  b.ln2_bias = &ps.add(prefix + ".ln2.bias", 1, d);
  b.fc1_w = &ps.add(prefix + ".mlp.fc1.w", d, h);
  b.fc1_b = &ps.add(prefix + ".mlp.fc1.b", 1, h);
  b.fc2_w = &ps.add(prefix + ".mlp.fc2.w", h, d);
  b.fc2_b = &ps.add(prefix + ".mlp.fc2.b", 1, d);
  init_constant(*b.ln1_gain, T(1));
  init_constant(*b.ln2_gain, T(1));
  init_fan_in(*b.qkv_w, d, rng);
  init_fan_in(*b.out_w, d, rng);
  init_fan_in(*b.fc1_w, d, rng);
  init_fan_in(*b.fc2_w, h, rng);
  return b;
}

/// x + Attn(LN(x)) followed by h + MLP(LN(h)). `slopes` holds one
/// non-negative recency penalty per head (score -= slope * distance); an
/// empty vector means plain dot-product attention.
template <typename T>
Var block_forward(Tape<T>& t, Var x, const BlockParams<T>& b, std::size_t n_heads, bool causal,
                  const std::vector<T>& slopes = {}) {
  Var a = layer_norm(t, x, t.param(*b.ln1_gain), t.param(*b.ln1_bias));
  a = linear(t, a, t.param(*b.qkv_w), t.param(*b.qkv_b));
  a = attention(t, a, n_heads, causal, slopes);
  a = linear(t, a, t.param(*b.out_w), t.param(*b.out_b));
  Var h = add(t, x, a);
  Var m = layer_norm(t, h, t.param(*b.ln2_gain), t.param(*b.ln2_bias));
  m = linear(t, m, t.param(*b.fc1_w), t.param(*b.fc1_b));
  m = gelu(t, m);
  m = linear(t, m, t.param(*b.fc2_w), t.param(*b.fc2_b));
  return add(t, h, m);
}

/// Sinusoidal position code at a (possibly fractional) position: sin/cos
/// pairs with frequencies base^(-i/d).
template <typename T>
void sinusoid(double pos, double base, double scale, std::span<T> out) {
  const std::size_t d = out.size();
  for (std::size_t i = 0; i < d; i += 2) {
    const double freq = std::pow(base, -static_cast<double>(i) / static_cast<double>(d));
    out[i] = static_cast<T>(scale * std::sin(pos * freq));
    if (i + 1 < d) out[i + 1] = static_cast<T>(scale * std::cos(pos * freq));
  }
}

/// Row r holds the code of position r.
template <typename T>
void fill_sinusoidal(Matrix<T>& table, double base, double scale) {
  for (std::size_t pos = 0; pos < table.rows(); ++pos)
    sinusoid<T>(static_cast<double>(pos), base, scale, table.row(pos));
}

}  // namespace slotalign::nn
