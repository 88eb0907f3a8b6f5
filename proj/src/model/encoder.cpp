// SPDX-License-Identifier: Apache-2.0
#include "stemfit/model/encoder.hpp"

#include <cmath>
#include <string>

#include "stemfit/common/error.hpp"
#include "stemfit/common/rng.hpp"

namespace stemfit::model {

using namespace stemfit::ndgrad;

void EncoderConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (embed_dim % 4 != 0) {
    throw ConfigError("encoder: embed_dim must be divisible by 4 for the 2-D positional table");
  }
  if (mlp_ratio == 0 || patch_dim == 0 || max_patches == 0) {
    throw ConfigError("encoder: mlp_ratio, patch_dim and max_patches must be positive");
  }
}

template <class T>
BasicTensor<T> positional_table(PatchGrid grid, std::size_t d) {
  const std::size_t quarter = d / 4;
  std::vector<T> out(grid.size() * d);
  auto fill = [&](T* row, double pos) {
    for (std::size_t i = 0; i < quarter; ++i) {
      const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
      row[i] = static_cast<T>(std::sin(pos * w));
      row[quarter + i] = static_cast<T>(std::cos(pos * w));
    }
  };
  for (std::size_t f = 0; f < grid.n_freq; ++f) {
    for (std::size_t t = 0; t < grid.n_time; ++t) {
      T* row = out.data() + (f * grid.n_time + t) * d;
      fill(row, static_cast<double>(f));
      fill(row + 2 * quarter, static_cast<double>(t));
    }
  }
  return BasicTensor<T>({grid.size(), d}, std::move(out));
}

namespace {

// Values are drawn in single precision so float and double models built from
// the same seed hold identical numbers.
template <class T>
BasicTensor<T> xavier(Rng& rng, std::size_t in, std::size_t out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<T> v(in * out);
  for (auto& x : v) x = static_cast<T>(static_cast<float>(rng.uniform(-bound, bound)));
  return BasicTensor<T>({in, out}, std::move(v), true);
}

}  // namespace

template <class T>
BasicEncoder<T>::BasicEncoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.embed_dim;
  const std::size_t hidden = d * config_.mlp_ratio;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    Linear l{xavier<T>(rng, in, out), BasicTensor<T>::zeros({out}, true)};
    params_.push_back({name + ".w", l.w, true});
    params_.push_back({name + ".b", l.b, false});
    return l;
  };
  auto norm = [&](const std::string& name) {
    Norm n{BasicTensor<T>::full({d}, T(1), true), BasicTensor<T>::zeros({d}, true)};
    params_.push_back({name + ".gain", n.gain, false});
    params_.push_back({name + ".bias", n.bias, false});
    return n;
  };
  proj_ = linear("patch_proj", config_.patch_dim, d);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    const std::string p = "block" + std::to_string(i);
    Block b;
    b.ln1 = norm(p + ".ln1");
    b.wq = linear(p + ".attn.wq", d, d);
    b.wk = linear(p + ".attn.wk", d, d);
    b.wv = linear(p + ".attn.wv", d, d);
    b.wo = linear(p + ".attn.wo", d, d);
    b.ln2 = norm(p + ".ln2");
    b.fc1 = linear(p + ".mlp.fc1", d, hidden);
    b.fc2 = linear(p + ".mlp.fc2", hidden, d);
    blocks_.push_back(std::move(b));
  }
  final_ = norm("final_norm");
  require_unique_names(params_);
}

template <class T>
BasicTensor<T> BasicEncoder<T>::forward(const BasicTensor<T>& patches, std::size_t n_seq,
                                        PatchGrid grid) const {
  const std::size_t k = grid.size();
  const std::size_t d = config_.embed_dim;
  if (patches.rank() != 2 || patches.dim(1) != config_.patch_dim) {
    throw ShapeError("encoder: expected patches of width " + std::to_string(config_.patch_dim) +
                     ", got " + to_string(patches.shape()));
  }
  if (n_seq == 0 || patches.dim(0) != n_seq * k) {
    throw ShapeError("encoder: " + std::to_string(patches.dim(0)) + " patch rows do not match " +
                     std::to_string(n_seq) + " sequences of " + std::to_string(k));
  }
  if (k > config_.max_patches) {
    throw ShapeError("encoder: sequence of " + std::to_string(k) + " patches exceeds max_patches " +
                     std::to_string(config_.max_patches));
  }
  auto lin = [](const BasicTensor<T>& x, const Linear& l) { return add(matmul(x, l.w), l.b); };
  auto ln = [](const BasicTensor<T>& x, const Norm& n) { return layer_norm(x, n.gain, n.bias); };

  BasicTensor<T> h = lin(patches, proj_);
  h = reshape(add(reshape(h, {n_seq, k, d}), positional_table<T>(grid, d)), {n_seq * k, d});
  for (const Block& b : blocks_) {
    const auto a = ln(h, b.ln1);
    const auto att = attention(lin(a, b.wq), lin(a, b.wk), lin(a, b.wv), n_seq, config_.heads);
    h = add(h, lin(att, b.wo));
    h = add(h, lin(gelu(lin(ln(h, b.ln2), b.fc1)), b.fc2));
  }
  return ln(h, final_);
}

template <class T>
BasicEncoder<T> BasicEncoder<T>::clone() const {
  BasicEncoder copy(config_, 0);
  copy_values(copy.params_, params_);
  return copy;
}

template <class T>
BasicTensor<T> pool(const BasicTensor<T>& z, std::size_t n_seq) {
  if (z.rank() != 2 || n_seq == 0 || z.dim(0) % n_seq != 0 || z.dim(0) == 0) {
    throw ShapeError("pool: cannot split " + to_string(z.shape()) + " into " +
                     std::to_string(n_seq) + " sequences");
  }
  return mean(reshape(z, {n_seq, z.dim(0) / n_seq, z.dim(1)}), 1);
}

template class BasicEncoder<float>;
template class BasicEncoder<double>;
template BasicTensor<float> positional_table(PatchGrid, std::size_t);
template BasicTensor<double> positional_table(PatchGrid, std::size_t);
template BasicTensor<float> pool(const BasicTensor<float>&, std::size_t);
template BasicTensor<double> pool(const BasicTensor<double>&, std::size_t);

}  // namespace stemfit::model
