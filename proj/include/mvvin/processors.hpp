#pragma once

// Multi-processors (linear and convolutional chains), region self-attention,
// and the multimodal aggregation that produces the step embedding.

#include <numeric>
#include <string>
#include <vector>

#include "mvvin/config.hpp"
#include "mvvin/env.hpp"
#include "mvvin/nn.hpp"
#include "mvvin/tensor.hpp"

namespace mvvin {

// Aggregatable tensor: a k-vector or a k x H x W map.
struct ATensor {
  enum class Kind { Vector, Map };
  Kind kind;
  TensorPtr t;

  static ATensor vec(TensorPtr t) {
    if (t->shape.size() != 1) throw ShapeError("ATensor::vec: expected 1-d tensor");
    return {Kind::Vector, std::move(t)};
  }
  static ATensor map(TensorPtr t) {
    if (t->shape.size() != 3) throw ShapeError("ATensor::map: expected 3-d tensor");
    return {Kind::Map, std::move(t)};
  }
};

// ---------------------------------------------------------------------------
// parameter naming: every processor stores its layers under a prefix inside
// the shared ParamSet (e.g. "proc.seg.0.w" / "proc.seg.0.b").

inline void add_linear_params(ParamSet& ps, const std::string& prefix, int d_in, int d_out,
                              Rng& rng) {
  ps.add(prefix + ".w", he_scaled_init({d_in, d_out}, d_in, rng.next_u64()));
  ps.add(prefix + ".b", zeros({d_out}));
}

inline void add_conv_params(ParamSet& ps, const std::string& prefix, int c_in,
                            const ConvLayerCfg& l, Rng& rng) {
  const int fan_in = c_in * l.kh * l.kw;
  ps.add(prefix + ".w", he_scaled_init({l.out_channels, c_in, l.kh, l.kw}, fan_in, rng.next_u64()));
  ps.add(prefix + ".b", zeros({l.out_channels}));
}

// a chain of Eq.-3 layers with ReLU activations
inline TensorPtr linear_chain(const TensorPtr& x, const ParamSet& ps, const std::string& prefix,
                              int layers, bool activate_last = true) {
  TensorPtr cur = x;
  for (int i = 0; i < layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    const bool act = activate_last || i + 1 < layers;
    cur = linear_apply(cur, ps.at(p + ".w"), ps.at(p + ".b"), act);
  }
  return cur;
}

inline ATensor process_linear(const TensorPtr& F, const ParamSet& ps, const std::string& prefix,
                              int layers = 1) {
  return ATensor::vec(linear_chain(F, ps, prefix, layers));
}

// conv chain with ReLU per layer; 2-d inputs are treated as channel-1 maps
inline ATensor process_conv(const TensorPtr& F, const ParamSet& ps, const std::string& prefix,
                            const std::vector<ConvLayerCfg>& chain) {
  TensorPtr cur = F;
  if (cur->shape.size() == 2) cur = reshape(cur, {1, cur->shape[0], cur->shape[1]});
  for (size_t i = 0; i < chain.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    try {
      cur = conv2d_apply(cur, ps.at(p + ".w"), ps.at(p + ".b"), chain[i].sh, chain[i].sw, true);
    } catch (const ShapeError& e) {
      throw ShapeError(prefix + " layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return ATensor::map(cur);
}

// ---------------------------------------------------------------------------
// region self-attention

struct AttentionOutput {
  ATensor pooled;                    // k-vector
  std::vector<double> scores;        // per region, in input order
};

// canonical processing order so the pooled sum is bit-invariant under input
// permutation: (confidence desc, class asc, azimuth asc)
inline std::vector<size_t> canonical_region_order(const std::vector<Region>& regions) {
  std::vector<size_t> idx(regions.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (regions[a].confidence != regions[b].confidence)
      return regions[a].confidence > regions[b].confidence;
    if (regions[a].object_class != regions[b].object_class)
      return regions[a].object_class < regions[b].object_class;
    return regions[a].azimuth < regions[b].azimuth;
  });
  return idx;
}

// value_r = FC(feature_r); scores = softmax over regions of a two-layer
// scorer on each value; output = sum_r score_r * value_r
inline AttentionOutput region_self_attention(const std::vector<Region>& regions,
                                             const ParamSet& ps, const std::string& prefix) {
  if (regions.empty()) throw ValueError("region_self_attention: empty region set");
  const auto order = canonical_region_order(regions);
  std::vector<TensorPtr> values(regions.size());
  std::vector<TensorPtr> logits(regions.size());
  for (size_t rank = 0; rank < order.size(); ++rank) {
    const Region& r = regions[order[rank]];
    TensorPtr feat = tensor({static_cast<int>(r.feature.size())}, r.feature);
    TensorPtr v = linear_apply(feat, ps.at(prefix + ".value.w"), ps.at(prefix + ".value.b"), true);
    TensorPtr s1 =
        linear_apply(v, ps.at(prefix + ".score0.w"), ps.at(prefix + ".score0.b"), true);
    TensorPtr s2 =
        linear_apply(s1, ps.at(prefix + ".score1.w"), ps.at(prefix + ".score1.b"), false);
    values[rank] = v;
    logits[rank] = s2;  // [1]
  }
  TensorPtr score_vec = softmax(concat_vec(logits));
  TensorPtr pooled;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    TensorPtr w = pick(score_vec, static_cast<int>(rank));
    TensorPtr term = mul(values[rank], tile_scalar(w, values[rank]->shape[0]));
    pooled = pooled ? add(pooled, term) : term;
  }
  AttentionOutput out;
  out.pooled = ATensor::vec(pooled);
  out.scores.resize(regions.size());
  for (size_t rank = 0; rank < order.size(); ++rank)
    out.scores[order[rank]] = score_vec->data[rank];
  return out;
}

// proposal boxes through a shared FC, pooled by confidence-weighted mean
inline ATensor process_proposals(const std::vector<Region>& regions, const ParamSet& ps,
                                 const std::string& prefix, int dim_out) {
  if (regions.empty()) return ATensor::vec(zeros({dim_out}));
  const auto order = canonical_region_order(regions);
  double total_conf = 0.0;
  for (const auto& i : order) total_conf += regions[i].confidence;
  TensorPtr pooled;
  for (const auto& i : order) {
    const Region& r = regions[i];
    TensorPtr box = tensor({4}, {r.box[0], r.box[1], r.box[2], r.box[3]});
    TensorPtr y = linear_apply(box, ps.at(prefix + ".w"), ps.at(prefix + ".b"), true);
    const double w = total_conf > 0.0 ? r.confidence / total_conf
                                      : 1.0 / static_cast<double>(order.size());
    TensorPtr term = scale(y, w);
    pooled = pooled ? add(pooled, term) : term;
  }
  return ATensor::vec(pooled);
}

// ---------------------------------------------------------------------------
// aggregation: tile vector A-Tensors to the common grid, concatenate along
// channels, pointwise conv + ReLU, flatten row-major

inline TensorPtr aggregate(const std::vector<ATensor>& atensors, const ParamSet& ps,
                           const std::string& prefix, int grid_h, int grid_w) {
  if (atensors.empty()) throw ValueError("aggregate: no A-Tensors");
  std::vector<TensorPtr> maps;
  maps.reserve(atensors.size());
  for (const auto& a : atensors) {
    if (a.kind == ATensor::Kind::Vector) {
      maps.push_back(tile_vec(a.t, grid_h, grid_w));
    } else {
      if (a.t->shape[1] != grid_h || a.t->shape[2] != grid_w)
        throw ShapeError("aggregate: map A-Tensor " + shape_str(a.t->shape) +
                         " does not match grid (" + std::to_string(grid_h) + "," +
                         std::to_string(grid_w) + ")");
      maps.push_back(a.t);
    }
  }
  TensorPtr cat = concat_channels(maps);
  TensorPtr conv = conv2d_apply(cat, ps.at(prefix + ".w"), ps.at(prefix + ".b"), 1, 1, true);
  return flatten(conv);
}

}  // namespace mvvin
