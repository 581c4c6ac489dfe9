#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pjat/autodiff.hpp"
#include "pjat/heatmap.hpp"
#include "pjat/kernels.hpp"
#include "pjat/matrix.hpp"
#include "pjat/scene.hpp"

namespace pjat {

/// How the joint-attention heatmap is produced from the encoder output.
enum class HeadVariant {
  j_ja_only,       // pixelwise head on the JA token output
  f_ja_only,       // pixelwise head on each person row, maps averaged
  f_ja_and_j_ja,   // pixelwise head on [person row, JA token], maps averaged
  imagewise,       // dense stack from the JA token straight to W*H outputs
};

std::string to_string(HeadVariant v);
HeadVariant head_variant_from_string(const std::string& s);

struct PjatConfig {
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int head_hidden = 64;
  int n_actions = 4;
  int grid_w = 64;
  int grid_h = 64;
  HeadVariant variant = HeadVariant::j_ja_only;
  bool use_location = true;
  bool use_gaze = true;
  bool use_action = true;

  GridDims grid() const { return {grid_w, grid_h}; }
  std::size_t input_dim() const { return 4 + static_cast<std::size_t>(n_actions); }
};

/// Throws UsageError on an invalid combination.
void validate(const PjatConfig& cfg);
nlohmann::json to_json(const PjatConfig& cfg);
PjatConfig pjat_config_from_json(const nlohmann::json& j);

struct EncoderLayer {
  Param ln1_gamma, ln1_beta;
  Param wq, wk, wv, wo, bo;
  Param ln2_gamma, ln2_beta;
  Param ff1_w, ff1_b, ff2_w, ff2_b;

  ParamList params();
};

struct EncoderLayerCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix h1, q, k, v;
  std::vector<Matrix> probs;  // per head, (N+1) x (N+1)
  Matrix heads;               // concatenated head outputs
  Matrix x_mid;
  LayerNormCache ln2;
  Matrix h2, ff_pre, ff_act;
};

/// Encoder output: rows 0..N_p-1 are the person rows F_JA, row N_p is J_JA.
struct Encoding {
  Matrix tokens;  // encoder input F' (person features + JA token)
  std::vector<EncoderLayerCache> layers;
  Matrix pre_final;
  LayerNormCache final_ln;
  Matrix out;

  std::size_t n_people() const { return out.rows - 1; }
  std::span<const double> j_ja() const { return out.row(out.rows - 1); }
  std::span<const double> f_ja(std::size_t person) const { return out.row(person); }
  /// Attention matrix of one layer and head.
  const Matrix& attention(std::size_t layer, std::size_t head) const { return layers[layer].probs[head]; }
};

struct PjatForward {
  Matrix inputs;           // N_p x input_dim, knockouts zero-filled
  Matrix embed_pre;        // first dense layer of the feature extractor, pre-ReLU
  Matrix features;         // F^i rows
  Encoding enc;
  std::vector<std::vector<double>> conds;  // per pixelwise head evaluation
  std::vector<Heatmap> person_maps;        // f_ja variants only
  Matrix img_z1, img_z2;                   // imagewise head pre-activations
  Heatmap hja;
};

class PjatModel {
 public:
  PjatModel() = default;
  PjatModel(const PjatConfig& cfg, std::uint64_t seed);

  const PjatConfig& config() const { return cfg_; }
  GridDims grid() const { return cfg_.grid(); }
  ParamList params();

  /// Attribute vector (l_x/W*2-1, l_y/H*2-1, a_1..a_Na, g_x, g_y), knocked-out blocks zeroed.
  std::vector<double> input_vector(const PersonAttributes& p) const;
  /// F^i for a single person.
  std::vector<double> embed_person(const PersonAttributes& p) const;

  /// Runs the encoder on N_p person feature rows (appends the JA token).
  Encoding encode(const Matrix& features) const;

  /// f^J at one normalized coordinate; `cond` is J_JA (or [F_JA, J_JA]).
  double pixel_confidence(std::span<const double> cond, double x, double y) const;

  PjatForward forward(const Scene& scene) const;
  Heatmap render_hja(const Scene& scene) const { return forward(scene).hja; }

  /// Accumulates parameter gradients for dL/dH_JA.
  void backward(const PjatForward& fwd, std::span<const double> d_hja);

  /// JA-token attention row over the person columns, averaged over heads.
  std::vector<double> extract_ja_attention(const Scene& scene, std::size_t layer) const;
  /// Full JA-token row (persons then self), averaged over heads.
  std::vector<double> ja_attention_row(const Scene& scene, std::size_t layer) const;

  /// Normalized pixel coordinates, one row per pixel in row-major order.
  const Matrix& pixel_coords() const { return coords_; }

 private:
  Matrix encode_backward(const Encoding& enc, Matrix d_out);
  void check_scene(const Scene& scene) const;

  PjatConfig cfg_;
  Param fe_w1_, fe_b1_, fe_w2_, fe_b2_;
  Param ja_token_;
  std::vector<EncoderLayer> layers_;
  Param lnf_gamma_, lnf_beta_;
  CoordMlp head_;
  Param img_w1_, img_b1_, img_w2_, img_b2_, img_w3_, img_b3_;
  Matrix coords_;
};

}  // namespace pjat
