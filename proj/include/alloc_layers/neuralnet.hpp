#pragma once

// Small dense networks with hand-written reverse mode. Inputs are batched as
// columns: a batch of B states of dimension d is a d x B matrix.
//
// Hidden layer:  a = W h + b,  optionally layer-normalised with gain/bias,
//                then ReLU or tanh.
// Output layer:  o = W h + b, then identity or (tanh(o) + 1) / 2.
//
// A network may take an auxiliary input (the critic's action) that is
// concatenated to the input of one hidden layer.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "alloc_layers/core.hpp"

namespace alloc::nn {

enum class Activation { kRelu, kTanh };
enum class OutputActivation { kLinear, kTanhUnit };

const char* activation_name(Activation a) noexcept;
const char* output_activation_name(OutputActivation a) noexcept;

struct NetSpec {
  /// Input width, hidden widths, output width.
  std::vector<Index> widths;
  Activation activation = Activation::kRelu;
  bool layer_norm = true;
  OutputActivation output = OutputActivation::kLinear;
  /// Width of the auxiliary input (0 for none) and the layer whose input it
  /// joins: 0 joins the network input, 1 the second layer, and so on.
  Index aux_width = 0;
  Index aux_layer = 1;

  Index input_width() const { return widths.front(); }
  Index output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  void validate() const;

  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

enum class TensorKind { kWeight, kBias, kNormGain, kNormBias };

struct Tensor {
  TensorKind kind = TensorKind::kWeight;
  Matrix value;
};

/// Every trainable tensor of a network, layer by layer: weight, bias and,
/// for normalised hidden layers, the norm gain and bias. Each mutable access
/// bumps a version counter so that tapes recorded earlier are detected as
/// stale.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Tensor> tensors) : tensors_(std::move(tensors)) { touch(); }

  std::size_t size() const noexcept { return tensors_.size(); }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Matrix& mutable_value(std::size_t i) {
    touch();
    return tensors_[i].value;
  }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  std::uint64_t version() const noexcept { return version_; }

  ParamSet zeros_like() const;
  void add_scaled(const ParamSet& other, double scale);
  double squared_norm() const;
  Index parameter_count() const;
  bool same_shape(const ParamSet& other) const;

  /// Flattened copy / assignment, in tensor order, column-major inside each.
  Vector flatten() const;
  void assign(const Vector& flat);

 private:
  // Versions come from one process-wide counter, so no two states of any
  // ParamSet share a version.
  void touch();

  std::vector<Tensor> tensors_;
  std::uint64_t version_ = 0;
};

/// Hidden layers Glorot-uniform, output layer orthogonal, biases 0, norm
/// gains 1. Deterministic per seed.
ParamSet init_params(const NetSpec& spec, std::uint64_t seed);

struct Gradients {
  ParamSet params;  ///< same layout as the network's ParamSet
  Matrix input;     ///< d/d(input), one column per sample
  Matrix aux;       ///< d/d(aux input); empty when the net has none
};

class Tape;

/// `aux` must be given exactly when spec.aux_width > 0.
Tape forward(const ParamSet& params, const NetSpec& spec, const Matrix& input, const Matrix* aux = nullptr);

/// Gradients of sum(upstream .* output) with respect to parameters and inputs.
/// Throws StaleTape if the ParamSet was modified since the forward pass.
Gradients backward(const Tape& tape, const Matrix& upstream);

/// Everything backward needs from one forward pass.
class Tape {
 public:
  struct LayerRecord {
    Matrix input;       ///< h (with the auxiliary rows appended when joined here)
    Matrix normalized;  ///< layer-normalised pre-activation (n-hat), if normalised
    Vector inv_std;     ///< per column 1/sqrt(var + eps), if normalised
    Matrix activated;   ///< post-activation output
    Matrix pre;         ///< pre-activation after normalisation
  };

  const Matrix& output() const noexcept { return output_; }

 private:
  friend Tape forward(const ParamSet&, const NetSpec&, const Matrix&, const Matrix*);
  friend Gradients backward(const Tape&, const Matrix&);

  const ParamSet* params_ = nullptr;
  std::uint64_t version_ = 0;
  NetSpec spec_;
  std::vector<LayerRecord> layers_;
  Matrix output_;
};

/// Convenience single-sample forward without keeping the tape.
Vector predict(const ParamSet& params, const NetSpec& spec, const Vector& input, const Vector* aux = nullptr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;
};

AdamState adam_init(const ParamSet& params);
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& config);

/// target <- tau * main + (1 - tau) * target.
void soft_update(ParamSet& target, const ParamSet& main, double tau);

/// Copy of `params` with N(0, sigma^2) noise on every weight and bias;
/// layer-norm parameters are left untouched.
ParamSet perturb_params(const ParamSet& params, double sigma, std::uint64_t seed);

/// Welford accumulators over feature vectors.
class RunningMoments {
 public:
  RunningMoments() = default;
  explicit RunningMoments(Index dim);

  Index dim() const noexcept { return mean_.size(); }
  std::int64_t count() const noexcept { return count_; }
  const Vector& mean() const noexcept { return mean_; }
  /// Population variance.
  Vector variance() const;

  void update(const Vector& sample);
  /// Each column is one sample.
  void update_batch(const Matrix& batch);

  /// (v - mean) / sqrt(variance + 1e-8), column-wise for matrices.
  Vector normalize(const Vector& v) const;
  Matrix normalize_batch(const Matrix& batch) const;
  /// d normalize / d v, the diagonal 1 / sqrt(variance + 1e-8).
  Vector scale() const;

  /// mean and M2 blended towards `other` (used for the target action copy).
  void soft_update(const RunningMoments& other, double tau);

 private:
  friend struct Checkpoint;
  std::int64_t count_ = 0;
  Vector mean_;
  Vector m2_;
};

/// Networks, moments and string metadata in one text file. Values are
/// written as hexfloats so a round trip is exact.
///
///   alloc-layers-checkpoint 1
///   meta <key> <value...>
///   net <name> <widths...> | <activation> <layer_norm> <output> <aux_width> <aux_layer>
///   tensor <kind> <rows> <cols> <values...>          (repeated)
///   moments <name> <count> <dim> <mean...> <m2...>
struct Checkpoint {
  struct Net {
    NetSpec spec;
    ParamSet params;
  };
  std::map<std::string, std::string> meta;
  std::map<std::string, Net> nets;
  std::map<std::string, RunningMoments> moments;

  void write(std::ostream& out) const;
  static Checkpoint read(std::istream& in, const std::string& source = "<stream>");
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace alloc::nn
