#include "alloc_layers/neuralnet.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "alloc_layers/rng.hpp"

namespace alloc::nn {

namespace {

constexpr double kNormEpsilon = 1e-5;
constexpr double kMomentEpsilon = 1e-8;

std::atomic<std::uint64_t> g_version{0};

Index layer_input_width(const NetSpec& spec, std::size_t l) {
  Index w = spec.widths[l];
  if (spec.aux_width > 0 && static_cast<Index>(l) == spec.aux_layer) w += spec.aux_width;
  return w;
}

bool is_hidden(const NetSpec& spec, std::size_t l) { return l + 1 < spec.layer_count(); }

bool has_norm(const NetSpec& spec, std::size_t l) { return spec.layer_norm && is_hidden(spec, l); }

// Index of layer l's weight tensor within the ParamSet.
std::size_t weight_slot(const NetSpec& spec, std::size_t l) {
  std::size_t slot = 0;
  for (std::size_t i = 0; i < l; ++i) slot += has_norm(spec, i) ? 4 : 2;
  return slot;
}

void check_layout(const ParamSet& params, const NetSpec& spec) {
  std::size_t expected = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) expected += has_norm(spec, l) ? 4 : 2;
  if (params.size() != expected) {
    throw DimensionMismatch("parameter set has " + std::to_string(params.size()) + " tensors, network needs " +
                            std::to_string(expected));
  }
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const Matrix& w = params[weight_slot(spec, l)].value;
    if (w.rows() != spec.widths[l + 1] || w.cols() != layer_input_width(spec, l)) {
      throw DimensionMismatch("weight of layer " + std::to_string(l) + " has the wrong shape");
    }
  }
}

Matrix orthogonal(Rng& rng, Index rows, Index cols) {
  const Index tall = std::max(rows, cols), narrow = std::min(rows, cols);
  Matrix g(tall, narrow);
  for (Index j = 0; j < narrow; ++j) {
    for (Index i = 0; i < tall; ++i) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(tall, narrow);
  const Matrix r = qr.matrixQR().topLeftCorner(narrow, narrow);
  for (Index j = 0; j < narrow; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  if (rows >= cols) return q;
  return q.transpose();
}

}  // namespace

const char* activation_name(Activation a) noexcept { return a == Activation::kRelu ? "relu" : "tanh"; }

const char* output_activation_name(OutputActivation a) noexcept {
  return a == OutputActivation::kLinear ? "linear" : "tanh01";
}

void NetSpec::validate() const {
  if (widths.size() < 3) throw InvalidBounds("a network needs an input, at least one hidden layer and an output");
  for (Index w : widths) {
    if (w < 1) throw InvalidBounds("layer widths must be positive");
  }
  if (aux_width < 0) throw InvalidBounds("auxiliary width must be non-negative");
  if (aux_width > 0 && (aux_layer < 0 || aux_layer >= static_cast<Index>(layer_count()))) {
    throw InvalidBounds("auxiliary input joins a layer that does not exist");
  }
}

void ParamSet::touch() { version_ = ++g_version; }

ParamSet ParamSet::zeros_like() const {
  std::vector<Tensor> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(Tensor{t.kind, Matrix::Zero(t.value.rows(), t.value.cols())});
  return ParamSet(std::move(out));
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  if (!same_shape(other)) throw DimensionMismatch("parameter sets differ in shape");
  touch();
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value += scale * other.tensors_[i].value;
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) s += t.value.squaredNorm();
  return s;
}

Index ParamSet::parameter_count() const {
  Index n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

bool ParamSet::same_shape(const ParamSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].value.rows() != other.tensors_[i].value.rows() ||
        tensors_[i].value.cols() != other.tensors_[i].value.cols()) {
      return false;
    }
  }
  return true;
}

Vector ParamSet::flatten() const {
  Vector flat(parameter_count());
  Index at = 0;
  for (const auto& t : tensors_) {
    flat.segment(at, t.value.size()) = t.value.reshaped();
    at += t.value.size();
  }
  return flat;
}

void ParamSet::assign(const Vector& flat) {
  if (flat.size() != parameter_count()) throw DimensionMismatch("flat parameter vector has the wrong length");
  touch();
  Index at = 0;
  for (auto& t : tensors_) {
    t.value.reshaped() = flat.segment(at, t.value.size());
    at += t.value.size();
  }
}

ParamSet init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<Tensor> tensors;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const Index in = layer_input_width(spec, l), out = spec.widths[l + 1];
    Matrix w(out, in);
    if (is_hidden(spec, l)) {
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      for (Index j = 0; j < in; ++j) {
        for (Index i = 0; i < out; ++i) w(i, j) = rng.uniform(-limit, limit);
      }
    } else {
      w = orthogonal(rng, out, in);
    }
    tensors.push_back(Tensor{TensorKind::kWeight, std::move(w)});
    tensors.push_back(Tensor{TensorKind::kBias, Matrix::Zero(out, 1)});
    if (has_norm(spec, l)) {
      tensors.push_back(Tensor{TensorKind::kNormGain, Matrix::Ones(out, 1)});
      tensors.push_back(Tensor{TensorKind::kNormBias, Matrix::Zero(out, 1)});
    }
  }
  return ParamSet(std::move(tensors));
}

Tape forward(const ParamSet& params, const NetSpec& spec, const Matrix& input, const Matrix* aux) {
  spec.validate();
  check_layout(params, spec);
  if (input.rows() != spec.input_width()) {
    throw DimensionMismatch("network expects " + std::to_string(spec.input_width()) + " inputs, got " +
                            std::to_string(input.rows()));
  }
  if ((spec.aux_width > 0) != (aux != nullptr)) throw DimensionMismatch("auxiliary input given to the wrong network");
  if (aux && (aux->rows() != spec.aux_width || aux->cols() != input.cols())) {
    throw DimensionMismatch("auxiliary input has the wrong shape");
  }

  Tape tape;
  tape.params_ = &params;
  tape.version_ = params.version();
  tape.spec_ = spec;
  tape.layers_.resize(spec.layer_count());
  const Index batch = input.cols();

  Matrix h = input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    auto& rec = tape.layers_[l];
    if (aux && static_cast<Index>(l) == spec.aux_layer) {
      Matrix joined(h.rows() + aux->rows(), batch);
      joined << h, *aux;
      h = std::move(joined);
    }
    rec.input = h;
    const std::size_t slot = weight_slot(spec, l);
    Matrix a = params[slot].value * h;
    a.colwise() += params[slot + 1].value.col(0);
    if (!is_hidden(spec, l)) {
      rec.pre = a;
      if (spec.output == OutputActivation::kLinear) {
        tape.output_ = a;
      } else {
        tape.output_ = ((a.array().tanh() + 1.0) / 2.0).matrix();
      }
      break;
    }
    if (has_norm(spec, l)) {
      const Eigen::RowVectorXd mean = a.colwise().mean();
      a.rowwise() -= mean;
      const Eigen::RowVectorXd var = a.array().square().colwise().mean();
      rec.inv_std = (var.array() + kNormEpsilon).rsqrt().transpose();
      rec.normalized = a * rec.inv_std.asDiagonal();
      a = params[slot + 2].value.col(0).asDiagonal() * rec.normalized;
      a.colwise() += params[slot + 3].value.col(0);
    }
    rec.pre = a;
    if (spec.activation == Activation::kRelu) h = a.cwiseMax(0.0);
    else h = a.array().tanh().matrix();
    rec.activated = h;
  }
  return tape;
}

Gradients backward(const Tape& tape, const Matrix& upstream) {
  if (tape.params_ == nullptr) throw StaleTape("tape was never recorded");
  if (tape.params_->version() != tape.version_) throw StaleTape("parameters changed since the forward pass");
  const NetSpec& spec = tape.spec_;
  const ParamSet& params = *tape.params_;
  if (upstream.rows() != tape.output_.rows() || upstream.cols() != tape.output_.cols()) {
    throw DimensionMismatch("upstream gradient does not match the network output");
  }

  Gradients grads;
  grads.params = params.zeros_like();
  Matrix g = upstream;
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    const auto& rec = tape.layers_[l];
    const std::size_t slot = weight_slot(spec, l);
    if (!is_hidden(spec, l)) {
      if (spec.output == OutputActivation::kTanhUnit) {
        g = (g.array() * 0.5 * (1.0 - rec.pre.array().tanh().square())).matrix();
      }
    } else {
      if (spec.activation == Activation::kRelu) g = (g.array() * (rec.pre.array() > 0.0).cast<double>()).matrix();
      else g = (g.array() * (1.0 - rec.activated.array().square())).matrix();
      if (has_norm(spec, l)) {
        grads.params.mutable_value(slot + 2) = (g.array() * rec.normalized.array()).rowwise().sum().matrix();
        grads.params.mutable_value(slot + 3) = g.rowwise().sum();
        const Matrix dn = params[slot + 2].value.col(0).asDiagonal() * g;
        const Eigen::RowVectorXd mean_dn = dn.colwise().mean();
        const Eigen::RowVectorXd mean_dn_n = (dn.array() * rec.normalized.array()).colwise().mean();
        Matrix da = dn;
        da.rowwise() -= mean_dn;
        da -= rec.normalized * mean_dn_n.asDiagonal();
        g = da * rec.inv_std.asDiagonal();
      }
    }
    grads.params.mutable_value(slot) = g * rec.input.transpose();
    grads.params.mutable_value(slot + 1) = g.rowwise().sum();
    Matrix dh = params[slot].value.transpose() * g;
    if (spec.aux_width > 0 && static_cast<Index>(l) == spec.aux_layer) {
      grads.aux = dh.bottomRows(spec.aux_width);
      dh = Matrix(dh.topRows(dh.rows() - spec.aux_width));
    }
    g = std::move(dh);
  }
  grads.input = std::move(g);
  return grads;
}

Vector predict(const ParamSet& params, const NetSpec& spec, const Vector& input, const Vector* aux) {
  if (aux) {
    const Matrix a = *aux;
    return forward(params, spec, input, &a).output().col(0);
  }
  return forward(params, spec, input).output().col(0);
}

AdamState adam_init(const ParamSet& params) {
  AdamState state;
  for (const auto& t : params.tensors()) {
    state.m.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    state.v.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  }
  return state;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& config) {
  if (!params.same_shape(grads) || state.m.size() != params.size()) {
    throw DimensionMismatch("Adam step with mismatched shapes");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i].value;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.cwiseAbs2();
    const auto m_hat = state.m[i].array() / c1;
    const auto v_hat = state.v[i].array() / c2;
    params.mutable_value(i).array() -= config.lr * m_hat / (v_hat.sqrt() + config.epsilon);
  }
}

void soft_update(ParamSet& target, const ParamSet& main, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidBounds("soft update rate must lie in (0, 1]");
  if (!target.same_shape(main)) throw DimensionMismatch("soft update between differently shaped networks");
  for (std::size_t i = 0; i < target.size(); ++i) {
    Matrix& t = target.mutable_value(i);
    t = tau * main[i].value + (1.0 - tau) * t;
  }
}

ParamSet perturb_params(const ParamSet& params, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw InvalidBounds("noise scale must be non-negative");
  ParamSet out = params;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const TensorKind kind = out[i].kind;
    if (kind == TensorKind::kNormGain || kind == TensorKind::kNormBias) continue;
    Matrix& v = out.mutable_value(i);
    for (Index j = 0; j < v.size(); ++j) v.data()[j] += sigma * rng.normal();
  }
  return out;
}

RunningMoments::RunningMoments(Index dim) : mean_(Vector::Zero(dim)), m2_(Vector::Zero(dim)) {}

Vector RunningMoments::variance() const {
  if (count_ == 0) return Vector::Zero(dim());
  return m2_ / static_cast<double>(count_);
}

void RunningMoments::update(const Vector& sample) {
  if (sample.size() != dim()) throw DimensionMismatch("moment sample has the wrong dimension");
  ++count_;
  const Vector delta = sample - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta.cwiseProduct(sample - mean_);
}

void RunningMoments::update_batch(const Matrix& batch) {
  for (Index j = 0; j < batch.cols(); ++j) update(Vector(batch.col(j)));
}

Vector RunningMoments::scale() const { return (variance().array() + kMomentEpsilon).rsqrt().matrix(); }

Vector RunningMoments::normalize(const Vector& v) const {
  if (v.size() != dim()) throw DimensionMismatch("normalising a vector of the wrong dimension");
  return (v - mean_).cwiseProduct(scale());
}

Matrix RunningMoments::normalize_batch(const Matrix& batch) const {
  if (batch.rows() != dim()) throw DimensionMismatch("normalising a batch of the wrong dimension");
  Matrix out = batch.colwise() - mean_;
  return scale().asDiagonal() * out;
}

void RunningMoments::soft_update(const RunningMoments& other, double tau) {
  if (other.dim() != dim()) throw DimensionMismatch("moment dimensions differ");
  const Vector var = tau * other.variance() + (1.0 - tau) * variance();
  mean_ = tau * other.mean_ + (1.0 - tau) * mean_;
  count_ = other.count_;
  m2_ = var * static_cast<double>(count_);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kMagic = "alloc-layers-checkpoint";
constexpr int kFormatVersion = 1;

const char* kind_name(TensorKind k) {
  switch (k) {
    case TensorKind::kWeight:
      return "weight";
    case TensorKind::kBias:
      return "bias";
    case TensorKind::kNormGain:
      return "norm_gain";
    case TensorKind::kNormBias:
      return "norm_bias";
  }
  return "?";
}

void write_values(std::ostream& out, const double* data, Index n) {
  for (Index i = 0; i < n; ++i) out << ' ' << data[i];
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next_line() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.empty()) continue;
      current_.clear();
      current_.str(line);
      return true;
    }
    return false;
  }

  std::string word() {
    std::string w;
    if (!(current_ >> w)) fail("unexpected end of line");
    return w;
  }

  std::string rest() {
    std::string r;
    std::getline(current_ >> std::ws, r);
    return r;
  }

  double number() {
    const std::string w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end == w.c_str() || *end != '\0') fail("not a number: " + w);
    return v;
  }

  std::int64_t integer() {
    const std::string w = word();
    char* end = nullptr;
    const long long v = std::strtoll(w.c_str(), &end, 10);
    if (end == w.c_str() || *end != '\0') fail("not an integer: " + w);
    return v;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_no_, what); }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
  std::istringstream current_;
};

}  // namespace

void Checkpoint::write(std::ostream& out) const {
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << std::hexfloat;
  for (const auto& [key, value] : meta) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw Error("checkpoint metadata must be single-line and keys must not contain spaces");
    }
    out << "meta " << key << ' ' << value << '\n';
  }
  for (const auto& [name, net] : nets) {
    out << "net " << name << ' ' << net.spec.widths.size();
    for (Index w : net.spec.widths) out << ' ' << w;
    out << ' ' << activation_name(net.spec.activation) << ' ' << (net.spec.layer_norm ? 1 : 0) << ' '
        << output_activation_name(net.spec.output) << ' ' << net.spec.aux_width << ' ' << net.spec.aux_layer << ' '
        << net.params.size() << '\n';
    for (const auto& t : net.params.tensors()) {
      out << "tensor " << kind_name(t.kind) << ' ' << t.value.rows() << ' ' << t.value.cols();
      write_values(out, t.value.data(), t.value.size());
      out << '\n';
    }
  }
  for (const auto& [name, m] : moments) {
    out << "moments " << name << ' ' << m.count_ << ' ' << m.dim();
    write_values(out, m.mean_.data(), m.dim());
    write_values(out, m.m2_.data(), m.dim());
    out << '\n';
  }
  out << std::defaultfloat << "end\n";
}

Checkpoint Checkpoint::read(std::istream& in, const std::string& source) {
  Reader r(in, source);
  Checkpoint cp;
  if (!r.next_line() || r.word() != kMagic) r.fail("not a checkpoint file");
  if (r.integer() != kFormatVersion) r.fail("unsupported checkpoint version");
  bool ended = false;
  while (!ended && r.next_line()) {
    const std::string tag = r.word();
    if (tag == "meta") {
      const std::string key = r.word();
      cp.meta[key] = r.rest();
    } else if (tag == "net") {
      const std::string name = r.word();
      Net net;
      const auto layers = r.integer();
      for (std::int64_t i = 0; i < layers; ++i) net.spec.widths.push_back(static_cast<Index>(r.integer()));
      const std::string act = r.word();
      if (act == "relu") net.spec.activation = Activation::kRelu;
      else if (act == "tanh") net.spec.activation = Activation::kTanh;
      else r.fail("unknown activation " + act);
      net.spec.layer_norm = r.integer() != 0;
      const std::string out = r.word();
      if (out == "linear") net.spec.output = OutputActivation::kLinear;
      else if (out == "tanh01") net.spec.output = OutputActivation::kTanhUnit;
      else r.fail("unknown output activation " + out);
      net.spec.aux_width = static_cast<Index>(r.integer());
      net.spec.aux_layer = static_cast<Index>(r.integer());
      const auto count = r.integer();
      std::vector<Tensor> tensors;
      for (std::int64_t t = 0; t < count; ++t) {
        if (!r.next_line() || r.word() != "tensor") r.fail("expected a tensor line");
        const std::string kind = r.word();
        Tensor tensor;
        if (kind == "weight") tensor.kind = TensorKind::kWeight;
        else if (kind == "bias") tensor.kind = TensorKind::kBias;
        else if (kind == "norm_gain") tensor.kind = TensorKind::kNormGain;
        else if (kind == "norm_bias") tensor.kind = TensorKind::kNormBias;
        else r.fail("unknown tensor kind " + kind);
        const auto rows = r.integer(), cols = r.integer();
        tensor.value.resize(rows, cols);
        for (Index i = 0; i < tensor.value.size(); ++i) tensor.value.data()[i] = r.number();
        tensors.push_back(std::move(tensor));
      }
      net.params = ParamSet(std::move(tensors));
      try {
        net.spec.validate();
        check_layout(net.params, net.spec);
      } catch (const Error& e) {
        r.fail("network '" + name + "': " + e.what());
      }
      cp.nets.emplace(name, std::move(net));
    } else if (tag == "moments") {
      const std::string name = r.word();
      RunningMoments m;
      m.count_ = r.integer();
      const auto dim = r.integer();
      m.mean_.resize(dim);
      m.m2_.resize(dim);
      for (Index i = 0; i < dim; ++i) m.mean_[i] = r.number();
      for (Index i = 0; i < dim; ++i) m.m2_[i] = r.number();
      cp.moments.emplace(name, std::move(m));
    } else if (tag == "end") {
      ended = true;
    } else {
      r.fail("unknown record " + tag);
    }
  }
  if (!ended) r.fail("truncated checkpoint");
  return cp;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  write(out);
  if (!out) throw Error("failed writing checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path);
  return read(in, path);
}

}  // namespace alloc::nn
