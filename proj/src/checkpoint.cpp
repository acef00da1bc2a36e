#include "lebm/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "lebm/error.hpp"

namespace lebm {
namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const std::string& s) { buf_ += s; }
  const std::string& data() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : buf_(std::move(data)), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > buf_.size() - pos_) throw Error(ErrorCode::Io, "checkpoint '" + path_ + "' is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

NamedTensor matrix_tensor(std::string name, const Matrix& m) {
  return {std::move(name), {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, m};
}

NamedTensor vector_tensor(std::string name, const Vector& v) {
  return {std::move(name), {static_cast<std::uint64_t>(v.size())}, Matrix(v)};
}

void add_params(Checkpoint& c, const Mlp& net, const std::string& prefix) {
  const auto names = net.parameter_names(prefix);
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back(matrix_tensor(names[i], *params[i]));
}

void add_adam(Checkpoint& c, const AdamState& opt, const std::string& group) {
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    c.tensors.push_back(matrix_tensor("adam." + group + ".m." + std::to_string(i), opt.m[i]));
    c.tensors.push_back(matrix_tensor("adam." + group + ".v." + std::to_string(i), opt.v[i]));
  }
}

void copy_into(Matrix& dst, const NamedTensor& t) {
  if (dst.rows() != t.value.rows() || dst.cols() != t.value.cols())
    throw Error(ErrorCode::InvalidShape, "checkpoint tensor '" + t.name + "' has shape " +
                                             std::to_string(t.value.rows()) + "x" + std::to_string(t.value.cols()) +
                                             ", expected " + std::to_string(dst.rows()) + "x" +
                                             std::to_string(dst.cols()));
  dst = t.value;
}

void load_params(const Checkpoint& c, Mlp& net, const std::string& prefix) {
  const auto names = net.parameter_names(prefix);
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) copy_into(*params[i], c.tensor(names[i]));
}

void load_adam(const Checkpoint& c, AdamState& opt, const std::string& group, std::int64_t step) {
  opt.step = step;
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    copy_into(opt.m[i], c.tensor("adam." + group + ".m." + std::to_string(i)));
    copy_into(opt.v[i], c.tensor("adam." + group + ".v." + std::to_string(i)));
  }
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
  if (const NamedTensor* t = find(name)) return *t;
  throw Error(ErrorCode::InvalidInput, "checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Writer w;
  w.u32(kCheckpointVersion);
  const std::string header = ckpt.header.dump();
  w.u64(header.size());
  w.bytes(header);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::uint64_t e : t.shape) w.u64(e);
    for (Eigen::Index i = 0; i < t.value.size(); ++i) w.f64(t.value.data()[i]);
  }
  // Write then rename so an interrupted run never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write checkpoint '" + path + "'");
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw Error(ErrorCode::Io, "cannot write checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}), path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::CheckpointVersion, "checkpoint '" + path + "' has format version " +
                                                  std::to_string(version) + "; this build reads version " +
                                                  std::to_string(kCheckpointVersion));
  Checkpoint c;
  try {
    c.header = nlohmann::json::parse(r.bytes(r.u64()));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Io, "checkpoint '" + path + "' has a corrupt header: " + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    const std::uint32_t ndim = r.u32();
    if (ndim < 1 || ndim > 2) throw Error(ErrorCode::Io, "checkpoint tensor '" + t.name + "' has rank " + std::to_string(ndim));
    for (std::uint32_t i = 0; i < ndim; ++i) t.shape.push_back(r.u64());
    const auto rows = static_cast<Eigen::Index>(t.shape[0]);
    const auto cols = static_cast<Eigen::Index>(ndim == 2 ? t.shape[1] : 1);
    t.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = r.f64();
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorCode::Io, "checkpoint '" + path + "' has trailing bytes");
  return c;
}

Checkpoint to_checkpoint(const Snapshot& snap) {
  const TrainState& s = snap.state;
  const ModelSpec& spec = s.model.spec;
  Checkpoint c;
  c.header = {
      {"format", "lebm-checkpoint"},
      {"iteration", s.iteration},
      {"consecutive_failures", s.consecutive_failures},
      {"adam_steps", {{"prior", s.opt_prior.step}, {"psi", s.opt_psi.step}, {"supervised", s.opt_supervised.step}}},
      {"model",
       {{"data_dim", spec.data_dim},
        {"latent_dim", spec.latent_dim},
        {"num_classes", spec.num_classes},
        {"prior_widths", s.model.prior.f.widths()},
        {"encoder_widths", s.model.posterior.encoder.widths()},
        {"decoder_widths", s.model.decoder.generator.widths()},
        {"prior_activation", to_string(spec.prior_activation)},
        {"activation", to_string(spec.net_activation)},
        {"decoder", to_string(spec.decoder)},
        {"sigma2", spec.sigma2}}},
      {"config", to_ini(snap.config)},
  };
  add_params(c, s.model.prior.f, "prior");
  add_params(c, s.model.posterior.encoder, "encoder");
  add_params(c, s.model.decoder.generator, "decoder");
  add_adam(c, s.opt_prior, "prior");
  add_adam(c, s.opt_psi, "psi");
  add_adam(c, s.opt_supervised, "supervised");
  c.tensors.push_back(matrix_tensor("chains.states", s.chains.states()));
  if (snap.standardization) {
    c.tensors.push_back(vector_tensor("data.mean", snap.standardization->mean));
    c.tensors.push_back(vector_tensor("data.std", snap.standardization->std));
  }
  return c;
}

Snapshot from_checkpoint(const Checkpoint& c) {
  Snapshot snap;
  try {
    snap.config = parse_config(c.header.at("config").get<std::string>(), "<checkpoint config>");
    const auto& m = c.header.at("model");
    ModelSpec& spec = snap.config.model;
    spec.data_dim = m.at("data_dim").get<int>();
    spec.latent_dim = m.at("latent_dim").get<int>();
    spec.num_classes = m.at("num_classes").get<int>();
    spec.sigma2 = m.at("sigma2").get<double>();
    snap.state = TrainState::create(Model::zeros(spec), snap.config.trainer);
    if (snap.state.model.prior.f.widths() != m.at("prior_widths").get<std::vector<int>>() ||
        snap.state.model.posterior.encoder.widths() != m.at("encoder_widths").get<std::vector<int>>() ||
        snap.state.model.decoder.generator.widths() != m.at("decoder_widths").get<std::vector<int>>())
      throw Error(ErrorCode::InvalidInput, "checkpoint network widths disagree with its configuration");
    snap.state.iteration = c.header.at("iteration").get<std::int64_t>();
    snap.state.consecutive_failures = c.header.at("consecutive_failures").get<int>();
    const auto& steps = c.header.at("adam_steps");
    Model& model = snap.state.model;
    load_params(c, model.prior.f, "prior");
    load_params(c, model.posterior.encoder, "encoder");
    load_params(c, model.decoder.generator, "decoder");
    load_adam(c, snap.state.opt_prior, "prior", steps.at("prior").get<std::int64_t>());
    load_adam(c, snap.state.opt_psi, "psi", steps.at("psi").get<std::int64_t>());
    load_adam(c, snap.state.opt_supervised, "supervised", steps.at("supervised").get<std::int64_t>());
    copy_into(snap.state.chains.states(), c.tensor("chains.states"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("checkpoint header is incomplete: ") + e.what());
  }
  const NamedTensor* mean = c.find("data.mean");
  const NamedTensor* sd = c.find("data.std");
  if (mean != nullptr && sd != nullptr) snap.standardization = Standardization{mean->value.col(0), sd->value.col(0)};
  return snap;
}

void save_snapshot(const std::string& path, const Snapshot& snap) { write_checkpoint(path, to_checkpoint(snap)); }

Snapshot load_snapshot(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

}  // namespace lebm
