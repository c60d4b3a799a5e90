// SPDX-License-Identifier: Apache-2.0
#include "tsanet/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tsanet/ops.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace fs = std::filesystem;

namespace tsanet {

std::string TrainConfig::echo() const {
  std::ostringstream os;
  os << "learning_rate=" << learning_rate << "\n";
  os << "iterations=" << iterations << "\n";
  os << "scales=";
  for (size_t i = 0; i < scales.size(); ++i)
    os << (i ? "," : "") << scales[i];
  os << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "seed=" << seed << "\n";
  os << "switch_every=" << switch_every << "\n";
  os << "taf_enabled=" << (taf_enabled ? 1 : 0) << "\n";
  os << "sad_enabled=" << (sad_enabled ? 1 : 0) << "\n";
  os << "target_residual=" << (target_residual ? 1 : 0) << "\n";
  return os.str();
}

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  auto as_bool = [](const std::string& v, const std::string& key) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ValueError("config: boolean expected for " + key + ", got " + v);
  };
  try {
    for (const auto& [key, value] : kv) {
      if (key == "learning_rate") cfg.learning_rate = std::stod(value);
      else if (key == "iterations") cfg.iterations = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "switch_every") cfg.switch_every = std::stoi(value);
      else if (key == "taf_enabled") cfg.taf_enabled = as_bool(value, key);
      else if (key == "sad_enabled") cfg.sad_enabled = as_bool(value, key);
      else if (key == "target_residual")
        cfg.target_residual = as_bool(value, key);
      else if (key == "scales") {
        cfg.scales.clear();
        std::stringstream ss(value);
        std::string tok;
        while (std::getline(ss, tok, ','))
          if (!tok.empty()) cfg.scales.push_back(std::stoi(tok));
      } else {
        throw ValueError("config: unknown key " + key);
      }
    }
  } catch (const std::invalid_argument&) {
    throw ValueError("config: malformed numeric value");
  } catch (const std::out_of_range&) {
    throw ValueError("config: numeric value out of range");
  }
  return cfg;
}

namespace {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.iterations < 1)
    throw ValueError("train config: iterations must be >= 1");
  if (cfg.batch_size < 1)
    throw ValueError("train config: batch_size must be >= 1");
  if (cfg.learning_rate <= 0)
    throw ValueError("train config: learning_rate must be > 0");
  if (cfg.scales.empty())
    throw ValueError("train config: at least one scale required");
  for (int s : cfg.scales)
    if (s < 32 || s % 32 != 0)
      throw ValueError("train config: scales must be positive multiples of "
                       "32, got " +
                       std::to_string(s));
  if (cfg.switch_every < 1)
    throw ValueError("train config: switch_every must be >= 1");
}

}  // namespace

void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
               AdamState& state, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  state.step += 1;
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [name, param] : params) {
    Tensor& p = *param;
    DType dt = p.dtype();
    auto n = static_cast<size_t>(p.numel());
    auto it = state.moments.find(name);
    if (it == state.moments.end())
      it = state.moments
               .emplace(name, std::make_pair(Tensor::zeros(p.shape(), dt),
                                             Tensor::zeros(p.shape(), dt)))
               .first;
    std::span<const double> g = p.grad();
    std::vector<double> new_p(n), new_m(n), new_v(n);
    for (size_t i = 0; i < n; ++i) {
      double gi = g.empty() ? 0.0 : g[i];
      if (!std::isfinite(gi))
        throw ValueError("adam_step: non-finite gradient in parameter " +
                         name);
      double m = beta1 * it->second.first.data()[i] + (1.0 - beta1) * gi;
      double v = beta2 * it->second.second.data()[i] + (1.0 - beta2) * gi * gi;
      m = quantize(m, dt);
      v = quantize(v, dt);
      new_m[i] = m;
      new_v[i] = v;
      double update = lr * (m / c1) / (std::sqrt(v / c2) + eps);
      new_p[i] = quantize(p.data()[i] - update, dt);
    }
    p = Tensor::from_data(p.shape(), std::move(new_p), dt, true);
    it->second.first = Tensor::from_data(p.shape(), std::move(new_m), dt);
    it->second.second = Tensor::from_data(p.shape(), std::move(new_v), dt);
  }
}

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.append(reinterpret_cast<const char*>(&v), 2);
}
void put_u32(std::string& out, uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), 4);
}

void put_entry(std::string& out, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff)
    throw ValueError("checkpoint: tensor name too long: " + name);
  put_u16(out, static_cast<uint16_t>(name.size()));
  out.append(name);
  const auto& shape = t.shape();
  out.push_back(static_cast<char>(shape.size()));
  for (int64_t d : shape) put_u32(out, static_cast<uint32_t>(d));
  for (double v : t.data()) {
    float f = static_cast<float>(v);
    out.append(reinterpret_cast<const char*>(&f), 4);
  }
}

Tensor scalar_tensor(double v) {
  return Tensor::from_data({1}, {v}, DType::f32);
}

struct Reader {
  const std::string& buf;
  size_t off = 0;

  void need(size_t n, const char* what) const {
    if (off + n > buf.size())
      throw FormatError("checkpoint truncated reading " + std::string(what) +
                        " at byte offset " + std::to_string(off));
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v;
    std::memcpy(&v, buf.data() + off, 2);
    off += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, buf.data() + off, 4);
    off += 4;
    return v;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(buf[off++]);
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(off, n);
    off += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::string out;
  out.append("TSCK");
  put_u32(out, ckpt.version);

  std::vector<std::pair<std::string, Tensor>> entries;
  for (const auto& [name, t] : ckpt.params) entries.emplace_back(name, t);
  for (const auto& [name, t] : ckpt.params) {
    auto it = ckpt.moments.find(name);
    if (it != ckpt.moments.end()) {
      entries.emplace_back(name + ".m", it->second.first);
      entries.emplace_back(name + ".v", it->second.second);
    }
  }
  entries.emplace_back("__meta.iter",
                       scalar_tensor(static_cast<double>(ckpt.iteration)));
  entries.emplace_back("__meta.adam_step",
                       scalar_tensor(static_cast<double>(ckpt.adam_step)));
  entries.emplace_back("__meta.taf_enabled",
                       scalar_tensor(ckpt.flags.taf_enabled ? 1.0 : 0.0));
  entries.emplace_back("__meta.sad_enabled",
                       scalar_tensor(ckpt.flags.sad_enabled ? 1.0 : 0.0));
  entries.emplace_back("__meta.target_residual",
                       scalar_tensor(ckpt.flags.target_residual ? 1.0 : 0.0));

  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) put_entry(out, name, t);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};
  if (r.bytes(4, "magic") != "TSCK")
    throw FormatError("bad checkpoint magic at byte offset 0 in " +
                      path.string());
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != 1)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(ckpt.version) + " at byte offset 4");
  uint32_t count = r.u32("entry count");

  std::vector<std::pair<std::string, Tensor>> entries;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.u16("name length");
    std::string name = r.bytes(name_len, "name");
    uint8_t ndim = r.u8("ndim");
    if (ndim < 1 || ndim > 4)
      throw FormatError("invalid tensor rank for " + name + " at byte offset " +
                        std::to_string(r.off - 1));
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int64_t>(r.u32("dims")));
      numel *= shape.back();
    }
    r.need(static_cast<size_t>(numel) * 4, "tensor data");
    std::vector<double> vals(static_cast<size_t>(numel));
    for (int64_t k = 0; k < numel; ++k) {
      float fv;
      std::memcpy(&fv, r.buf.data() + r.off, 4);
      r.off += 4;
      vals[static_cast<size_t>(k)] = static_cast<double>(fv);
    }
    entries.emplace_back(std::move(name),
                         Tensor::from_data(std::move(shape), std::move(vals),
                                           DType::f32));
  }
  if (r.off != buf.size())
    throw FormatError("trailing bytes in checkpoint at byte offset " +
                      std::to_string(r.off));

  auto meta = [&](const std::string& name, double fallback,
                  bool required) -> double {
    for (const auto& [n, t] : entries)
      if (n == name) return t.item();
    if (required)
      throw FormatError("checkpoint missing entry " + name);
    return fallback;
  };
  ckpt.iteration = static_cast<int64_t>(meta("__meta.iter", 0, true));
  ckpt.adam_step = static_cast<int64_t>(meta("__meta.adam_step", 0, true));
  ckpt.flags.taf_enabled = meta("__meta.taf_enabled", 1, false) != 0.0;
  ckpt.flags.sad_enabled = meta("__meta.sad_enabled", 1, false) != 0.0;
  ckpt.flags.target_residual =
      meta("__meta.target_residual", 0, false) != 0.0;

  for (const auto& [name, t] : entries) {
    if (name.rfind("__meta.", 0) == 0) continue;
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".m") == 0)
      ckpt.moments[name.substr(0, name.size() - 2)].first = t;
    else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".v") == 0)
      ckpt.moments[name.substr(0, name.size() - 2)].second = t;
    else
      ckpt.params.emplace_back(name, t);
  }
  for (const auto& [name, mv] : ckpt.moments)
    if (!mv.first.defined() || !mv.second.defined())
      throw FormatError("checkpoint has unpaired optimizer moments for " +
                        name);
  return ckpt;
}

ModelParams model_from_checkpoint(const Checkpoint& ckpt) {
  ModelParams model = init_model_params(0, DType::f32);
  auto registry = named_params(model);
  if (registry.size() != ckpt.params.size())
    throw FormatError("checkpoint parameter count " +
                      std::to_string(ckpt.params.size()) +
                      " does not match the model (" +
                      std::to_string(registry.size()) + ")");
  for (size_t i = 0; i < registry.size(); ++i) {
    const auto& [name, tensor] = ckpt.params[i];
    if (name != registry[i].first)
      throw FormatError("checkpoint parameter " + name +
                        " does not match expected " + registry[i].first);
    if (tensor.shape() != registry[i].second->shape())
      throw FormatError("checkpoint parameter " + name + " has shape " +
                        shape_str(tensor.shape()) + ", expected " +
                        shape_str(registry[i].second->shape()));
    *registry[i].second = tensor.clone(/*requires_grad=*/true);
  }
  return model;
}

TrainResult train(const TrainConfig& cfg,
                  const std::vector<fs::path>& data_roots,
                  const fs::path& out_dir) {
  validate_train_config(cfg);
  if (data_roots.empty()) throw ValueError("train: no dataset roots given");
  fs::create_directories(out_dir);

  std::vector<std::vector<FrameSequence>> datasets;
  for (size_t i = 0; i < data_roots.size(); ++i)
    datasets.push_back(
        load_dataset(data_roots[i], mix_seed(cfg.seed, 20 + i)));
  std::vector<const std::vector<FrameSequence>*> dataset_ptrs;
  for (const auto& ds : datasets) dataset_ptrs.push_back(&ds);

  ModelParams model = init_model_params(cfg.seed, DType::f32);
  auto registry = named_params(model);
  AdamState adam;
  JointSampler sampler(dataset_ptrs, cfg.switch_every, cfg.seed);
  Rng scale_rng(mix_seed(cfg.seed, 5));
  ModelFlags flags = cfg.flags();

  {
    std::ofstream cfg_file(out_dir / "config.txt");
    if (!cfg_file)
      throw IoError("cannot write " + (out_dir / "config.txt").string());
    cfg_file << cfg.echo();
  }
  std::ofstream log(out_dir / "loss.log");
  if (!log) throw IoError("cannot write " + (out_dir / "loss.log").string());

  auto snapshot = [&](int64_t iter) {
    Checkpoint ckpt;
    ckpt.iteration = iter;
    ckpt.adam_step = adam.step;
    ckpt.flags = flags;
    ckpt.config_echo = cfg.echo();
    for (auto& [name, t] : registry) ckpt.params.emplace_back(name, *t);
    ckpt.moments = adam.moments;
    return ckpt;
  };

  Tape& tape = Tape::instance();
  TrainResult result;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    int scale_px =
        cfg.scales[scale_rng.uniform_int(static_cast<int64_t>(cfg.scales.size()))];
    tape.reset();
    Tensor loss;
    for (int b = 0; b < cfg.batch_size; ++b) {
      JointSampler::Draw draw = sampler.next();
      auto [window, target] = make_window(*draw.seq, draw.t, scale_px);
      Tensor logits = forward_segment(model, flags, window, scale_px, scale_px);
      Tensor sample_loss = softmax_cross_entropy(logits, target);
      loss = loss.defined() ? add(loss, sample_loss) : sample_loss;
    }
    if (cfg.batch_size > 1) loss = scale(loss, 1.0 / cfg.batch_size);
    tape.backward(loss);
    adam_step(registry, adam, cfg.learning_rate);
    double lv = loss.item();
    result.losses.push_back(lv);
    log << "iter " << iter << " loss " << lv << "\n";
    log.flush();
    if ((iter + 1) % 500 == 0 && iter + 1 < cfg.iterations)
      save_checkpoint(snapshot(iter + 1), out_dir / "checkpoint.tsck");
  }
  tape.reset();
  result.checkpoint = snapshot(cfg.iterations);
  save_checkpoint(result.checkpoint, out_dir / "checkpoint.tsck");
  return result;
}

}  // namespace tsanet
