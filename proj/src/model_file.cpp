/* Copyright 2026 The roadnoise Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "roadnoise/model_file.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <type_traits>

#include "roadnoise/error.hpp"

namespace roadnoise {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'M', '1'};
constexpr double kMinStd = 1e-6;

// --- little-endian writer/reader ------------------------------------------

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { raw(v); }
  void u32(std::uint32_t v) { raw(v); }
  void i32(std::int32_t v) { raw(static_cast<std::uint32_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    raw(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  template <class U>
  void raw(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw<std::uint8_t>()); }
  std::uint16_t u16() { return raw<std::uint16_t>(); }
  std::uint32_t u32() { return raw<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(raw<std::uint32_t>()); }
  double f64() {
    const std::uint64_t bits = raw<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw InvalidModel("model file truncated");
  }
  template <class U>
  U raw() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U{b_[pos_ + i]} << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::size_t dtype_bytes(DType d) {
  switch (d) {
    case DType::F64: return 8;
    case DType::I8: return 1;
    case DType::I32: return 4;
  }
  throw InvalidModel("unknown dtype");
}

// --- Model <-> FileTensor helpers -----------------------------------------

std::vector<std::uint32_t> to_u32(const std::vector<std::size_t>& dims) {
  return {dims.begin(), dims.end()};
}

std::vector<std::size_t> to_size(const std::vector<std::uint32_t>& dims) {
  return {dims.begin(), dims.end()};
}

FileTensor f64_tensor(std::string name, const Tensor& t) {
  FileTensor ft;
  ft.name = std::move(name);
  ft.dims = to_u32(t.dims);
  ft.dtype = DType::F64;
  ft.f64 = t.data;
  return ft;
}

FileTensor f64_vector(std::string name, const std::vector<double>& v) {
  Tensor t({v.size()});
  t.data = v;
  return f64_tensor(std::move(name), t);
}

FileTensor i32_vector(std::string name, std::vector<std::int32_t> v) {
  FileTensor ft;
  ft.name = std::move(name);
  ft.dims = {static_cast<std::uint32_t>(v.size())};
  ft.dtype = DType::I32;
  ft.i32 = std::move(v);
  return ft;
}

FileTensor i8_tensor(std::string name, const QuantizedTensor& q) {
  FileTensor ft;
  ft.name = std::move(name);
  ft.dims = to_u32(q.dims);
  ft.dtype = DType::I8;
  ft.i8 = q.data;
  ft.qparams = q.qparams;
  return ft;
}

std::vector<std::int32_t> cnn_shape_vector(const CnnShape& s) {
  return {static_cast<std::int32_t>(s.in_h), static_cast<std::int32_t>(s.in_w),
          static_cast<std::int32_t>(s.conv1), static_cast<std::int32_t>(s.conv2),
          static_cast<std::int32_t>(s.hidden)};
}

class TensorIndex {
 public:
  explicit TensorIndex(const ModelFile& file) {
    for (const auto& t : file.tensors) {
      if (!by_name_.emplace(t.name, &t).second) {
        throw InvalidModel("duplicate tensor '" + t.name + "'");
      }
    }
  }

  const FileTensor& get(const std::string& name, DType dtype) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw InvalidModel("model file lacks tensor '" + name + "'");
    if (it->second->dtype != dtype) throw InvalidModel("tensor '" + name + "' has wrong dtype");
    used_.insert(name);
    return *it->second;
  }

  Tensor f64(const std::string& name, const std::vector<std::size_t>& dims) {
    const auto& ft = get(name, DType::F64);
    if (to_size(ft.dims) != dims) throw InvalidModel("tensor '" + name + "' has wrong shape");
    Tensor t(dims);
    t.data = ft.f64;
    return t;
  }

  std::vector<std::int32_t> i32(const std::string& name, std::size_t n) {
    const auto& ft = get(name, DType::I32);
    if (ft.i32.size() != n) throw InvalidModel("tensor '" + name + "' has wrong length");
    return ft.i32;
  }

  QuantizedTensor i8(const std::string& name, const std::vector<std::size_t>& dims) {
    const auto& ft = get(name, DType::I8);
    if (to_size(ft.dims) != dims) throw InvalidModel("tensor '" + name + "' has wrong shape");
    return QuantizedTensor{dims, ft.i8, ft.qparams};
  }

  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  void check_all_used() const {
    for (const auto& [name, t] : by_name_) {
      if (!used_.count(name)) throw InvalidModel("unexpected tensor '" + name + "'");
    }
  }

 private:
  std::map<std::string, const FileTensor*> by_name_;
  std::set<std::string> used_;
};

std::size_t positive(std::int32_t v) {
  if (v <= 0) throw InvalidModel("shape entries must be positive");
  return static_cast<std::size_t>(v);
}

// Rejects shapes whose parameter tensors could not possibly be in the file,
// before anything of that size is allocated.
void check_plausible(double parameters, const ModelFile& file) {
  double stored = 0.0;
  for (const auto& t : file.tensors) stored += static_cast<double>(t.element_count());
  if (parameters > stored) throw InvalidModel("shape tensor does not match the stored weights");
}

double cnn_parameters(const CnnShape& s) {
  const double c1 = s.conv1, c2 = s.conv2, h = s.hidden;
  const double flat = c2 * static_cast<double>(s.pool2_h()) * static_cast<double>(s.pool2_w());
  return c1 * 10 + c2 * (c1 * 9 + 1) + (flat + 1) * h + (h + 1) * kNumClasses;
}

double ast_parameters(const AstShape& s) {
  const double d = s.dim, m = s.mlp;
  const double tokens = static_cast<double>(s.n_mels / s.patch) *
                            static_cast<double>(s.n_frames / s.patch) + 1;
  const double layer = 4 * d * d + 8 * d + 2 * d * m + m;
  return (static_cast<double>(s.patch) * s.patch + 2) * d + tokens * d +
         static_cast<double>(s.layers) * layer + 2 * d + (d + 1) * kNumClasses;
}

CnnShape read_cnn_shape(TensorIndex& idx) {
  const auto v = idx.i32("cnn.shape", 5);
  return CnnShape{positive(v[0]), positive(v[1]), positive(v[2]), positive(v[3]),
                  positive(v[4])};
}

template <class Params>
void load_params(Params& p, TensorIndex& idx) {
  p.for_each([&idx](std::string_view name, Tensor& t) {
    t = idx.f64(std::string(name), t.dims);
  });
}

}  // namespace

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(std::span<const FeatureMatrix> features) {
  if (features.empty()) throw InvalidArgument("cannot fit standardizer on no data");
  const std::size_t n_mels = features.front().n_mels();
  Standardizer s;
  s.mean.assign(n_mels, 0.0);
  s.stddev.assign(n_mels, 0.0);
  double count = 0.0;
  for (const auto& f : features) {
    if (f.n_mels() != n_mels) throw InvalidArgument("feature matrices disagree on n_mels");
    for (std::size_t m = 0; m < n_mels; ++m) {
      for (double v : f.band(m)) s.mean[m] += v;
    }
    count += static_cast<double>(f.n_frames());
  }
  for (double& v : s.mean) v /= count;
  for (const auto& f : features) {
    for (std::size_t m = 0; m < n_mels; ++m) {
      for (double v : f.band(m)) s.stddev[m] += (v - s.mean[m]) * (v - s.mean[m]);
    }
  }
  for (double& v : s.stddev) v = std::max(kMinStd, std::sqrt(v / count));
  return s;
}

Tensor Standardizer::apply(const FeatureMatrix& f) const {
  if (f.n_mels() != mean.size()) {
    throw InvalidModel("feature matrix has " + std::to_string(f.n_mels()) +
                       " mel bands, model expects " + std::to_string(mean.size()));
  }
  Tensor x({f.n_mels(), f.n_frames()});
  for (std::size_t m = 0; m < f.n_mels(); ++m) {
    const auto band = f.band(m);
    for (std::size_t t = 0; t < band.size(); ++t) {
      x.at(m, t) = (band[t] - mean[m]) / stddev[m];
    }
  }
  return x;
}

Arch Model::arch() const {
  switch (net.index()) {
    case 0: return Arch::Cnn;
    case 1: return Arch::Ast;
    default: return Arch::CnnInt8;
  }
}

std::size_t Model::input_mels() const {
  return std::visit(
      [](const auto& p) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, AstParams>) {
          return p.shape.n_mels;
        } else {
          return p.shape.in_h;
        }
      },
      net);
}

std::size_t Model::input_frames() const {
  return std::visit(
      [](const auto& p) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, AstParams>) {
          return p.shape.n_frames;
        } else {
          return p.shape.in_w;
        }
      },
      net);
}

Logits forward(const Network& net, const Tensor& x) {
  return std::visit(
      [&x](const auto& p) -> Logits {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, CnnParams>) {
          return cnn_forward(p, x);
        } else if constexpr (std::is_same_v<T, AstParams>) {
          return ast_forward(p, x);
        } else {
          return quantized_forward(p, x);
        }
      },
      net);
}

Logits predict(const Model& model, const FeatureMatrix& features) {
  const bool frames_ok = model.arch() == Arch::Ast
                             ? features.n_frames() >= model.input_frames()
                             : features.n_frames() == model.input_frames();
  if (features.n_mels() != model.input_mels() || !frames_ok) {
    throw InvalidModel("model expects " + std::to_string(model.input_mels()) + "x" +
                       std::to_string(model.input_frames()) + " features, got " +
                       std::to_string(features.n_mels()) + "x" +
                       std::to_string(features.n_frames()));
  }
  return forward(model.net, model.norm.apply(features));
}

// ---------------------------------------------------------------------------

std::size_t FileTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::size_t memory_footprint(const ModelFile& file) {
  std::size_t n = kModelHeaderBytes;
  for (const auto& t : file.tensors) {
    n += 2 + t.name.size() + 1 + 4 * t.dims.size() + 1;
    n += t.element_count() * dtype_bytes(t.dtype);
    if (t.dtype == DType::I8) n += 8 + 4;
  }
  return n;
}

std::size_t memory_footprint(const Model& model) {
  return memory_footprint(to_model_file(model));
}

std::vector<std::uint8_t> encode_model_file(const ModelFile& file) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u8(static_cast<std::uint8_t>(file.arch));
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    if (t.name.size() > 0xffff) throw InvalidArgument("tensor name too long");
    if (t.dims.size() > 0xff) throw InvalidArgument("tensor rank too large");
    const std::size_t n = t.element_count();
    const std::size_t stored = t.dtype == DType::F64 ? t.f64.size()
                               : t.dtype == DType::I8 ? t.i8.size()
                                                      : t.i32.size();
    if (stored != n) throw InvalidArgument("tensor '" + t.name + "' data/dims mismatch");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    switch (t.dtype) {
      case DType::F64:
        for (double v : t.f64) w.f64(v);
        break;
      case DType::I8:
        for (auto v : t.i8) w.u8(static_cast<std::uint8_t>(v));
        w.f64(t.qparams.scale);
        w.i32(t.qparams.zero_point);
        break;
      case DType::I32:
        for (auto v : t.i32) w.i32(v);
        break;
    }
  }
  return w.take();
}

ModelFile decode_model_file(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw InvalidModel("bad magic (expected RNM1)");
  ModelFile file;
  const std::uint8_t arch = r.u8();
  if (arch > 2) throw InvalidModel("unknown arch id " + std::to_string(arch));
  file.arch = static_cast<Arch>(arch);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    FileTensor t;
    t.name = r.str(r.u16());
    const std::uint8_t ndim = r.u8();
    for (std::uint8_t d = 0; d < ndim; ++d) t.dims.push_back(r.u32());
    const std::uint8_t dtype = r.u8();
    if (dtype > 2) throw InvalidModel("unknown dtype " + std::to_string(dtype));
    t.dtype = static_cast<DType>(dtype);
    const std::size_t n = t.element_count();
    if (n > bytes.size()) throw InvalidModel("model file truncated");
    switch (t.dtype) {
      case DType::F64:
        t.f64.resize(n);
        for (auto& v : t.f64) v = r.f64();
        break;
      case DType::I8:
        t.i8.resize(n);
        for (auto& v : t.i8) v = static_cast<std::int8_t>(r.u8());
        t.qparams.scale = r.f64();
        t.qparams.zero_point = r.i32();
        break;
      case DType::I32:
        t.i32.resize(n);
        for (auto& v : t.i32) v = r.i32();
        break;
    }
    file.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw InvalidModel("trailing bytes after last tensor");
  return file;
}

ModelFile to_model_file(const Model& model) {
  ModelFile file;
  file.arch = model.arch();
  auto& out = file.tensors;
  std::visit(
      [&out](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, CnnParams>) {
          out.push_back(i32_vector("cnn.shape", cnn_shape_vector(p.shape)));
          p.for_each([&out](std::string_view name, const Tensor& t) {
            out.push_back(f64_tensor(std::string(name), t));
          });
        } else if constexpr (std::is_same_v<T, AstParams>) {
          const auto& s = p.shape;
          out.push_back(i32_vector(
              "ast.shape",
              {static_cast<std::int32_t>(s.n_mels), static_cast<std::int32_t>(s.n_frames),
               static_cast<std::int32_t>(s.patch), static_cast<std::int32_t>(s.dim),
               static_cast<std::int32_t>(s.heads), static_cast<std::int32_t>(s.layers),
               static_cast<std::int32_t>(s.mlp)}));
          p.for_each([&out](std::string_view name, const Tensor& t) {
            out.push_back(f64_tensor(std::string(name), t));
          });
        } else {
          out.push_back(i32_vector("cnn.shape", cnn_shape_vector(p.shape)));
          const std::pair<const char*, const QuantizedLayer*> layers[] = {
              {"conv1", &p.conv1}, {"conv2", &p.conv2}, {"dense1", &p.dense1},
              {"dense2", &p.dense2}};
          for (const auto& [name, layer] : layers) {
            out.push_back(i8_tensor(std::string(name) + ".w", layer->weights));
            out.push_back(i32_vector(std::string(name) + ".b", layer->bias));
          }
          const std::pair<const char*, const std::optional<QuantParams>*> acts[] = {
              {"input", &p.act_input}, {"conv1", &p.act_conv1}, {"conv2", &p.act_conv2},
              {"dense1", &p.act_dense1}, {"dense2", &p.act_dense2}};
          for (const auto& [name, q] : acts) {
            if (!q->has_value()) continue;
            out.push_back(f64_vector("act." + std::string(name) + ".scale", {(*q)->scale}));
            out.push_back(i32_vector("act." + std::string(name) + ".zp", {(*q)->zero_point}));
          }
        }
      },
      model.net);
  out.push_back(f64_vector("norm.mean", model.norm.mean));
  out.push_back(f64_vector("norm.std", model.norm.stddev));
  return file;
}

Model from_model_file(const ModelFile& file) {
  TensorIndex idx(file);
  Model model;
  switch (file.arch) {
    case Arch::Cnn: {
      const CnnShape shape = read_cnn_shape(idx);
      check_plausible(cnn_parameters(shape), file);
      CnnParams p = CnnParams::zeros(shape);
      load_params(p, idx);
      model.net = std::move(p);
      break;
    }
    case Arch::Ast: {
      const auto v = idx.i32("ast.shape", 7);
      AstShape s{positive(v[0]), positive(v[1]), positive(v[2]), positive(v[3]),
                 positive(v[4]), positive(v[5]), positive(v[6])};
      if (s.dim % s.heads != 0) throw InvalidModel("ast dim not divisible by heads");
      if (s.n_mels % s.patch != 0 || s.n_frames % s.patch != 0) {
        throw InvalidModel("ast input does not tile into patches");
      }
      check_plausible(ast_parameters(s), file);
      AstParams p = AstParams::zeros(s);
      load_params(p, idx);
      model.net = std::move(p);
      break;
    }
    case Arch::CnnInt8: {
      QuantizedCnn q;
      q.shape = read_cnn_shape(idx);
      check_plausible(cnn_parameters(q.shape), file);
      const CnnParams ref = CnnParams::zeros(q.shape);
      const std::tuple<const char*, QuantizedLayer*, const Tensor*, const Tensor*> layers[] = {
          {"conv1", &q.conv1, &ref.conv1_w, &ref.conv1_b},
          {"conv2", &q.conv2, &ref.conv2_w, &ref.conv2_b},
          {"dense1", &q.dense1, &ref.dense1_w, &ref.dense1_b},
          {"dense2", &q.dense2, &ref.dense2_w, &ref.dense2_b}};
      for (const auto& [name, layer, w, b] : layers) {
        layer->weights = idx.i8(std::string(name) + ".w", w->dims);
        if (layer->weights.qparams.zero_point != 0) {
          throw InvalidModel(std::string(name) + ".w must have zero_point 0");
        }
        layer->bias = idx.i32(std::string(name) + ".b", b->size());
      }
      const std::pair<const char*, std::optional<QuantParams>*> acts[] = {
          {"input", &q.act_input}, {"conv1", &q.act_conv1}, {"conv2", &q.act_conv2},
          {"dense1", &q.act_dense1}, {"dense2", &q.act_dense2}};
      for (const auto& [name, slot] : acts) {
        const std::string base = "act." + std::string(name);
        if (!idx.has(base + ".scale")) continue;  // reported by quantized_forward
        const double scale = idx.f64(base + ".scale", {1}).data[0];
        const std::int32_t zp = idx.i32(base + ".zp", 1)[0];
        *slot = QuantParams{scale, zp};
      }
      model.net = std::move(q);
      break;
    }
  }
  const std::size_t mels = model.input_mels();
  model.norm.mean = idx.f64("norm.mean", {mels}).data;
  model.norm.stddev = idx.f64("norm.std", {mels}).data;
  for (double s : model.norm.stddev) {
    if (!(s > 0.0)) throw InvalidModel("norm.std entries must be positive");
  }
  idx.check_all_used();
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  const auto bytes = encode_model_file(to_model_file(model));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open model");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return from_model_file(decode_model_file(bytes));
  } catch (const InvalidModel& e) {
    throw InvalidModel(path.string() + ": " + e.what());
  }
}

}  // namespace roadnoise
