#include "intflow/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace intflow {

namespace {

constexpr char kMagic[4] = {'W', 'G', 'B', 'N'};
constexpr std::uint16_t kVersion = 1;

// Record role tags.
enum class Role : std::uint8_t {
  weight = 0,
  gamma = 1,
  beta = 2,
  acc_w = 3,
  acc_gamma = 4,
  acc_beta = 5,
};

enum class RecKind : std::uint8_t { q_tensor = 0, real_tensor = 1, flag_tensor = 2 };

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot create checkpoint file " + path);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void i8(std::int8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { le(v); }
  void i16(std::int16_t v) { le(static_cast<std::uint16_t>(v)); }
  void u32(std::uint32_t v) { le(v); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { le(v); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits);
  }
  void str(const std::string& s) {
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  bool good() const { return out_.good(); }

 private:
  template <class T>
  void le(T v) {
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, sizeof(T));
  }
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open checkpoint file " + path);
  }
  void bytes(void* p, std::size_t n) {
    if (!in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n)))
      throw IoError("truncated checkpoint file " + path_);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::int16_t i16() { return static_cast<std::int16_t>(le<std::uint16_t>()); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(le<std::uint64_t>()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::string s(u16(), '\0');
    if (!s.empty()) bytes(s.data(), s.size());
    return s;
  }

 private:
  template <class T>
  T le() {
    unsigned char b[sizeof(T)];
    bytes(b, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
    return v;
  }
  std::ifstream in_;
  std::string path_;
};

void write_widths(Writer& w, const BitWidthConfig& c) {
  const int vals[] = {c.k_w,  c.k_a,      c.k_bn,    c.k_mu, c.k_sigma, c.k_gamma, c.k_beta,
                      c.k_e1, c.k_e2,     c.k_gw,    c.k_ggamma, c.k_gbeta, c.k_gc, c.k_mom,
                      c.k_acc, c.k_lr,    c.k_wu,    c.k_gammau, c.k_betau};
  for (int v : vals) w.u16(static_cast<std::uint16_t>(v));
  w.u8(static_cast<std::uint8_t>(c.e2_mode));
}

BitWidthConfig read_widths(Reader& r) {
  BitWidthConfig c;
  int* vals[] = {&c.k_w,  &c.k_a,   &c.k_bn, &c.k_mu, &c.k_sigma, &c.k_gamma, &c.k_beta,
                 &c.k_e1, &c.k_e2,  &c.k_gw, &c.k_ggamma, &c.k_gbeta, &c.k_gc, &c.k_mom,
                 &c.k_acc, &c.k_lr, &c.k_wu, &c.k_gammau, &c.k_betau};
  for (int* v : vals) *v = r.u16();
  c.e2_mode = static_cast<E2Mode>(r.u8());
  return c;
}

void write_shape(Writer& w, const Shape& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  for (std::int64_t d : s) w.i64(d);
}

Shape read_shape(Reader& r) {
  Shape s(r.u32());
  for (auto& d : s) d = r.i64();
  return s;
}

void write_qtensor(Writer& w, const QTensor& q) {
  write_shape(w, q.shape);
  w.u16(static_cast<std::uint16_t>(q.bit_width));
  w.i16(static_cast<std::int16_t>(q.resolution_exp));
  for (std::int32_t m : q.mantissas) w.i32(m);
}

QTensor read_qtensor(Reader& r) {
  Shape shape = read_shape(r);
  const int width = r.u16();
  const int res = r.i16();
  std::vector<std::int32_t> m(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : m) v = r.i32();
  return make_qtensor(std::move(shape), std::move(m), res, width);
}

void write_real(Writer& w, const RealTensor& t) {
  write_shape(w, t.shape);
  for (double v : t.values) w.f64(v);
}

RealTensor read_real(Reader& r) {
  Shape shape = read_shape(r);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = r.f64();
  return make_real(std::move(shape), std::move(v));
}

void write_record(Writer& w, const std::string& name, Role role, const Param& p) {
  w.str(name);
  w.u8(static_cast<std::uint8_t>(role));
  if (p.grid) {
    w.u8(static_cast<std::uint8_t>(RecKind::q_tensor));
    write_qtensor(w, p.q);
  } else {
    w.u8(static_cast<std::uint8_t>(RecKind::real_tensor));
    write_real(w, p.fp);
  }
}

void write_acc_record(Writer& w, const std::string& name, Role role, const ParamOptState& s) {
  w.str(name);
  w.u8(static_cast<std::uint8_t>(role));
  if (s.grid) {
    w.u8(static_cast<std::uint8_t>(RecKind::q_tensor));
    write_qtensor(w, s.acc_q);
  } else {
    w.u8(static_cast<std::uint8_t>(RecKind::real_tensor));
    write_real(w, s.acc_fp);
  }
}

struct RawRecord {
  std::string name;
  Role role;
  RecKind kind;
  QTensor q;
  RealTensor fp;
};

RawRecord read_record(Reader& r) {
  RawRecord rec;
  rec.name = r.str();
  rec.role = static_cast<Role>(r.u8());
  rec.kind = static_cast<RecKind>(r.u8());
  switch (rec.kind) {
    case RecKind::q_tensor:
      rec.q = read_qtensor(r);
      break;
    case RecKind::real_tensor:
      rec.fp = read_real(r);
      break;
    case RecKind::flag_tensor: {
      Shape shape = read_shape(r);
      std::vector<std::uint8_t> bytes(r.u32());
      r.bytes(bytes.data(), bytes.size());
      const FlagTensor f = flag_deserialize(bytes, shape);
      rec.fp = flag_decode(f);
      break;
    }
    default:
      throw IoError("unknown record kind in checkpoint");
  }
  return rec;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  write_widths(w, ck.model.widths);
  const QuantPolicy& p = ck.model.policy;
  w.u8(static_cast<std::uint8_t>(p.w | p.a << 1 | p.bn << 2 | p.g << 3 | p.e1 << 4 | p.e2 << 5 |
                                 p.u << 6));
  w.i32(static_cast<std::int32_t>(ck.model.epsilon_q.mantissa));
  w.i8(static_cast<std::int8_t>(ck.model.epsilon_q.resolution_exp));
  w.u8(static_cast<std::uint8_t>(ck.model.bn_backward));
  w.u32(static_cast<std::uint32_t>(ck.batch));
  write_shape(w, ck.input_shape);
  w.u64(ck.sr_state);
  w.u64(ck.shuffle_state);
  w.u64(static_cast<std::uint64_t>(ck.step));

  w.u32(static_cast<std::uint32_t>(ck.model.layers.size()));
  for (const LayerState& l : ck.model.layers) {
    const LayerSpec& s = l.spec;
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.i64(s.n_in);
    w.i64(s.n_out);
    w.i32(s.kernel);
    w.i32(s.stride);
    w.i32(s.pad);
    w.u8(s.has_bn);
    w.u8(s.quantized);
    w.u8(s.relu);
  }

  std::uint32_t records = 0;
  for (std::size_t i = 0; i < ck.model.layers.size(); ++i) {
    records += 2;  // weight + its accumulation
    if (ck.model.layers[i].spec.has_bn) records += 4;
  }
  w.u32(records);
  for (std::size_t i = 0; i < ck.model.layers.size(); ++i) {
    const LayerState& l = ck.model.layers[i];
    const OptimizerState::PerLayer& o = ck.opt.layers[i];
    const std::string base = "layer" + std::to_string(i);
    write_record(w, base + ".w", Role::weight, l.w);
    write_acc_record(w, base + ".acc_w", Role::acc_w, o.w);
    if (l.spec.has_bn) {
      write_record(w, base + ".gamma", Role::gamma, l.gamma);
      write_record(w, base + ".beta", Role::beta, l.beta);
      write_acc_record(w, base + ".acc_gamma", Role::acc_gamma, o.gamma);
      write_acc_record(w, base + ".acc_beta", Role::acc_beta, o.beta);
    }
  }
  if (!w.good()) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);

  Checkpoint ck;
  ck.model.widths = read_widths(r);
  const std::uint8_t pol = r.u8();
  ck.model.policy.w = pol & 1;
  ck.model.policy.a = pol >> 1 & 1;
  ck.model.policy.bn = pol >> 2 & 1;
  ck.model.policy.g = pol >> 3 & 1;
  ck.model.policy.e1 = pol >> 4 & 1;
  ck.model.policy.e2 = pol >> 5 & 1;
  ck.model.policy.u = pol >> 6 & 1;
  ck.model.epsilon_q.mantissa = r.i32();
  ck.model.epsilon_q.resolution_exp = r.i8();
  ck.model.bn_backward = static_cast<BnBackwardMode>(r.u8());
  ck.batch = static_cast<int>(r.u32());
  ck.input_shape = read_shape(r);
  ck.sr_state = r.u64();
  ck.shuffle_state = r.u64();
  ck.step = static_cast<std::int64_t>(r.u64());

  const std::uint32_t nlayers = r.u32();
  ck.model.layers.resize(nlayers);
  ck.opt.layers.resize(nlayers);
  for (std::uint32_t i = 0; i < nlayers; ++i) {
    LayerSpec& s = ck.model.layers[i].spec;
    s.kind = static_cast<LayerKind>(r.u8());
    s.n_in = r.i64();
    s.n_out = r.i64();
    s.kernel = r.i32();
    s.stride = r.i32();
    s.pad = r.i32();
    s.has_bn = r.u8();
    s.quantized = r.u8();
    s.relu = r.u8();
  }

  const std::uint32_t records = r.u32();
  for (std::uint32_t i = 0; i < records; ++i) {
    RawRecord rec = read_record(r);
    const std::size_t dot = rec.name.find('.');
    if (dot == std::string::npos || rec.name.substr(0, 5) != "layer")
      throw IoError("unrecognized record name '" + rec.name + "' in " + path);
    const std::size_t layer = std::stoul(rec.name.substr(5, dot - 5));
    if (layer >= nlayers) throw IoError("record for missing layer in " + path);
    auto as_param = [&rec]() {
      Param p;
      if (rec.kind == RecKind::q_tensor) {
        p.grid = true;
        p.q = std::move(rec.q);
      } else {
        p.fp = std::move(rec.fp);
      }
      return p;
    };
    auto as_acc = [&rec]() {
      ParamOptState s;
      if (rec.kind == RecKind::q_tensor) {
        s.grid = true;
        s.acc_q = std::move(rec.q);
      } else {
        s.acc_fp = std::move(rec.fp);
      }
      return s;
    };
    switch (rec.role) {
      case Role::weight:
        ck.model.layers[layer].w = as_param();
        break;
      case Role::gamma:
        ck.model.layers[layer].gamma = as_param();
        break;
      case Role::beta:
        ck.model.layers[layer].beta = as_param();
        break;
      case Role::acc_w:
        ck.opt.layers[layer].w = as_acc();
        break;
      case Role::acc_gamma:
        ck.opt.layers[layer].gamma = as_acc();
        break;
      case Role::acc_beta:
        ck.opt.layers[layer].beta = as_acc();
        break;
      default:
        throw IoError("unknown record role in " + path);
    }
  }
  return ck;
}

}  // namespace intflow
