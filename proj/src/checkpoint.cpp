#include "dnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dnet {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream os;
    os << "checkpoint: " << what << " at byte " << pos_;
    throw std::runtime_error(os.str());
  }
  void need(size_t n) const {
    if (pos_ + n > buf_.size()) fail("truncated file");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return buf_.size() - pos_; }
  const char* raw() const { return buf_.data(); }

 private:
  std::vector<char> buf_;
  size_t pos_ = 0;
};

void write_spec(Writer& w, const ModelSpec& spec) {
  w.str(spec.name);
  w.i32(spec.in_channels);
  w.i32(spec.stem.out_channels);
  w.i32(spec.stem.kernel);
  w.i32(spec.stem.stride);
  w.i32(spec.stem.padding);
  w.u8(spec.stem.pool ? 1 : 0);
  if (spec.stem.pool) {
    w.u8(spec.stem.pool->kind == PoolKind::max ? 0 : 1);
    w.i32(spec.stem.pool->window[0]);
    w.i32(spec.stem.pool->window[1]);
    w.i32(spec.stem.pool->stride[0]);
    w.i32(spec.stem.pool->stride[1]);
  }
  w.u32(static_cast<std::uint32_t>(spec.blocks.size()));
  for (const auto& b : spec.blocks) {
    w.i32(b.num_layers);
    w.i32(b.growth_rate);
    w.i32(b.in_channels);
  }
  w.f64(spec.compression);
}

ModelSpec read_spec(Reader& r) {
  ModelSpec spec;
  spec.name = r.str();
  spec.in_channels = r.i32();
  spec.stem.out_channels = r.i32();
  spec.stem.kernel = r.i32();
  spec.stem.stride = r.i32();
  spec.stem.padding = r.i32();
  if (r.u8()) {
    PoolSpec p;
    p.kind = r.u8() == 0 ? PoolKind::max : PoolKind::average;
    p.window = {r.i32(), r.i32()};
    p.stride = {r.i32(), r.i32()};
    spec.stem.pool = p;
  } else {
    spec.stem.pool = std::nullopt;
  }
  const std::uint32_t nb = r.u32();
  for (std::uint32_t i = 0; i < nb; ++i) {
    DenseBlockSpec b;
    b.num_layers = r.i32();
    b.growth_rate = r.i32();
    b.in_channels = r.i32();
    spec.blocks.push_back(b);
  }
  spec.compression = r.f64();
  return spec;
}

}  // namespace

Checkpoint snapshot(Model& model, const AdamState& adam, std::uint64_t train_seed,
                    std::uint32_t epoch, std::uint32_t batch_in_epoch,
                    std::uint64_t batches_done) {
  Checkpoint c;
  c.spec = model.spec;
  c.train_seed = train_seed;
  c.epoch = epoch;
  c.batch_in_epoch = batch_in_epoch;
  c.batches_done = batches_done;
  c.adam_step = adam.step;
  for (const auto& [name, t] : model.named_params)
    c.tensors.emplace_back(name, std::vector<double>(t.values().begin(), t.values().end()));
  for (const auto& [name, buf] : model.named_buffers()) c.tensors.emplace_back(name, *buf);
  for (const auto& [name, t] : model.named_params) {
    auto it = adam.m.find(name);
    c.tensors.emplace_back("adam.m." + name,
                           it != adam.m.end() ? it->second
                                              : std::vector<double>(t.numel(), 0.0));
  }
  for (const auto& [name, t] : model.named_params) {
    auto it = adam.v.find(name);
    c.tensors.emplace_back("adam.v." + name,
                           it != adam.v.end() ? it->second
                                              : std::vector<double>(t.numel(), 0.0));
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Writer w;
  for (char m : kMagic) w.u8(static_cast<std::uint8_t>(m));
  w.u32(ckpt.version);
  write_spec(w, ckpt.spec);
  w.u64(ckpt.train_seed);
  w.u32(ckpt.epoch);
  w.u32(ckpt.batch_in_epoch);
  w.u64(ckpt.batches_done);
  w.i64(ckpt.adam_step);

  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, values] : ckpt.tensors) {
    w.str(name);
    w.u8(0);  // dtype: f64
    w.u32(1);
    w.i32(static_cast<std::int32_t>(values.size()));
    w.u64(offset);
    offset += values.size() * 8;
  }
  w.u64(offset);
  Writer payload;
  for (const auto& [name, values] : ckpt.tensors)
    for (double v : values) payload.f64(v);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot create '" + path + "'");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  out.write(payload.bytes().data(), static_cast<std::streamsize>(payload.bytes().size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  for (char m : kMagic)
    if (r.u8() != static_cast<std::uint8_t>(m)) r.fail("bad magic (expected DNCP)");
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kVersion) {
    std::ostringstream os;
    os << "unsupported version " << c.version;
    r.fail(os.str());
  }
  c.spec = read_spec(r);
  c.train_seed = r.u64();
  c.epoch = r.u32();
  c.batch_in_epoch = r.u32();
  c.batches_done = r.u64();
  c.adam_step = r.i64();

  const std::uint32_t count = r.u32();
  struct Rec {
    std::string name;
    std::int64_t numel;
    std::uint64_t offset;
  };
  std::vector<Rec> recs;
  recs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Rec rec;
    rec.name = r.str();
    if (r.u8() != 0) r.fail("unknown dtype tag for '" + rec.name + "'");
    const std::uint32_t rank = r.u32();
    rec.numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::int32_t e = r.i32();
      if (e <= 0) r.fail("non-positive extent for '" + rec.name + "'");
      rec.numel *= e;
    }
    rec.offset = r.u64();
    recs.push_back(std::move(rec));
  }
  const std::uint64_t payload_bytes = r.u64();
  if (payload_bytes != r.remaining()) r.fail("payload size mismatch");
  for (const auto& rec : recs) {
    if (rec.offset + static_cast<std::uint64_t>(rec.numel) * 8 > payload_bytes)
      r.fail("tensor '" + rec.name + "' overruns payload");
  }
  const char* payload = r.raw() + r.pos();
  for (const auto& rec : recs) {
    std::vector<double> values(static_cast<size_t>(rec.numel));
    for (std::int64_t i = 0; i < rec.numel; ++i) {
      std::uint64_t bits = 0;
      const char* p = payload + rec.offset + static_cast<std::uint64_t>(i) * 8;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
      values[static_cast<size_t>(i)] = std::bit_cast<double>(bits);
    }
    c.tensors.emplace_back(rec.name, std::move(values));
  }
  return c;
}

Model restore_model(const Checkpoint& ckpt) {
  Model m = build_model(ckpt.spec, 0);
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, values] : ckpt.tensors) by_name[name] = &values;
  auto fill = [&](const std::string& name, std::span<double> dst) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    if (it->second->size() != dst.size())
      throw std::runtime_error("checkpoint: tensor '" + name + "' has " +
                               std::to_string(it->second->size()) + " values, model wants " +
                               std::to_string(dst.size()));
    std::copy(it->second->begin(), it->second->end(), dst.begin());
  };
  for (auto& [name, t] : m.named_params) fill(name, t.mutable_values());
  for (auto& [name, buf] : m.named_buffers()) fill(name, *buf);
  return m;
}

AdamState restore_adam(const Checkpoint& ckpt) {
  AdamState state;
  state.step = ckpt.adam_step;
  for (const auto& [name, values] : ckpt.tensors) {
    if (name.rfind("adam.m.", 0) == 0)
      state.m[name.substr(7)] = values;
    else if (name.rfind("adam.v.", 0) == 0)
      state.v[name.substr(7)] = values;
  }
  return state;
}

}  // namespace dnet
