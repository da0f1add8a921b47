#include "magsplat/checkpoint.hpp"

#include "magsplat/binary_io.hpp"

namespace magsplat {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_blob(ByteWriter& w, const std::vector<std::uint8_t>& blob) {
  w.put<std::uint64_t>(blob.size());
  w.put_span<std::uint8_t>(blob);
}

std::span<const std::uint8_t> get_blob(ByteReader& r) { return r.view(r.get<std::uint64_t>()); }

void put_vec(ByteWriter& w, const std::vector<double>& v) {
  w.put<std::uint64_t>(v.size());
  w.put_span<double>(v);
}

std::vector<double> get_vec(ByteReader& r) {
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining() / sizeof(double)) throw Error(ErrorKind::TruncatedPayload, "checkpoint vector exceeds the file");
  std::vector<double> v(n);
  r.get_into<double>(v);
  return v;
}

void put_adam(ByteWriter& w, const AdamState& a) {
  w.put<std::int64_t>(a.step);
  put_vec(w, a.m);
  put_vec(w, a.v);
}

AdamState get_adam(ByteReader& r) {
  AdamState a;
  a.step = r.get<std::int64_t>();
  a.m = get_vec(r);
  a.v = get_vec(r);
  if (a.m.size() != a.v.size()) throw Error(ErrorKind::IoError, "Adam moments differ in size");
  return a;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  const TrainerState& s = c.state;
  ByteWriter w;
  w.magic("MCK1");
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(c.config_hash);
  w.put<std::uint64_t>(c.seed);
  w.put<std::int64_t>(s.iteration);
  put_blob(w, encode_scene(s.scene));
  put_blob(w, encode_controls(s.controls));
  put_blob(w, s.field.encode(true));
  for (const auto* v : {&s.raw.mu, &s.raw.q, &s.raw.log_s, &s.raw.logit_o, &s.raw.sh}) put_vec(w, *v);
  put_adam(w, s.field_adam);
  for (const auto& a : s.gaussian_adam) put_adam(w, a);
  put_vec(w, s.impact.g);
  put_vec(w, s.impact.gaussian_energy);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MCK1");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw Error(ErrorKind::IoError, "unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.seed = r.get<std::uint64_t>();
  TrainerState& s = c.state;
  s.iteration = r.get<std::int64_t>();
  s.scene = decode_scene(get_blob(r));
  s.controls = decode_controls(get_blob(r));
  s.field = DeformationField::decode(get_blob(r));
  for (auto* v : {&s.raw.mu, &s.raw.q, &s.raw.log_s, &s.raw.logit_o, &s.raw.sh}) *v = get_vec(r);
  s.field_adam = get_adam(r);
  for (auto& a : s.gaussian_adam) a = get_adam(r);
  s.impact.g = get_vec(r);
  s.impact.gaussian_energy = get_vec(r);
  if (r.remaining() != 0) throw Error(ErrorKind::IoError, "trailing bytes after checkpoint");
  const size_t n = s.scene.size();
  if (s.raw.mu.size() != 3 * n || s.raw.q.size() != 4 * n || s.raw.log_s.size() != 3 * n ||
      s.raw.logit_o.size() != n) {
    throw Error(ErrorKind::IoError, "checkpoint parameter groups do not match the scene");
  }
  return c;
}

Checkpoint make_checkpoint(const Trainer& trainer) {
  return Checkpoint{config_hash(trainer.config()), trainer.config().seed, trainer.state()};
}

void save_checkpoint(const std::string& path, const Trainer& trainer) {
  write_file_bytes(path, encode_checkpoint(make_checkpoint(trainer)));
}

Checkpoint load_checkpoint(const std::string& path, const TrainConfig& expected) {
  Checkpoint c = decode_checkpoint(read_file_bytes(path));
  if (c.config_hash != config_hash(expected)) {
    throw Error(ErrorKind::ConfigHashMismatch, "checkpoint " + path + " was written with a different config");
  }
  return c;
}

}  // namespace magsplat
