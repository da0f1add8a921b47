#include "magsplat/raster_io.hpp"

#include "magsplat/binary_io.hpp"

namespace magsplat {

Raster<double> RasterFile::to_f64() const {
  Raster<double> out(width, height, channels);
  if (dtype == RasterDtype::F32) {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f32[i];
  } else {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = u8[i];
  }
  return out;
}

Mask RasterFile::to_mask() const {
  Mask out(width, height, channels);
  if (dtype == RasterDtype::U8) {
    out.data = u8;
  } else {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f32[i] > 0.5f ? 1 : 0;
  }
  return out;
}

std::vector<std::uint8_t> encode_raster(const RasterFile& r) {
  const size_t n = static_cast<size_t>(r.width) * r.height * r.channels;
  if ((r.dtype == RasterDtype::F32 ? r.f32.size() : r.u8.size()) != n) {
    throw Error(ErrorKind::ShapeMismatch, "raster payload does not match its shape");
  }
  ByteWriter w;
  w.magic("RAS1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.dtype));
  if (r.dtype == RasterDtype::F32) {
    w.put_span<float>(r.f32);
  } else {
    w.put_span<std::uint8_t>(r.u8);
  }
  return w.take();
}

RasterFile decode_raster(std::span<const std::uint8_t> bytes) {
  ByteReader rd(bytes);
  rd.expect_magic("RAS1");
  RasterFile r;
  const auto w = rd.get<std::uint32_t>(), h = rd.get<std::uint32_t>(), c = rd.get<std::uint32_t>();
  const auto dtype = rd.get<std::uint32_t>();
  if (dtype > 1) throw Error(ErrorKind::IoError, "unknown raster dtype code " + std::to_string(dtype));
  if (w > 1u << 16 || h > 1u << 16 || c > 1024) throw Error(ErrorKind::IoError, "implausible raster header");
  r.width = static_cast<int>(w);
  r.height = static_cast<int>(h);
  r.channels = static_cast<int>(c);
  r.dtype = static_cast<RasterDtype>(dtype);
  const size_t n = static_cast<size_t>(w) * h * c;
  const size_t elem = r.dtype == RasterDtype::F32 ? 4 : 1;
  if (rd.remaining() != n * elem) {
    throw Error(ErrorKind::TruncatedPayload, "raster payload length does not match the header");
  }
  if (r.dtype == RasterDtype::F32) {
    r.f32.resize(n);
    rd.get_into<float>(r.f32);
  } else {
    r.u8.resize(n);
    rd.get_into<std::uint8_t>(r.u8);
  }
  return r;
}

RasterFile read_raster(const std::string& path) { return decode_raster(read_file_bytes(path)); }

void write_raster(const RasterFile& r, const std::string& path) { write_file_bytes(path, encode_raster(r)); }

void write_raster(const Raster<double>& r, const std::string& path) {
  RasterFile f;
  f.width = r.width;
  f.height = r.height;
  f.channels = r.channels;
  f.dtype = RasterDtype::F32;
  f.f32.assign(r.data.begin(), r.data.end());
  write_raster(f, path);
}

void write_raster(const Mask& m, const std::string& path) {
  RasterFile f;
  f.width = m.width;
  f.height = m.height;
  f.channels = m.channels;
  f.dtype = RasterDtype::U8;
  f.u8 = m.data;
  write_raster(f, path);
}

Raster<double> read_raster_f64(const std::string& path) { return read_raster(path).to_f64(); }

Mask read_mask(const std::string& path) { return read_raster(path).to_mask(); }

}  // namespace magsplat
