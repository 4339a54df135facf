#pragma once

// Single-file NIfTI-1 (.nii, optionally gzip-compressed) reader and writer.
//
// Supported payloads are uint8, int16, int32 and float32 with dim[0] == 3.
// Byte order is detected from sizeof_hdr. The writer always emits native
// byte order, vox_offset 352, an empty extension block and an sform built
// from the grid affine. NIfTI-2 files and .hdr/.img pairs are rejected.

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "synthvol/error.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(NiftiHeader) == 348);
static_assert(offsetof(NiftiHeader, dim) == 40);
static_assert(offsetof(NiftiHeader, datatype) == 70);
static_assert(offsetof(NiftiHeader, pixdim) == 76);
static_assert(offsetof(NiftiHeader, vox_offset) == 108);
static_assert(offsetof(NiftiHeader, qform_code) == 252);
static_assert(offsetof(NiftiHeader, srow_x) == 280);
static_assert(offsetof(NiftiHeader, magic) == 344);

enum class NiftiDatatype : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
};

class NiftiMagicError : public Error {
 public:
  explicit NiftiMagicError(const std::string& m) : Error(Errc::format, "nifti", m) {}
};

class NiftiDatatypeError : public Error {
 public:
  explicit NiftiDatatypeError(const std::string& m) : Error(Errc::unsupported, "nifti", m) {}
};

class NiftiTruncatedError : public Error {
 public:
  explicit NiftiTruncatedError(const std::string& m) : Error(Errc::format, "nifti", m) {}
};

/// Decoded file: header as read (in native byte order), grid and scaled
/// voxel values.
struct NiftiImage {
  NiftiHeader header{};
  Grid grid;
  std::vector<float> data;
  bool swapped = false;

  Volume to_volume() const { return Volume(grid, data); }

  LabelMap to_labels() const {
    std::vector<Label> labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float r = std::round(data[i]);
      if (std::abs(data[i] - r) > 1e-3f || r < 0.0f) {
        fail(Errc::format, "nifti", "label volume contains non-integer or negative values");
      }
      labels[i] = static_cast<Label>(r);
    }
    return LabelMap(grid, std::move(labels));
  }
};

namespace nifti_detail {

template <typename T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T, std::size_t N>
void swap_array(T (&a)[N]) {
  for (auto& v : a) v = byteswap_value(v);
}

inline void swap_header(NiftiHeader& h) {
  h.sizeof_hdr = byteswap_value(h.sizeof_hdr);
  h.extents = byteswap_value(h.extents);
  h.session_error = byteswap_value(h.session_error);
  swap_array(h.dim);
  h.intent_p1 = byteswap_value(h.intent_p1);
  h.intent_p2 = byteswap_value(h.intent_p2);
  h.intent_p3 = byteswap_value(h.intent_p3);
  h.intent_code = byteswap_value(h.intent_code);
  h.datatype = byteswap_value(h.datatype);
  h.bitpix = byteswap_value(h.bitpix);
  h.slice_start = byteswap_value(h.slice_start);
  swap_array(h.pixdim);
  h.vox_offset = byteswap_value(h.vox_offset);
  h.scl_slope = byteswap_value(h.scl_slope);
  h.scl_inter = byteswap_value(h.scl_inter);
  h.slice_end = byteswap_value(h.slice_end);
  h.cal_max = byteswap_value(h.cal_max);
  h.cal_min = byteswap_value(h.cal_min);
  h.slice_duration = byteswap_value(h.slice_duration);
  h.toffset = byteswap_value(h.toffset);
  h.glmax = byteswap_value(h.glmax);
  h.glmin = byteswap_value(h.glmin);
  h.qform_code = byteswap_value(h.qform_code);
  h.sform_code = byteswap_value(h.sform_code);
  h.quatern_b = byteswap_value(h.quatern_b);
  h.quatern_c = byteswap_value(h.quatern_c);
  h.quatern_d = byteswap_value(h.quatern_d);
  h.qoffset_x = byteswap_value(h.qoffset_x);
  h.qoffset_y = byteswap_value(h.qoffset_y);
  h.qoffset_z = byteswap_value(h.qoffset_z);
  swap_array(h.srow_x);
  swap_array(h.srow_y);
  swap_array(h.srow_z);
}

inline int bytes_per_voxel(std::int16_t datatype) {
  switch (static_cast<NiftiDatatype>(datatype)) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::int32: return 4;
    case NiftiDatatype::float32: return 4;
  }
  throw NiftiDatatypeError("unsupported NIfTI datatype code " + std::to_string(datatype));
}

inline bool is_gzip(const std::vector<unsigned char>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(Errc::runtime, "nifti", "zlib init failed");
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      if (ret == Z_BUF_ERROR) throw NiftiTruncatedError("gzip stream ended prematurely");
      fail(Errc::format, "nifti", "corrupt gzip stream");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

inline std::vector<unsigned char> gzip(const std::vector<unsigned char>& in) {
  z_stream zs{};
  if (deflateInit2(&zs, 6, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    fail(Errc::runtime, "nifti", "zlib init failed");
  }
  std::vector<unsigned char> out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int ret = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (ret != Z_STREAM_END) fail(Errc::runtime, "nifti", "gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

inline AffineMatrix qform_affine(const NiftiHeader& h) {
  const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  double a = 1.0 - (b * b + c * c + d * d);
  a = a < 1e-7 ? 0.0 : std::sqrt(a);
  const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
  const double dx = h.pixdim[1], dy = h.pixdim[2], dz = qfac * h.pixdim[3];
  AffineMatrix m;
  m(0, 0) = (a * a + b * b - c * c - d * d) * dx;
  m(0, 1) = 2.0 * (b * c - a * d) * dy;
  m(0, 2) = 2.0 * (b * d + a * c) * dz;
  m(1, 0) = 2.0 * (b * c + a * d) * dx;
  m(1, 1) = (a * a + c * c - b * b - d * d) * dy;
  m(1, 2) = 2.0 * (c * d - a * b) * dz;
  m(2, 0) = 2.0 * (b * d - a * c) * dx;
  m(2, 1) = 2.0 * (c * d + a * b) * dy;
  m(2, 2) = (a * a + d * d - c * c - b * b) * dz;
  m(0, 3) = h.qoffset_x;
  m(1, 3) = h.qoffset_y;
  m(2, 3) = h.qoffset_z;
  return m;
}

template <typename T>
T load(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return swap ? byteswap_value(v) : v;
}

}  // namespace nifti_detail

/// Decodes an in-memory .nii (or gzip-compressed .nii) byte buffer.
inline NiftiImage decode_nifti(std::vector<unsigned char> bytes) {
  using namespace nifti_detail;
  if (is_gzip(bytes)) bytes = gunzip(bytes);
  if (bytes.size() < sizeof(NiftiHeader)) throw NiftiTruncatedError("file shorter than the 348-byte header");

  NiftiImage img;
  std::memcpy(&img.header, bytes.data(), sizeof(NiftiHeader));
  NiftiHeader& h = img.header;
  if (h.sizeof_hdr != 348) {
    if (byteswap_value(h.sizeof_hdr) == 348) {
      swap_header(h);
      img.swapped = true;
    } else if (h.sizeof_hdr == 540 || byteswap_value(h.sizeof_hdr) == 540) {
      throw NiftiMagicError("NIfTI-2 files are not supported");
    } else {
      throw NiftiMagicError("sizeof_hdr is not 348");
    }
  }
  if (std::memcmp(h.magic, "ni1\0", 4) == 0) {
    fail(Errc::unsupported, "nifti", "two-file .hdr/.img NIfTI pairs are not supported");
  }
  if (std::memcmp(h.magic, "n+1\0", 4) != 0) throw NiftiMagicError("bad magic: expected \"n+1\"");
  if (h.dim[0] != 3) {
    fail(Errc::unsupported, "nifti", "only 3D volumes (dim[0] == 3) are supported, got " + std::to_string(h.dim[0]));
  }
  const int bpv = bytes_per_voxel(h.datatype);

  Grid& g = img.grid;
  for (int i = 0; i < 3; ++i) {
    if (h.dim[i + 1] <= 0) fail(Errc::format, "nifti", "non-positive dimension in header");
    g.dims[i] = h.dim[i + 1];
    const double s = std::abs(static_cast<double>(h.pixdim[i + 1]));
    g.spacing[i] = s > 0.0 ? s : 1.0;
  }
  if (h.sform_code > 0) {
    g.affine = AffineMatrix::from_rows({h.srow_x[0], h.srow_x[1], h.srow_x[2], h.srow_x[3], h.srow_y[0], h.srow_y[1],
                                        h.srow_y[2], h.srow_y[3], h.srow_z[0], h.srow_z[1], h.srow_z[2], h.srow_z[3],
                                        0.0, 0.0, 0.0, 1.0});
  } else if (h.qform_code > 0) {
    g.affine = qform_affine(h);
  } else {
    g.affine = AffineMatrix::diagonal(g.spacing);
  }
  g.validate();

  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (offset < sizeof(NiftiHeader)) fail(Errc::format, "nifti", "vox_offset points inside the header");
  const std::size_t n = g.size();
  const std::size_t need = offset + n * static_cast<std::size_t>(bpv);
  if (bytes.size() < need) throw NiftiTruncatedError("voxel payload shorter than dim[] requires");

  const bool scale = h.scl_slope != 0.0f && std::isfinite(h.scl_slope) &&
                     !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  const double slope = h.scl_slope, inter = h.scl_inter;
  img.data.resize(n);
  const unsigned char* p = bytes.data() + offset;
  const bool sw = img.swapped;
  for (std::size_t i = 0; i < n; ++i, p += bpv) {
    double v = 0.0;
    switch (static_cast<NiftiDatatype>(h.datatype)) {
      case NiftiDatatype::uint8: v = *p; break;
      case NiftiDatatype::int16: v = load<std::int16_t>(p, sw); break;
      case NiftiDatatype::int32: v = load<std::int32_t>(p, sw); break;
      case NiftiDatatype::float32: {
        const float f = load<float>(p, sw);
        img.data[i] = scale ? static_cast<float>(f * slope + inter) : f;
        continue;
      }
    }
    img.data[i] = static_cast<float>(scale ? v * slope + inter : v);
  }
  return img;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "nifti", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, "nifti", "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io, "nifti", "write failed for " + path.string());
}

inline NiftiImage read_nifti(const std::filesystem::path& path) { return decode_nifti(read_file_bytes(path)); }

inline Volume read_volume(const std::filesystem::path& path) { return read_nifti(path).to_volume(); }
inline LabelMap read_labels(const std::filesystem::path& path) { return read_nifti(path).to_labels(); }

/// Encodes voxel values (already in the requested type's range) as a
/// single-file NIfTI-1 buffer. `big_endian` exists to build fixtures.
inline std::vector<unsigned char> encode_nifti(const Grid& grid, std::span<const float> values, NiftiDatatype type,
                                               bool big_endian = (std::endian::native == std::endian::big)) {
  using namespace nifti_detail;
  const int bpv = bytes_per_voxel(static_cast<std::int16_t>(type));
  require(values.size() == grid.size(), "nifti", "value count does not match grid");
  for (int i = 0; i < 3; ++i) {
    require(grid.dims[i] <= 32767, "nifti", "dimension exceeds NIfTI-1 limit");
  }

  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  for (int i = 0; i < 3; ++i) h.dim[i + 1] = static_cast<std::int16_t>(grid.dims[i]);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = static_cast<std::int16_t>(type);
  h.bitpix = static_cast<std::int16_t>(8 * bpv);
  h.pixdim[0] = 1.0f;
  for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(grid.spacing[i]);
  for (int i = 4; i < 8; ++i) h.pixdim[i] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // mm
  h.qform_code = 0;
  h.sform_code = 2;
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(grid.affine(0, c));
    h.srow_y[c] = static_cast<float>(grid.affine(1, c));
    h.srow_z[c] = static_cast<float>(grid.affine(2, c));
  }
  std::memcpy(h.magic, "n+1\0", 4);

  const bool swap = big_endian != (std::endian::native == std::endian::big);
  if (swap) swap_header(h);

  std::vector<unsigned char> bytes(352 + values.size() * static_cast<std::size_t>(bpv), 0);
  std::memcpy(bytes.data(), &h, sizeof(NiftiHeader));
  unsigned char* p = bytes.data() + 352;
  auto store = [&](auto v) {
    if (swap) v = byteswap_value(v);
    std::memcpy(p, &v, sizeof(v));
    p += sizeof(v);
  };
  for (float f : values) {
    switch (type) {
      case NiftiDatatype::uint8: {
        const float r = std::round(f);
        require(r >= 0.0f && r <= 255.0f, "nifti", "value out of uint8 range");
        *p++ = static_cast<unsigned char>(r);
        break;
      }
      case NiftiDatatype::int16: {
        const float r = std::round(f);
        require(r >= -32768.0f && r <= 32767.0f, "nifti", "value out of int16 range");
        store(static_cast<std::int16_t>(r));
        break;
      }
      case NiftiDatatype::int32: store(static_cast<std::int32_t>(std::llround(f))); break;
      case NiftiDatatype::float32: store(f); break;
    }
  }
  return bytes;
}

inline NiftiDatatype parse_datatype(const std::string& name) {
  if (name == "uint8") return NiftiDatatype::uint8;
  if (name == "int16") return NiftiDatatype::int16;
  if (name == "int32") return NiftiDatatype::int32;
  if (name == "float32") return NiftiDatatype::float32;
  throw NiftiDatatypeError("unsupported datatype request '" + name + "'");
}

inline bool has_gz_suffix(const std::filesystem::path& path) { return path.extension() == ".gz"; }

/// Writes a volume; a ".gz" suffix selects gzip compression.
inline void write_nifti(const Volume& v, const std::filesystem::path& path,
                        NiftiDatatype type = NiftiDatatype::float32) {
  auto bytes = encode_nifti(v.grid(), v.data(), type);
  if (has_gz_suffix(path)) bytes = nifti_detail::gzip(bytes);
  write_file_bytes(path, bytes);
}

inline void write_nifti(const Volume& v, const std::filesystem::path& path, const std::string& type) {
  write_nifti(v, path, parse_datatype(type));
}

/// Label maps default to uint8 when every label fits, else int16 / int32.
inline void write_nifti(const LabelMap& l, const std::filesystem::path& path) {
  Label max_label = 0;
  for (Label x : l.values()) max_label = std::max(max_label, x);
  const NiftiDatatype type = max_label <= 255     ? NiftiDatatype::uint8
                             : max_label <= 32767 ? NiftiDatatype::int16
                                                  : NiftiDatatype::int32;
  std::vector<float> values(l.values().begin(), l.values().end());
  auto bytes = encode_nifti(l.grid(), values, type);
  if (has_gz_suffix(path)) bytes = nifti_detail::gzip(bytes);
  write_file_bytes(path, bytes);
}

}  // namespace synthvol
