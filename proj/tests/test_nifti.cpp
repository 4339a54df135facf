#include <cstring>
#include <filesystem>

#include <gtest/gtest.h>

#include "synthvol/nifti.hpp"

using namespace synthvol;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / ("synthvol_nifti_" + std::string(info->name()));
  fs::create_directories(dir);
  return dir / name;
}

// Header geometry is float32 on disk, so spacings and affine entries here
// are exactly representable in float.
Volume sample_volume() {
  AffineMatrix a = AffineMatrix::from_rows({0.0, -1.5, 0.0, 12.25, 0.75, 0.0, 0.0, -3.5, 0.0, 0.0, 2.0, 7.0, 0, 0, 0, 1});
  Grid g;
  g.dims = {5, 4, 3};
  g.spacing = {0.75, 1.5, 2.0};
  g.affine = a;
  Volume v(g);
  auto rng = RandomStream::derive(1, {});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(rng.normal() * 1e3);
  v[0] = -0.0f;
  v[1] = 1e-38f;
  return v;
}

NiftiHeader header_of(const std::vector<unsigned char>& bytes) {
  NiftiHeader h;
  std::memcpy(&h, bytes.data(), sizeof(h));
  return h;
}

}  // namespace

TEST(Nifti, HeaderLayoutOfWrittenFile) {
  const Volume v = sample_volume();
  const auto bytes = encode_nifti(v.grid(), v.data(), NiftiDatatype::float32);
  ASSERT_EQ(bytes.size(), 352u + 4u * v.size());
  const NiftiHeader h = header_of(bytes);
  EXPECT_EQ(h.sizeof_hdr, 348);
  EXPECT_EQ(std::memcmp(h.magic, "n+1\0", 4), 0);
  EXPECT_EQ(h.dim[0], 3);
  EXPECT_EQ(h.dim[1], 5);
  EXPECT_EQ(h.dim[2], 4);
  EXPECT_EQ(h.dim[3], 3);
  EXPECT_EQ(h.datatype, 16);
  EXPECT_EQ(h.bitpix, 32);
  EXPECT_EQ(h.vox_offset, 352.0f);
  EXPECT_GT(h.sform_code, 0);
  EXPECT_EQ(h.srow_x[3], 12.25f);
  EXPECT_EQ(h.srow_y[0], 0.75f);
  EXPECT_EQ(h.pixdim[2], 1.5f);
}

TEST(Nifti, Float32RoundTripIsBitExact) {
  const Volume v = sample_volume();
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    const fs::path p = temp_path(name);
    write_nifti(v, p);
    const NiftiImage img = read_nifti(p);
    EXPECT_EQ(img.grid.dims, v.dims());
    EXPECT_EQ(img.grid.spacing, v.grid().spacing);
    EXPECT_EQ(img.grid.affine.distance(v.grid().affine), 0.0);
    ASSERT_EQ(img.data.size(), v.size());
    EXPECT_EQ(std::memcmp(img.data.data(), v.values().data(), 4 * v.size()), 0);
  }
  const auto raw = read_file_bytes(temp_path("a.nii.gz"));
  EXPECT_EQ(raw[0], 0x1f);
  EXPECT_EQ(raw[1], 0x8b);
}

TEST(Nifti, IntegerTypesRoundTrip) {
  Volume v(Grid::make({4, 2, 2}, {1, 1, 1}, {-2, 3, 5}));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i * 13);
  for (const char* t : {"uint8", "int16", "int32"}) {
    const fs::path p = temp_path(std::string("i_") + t + ".nii");
    write_nifti(v, p, t);
    EXPECT_EQ(read_volume(p), v) << t;
    EXPECT_EQ(static_cast<int>(header_of(read_file_bytes(p)).datatype),
              static_cast<int>(parse_datatype(t)));
  }
  Volume big = v;
  big[0] = 300;
  EXPECT_THROW(write_nifti(big, temp_path("big.nii"), "uint8"), Error);
}

TEST(Nifti, LabelMapsUseSmallestType) {
  LabelMap l(Grid::make({3, 3, 3}), 0);
  l[5] = 4;
  l[6] = 255;
  const fs::path p = temp_path("l.nii");
  write_nifti(l, p);
  EXPECT_EQ(header_of(read_file_bytes(p)).datatype, 2);
  EXPECT_EQ(read_labels(p), l);
  l[7] = 1000;
  write_nifti(l, p);
  EXPECT_EQ(header_of(read_file_bytes(p)).datatype, 4);
  EXPECT_EQ(read_labels(p), l);
}

TEST(Nifti, UnsupportedDatatypeRequest) {
  EXPECT_THROW(parse_datatype("float64"), NiftiDatatypeError);
  EXPECT_THROW(write_nifti(sample_volume(), temp_path("x.nii"), "complex64"), NiftiDatatypeError);
}

TEST(Nifti, ByteSwappedFixture) {
  const Volume v = sample_volume();
  const auto bytes = encode_nifti(v.grid(), v.data(), NiftiDatatype::float32,
                                  std::endian::native != std::endian::big);
  std::int32_t raw;
  std::memcpy(&raw, bytes.data(), 4);
  EXPECT_EQ(raw, 1543569408);
  const NiftiImage img = decode_nifti(bytes);
  EXPECT_TRUE(img.swapped);
  EXPECT_EQ(img.header.sizeof_hdr, 348);
  EXPECT_EQ(img.grid.affine.distance(v.grid().affine), 0.0);
  EXPECT_EQ(img.to_volume(), v);

  Volume iv(Grid::make({3, 2, 1}));
  for (std::size_t i = 0; i < iv.size(); ++i) iv[i] = -1000.0f + 517.0f * i;
  const auto ib = encode_nifti(iv.grid(), iv.data(), NiftiDatatype::int16, std::endian::native != std::endian::big);
  EXPECT_EQ(decode_nifti(ib).to_volume(), iv);
}

TEST(Nifti, ScaleSlopeApplied) {
  Volume v(Grid::make({2, 2, 1}), std::vector<float>{0, 1, 2, 3});
  auto bytes = encode_nifti(v.grid(), v.data(), NiftiDatatype::int16);
  NiftiHeader h = header_of(bytes);
  h.scl_slope = 2.5f;
  h.scl_inter = -1.0f;
  std::memcpy(bytes.data(), &h, sizeof(h));
  EXPECT_EQ(decode_nifti(bytes).data, (std::vector<float>{-1.0f, 1.5f, 4.0f, 6.5f}));
  h.scl_slope = 0.0f;
  std::memcpy(bytes.data(), &h, sizeof(h));
  EXPECT_EQ(decode_nifti(bytes).data, (std::vector<float>{0, 1, 2, 3}));
}

TEST(Nifti, AffineFallbacks) {
  Volume v(Grid::make({2, 2, 2}, {2, 3, 4}, {1, 1, 1}));
  auto bytes = encode_nifti(v.grid(), v.data(), NiftiDatatype::float32);
  NiftiHeader h = header_of(bytes);
  h.sform_code = 0;
  h.qform_code = 1;
  h.quatern_b = h.quatern_c = 0.0f;
  h.quatern_d = 1.0f;  // 180 degrees about z
  h.qoffset_x = 5;
  std::memcpy(bytes.data(), &h, sizeof(h));
  const AffineMatrix q = decode_nifti(bytes).grid.affine;
  const AffineMatrix expect = AffineMatrix::from_rows({-2, 0, 0, 5, 0, -3, 0, 0, 0, 0, 4, 0, 0, 0, 0, 1});
  EXPECT_LT(q.distance(expect), 1e-12);

  h.qform_code = 0;
  std::memcpy(bytes.data(), &h, sizeof(h));
  EXPECT_EQ(decode_nifti(bytes).grid.affine.distance(AffineMatrix::diagonal({2, 3, 4})), 0.0);
}

TEST(Nifti, DistinctErrors) {
  const Volume v = sample_volume();
  const auto good = encode_nifti(v.grid(), v.data(), NiftiDatatype::float32);

  auto bad_magic = good;
  std::memcpy(bad_magic.data() + 344, "n+2\0", 4);
  EXPECT_THROW(decode_nifti(bad_magic), NiftiMagicError);

  auto pair = good;
  std::memcpy(pair.data() + 344, "ni1\0", 4);
  EXPECT_THROW(decode_nifti(pair), Error);

  auto bad_type = good;
  NiftiHeader h = header_of(bad_type);
  h.datatype = 64;
  std::memcpy(bad_type.data(), &h, sizeof(h));
  EXPECT_THROW(decode_nifti(bad_type), NiftiDatatypeError);

  auto truncated = good;
  truncated.resize(good.size() - 1);
  EXPECT_THROW(decode_nifti(truncated), NiftiTruncatedError);
  EXPECT_THROW(decode_nifti(std::vector<unsigned char>(100, 0)), NiftiTruncatedError);

  auto four_d = good;
  h = header_of(four_d);
  h.dim[0] = 4;
  std::memcpy(four_d.data(), &h, sizeof(h));
  EXPECT_THROW(decode_nifti(four_d), Error);

  EXPECT_THROW(read_nifti(temp_path("missing.nii")), Error);
}
