#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "adrflow/data.hpp"
#include "test_util.hpp"

using namespace adrflow;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("adrflow_test_" + name);
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::string io_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_container(bytes);
  } catch (const IoError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Fig1Data, SixBySix) {
  const SequenceSample s = gen_fig1(6, 6);
  ASSERT_EQ(s.history.frames.size(), 1u);
  ASSERT_EQ(s.target.size(), 1u);
  const Tensor& src = s.history.frames[0];
  const Tensor& tgt = s.target[0];
  EXPECT_EQ(sum(src), 1.0);
  EXPECT_EQ(sum(tgt), 1.0);
  EXPECT_EQ(src.at(0, 0, 5, 0), 1.0);
  EXPECT_EQ(tgt.at(0, 0, 0, 5), 1.0);
  for (Real v : src.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Fig1Data, OrthogonalForAllSizes) {
  for (std::size_t h = 2; h < 9; ++h)
    for (std::size_t w = 2; w < 9; ++w) {
      const SequenceSample s = gen_fig1(h, w);
      EXPECT_EQ(dot(s.history.frames[0], s.target[0]), 0.0);
    }
}

TEST(Fig1Data, SmallestCase) {
  const SequenceSample s = gen_fig1(2, 2);
  EXPECT_EQ(s.history.frames[0].vec(), (std::vector<Real>{0, 0, 1, 0}));
  EXPECT_EQ(s.target[0].vec(), (std::vector<Real>{0, 1, 0, 0}));
  EXPECT_THROW(gen_fig1(1, 4), Error);
}

TEST(BlobData, ZeroVelocityFramesIdentical) {
  BlobOptions o;
  o.height = o.width = 16;
  o.steps = 5;
  o.seed = 3;
  const Sequence s = gen_blob_sequence(o);
  ASSERT_EQ(s.size(), 5u);
  for (const Tensor& f : s) EXPECT_EQ(f.vec(), s[0].vec());
}

TEST(BlobData, IntegerVelocityShiftsOneRow) {
  BlobOptions o;
  o.height = 40;
  o.width = 30;
  o.velocity_row = 1;
  o.sigma = 1.5;
  o.steps = 6;
  o.seed = 4;
  const Sequence s = gen_blob_sequence(o);
  for (std::size_t t = 0; t + 1 < s.size(); ++t)
    for (std::size_t r = 1; r < 40; ++r)
      for (std::size_t c = 0; c < 30; ++c)
        EXPECT_NEAR(s[t + 1].at(0, 0, r, c), s[t].at(0, 0, r - 1, c), 1e-12);
}

TEST(BlobData, MassConstantAwayFromBoundary) {
  BlobOptions o;
  o.height = o.width = 48;
  o.velocity_row = 0.7;
  o.velocity_col = -1.3;
  o.sigma = 2.0;
  o.steps = 8;
  o.seed = 5;
  const Sequence s = gen_blob_sequence(o);
  // the track stays 4 sigma inside, so the truncated tail is below 2e-3 of the mass
  const Real m0 = sum(s[0]);
  for (const Tensor& f : s) EXPECT_NEAR(sum(f), m0, 2e-3 * m0);
}

TEST(BlobData, BoundedAndDeterministic) {
  BlobOptions o;
  o.height = o.width = 20;
  o.velocity_row = 2;
  o.velocity_col = 1.5;
  o.steps = 12;
  o.seed = 6;
  o.background = 0.1;
  const Sequence a = gen_blob_sequence(o), b = gen_blob_sequence(o);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].vec(), b[t].vec());
    for (Real v : a[t].data()) {
      EXPECT_GE(v, 0.1);
      EXPECT_LE(v, 1.0);
    }
  }
  // a track too long for the grid is centred; a short one starts at random
  o.velocity_row = o.velocity_col = 0;
  const Tensor first = gen_blob_sequence(o)[0];
  o.seed = 7;
  EXPECT_NE(gen_blob_sequence(o)[0].vec(), first.vec());
}

TEST(BlobData, NonPositiveSigmaRejected) {
  BlobOptions o;
  o.sigma = 0;
  EXPECT_THROW(gen_blob_sequence(o), Error);
  o.sigma = -1;
  EXPECT_THROW(gen_blob_sequence(o), Error);
}

TEST(BlobData, DatasetVelocitiesWithinBound) {
  BlobOptions o;
  o.height = o.width = 40;
  o.steps = 4;
  o.sigma = 1.5;
  const auto seqs = gen_blob_dataset(20, o, 2.0, 8);
  ASSERT_EQ(seqs.size(), 20u);
  // the intensity-weighted centroid moves by the velocity each frame
  auto centroid = [](const Tensor& f) {
    Real m = 0, r = 0, c = 0;
    for (std::size_t i = 0; i < f.height(); ++i)
      for (std::size_t j = 0; j < f.width(); ++j) {
        const Real v = f.at(0, 0, i, j);
        m += v;
        r += v * static_cast<Real>(i);
        c += v * static_cast<Real>(j);
      }
    return std::pair{r / m, c / m};
  };
  for (const auto& s : seqs) {
    const auto [r0, c0] = centroid(s[0]);
    const auto [r1, c1] = centroid(s[1]);
    EXPECT_LE(std::hypot(r1 - r0, c1 - c0), 2.0 + 1e-6);
  }
  const auto again = gen_blob_dataset(20, o, 2.0, 8);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(again[i][3].vec(), seqs[i][3].vec());
}

TEST(DiffusionData, ZeroKappaIsConstant) {
  const Sequence s = gen_diffusion_sequence(6, 7, 0.0, 1.0, 5, 9);
  for (const Tensor& f : s) EXPECT_LT(max_abs_diff(f, s[0]), 1e-14);
}

TEST(DiffusionData, OneStepEqualsImplicitSolve) {
  const Real kappa = 0.7, h = 0.5;
  const Sequence s = gen_diffusion_sequence(8, 6, kappa, h, 4, 10);
  const DctPlan plan(8, 6);
  for (std::size_t t = 0; t + 1 < s.size(); ++t)
    EXPECT_LT(max_abs_diff(diffuse_implicit(s[t], std::vector<Real>{kappa}, h, plan), s[t + 1]), 1e-12);
}

TEST(DiffusionData, MeanPreserved) {
  const Sequence s = gen_diffusion_sequence(9, 5, 3.0, 1.0, 10, 11);
  const Real m0 = sum(s[0]) / 45;
  for (const Tensor& f : s) EXPECT_NEAR(sum(f) / 45, m0, 1e-12);
  EXPECT_THROW(gen_diffusion_sequence(4, 4, -0.1, 1.0, 2, 0), Error);
}

TEST(Window, CountingExamples) {
  Sequence seq;
  for (int i = 0; i < 12; ++i) seq.push_back(grid(1, 1, 2, 2, i));
  EXPECT_EQ(window(seq, 9, 1).size(), 2u);
  Sequence exact(seq.begin(), seq.begin() + 5);
  EXPECT_EQ(window(exact, 3, 1).size(), 1u);
  EXPECT_THROW(window(exact, 4, 1), Error);
  EXPECT_THROW(window(seq, 1, 1, 0), Error);
}

TEST(Window, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 2 + rng() % 20, j = rng() % 5, l = 1 + rng() % 4, stride = 1 + rng() % 4;
    Sequence seq;
    for (std::size_t i = 0; i < len; ++i) seq.push_back(grid(1, 1, 1, 2, static_cast<Real>(i)));
    if (len < j + 1 + l) {
      EXPECT_THROW(window(seq, j, l, stride), Error);
      continue;
    }
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + j + l < len; s += stride) starts.push_back(s);
    const auto got = window(seq, j, l, stride);
    ASSERT_EQ(got.size(), starts.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      ASSERT_EQ(got[k].history.frames.size(), j + 1);
      ASSERT_EQ(got[k].target.size(), l);
      for (std::size_t f = 0; f <= j; ++f) EXPECT_EQ(got[k].history.frames[f][0], static_cast<Real>(starts[k] + f));
      for (std::size_t f = 0; f < l; ++f) EXPECT_EQ(got[k].target[f][0], static_cast<Real>(starts[k] + j + 1 + f));
    }
  }
}

TEST(Container, RoundTripIsBitExact) {
  std::mt19937_64 rng(13);
  Tensor a = testutil::random_grid(rng, 2, 3, 4, 5, -1e300, 1e300);
  a[0] = -0.0;
  a[1] = std::numeric_limits<Real>::denorm_min();
  a[2] = std::numeric_limits<Real>::infinity();
  const Tensor b = testutil::random_grid(rng, 1, 1, 3, 3);
  const auto path = temp_file("roundtrip.adrt");
  save_container(path, {ContainerEntry::from_tensor("a", a), ContainerEntry::from_tensor("b", b),
                        ContainerEntry::from_text("note", "hello")});
  const auto back = load_container(path);
  ASSERT_EQ(back.size(), 3u);
  const Tensor a2 = find_entry(back, "a").to_tensor();
  EXPECT_EQ(a2.shape(), a.shape());
  EXPECT_EQ(std::memcmp(a2.data().data(), a.data().data(), a.size() * sizeof(Real)), 0);
  EXPECT_EQ(find_entry(back, "b").to_tensor().vec(), b.vec());
  EXPECT_EQ(find_entry(back, "note").to_text(), "hello");
  EXPECT_THROW(find_entry(back, "missing"), IoError);
  std::filesystem::remove(path);
}

TEST(Container, HeaderLayoutIsLittleEndian) {
  Tensor t(Shape{2});
  t[0] = 1.0;
  const auto bytes = encode_container({ContainerEntry::from_tensor("x", t)});
  const std::vector<std::uint8_t> head{'A', 'D', 'R', 'T', 1, 0, 1, 0, 0, 0, 1, 0, 'x', 1, 2, 0, 0, 0, 2};
  ASSERT_EQ(bytes.size(), head.size() + 16);
  EXPECT_TRUE(std::equal(head.begin(), head.end(), bytes.begin()));
  // 1.0 = 0x3FF0000000000000
  EXPECT_EQ(bytes[head.size() + 7], 0x3F);
  EXPECT_EQ(bytes[head.size() + 6], 0xF0);
}

TEST(Container, Float32Entries) {
  Tensor t(Shape{3});
  t[0] = 0.5;
  t[1] = -2.25;
  t[2] = 0.1;
  const auto back = decode_container(encode_container({ContainerEntry::from_tensor("f", t, DType::Float32)}));
  const Tensor got = back[0].to_tensor();
  EXPECT_EQ(got[0], 0.5);
  EXPECT_EQ(got[1], -2.25);
  EXPECT_EQ(got[2], static_cast<Real>(0.1f));
}

TEST(Container, BadMagicRejected) {
  auto bytes = encode_container({ContainerEntry::from_tensor("x", Tensor(Shape{1}))});
  std::memcpy(bytes.data(), "XXXX", 4);
  EXPECT_NE(io_error(bytes).find("magic"), std::string::npos);
  const auto path = temp_file("badmagic.adrt");
  write_bytes(path, bytes);
  EXPECT_THROW(load_container(path), IoError);
  std::filesystem::remove(path);
}

TEST(Container, TruncatedPayloadReportsByteCounts) {
  auto bytes = encode_container({ContainerEntry::from_tensor("x", Tensor(Shape{4}))});
  bytes.resize(bytes.size() - 5);
  const std::string msg = io_error(bytes);
  EXPECT_NE(msg.find("expected 32 bytes, got 27"), std::string::npos) << msg;
  EXPECT_NE(msg.find("offset"), std::string::npos);
}

TEST(Container, TruncatedHeaderNamesOffset) {
  const auto bytes = encode_container({ContainerEntry::from_tensor("abc", Tensor(Shape{4}))});
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 13);
  EXPECT_NE(io_error(cut).find("offset 12"), std::string::npos) << io_error(cut);
}

TEST(Container, UnknownDtypeRejected) {
  auto bytes = encode_container({ContainerEntry::from_tensor("x", Tensor(Shape{1}))});
  // header 10 bytes, name length 2, name 1, rank 1, one dim 4 -> dtype at 18
  bytes[18] = 9;
  EXPECT_NE(io_error(bytes).find("unknown dtype tag 9 at offset 18"), std::string::npos) << io_error(bytes);
}

TEST(Container, DuplicateNamesRejected) {
  EXPECT_THROW(encode_container({ContainerEntry::from_tensor("x", Tensor(Shape{1})),
                                 ContainerEntry::from_tensor("x", Tensor(Shape{1}))}),
               IoError);
}

TEST(Sequences, SaveLoadAndSplit) {
  BlobOptions o;
  o.height = o.width = 8;
  o.steps = 3;
  o.sigma = 1.0;
  const auto seqs = gen_blob_dataset(6, o, 1.0, 14);
  const auto path = temp_file("seqs.adrt");
  save_sequences(path, seqs);
  const auto back = load_sequences(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(back[i][t].vec(), seqs[i][t].vec());

  const auto [tr, va] = split_sequences(seqs, 2, 15);
  const auto [tr2, va2] = split_sequences(seqs, 2, 15);
  ASSERT_EQ(tr.size(), 4u);
  ASSERT_EQ(va.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(va[i][0].vec(), va2[i][0].vec());
  // whole sequences, each exactly once
  std::size_t matched = 0;
  for (const auto& s : seqs)
    for (const auto* part : {&tr, &va})
      for (const auto& q : *part) matched += q[0].vec() == s[0].vec();
  EXPECT_EQ(matched, 6u);
  EXPECT_THROW(split_sequences(seqs, 7, 0), Error);
}
