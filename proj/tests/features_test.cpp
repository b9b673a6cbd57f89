#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fraudability/features.hpp"

using namespace fraudability;

namespace {

Dataset tiny_dataset(int categories = 3) {
  Dataset ds;
  ds.num_categories = categories;
  ds.num_payment_types = 2;
  UserHistory u{"u0", {}};
  for (int i = 0; i < 6; ++i)
    u.transactions.push_back(Transaction{"u0", 1'000'000 + i * 7200, 10.0 + 5.0 * i, i % categories, i % 2, 40, "ip"});
  ds.users.push_back(u);
  UserHistory v{"u1", {}};
  for (int i = 0; i < 4; ++i)
    v.transactions.push_back(Transaction{"u1", 2'000'000 + i * 86400, 100.0, 0, 0, 25, "ip2"});
  ds.users.push_back(v);
  return ds;
}

}  // namespace

TEST(Features, DegenerateCatalog) {
  Dataset ds = tiny_dataset(1);
  FeatureEncoder enc = fit_encoder(ds, 2, 1);
  ASSERT_EQ(enc.category_embeddings.size(), 1u);
  EXPECT_EQ(enc.category_embeddings[0].size(), 2u);
  EXPECT_EQ(enc.width(), 11u);
}

TEST(Features, ConstantFeatureMapsToZero) {
  Dataset ds = tiny_dataset();
  for (auto& u : ds.users)
    for (auto& t : u.transactions) t.age = 33;
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  auto v = enc.encode(ds.users[0].transactions[0]);
  EXPECT_EQ(v[enc.age_index()], 0.0);
}

TEST(Features, SameSeedSameEmbeddings) {
  Dataset ds = tiny_dataset();
  FeatureEncoder a = fit_encoder(ds, 4, 9), b = fit_encoder(ds, 4, 9), c = fit_encoder(ds, 4, 10);
  EXPECT_EQ(a.category_embeddings, b.category_embeddings);
  EXPECT_EQ(a.payment_embeddings, b.payment_embeddings);
  EXPECT_NE(a.category_embeddings, c.category_embeddings);
  for (const auto& row : a.category_embeddings)
    for (double x : row) {
      EXPECT_GE(x, -0.5);
      EXPECT_LE(x, 0.5);
    }
}

TEST(Features, EmptyDatasetRejected) {
  Dataset ds;
  ds.num_categories = 2;
  ds.num_payment_types = 2;
  EXPECT_THROW(fit_encoder(ds, 4, 1), Error);
}

TEST(Features, AmountBoundaryAndRoundTrip) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  Transaction t = ds.users[1].transactions[0];  // amount 100 = fitted max
  EXPECT_EQ(enc.encode(t)[enc.amount_index()], 1.0);
  for (double amount : {10.0, 17.3, 42.0, 99.99}) {
    t.amount = amount;
    EXPECT_NEAR(enc.decode_amount(enc.encode(t)[enc.amount_index()]), amount, 1e-9);
  }
  t.amount = 1e6;  // out of fitted range: clamped
  EXPECT_EQ(enc.encode(t)[enc.amount_index()], 1.0);
}

TEST(Features, TimestampChangesOnlyTemporalCoordinates) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  Transaction a = ds.users[0].transactions[2];
  Transaction b = a;
  b.timestamp += 3 * 86400 + 5000;
  auto va = enc.encode(a, a.timestamp - 3600), vb = enc.encode(b, a.timestamp - 3600);
  for (std::size_t j = 0; j < enc.width(); ++j) {
    const bool temporal = j >= enc.hour_sin_index();
    if (!temporal) EXPECT_EQ(va[j], vb[j]) << j;
  }
  EXPECT_NE(va[enc.hour_sin_index()], vb[enc.hour_sin_index()]);
  EXPECT_NE(va[enc.log_gap_index()], vb[enc.log_gap_index()]);
}

TEST(Features, MissingPreviousTimestampGivesZeroGap) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  EXPECT_EQ(enc.encode(ds.users[0].transactions[3])[enc.log_gap_index()], 0.0);
}

TEST(Features, UnknownCategoryRejected) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  Transaction t = ds.users[0].transactions[0];
  t.category_id = 17;
  EXPECT_THROW(enc.encode(t), Error);
}

TEST(Features, MutableMaskCoversAmountCategoryTemporal) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  auto mask = enc.mutable_mask();
  auto names = enc.feature_names();
  for (std::size_t j = 0; j < enc.width(); ++j) {
    const bool expected = names[j] == "amount" || names[j].rfind("category_emb", 0) == 0 || names[j] == "hour_sin" ||
                          names[j] == "hour_cos" || names[j] == "day_sin" || names[j] == "day_cos" ||
                          names[j] == "log_gap";
    EXPECT_EQ(mask[j] != 0, expected) << names[j];
  }
}

TEST(Features, NormalizedFittingSetInUnitInterval) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  for (const auto& u : ds.users) {
    auto h = enc.encode_history(u);
    for (std::size_t i = 0; i < h.rows; ++i)
      for (std::size_t j = 0; j < h.width; ++j) {
        if (enc.is_category_coordinate(j) || (j >= enc.payment_offset() && j < enc.age_index())) continue;
        EXPECT_GE(h.row(i)[j], 0.0);
        EXPECT_LE(h.row(i)[j], 1.0);
      }
  }
}

TEST(Features, ProfileOfIdenticalRows) {
  EncodedHistory h{3, 2, {0.3, 0.7, 0.3, 0.7, 0.3, 0.7}};
  UserProfile p = build_profile(h);
  for (std::size_t f = 0; f < 2; ++f) {
    const double v = h.data[f];
    EXPECT_EQ(p.at(ProfileStat::mean, f), v);
    EXPECT_EQ(p.at(ProfileStat::median, f), v);
    EXPECT_EQ(p.at(ProfileStat::stddev, f), 0.0);
    EXPECT_EQ(p.at(ProfileStat::min, f), v);
    EXPECT_EQ(p.at(ProfileStat::max, f), v);
  }
}

TEST(Features, ProfileOfZeroOne) {
  EncodedHistory h{2, 1, {0.0, 1.0}};
  UserProfile p = build_profile(h);
  EXPECT_DOUBLE_EQ(p.at(ProfileStat::mean, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.at(ProfileStat::median, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.at(ProfileStat::stddev, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.at(ProfileStat::min, 0), 0.0);
  EXPECT_DOUBLE_EQ(p.at(ProfileStat::max, 0), 1.0);
  EXPECT_EQ(p.flatten(), (std::vector<double>{0.5, 0.5, 0.5, 0.0, 1.0}));
}

TEST(Features, ProfileRejectsShortHistory) {
  EncodedHistory h{1, 1, {0.4}};
  EXPECT_THROW(build_profile(h), Error);
}

// Property: profiles are permutation invariant, shaped 5 x |W|, and ordered
// min <= mu <= max with sigma >= 0.
TEST(Features, ProfilePropertiesOverRandomHistories) {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 2 + rng() % 40, width = 1 + rng() % 12;
    EncodedHistory h{rows, width, std::vector<double>(rows * width)};
    for (double& x : h.data) x = u(rng);
    UserProfile p = build_profile(h);
    ASSERT_EQ(p.stats.size(), 5 * width);
    for (std::size_t f = 0; f < width; ++f) {
      EXPECT_LE(p.at(ProfileStat::min, f), p.at(ProfileStat::mean, f));
      EXPECT_LE(p.at(ProfileStat::mean, f), p.at(ProfileStat::max, f));
      EXPECT_GE(p.at(ProfileStat::stddev, f), 0.0);
    }
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    EncodedHistory s{rows, width, std::vector<double>(rows * width)};
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(h.data.begin() + static_cast<long>(perm[i] * width), width, s.data.begin() + static_cast<long>(i * width));
    EXPECT_EQ(build_profile(s).stats, p.stats);
  }
}

TEST(Features, ProfileColumnNames) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 1);
  auto names = profile_column_names(enc);
  ASSERT_EQ(names.size(), 5 * enc.width());
  EXPECT_EQ(names[0], "mu_amount");
  EXPECT_EQ(names[2], "sigma_amount");
  EXPECT_EQ(names[4], "max_amount");
}

TEST(Features, EncoderJsonRoundTrip) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 3, 5);
  FeatureEncoder back = encoder_from_json(nlohmann::json::parse(to_json(enc).dump()));
  EXPECT_EQ(back.encode(ds.users[0].transactions[1], 5), enc.encode(ds.users[0].transactions[1], 5));
}

TEST(Features, HourDecodeInvertsEncoding) {
  Dataset ds = tiny_dataset();
  FeatureEncoder enc = fit_encoder(ds, 4, 5);
  Transaction t = ds.users[0].transactions[0];
  for (std::int64_t sod : {0, 1, 3600, 43210, 86399}) {
    t.timestamp = 86400 * 100 + sod;
    auto v = enc.encode(t);
    EXPECT_EQ(FeatureEncoder::decode_second_of_day(v[enc.hour_sin_index()], v[enc.hour_cos_index()]), sod);
  }
}
