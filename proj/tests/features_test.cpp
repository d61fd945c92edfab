#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <sstream>

#include "backchannel/features.hpp"
#include "support.hpp"

using namespace bc;
using namespace bc::features;

namespace {

FeatureStream ramp_stream(double seconds, const FeatureSchema& schema, long first_frame = 0) {
  FeatureStream s;
  s.conversation_id = "c";
  s.subject_id = "s";
  s.first_frame = first_frame;
  s.data.channels = schema.size();
  s.data.frames = static_cast<std::size_t>(std::lround(seconds * kCanonicalRateHz));
  s.data.values.assign(s.data.frames * s.data.channels, 0.0);
  for (std::size_t t = 0; t < s.data.frames; ++t) s.data.at(t, 0) = static_cast<double>(t);
  return s;
}

std::string stream_csv(const FeatureSchema& schema, const std::vector<double>& times,
                       const std::function<std::string(std::size_t, double)>& cell) {
  std::ostringstream out;
  out << "time_s";
  for (const auto& c : schema.channels()) out << ',' << c.name;
  out << '\n';
  for (double t : times) {
    out << csv::exact(t);
    for (std::size_t c = 0; c < schema.size(); ++c) out << ',' << cell(c, t);
    out << '\n';
  }
  return out.str();
}

std::string default_cell(const FeatureSchema& schema, std::size_t c, double value) {
  if (schema[c].kind == ChannelKind::categorical) return schema[c].categories[0];
  if (schema[c].kind == ChannelKind::binary) return "0";
  return csv::exact(value);
}

}  // namespace

TEST(Schema, StandardLayout) {
  const auto s = FeatureSchema::standard();
  EXPECT_EQ(s.size(), 45u);
  std::size_t numeric = 0, categories = 0, visual = 0;
  for (const auto& c : s.channels()) {
    if (c.kind == ChannelKind::categorical)
      categories += c.categories.size();
    else
      ++numeric;
    visual += c.modality == Modality::visual;
  }
  EXPECT_EQ(s.aggregate_dim(), 2 * numeric + categories);
  EXPECT_EQ(s.aggregate_dim(), 91u);
  EXPECT_EQ(visual, 29u);
  EXPECT_EQ(s.aggregate_dim(FeatureSet::audio), 32u);
  EXPECT_EQ(s.aggregate_dim(FeatureSet::video) + s.aggregate_dim(FeatureSet::audio), s.aggregate_dim());
  EXPECT_EQ(s.aggregate_names().size(), s.aggregate_dim());
  EXPECT_EQ(s.standardized_dims().size(), s.aggregate_dim());
  EXPECT_THROW(s.at("AU99_r"), ConfigError);
}

TEST(Schema, RejectsDuplicatesAndSingleCategory) {
  EXPECT_THROW(FeatureSchema({{"a", ChannelKind::continuous, Modality::visual, {}},
                              {"a", ChannelKind::continuous, Modality::audio, {}}}),
               ConfigError);
  EXPECT_THROW(FeatureSchema({{"g", ChannelKind::categorical, Modality::visual, {"x"}}}), ConfigError);
}

TEST(Windows, OneSecondIsTwentyFiveFrames) {
  const auto schema = FeatureSchema::standard();
  const auto s = ramp_stream(10, schema);
  const auto w = cut_identification_window(s, {2.0, 3.0});
  EXPECT_EQ(w.frames.frames, 25u);
  EXPECT_EQ(w.frames.at(0, 0), 50.0);
  EXPECT_EQ(w.frames.at(24, 0), 74.0);
}

TEST(Windows, ShortestNegativeSpansTwentySevenFrames) {
  const auto schema = FeatureSchema::standard();
  const auto s = ramp_stream(10, schema);
  // frames at 2.00, 2.04, ..., 3.04 are inside [2.00, 3.06)
  EXPECT_EQ(cut_identification_window(s, {2.0, 3.06}).frames.frames, 27u);
  EXPECT_EQ(cut_identification_window(s, {2.01, 3.07}).frames.frames, 26u);
}

TEST(Windows, OutsideStreamOrEmptyThrows) {
  const auto schema = FeatureSchema::standard();
  const auto s = ramp_stream(10, schema);
  EXPECT_THROW(cut_identification_window(s, {9.5, 10.5}), DataError);
  EXPECT_THROW(cut_identification_window(s, {2.001, 2.002}), DataError);
  EXPECT_NO_THROW(cut_identification_window(s, {9.0, 10.0}));
}

TEST(Windows, ContextIsAlwaysSeventyFiveFrames) {
  const auto schema = FeatureSchema::standard();
  const auto s = ramp_stream(20, schema);
  for (double onset : {3.0, 3.01, 4.5, 7.333, 19.99}) {
    const auto cut = cut_context_window(s, onset);
    ASSERT_TRUE(cut.window) << onset;
    EXPECT_EQ(cut.window->frames.frames, 75u);
    EXPECT_LE(cut.window->source.offset_s, onset + 0.04);
    EXPECT_LT(cut.window->source.offset_s - 1e-9, onset + 1.0 / kCanonicalRateHz);
  }
}

TEST(Windows, ContextDropsEarlyOnsets) {
  const auto schema = FeatureSchema::standard();
  const auto s = ramp_stream(20, schema);
  const auto early = cut_context_window(s, 2.9);
  EXPECT_FALSE(early.window);
  EXPECT_FALSE(early.dropped_reason.empty());
  const auto exact = cut_context_window(s, 3.0);
  ASSERT_TRUE(exact.window);
  EXPECT_EQ(exact.window->frames.at(0, 0), 0.0);
  EXPECT_EQ(exact.window->frames.at(74, 0), 74.0);
  EXPECT_FALSE(cut_context_window(s, 25.0).window);
}

TEST(Aggregate, MeanStdAndOccupancy) {
  FeatureSchema schema({{"x", ChannelKind::continuous, Modality::visual, {}},
                        {"g", ChannelKind::categorical, Modality::visual, {"l", "r", "b"}},
                        {"v", ChannelKind::binary, Modality::audio, {}}});
  Series w;
  w.channels = 3;
  w.frames = 4;
  w.values = {0, 0, 1,  //
              1, 0, 0,  //
              0, 2, 1,  //
              1, 0, 0};
  const auto a = aggregate(w, schema);
  ASSERT_EQ(a.size(), 7u);
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  EXPECT_DOUBLE_EQ(a[2], 0.75);
  EXPECT_DOUBLE_EQ(a[3], 0.0);
  EXPECT_DOUBLE_EQ(a[4], 0.25);
  EXPECT_DOUBLE_EQ(a[5], 0.5);
  EXPECT_DOUBLE_EQ(a[6], 0.5);
  EXPECT_EQ(aggregate(w, schema, FeatureSet::audio), (std::vector<double>{0.5, 0.5}));
}

TEST(Aggregate, RejectsEmptyAndBadCodes) {
  FeatureSchema schema({{"g", ChannelKind::categorical, Modality::visual, {"l", "r"}}});
  Series w;
  w.channels = 1;
  EXPECT_THROW(aggregate(w, schema), DataError);
  w.frames = 1;
  w.values = {2};
  EXPECT_THROW(aggregate(w, schema), DataError);
}

TEST(AggregateProperty, InvariantUnderFramePermutation) {
  const auto schema = FeatureSchema::standard();
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Series w;
    w.channels = schema.size();
    w.frames = 5 + rng.index(80);
    w.values.resize(w.frames * w.channels);
    for (std::size_t t = 0; t < w.frames; ++t)
      for (std::size_t c = 0; c < schema.size(); ++c) {
        const auto kind = schema[c].kind;
        w.at(t, c) = kind == ChannelKind::categorical ? static_cast<double>(rng.index(3))
                     : kind == ChannelKind::binary    ? static_cast<double>(rng.bernoulli(0.3))
                                                      : rng.normal(0, 1e3);
      }
    std::vector<std::size_t> order(w.frames);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    Series p = w;
    for (std::size_t t = 0; t < w.frames; ++t)
      for (std::size_t c = 0; c < w.channels; ++c) p.at(t, c) = w.at(order[t], c);
    EXPECT_EQ(aggregate(w, schema), aggregate(p, schema));
    const auto a = aggregate(w, schema);
    const auto names = schema.aggregate_names();
    double frac = 0;
    for (std::size_t d = 0; d < a.size(); ++d)
      if (names[d].find(".frac_") != std::string::npos) frac += a[d];
    EXPECT_NEAR(frac, 1.0, 1e-12);
  }
}

TEST(Ingest, ConstantInputStaysConstant) {
  const auto schema = FeatureSchema::standard();
  std::vector<double> times;
  for (int i = 0; i <= 50; ++i) times.push_back(i / 10.0);
  std::istringstream in(stream_csv(schema, times, [&](std::size_t c, double) { return default_cell(schema, c, 3.25); }));
  const auto s = ingest_table(csv::parse(in), schema, "c", "s");
  EXPECT_EQ(s.first_frame, 0);
  EXPECT_EQ(s.data.frames, 126u);
  for (std::size_t t = 0; t < s.data.frames; ++t) EXPECT_EQ(s.data.at(t, 0), 3.25);
}

TEST(Ingest, ContinuousChannelsInterpolateLinearly) {
  const auto schema = FeatureSchema::standard();
  std::istringstream in(stream_csv(schema, {0.0, 0.1, 0.5, 1.0},
                                   [&](std::size_t c, double t) { return default_cell(schema, c, t); }));
  const auto s = ingest_table(csv::parse(in), schema, "c", "s");
  ASSERT_EQ(s.data.frames, 26u);
  for (std::size_t i = 0; i < s.data.frames; ++i) EXPECT_NEAR(s.data.at(i, 0), s.time_of(i), 1e-12);
  EXPECT_NEAR(s.data.at(10, 0), 0.4, 1e-12);
}

TEST(Ingest, NonContinuousChannelsTakeNearestSample) {
  FeatureSchema schema({{"g", ChannelKind::categorical, Modality::visual, {"l", "r"}},
                        {"v", ChannelKind::binary, Modality::audio, {}}});
  Series samples;
  samples.channels = 2;
  samples.frames = 2;
  samples.values = {0, 0, 1, 1};
  const auto s = resample({0.0, 0.2}, samples, schema, "c", "s");
  ASSERT_EQ(s.data.frames, 6u);
  EXPECT_EQ(s.data.at(2, 0), 0.0);  // 0.08 is nearer 0.0
  EXPECT_EQ(s.data.at(3, 0), 1.0);  // 0.12 is nearer 0.2
  EXPECT_EQ(s.data.at(3, 1), 1.0);
}

TEST(Ingest, GapLongerThanHalfSecondIsAnError) {
  const auto schema = FeatureSchema::standard();
  std::istringstream in(stream_csv(schema, {0.0, 0.1, 0.7},
                                   [&](std::size_t c, double t) { return default_cell(schema, c, t); }));
  try {
    ingest_table(csv::parse(in), schema, "c", "s");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("gap"), std::string::npos);
  }
}

TEST(Ingest, UnknownAndMissingColumnsAreErrors) {
  const auto schema = FeatureSchema::standard();
  auto csv_text = stream_csv(schema, {0.0, 0.1}, [&](std::size_t c, double t) { return default_cell(schema, c, t); });
  std::istringstream ok(csv_text);
  EXPECT_NO_THROW(ingest_table(csv::parse(ok), schema, "c", "s"));
  auto renamed = csv_text;
  renamed.replace(renamed.find("AU01_r"), 6, "AU99_r");
  std::istringstream bad(renamed);
  EXPECT_THROW(ingest_table(csv::parse(bad), schema, "c", "s"), DataError);
  std::istringstream backwards("time_s,x\n1.0,0\n0.5,0\n");
  FeatureSchema one({{"x", ChannelKind::continuous, Modality::visual, {}}});
  EXPECT_THROW(ingest_table(csv::parse(backwards), one, "c", "s"), DataError);
}

TEST(Ingest, WrittenStreamReadsBack) {
  const auto schema = FeatureSchema::standard();
  auto s = ramp_stream(2, schema, 25);
  testkit::TempDir dir("features");
  {
    csv::Writer w(dir / "s.csv");
    write_stream(w, s, schema);
    w.commit();
  }
  const auto back = ingest_stream(dir / "s.csv", schema, "c", "s");
  EXPECT_EQ(back.first_frame, s.first_frame);
  EXPECT_EQ(back.data.values, s.data.values);
}

TEST(StandardizeProperty, TrainStatisticsOnly) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t D = 1 + rng.index(6), N = 2 + rng.index(40);
    std::vector<std::vector<double>> train(N, std::vector<double>(D)), test(7, std::vector<double>(D));
    for (auto& r : train)
      for (auto& v : r) v = rng.normal(5, 3);
    for (auto& r : test)
      for (auto& v : r) v = rng.normal(-50, 30);
    for (auto& r : train) r[0] = 2.0;  // degenerate dimension
    const auto z = standardize(train, train);
    for (std::size_t d = 0; d < D; ++d) {
      double m = 0, ss = 0;
      for (const auto& r : z.vectors) m += r[d];
      m /= static_cast<double>(N);
      for (const auto& r : z.vectors) ss += (r[d] - m) * (r[d] - m);
      EXPECT_NEAR(m, 0.0, 1e-9);
      if (d == 0)
        EXPECT_NEAR(ss, 0.0, 1e-18);
      else
        EXPECT_NEAR(ss / static_cast<double>(N), 1.0, 1e-9);
    }
    const auto applied = standardize(train, test);
    EXPECT_EQ(applied.scaler.mean, z.scaler.mean);
    EXPECT_EQ(applied.scaler.scale, z.scaler.scale);
    for (std::size_t i = 0; i < test.size(); ++i)
      for (std::size_t d = 0; d < D; ++d)
        EXPECT_NEAR(applied.vectors[i][d], (test[i][d] - z.scaler.mean[d]) / z.scaler.scale[d], 1e-12);
  }
}

TEST(Standardize, MaskLeavesDimensionsAlone) {
  const std::vector<std::vector<double>> train{{1, 0.2}, {3, 0.8}};
  const auto z = standardize(train, train, {true, false});
  EXPECT_EQ(z.vectors[0], (std::vector<double>{-1, 0.2}));
  EXPECT_EQ(z.vectors[1], (std::vector<double>{1, 0.8}));
  const auto back = StandardScaler::deserialize(z.scaler.serialize());
  EXPECT_EQ(back.mean, z.scaler.mean);
  EXPECT_EQ(back.scale, z.scaler.scale);
  EXPECT_EQ(back.active, z.scaler.active);
  EXPECT_THROW(z.scaler.apply({1.0}), DataError);
  EXPECT_THROW(fit_scaler({}), DataError);
}
