#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mvroll/transform.hpp"
#include "test_util.hpp"

using namespace mvroll;
using mvroll::testing::hourly;

namespace {

QuantileForecast as_forecast(const Matrix &values) {
	QuantileForecast f;
	f.mean = values;
	f.levels = {0.1, 0.5, 0.9};
	f.quantiles = {values.array() - 1.0, values, values.array() + 1.0};
	return f;
}

} // namespace

TEST(ZScore, FitsPopulationMoments) {
	const auto [z, state] = fit_transform(hourly(Matrix{{1.0}, {2.0}, {3.0}}), TransformKind::ZScore);
	EXPECT_DOUBLE_EQ(state.mu[0], 2.0);
	EXPECT_NEAR(state.sigma[0], 0.816497, 1e-6);
	EXPECT_NEAR(state.sigma[0], std::sqrt(2.0 / 3.0), 1e-15);
	EXPECT_NEAR(z.values(0, 0), -1.224745, 1e-6);
	EXPECT_EQ(z.values(1, 0), 0.0);
	EXPECT_NEAR(z.values(2, 0), 1.224745, 1e-6);
}

TEST(ZScore, ConstantChannelClampsSigma) {
	const auto [z, state] = fit_transform(hourly(Matrix{{5.0}, {5.0}, {5.0}}), TransformKind::ZScore);
	EXPECT_EQ(state.sigma[0], 1.0);
	EXPECT_TRUE((z.values.array() == 0.0).all());
}

TEST(ZScore, InverseRecoversLevels) {
	ChannelTransformState state;
	state.kind = TransformKind::ZScore;
	state.mu = {2.0};
	state.sigma = {std::sqrt(2.0 / 3.0)};
	const auto out = inverse(as_forecast(Matrix{{-std::sqrt(1.5)}, {0.0}}), state);
	EXPECT_NEAR(out.mean(0, 0), 1.0, 1e-12);
	EXPECT_NEAR(out.mean(1, 0), 2.0, 1e-12);
}

TEST(Difference, FitsIncrementsAndAnchor) {
	const auto [delta, state] = fit_transform(hourly(Matrix{{1.0}, {3.0}, {6.0}}), TransformKind::Difference);
	ASSERT_EQ(delta.length(), 2u);
	EXPECT_EQ(delta.values(0, 0), 2.0);
	EXPECT_EQ(delta.values(1, 0), 3.0);
	EXPECT_EQ(state.anchor[0], 6.0);
	EXPECT_EQ(delta.timestamps.front().epoch_seconds, 3600);
}

TEST(Difference, InverseIsCumulativeSumFromAnchor) {
	ChannelTransformState state;
	state.kind = TransformKind::Difference;
	state.anchor = {6.0};
	const auto out = inverse(as_forecast(Matrix{{2.0}, {-1.0}}), state);
	EXPECT_EQ(out.mean(0, 0), 8.0);
	EXPECT_EQ(out.mean(1, 0), 7.0);
	EXPECT_EQ(out.quantiles[0](1, 0), 5.0);
}

TEST(Difference, TooShortSeriesThrows) {
	try {
		fit_transform(hourly(Matrix{{1.0}}), TransformKind::Difference);
		FAIL();
	} catch (const Error &e) {
		EXPECT_EQ(e.kind(), ErrorKind::SeriesTooShort);
	}
}

TEST(NoTransform, IsIdentity) {
	const auto s = hourly(Matrix{{1.0, 7.0}, {2.0, -3.0}});
	const auto [same, state] = fit_transform(s, TransformKind::None);
	EXPECT_TRUE(same.values == s.values);
	const auto f = as_forecast(Matrix{{4.0, 5.0}});
	const auto out = inverse(f, state);
	EXPECT_TRUE(out.mean == f.mean);
	EXPECT_TRUE(out.quantiles[2] == f.quantiles[2]);
}

TEST(Inverse, ChannelCountMismatchThrows) {
	const auto [z, state] = fit_transform(hourly(Matrix{{1.0, 2.0}, {2.0, 5.0}}), TransformKind::ZScore);
	try {
		inverse(as_forecast(Matrix{{1.0}}), state);
		FAIL();
	} catch (const Error &e) {
		EXPECT_EQ(e.kind(), ErrorKind::ChannelCountMismatch);
	}
}

TEST(TransformProperty, ZScoreRoundtripWithinRelativeTolerance) {
	std::mt19937_64 rng(21);
	for (int trial = 0; trial < 100; ++trial) {
		const auto t = static_cast<Eigen::Index>(2 + rng() % 100);
		const auto d = static_cast<Eigen::Index>(1 + rng() % 4);
		Matrix values = mvroll::testing::random_matrix(rng, t, d, std::pow(10.0, static_cast<double>(rng() % 7) - 3));
		values.array() += static_cast<double>(rng() % 1000);
		const auto [z, state] = fit_transform(hourly(values), TransformKind::ZScore);
		const auto back = inverse(as_forecast(z.values), state);
		for (Eigen::Index i = 0; i < values.size(); ++i) {
			const double ref = values.data()[i];
			EXPECT_LE(std::abs(back.mean.data()[i] - ref), 1e-10 * std::max(1.0, std::abs(ref)));
		}
	}
}

TEST(TransformProperty, DifferenceRoundtripExactOnIntegers) {
	std::mt19937_64 rng(22);
	for (int trial = 0; trial < 100; ++trial) {
		const auto t = static_cast<Eigen::Index>(4 + rng() % 100);
		const auto d = static_cast<Eigen::Index>(1 + rng() % 4);
		Matrix values(t, d);
		for (Eigen::Index i = 0; i < values.size(); ++i) {
			values.data()[i] = static_cast<double>(static_cast<std::int64_t>(rng() % 20001) - 10000);
		}
		const Eigen::Index split = 2 + static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(t - 2));
		const auto [delta, state] = fit_transform(hourly(values.topRows(split)), TransformKind::Difference);
		const Matrix future_increments =
		    values.bottomRows(t - split) - values.middleRows(split - 1, t - split);
		const auto back = inverse(as_forecast(future_increments), state);
		EXPECT_TRUE(back.mean == values.bottomRows(t - split));
	}
}

TEST(TransformProperty, ChannelsAreTransformedIndependently) {
	std::mt19937_64 rng(23);
	const Matrix values = mvroll::testing::random_matrix(rng, 50, 3);
	Matrix altered = values;
	altered.col(1) *= 17.0;
	altered.col(1).array() += 4.0;
	for (auto kind : {TransformKind::ZScore, TransformKind::Difference}) {
		const auto [a, sa] = fit_transform(hourly(values), kind);
		const auto [b, sb] = fit_transform(hourly(altered), kind);
		EXPECT_TRUE(a.values.col(0) == b.values.col(0));
		EXPECT_TRUE(a.values.col(2) == b.values.col(2));
	}
}

TEST(TransformProperty, ZScoreIsScaleEquivariantPerChannel) {
	std::mt19937_64 rng(24);
	for (int trial = 0; trial < 20; ++trial) {
		const Matrix values = mvroll::testing::random_matrix(rng, 80, 2);
		Matrix scaled = values;
		scaled.col(1) *= 1000.0;
		const auto [a, sa] = fit_transform(hourly(values), TransformKind::ZScore);
		const auto [b, sb] = fit_transform(hourly(scaled), TransformKind::ZScore);
		EXPECT_LE((a.values - b.values).cwiseAbs().maxCoeff(), 1e-9);
	}
}

TEST(TransformKind, ParsesCliSpellings) {
	EXPECT_EQ(parse_transform_kind("zscore"), TransformKind::ZScore);
	EXPECT_EQ(parse_transform_kind("diff"), TransformKind::Difference);
	EXPECT_EQ(parse_transform_kind("none"), TransformKind::None);
	EXPECT_THROW(parse_transform_kind("log"), Error);
}
