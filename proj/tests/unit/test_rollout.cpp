#include <gtest/gtest.h>

#include <random>

#include "mvroll/backends/factory.hpp"
#include "mvroll/data.hpp"
#include "mvroll/metrics.hpp"
#include "mvroll/rollout.hpp"
#include "test_util.hpp"

using namespace mvroll;
using mvroll::testing::hourly;

namespace {

/// Records every table it is handed; predicts the last context target.
class RecordingBackend final : public RegressorBackend {
public:
	std::string name() const override {
		return "recording";
	}
	BackendCapabilities capabilities() const override {
		return {true, std::nullopt, true};
	}
	BackendPrediction fit_predict(const TabularData &data, const std::vector<double> &levels,
	                              std::uint64_t) override {
		calls.push_back(data);
		BackendPrediction pred;
		pred.mean.assign(static_cast<std::size_t>(data.test_x.rows()), data.train_y(data.train_y.size() - 1));
		pred.quantiles.assign(levels.size(), pred.mean);
		return pred;
	}
	std::vector<TabularData> calls;
};

ForecastTask task_for(const MultivariateSeries &history, std::size_t horizon, ForecastMode mode = ForecastMode::Joint) {
	ForecastTask task;
	task.history = history;
	task.horizon = horizon;
	task.mode = mode;
	return task;
}

BackendPrediction targets_as_prediction(const std::vector<RolledRow> &rows, std::size_t levels) {
	BackendPrediction pred;
	for (const auto &r : rows) {
		pred.mean.push_back(*r.target);
	}
	pred.quantiles.assign(levels, pred.mean);
	return pred;
}

void expect_identical(const QuantileForecast &a, const QuantileForecast &b, const std::string &what) {
	EXPECT_TRUE(a.mean == b.mean) << what;
	ASSERT_EQ(a.quantiles.size(), b.quantiles.size());
	for (std::size_t l = 0; l < a.quantiles.size(); ++l) {
		EXPECT_TRUE(a.quantiles[l] == b.quantiles[l]) << what << " level " << l;
	}
	EXPECT_EQ(a.channels, b.channels);
	EXPECT_EQ(a.horizon_timestamps, b.horizon_timestamps);
}

const FeatureSpec kIndexOnly{true, {}, FeatureEncoding::SineCosine};

} // namespace

TEST(Roll, TimeMajorRowsWithIndicator) {
	const auto rows = roll(hourly(Matrix{{1.0, 10.0}, {2.0, 20.0}}), kIndexOnly);
	ASSERT_EQ(rows.size(), 4u);
	const double expected_t[] = {0, 0, 1, 1};
	const std::size_t expected_eta[] = {0, 1, 0, 1};
	const double expected_u[] = {1.0, 10.0, 2.0, 20.0};
	for (std::size_t i = 0; i < 4; ++i) {
		EXPECT_EQ(rows[i].features, std::vector<double>{expected_t[i]});
		EXPECT_EQ(rows[i].channel_indicator, expected_eta[i]);
		EXPECT_EQ(*rows[i].target, expected_u[i]);
	}
}

TEST(Roll, SingleChannelIsUnivariateTablePlusConstantIndicator) {
	const auto series = hourly(Matrix{{3.0}, {1.0}, {4.0}});
	const auto spec = default_spec_for(series.frequency);
	const auto rows = roll(series, spec);
	ASSERT_EQ(rows.size(), 3u);
	for (std::size_t k = 0; k < 3; ++k) {
		EXPECT_EQ(rows[k].channel_indicator, 0u);
		EXPECT_EQ(rows[k].features, featurize(series.timestamps[k], series.timestamps[0], series.frequency, spec).values);
	}
}

TEST(Roll, LorenzTableHasThreeRowsPerStep) {
	LorenzConfig config;
	config.steps = 100;
	const auto series = gen_lorenz(config, 0);
	EXPECT_EQ(roll(series, default_spec_for(series.frequency)).size(), 300u);
}

TEST(Unroll, ScattersSingleStep) {
	auto task = task_for(hourly(Matrix{{1.0, 2.0}, {3.0, 4.0}}), 1);
	task.quantile_levels = {0.5};
	const auto table = build_task_tables(task, kIndexOnly).front();
	BackendPrediction pred{{5.0, 50.0}, {{5.0, 50.0}}};
	const auto f = unroll(pred, table, task);
	EXPECT_TRUE(f.mean == (Matrix{{5.0, 50.0}}));
	EXPECT_EQ(f.channels, (std::vector<std::string>{"c0", "c1"}));
	EXPECT_EQ(f.horizon_timestamps.front().epoch_seconds, 7200);
}

TEST(Unroll, SortsQuantilesPerCell) {
	auto task = task_for(hourly(Matrix{{1.0}, {2.0}}), 1);
	task.quantile_levels = {0.1, 0.5, 0.9};
	const auto table = build_task_tables(task, kIndexOnly).front();
	BackendPrediction pred{{2.0}, {{3.0}, {2.0}, {4.0}}};
	const auto f = unroll(pred, table, task);
	EXPECT_EQ(f.quantiles[0](0, 0), 2.0);
	EXPECT_EQ(f.quantiles[1](0, 0), 3.0);
	EXPECT_EQ(f.quantiles[2](0, 0), 4.0);
}

TEST(Unroll, LengthMismatchThrows) {
	auto task = task_for(hourly(Matrix{{1.0, 2.0}, {3.0, 4.0}}), 2);
	const auto table = build_task_tables(task, kIndexOnly).front();
	BackendPrediction short_pred;
	short_pred.mean = {1.0, 2.0, 3.0};
	short_pred.quantiles.assign(9, short_pred.mean);
	try {
		unroll(short_pred, table, task);
		FAIL();
	} catch (const Error &e) {
		EXPECT_EQ(e.kind(), ErrorKind::LengthMismatch);
	}
}

TEST(BuildTables, ContextLimitKeepsMostRecentWholeSteps) {
	std::mt19937_64 rng(2);
	auto task = task_for(hourly(mvroll::testing::random_matrix(rng, 10, 2)), 3);
	task.context_limit = 4;
	const auto tables = build_task_tables(task, kIndexOnly);
	ASSERT_EQ(tables.size(), 1u);
	const auto &t = tables.front();
	ASSERT_EQ(t.context_rows.size(), 4u);
	EXPECT_EQ(t.context_steps, 2u);
	EXPECT_EQ(*t.context_rows[0].target, task.history.values(8, 0));
	EXPECT_EQ(*t.context_rows[3].target, task.history.values(9, 1));
	// Origin moves to the first retained step; the horizon continues from it.
	EXPECT_EQ(t.context_rows[0].features[0], 0.0);
	EXPECT_EQ(t.query_rows[0].features[0], 2.0);
}

TEST(BuildTables, ChannelIndependentSplitsPerChannel) {
	std::mt19937_64 rng(3);
	const auto task = task_for(hourly(mvroll::testing::random_matrix(rng, 12, 3)), 5, ForecastMode::ChannelIndependent);
	const auto tables = build_task_tables(task, kIndexOnly);
	ASSERT_EQ(tables.size(), 3u);
	for (std::size_t c = 0; c < 3; ++c) {
		EXPECT_EQ(tables[c].context_rows.size(), 12u);
		EXPECT_EQ(tables[c].query_rows.size(), 5u);
		EXPECT_EQ(tables[c].channel_map, std::vector<std::size_t>{c});
		EXPECT_EQ(*tables[c].context_rows[4].target, task.history.values(4, static_cast<Eigen::Index>(c)));
	}
}

TEST(BuildTables, JointQueryHasHorizonTimesChannels) {
	std::mt19937_64 rng(4);
	const auto task = task_for(hourly(mvroll::testing::random_matrix(rng, 20, 2)), 48);
	const auto tables = build_task_tables(task, default_spec_for(task.history.frequency));
	EXPECT_EQ(tables.front().query_rows.size(), 96u);
	const auto data = to_tabular(tables.front());
	EXPECT_EQ(data.categorical_cols, std::vector<int>{static_cast<int>(tables.front().indicator_column())});
	EXPECT_EQ(data.train_x.cols(), data.test_x.cols());
}

TEST(BuildTables, ContextTooSmallWhenUnderTwoSteps) {
	std::mt19937_64 rng(5);
	auto task = task_for(hourly(mvroll::testing::random_matrix(rng, 10, 3)), 1);
	task.context_limit = 5;
	try {
		build_task_tables(task, kIndexOnly);
		FAIL();
	} catch (const Error &e) {
		EXPECT_EQ(e.kind(), ErrorKind::ContextTooSmall);
	}
}

TEST(PredictJoint, ConstantSeriesWithKnn) {
	const auto task = task_for(hourly(Matrix::Constant(40, 2, 7.0)), 6);
	KnnBackend knn;
	const auto f = predict_joint(task, knn, default_spec_for(task.history.frequency));
	EXPECT_TRUE((f.mean.array() == 7.0).all());
}

TEST(PredictJoint, SharedLatentGpIsFiniteAndMonotone) {
	const auto series = gen_shared_latent(120, 0.05, 0.5, 6);
	const auto task = task_for(series, 24);
	IcmGpBackend gp;
	const auto f = predict_joint(task, gp, default_spec_for(series.frequency));
	EXPECT_TRUE(f.mean.allFinite());
	for (std::size_t l = 1; l < f.quantiles.size(); ++l) {
		EXPECT_TRUE(f.quantiles[l - 1].allFinite());
		EXPECT_TRUE((f.quantiles[l - 1].array() <= f.quantiles[l].array()).all());
	}
}

TEST(PredictAutoregressive, LaterChannelSeesEarlierPrediction) {
	const auto task = task_for(hourly(Matrix{{1.0, 10.0}, {2.0, 20.0}, {3.0, 30.0}}), 1, ForecastMode::Autoregressive);
	RecordingBackend backend;
	predict_autoregressive(task, backend, kIndexOnly);
	ASSERT_EQ(backend.calls.size(), 2u);
	const auto &first = backend.calls[0];
	const auto &second = backend.calls[1];
	ASSERT_EQ(second.train_x.rows(), first.train_x.rows() + 1);
	EXPECT_TRUE(second.train_x.topRows(first.train_x.rows()) == first.train_x);
	const auto last = second.train_x.rows() - 1;
	EXPECT_EQ(second.train_x(last, 0), 3.0);  // t = T on the retained grid
	EXPECT_EQ(second.train_x(last, 1), 0.0);  // eta = first channel
	EXPECT_EQ(second.train_y(last), 30.0);    // first prediction (last target seen)
	EXPECT_EQ(second.test_x(0, 1), 1.0);
}

TEST(PredictAutoregressive, ChannelOrderControlsConditioning) {
	const auto task = task_for(hourly(Matrix{{1.0, 10.0}, {2.0, 20.0}}), 2, ForecastMode::Autoregressive);
	RecordingBackend backend;
	predict_autoregressive(task, backend, kIndexOnly, {1, 0});
	ASSERT_EQ(backend.calls.size(), 4u);
	EXPECT_EQ(backend.calls[0].test_x(0, 1), 1.0);
	EXPECT_EQ(backend.calls[1].test_x(0, 1), 0.0);
	// Each horizon step restarts from the observed history.
	EXPECT_EQ(backend.calls[2].train_x.rows(), 4);
	EXPECT_THROW(predict_autoregressive(task, backend, kIndexOnly, {0, 0}), Error);
	EXPECT_THROW(predict_autoregressive(task, backend, kIndexOnly, {0}), Error);
}

TEST(PredictAutoregressive, GpMeanMatchesJointAndLaterChannelTightens) {
	// Conditioning a Gaussian on a pseudo-observation equal to its own
	// predictive mean leaves every posterior mean unchanged and can only
	// shrink posterior variances. With y_t = x_{t-1} this holds per seed.
	for (std::uint64_t seed = 0; seed < 5; ++seed) {
		MultivariateSeries base = gen_var1(Matrix{{0.9, 0.0}, {1.0, 0.0}}, 1.0, 80, seed);
		auto task = task_for(base, 6);
		IcmGpBackend gp;
		const auto spec = default_spec_for(base.frequency);
		const auto joint = predict_joint(task, gp, spec);
		const auto ar = predict_autoregressive(task, gp, spec);
		EXPECT_LE((joint.mean - ar.mean).cwiseAbs().maxCoeff(), 1e-8);
		const Matrix &lo_j = joint.quantile(0.1);
		const Matrix &lo_a = ar.quantile(0.1);
		for (Eigen::Index h = 0; h < 6; ++h) {
			EXPECT_NEAR(lo_j(h, 0), lo_a(h, 0), 1e-8);
			EXPECT_LE(ar.mean(h, 1) - lo_a(h, 1), joint.mean(h, 1) - lo_j(h, 1) + 1e-12);
		}
	}
}

TEST(RolloutProperty, SizeLawAndExactRoundtrip) {
	std::mt19937_64 rng(31);
	for (int trial = 0; trial < 50; ++trial) {
		const auto d = static_cast<Eigen::Index>(1 + rng() % 5);
		const auto t = static_cast<Eigen::Index>(2 + rng() % 199);
		const Matrix values = mvroll::testing::random_matrix(rng, t, d, 100.0);
		const auto series = hourly(values, 3600 * static_cast<std::int64_t>(rng() % 10000));
		const auto spec = default_spec_for(series.frequency);
		const auto rows = roll(series, spec);
		ASSERT_EQ(rows.size(), static_cast<std::size_t>(t * d));

		// Treat the rolled rows as a query block over the full series length.
		RolledTable table;
		table.feature_names = spec.column_names();
		table.query_rows = rows;
		table.channel_map.resize(static_cast<std::size_t>(d));
		std::iota(table.channel_map.begin(), table.channel_map.end(), std::size_t{0});
		ForecastTask task = task_for(series, static_cast<std::size_t>(t));
		task.quantile_levels = {0.5};
		const auto f = unroll(targets_as_prediction(rows, 1), table, task);
		EXPECT_TRUE(f.mean == values);
	}
}

TEST(RolloutProperty, TruncationKeepsWholeSteps) {
	std::mt19937_64 rng(32);
	for (int trial = 0; trial < 50; ++trial) {
		const auto d = static_cast<Eigen::Index>(1 + rng() % 5);
		const auto t = static_cast<Eigen::Index>(2 + rng() % 60);
		auto task = task_for(hourly(mvroll::testing::random_matrix(rng, t, d)), 2);
		task.context_limit = static_cast<std::size_t>(2 * d) + rng() % 200;
		const auto table = build_task_tables(task, kIndexOnly).front();
		EXPECT_EQ(table.context_rows.size() % static_cast<std::size_t>(d), 0u);
		EXPECT_LE(table.context_rows.size(), *task.context_limit);
		EXPECT_EQ(table.context_steps,
		          std::min<std::size_t>(static_cast<std::size_t>(t), *task.context_limit / static_cast<std::size_t>(d)));
	}
}

TEST(RolloutProperty, SingleChannelModesAgreeBitForBit) {
	std::mt19937_64 rng(33);
	for (const char *spec_name : {"seasonal-naive:24", "knn", "ridge", "icm-gp"}) {
		for (int trial = 0; trial < 5; ++trial) {
			const auto series = hourly(mvroll::testing::random_matrix(rng, 60 + static_cast<Eigen::Index>(rng() % 40), 1));
			auto backend = make_backend(spec_name);
			const auto spec = default_spec_for(series.frequency);
			const auto task = task_for(series, 12);
			const auto joint = predict(task_for(series, 12, ForecastMode::Joint), *backend, spec, 3);
			const auto ci = predict(task_for(series, 12, ForecastMode::ChannelIndependent), *backend, spec, 3);
			expect_identical(joint, ci, spec_name);
			if (std::string(spec_name) != "icm-gp") {
				const auto ar = predict(task_for(series, 12, ForecastMode::Autoregressive), *backend, spec, 3);
				expect_identical(joint, ar, spec_name);
			}
		}
	}
}

TEST(RolloutProperty, PredictionsAreDeterministic) {
	const auto series = gen_shared_latent(80, 0.05, 0.5, 1);
	for (auto mode : {ForecastMode::Joint, ForecastMode::Autoregressive, ForecastMode::ChannelIndependent}) {
		for (const char *spec_name : {"knn", "ridge", "icm-gp"}) {
			auto backend = make_backend(spec_name);
			const auto task = task_for(series, 8, mode);
			const auto spec = default_spec_for(series.frequency);
			expect_identical(predict(task, *backend, spec, 9), predict(task, *backend, spec, 9), spec_name);
		}
	}
}

TEST(IcmGpRollout, CalendarColumnsCarryDailyCycle) {
	Matrix values(24 * 8, 2);
	for (Eigen::Index r = 0; r < values.rows(); ++r) {
		const double phase = 2.0 * std::numbers::pi * double(r) / 24.0;
		values.row(r) << std::sin(phase), 0.5 * std::cos(phase);
	}
	const Eigen::Index h = 24;
	ForecastTask task;
	task.history = hourly(values.topRows(values.rows() - h));
	task.horizon = h;
	const Matrix actual = values.bottomRows(h);
	IcmGpBackend gp;
	const auto with_calendar = predict(task, gp, default_spec_for(task.history.frequency), 0);
	const auto index_only = predict(task, gp, kIndexOnly, 0);
	const double calendar_mase = mase(actual, with_calendar.mean, task.history.values, 1);
	EXPECT_LT(calendar_mase, 0.5);
	EXPECT_LT(calendar_mase, mase(actual, index_only.mean, task.history.values, 1));
}
