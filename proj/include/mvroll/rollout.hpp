#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mvroll/backends/backend.hpp"
#include "mvroll/core.hpp"
#include "mvroll/featurize.hpp"

namespace mvroll {

/// One row of the flattened table: temporal features, the channel the target
/// belongs to, and the target itself for context rows.
struct RolledRow {
	std::vector<double> features;
	std::size_t channel_indicator = 0;
	std::optional<double> target;
};

/// Context and query blocks in time-major order (all channels of a step,
/// then the next step). The indicator is always the last design column.
struct RolledTable {
	std::vector<std::string> feature_names;
	std::vector<RolledRow> context_rows;
	std::vector<RolledRow> query_rows;
	/// Series channel index of each local indicator level.
	std::vector<std::size_t> channel_map;
	/// Number of retained history steps behind the context block.
	std::size_t context_steps = 0;

	std::size_t num_channels() const {
		return channel_map.size();
	}
	std::size_t indicator_column() const {
		return feature_names.size();
	}
	std::vector<std::size_t> categorical_columns() const {
		return {indicator_column()};
	}
};

inline std::vector<RolledRow> roll(const MultivariateSeries &series, const FeatureSpec &spec,
                                   std::optional<TimeStamp> origin = std::nullopt) {
	const TimeStamp base = origin.value_or(series.timestamps.front());
	const std::size_t t = series.length();
	const std::size_t d = series.num_channels();
	std::vector<RolledRow> rows;
	rows.reserve(t * d);
	std::vector<double> features;
	for (std::size_t k = 0; k < t; ++k) {
		features.clear();
		featurize_into(series.timestamps[k], base, series.frequency, spec, features);
		for (std::size_t c = 0; c < d; ++c) {
			rows.push_back({features, c,
			                series.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c))});
		}
	}
	return rows;
}

namespace detail {

inline Matrix design_matrix(const std::vector<RolledRow> &rows, std::size_t width) {
	Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width + 1));
	for (std::size_t r = 0; r < rows.size(); ++r) {
		const auto ri = static_cast<Eigen::Index>(r);
		for (std::size_t c = 0; c < width; ++c) {
			x(ri, static_cast<Eigen::Index>(c)) = rows[r].features[c];
		}
		x(ri, static_cast<Eigen::Index>(width)) = static_cast<double>(rows[r].channel_indicator);
	}
	return x;
}

inline void append_row(TabularData &data, const RolledRow &row) {
	const Eigen::Index n = data.train_x.rows();
	const Eigen::Index width = data.train_x.cols();
	data.train_x.conservativeResize(n + 1, width);
	data.train_y.conservativeResize(n + 1);
	for (Eigen::Index c = 0; c + 1 < width; ++c) {
		data.train_x(n, c) = row.features[static_cast<std::size_t>(c)];
	}
	data.train_x(n, width - 1) = static_cast<double>(row.channel_indicator);
	data.train_y(n) = *row.target;
}

} // namespace detail

/// Dense design matrices for a backend call.
inline TabularData to_tabular(const RolledTable &table) {
	TabularData data;
	const std::size_t width = table.feature_names.size();
	data.train_x = detail::design_matrix(table.context_rows, width);
	data.train_y.resize(static_cast<Eigen::Index>(table.context_rows.size()));
	for (std::size_t r = 0; r < table.context_rows.size(); ++r) {
		data.train_y(static_cast<Eigen::Index>(r)) = *table.context_rows[r].target;
	}
	data.test_x = detail::design_matrix(table.query_rows, width);
	data.categorical_cols = {static_cast<int>(table.indicator_column())};
	data.feature_names = table.feature_names;
	data.feature_names.emplace_back("channel_indicator");
	return data;
}

/// Number of history steps kept under `context_limit` rolled rows; every
/// retained step contributes all `channels` rows.
inline std::size_t retained_steps(std::size_t length, std::size_t channels, std::optional<std::size_t> context_limit) {
	std::size_t steps = length;
	if (context_limit) {
		steps = std::min(steps, *context_limit / channels);
	}
	if (steps < 2) {
		throw Error(ErrorKind::ContextTooSmall, "context keeps " + std::to_string(steps) +
		                                            " time step(s); at least 2 are required");
	}
	return steps;
}

inline MultivariateSeries truncate_history(const MultivariateSeries &history,
                                           std::optional<std::size_t> context_limit) {
	return history.tail(retained_steps(history.length(), history.num_channels(), context_limit));
}

namespace detail {

inline RolledTable make_table(const MultivariateSeries &history, const std::vector<TimeStamp> &horizon,
                              const FeatureSpec &spec, std::vector<std::size_t> channel_map) {
	RolledTable table;
	table.feature_names = spec.column_names();
	const TimeStamp origin = history.timestamps.front();
	table.context_rows = roll(history, spec, origin);
	table.context_steps = history.length();
	const std::size_t d = history.num_channels();
	std::vector<double> features;
	for (const auto &ts : horizon) {
		features.clear();
		featurize_into(ts, origin, history.frequency, spec, features);
		for (std::size_t c = 0; c < d; ++c) {
			table.query_rows.push_back({features, c, std::nullopt});
		}
	}
	table.channel_map = std::move(channel_map);
	return table;
}

} // namespace detail

/// Context/query tables for a task: one table in joint and autoregressive
/// mode, one single-channel table per channel in channel-independent mode.
inline std::vector<RolledTable> build_task_tables(const ForecastTask &task, const FeatureSpec &spec) {
	task.validate();
	spec.validate();
	const MultivariateSeries history = truncate_history(task.history, task.context_limit);
	const auto horizon = task.horizon_timestamps();
	std::vector<RolledTable> tables;
	if (task.mode == ForecastMode::ChannelIndependent) {
		for (std::size_t c = 0; c < history.num_channels(); ++c) {
			tables.push_back(detail::make_table(history.channel(c), horizon, spec, {c}));
		}
	} else {
		std::vector<std::size_t> identity(history.num_channels());
		std::iota(identity.begin(), identity.end(), std::size_t{0});
		tables.push_back(detail::make_table(history, horizon, spec, std::move(identity)));
	}
	return tables;
}

/// Scatters per-query-row predictions back onto the (step, channel) grid and
/// sorts each cell's quantiles into ascending order.
inline QuantileForecast unroll(const BackendPrediction &pred, const RolledTable &table, const ForecastTask &task) {
	const std::size_t rows = table.query_rows.size();
	const std::size_t d = table.num_channels();
	if (pred.mean.size() != rows) {
		throw Error(ErrorKind::LengthMismatch, "prediction has " + std::to_string(pred.mean.size()) +
		                                           " means for " + std::to_string(rows) + " query rows");
	}
	if (pred.quantiles.size() != task.quantile_levels.size()) {
		throw Error(ErrorKind::LengthMismatch, "prediction has " + std::to_string(pred.quantiles.size()) +
		                                           " quantile levels, task requests " +
		                                           std::to_string(task.quantile_levels.size()));
	}
	for (const auto &q : pred.quantiles) {
		if (q.size() != rows) {
			throw Error(ErrorKind::LengthMismatch, "quantile column length " + std::to_string(q.size()) +
			                                           " differs from " + std::to_string(rows) + " query rows");
		}
	}
	if (d == 0 || rows != task.horizon * d) {
		throw Error(ErrorKind::LengthMismatch, std::to_string(rows) + " query rows cannot cover horizon " +
		                                           std::to_string(task.horizon) + " x " + std::to_string(d) +
		                                           " channels");
	}

	QuantileForecast out;
	for (std::size_t c : table.channel_map) {
		out.channels.push_back(task.history.channels.at(c));
	}
	out.horizon_timestamps = task.horizon_timestamps();
	out.levels = task.quantile_levels;
	const auto h = static_cast<Eigen::Index>(task.horizon);
	out.mean = Matrix(h, static_cast<Eigen::Index>(d));
	out.quantiles.assign(out.levels.size(), Matrix(h, static_cast<Eigen::Index>(d)));
	std::vector<double> cell(out.levels.size());
	for (std::size_t i = 0; i < rows; ++i) {
		const auto step = static_cast<Eigen::Index>(i / d);
		const std::size_t channel = i % d;
		if (table.query_rows[i].channel_indicator != channel) {
			throw Error(ErrorKind::LengthMismatch, "query rows are not in time-major order");
		}
		const auto c = static_cast<Eigen::Index>(channel);
		out.mean(step, c) = pred.mean[i];
		for (std::size_t l = 0; l < cell.size(); ++l) {
			cell[l] = pred.quantiles[l][i];
		}
		std::sort(cell.begin(), cell.end());
		for (std::size_t l = 0; l < cell.size(); ++l) {
			out.quantiles[l](step, c) = cell[l];
		}
	}
	return out;
}

/// All horizon steps and channels from a single backend call.
inline QuantileForecast predict_joint(const ForecastTask &task, RegressorBackend &backend, const FeatureSpec &spec,
                                      std::uint64_t seed = 0) {
	ForecastTask joint = task;
	joint.mode = ForecastMode::Joint;
	const auto tables = build_task_tables(joint, spec);
	const auto &table = tables.front();
	const BackendPrediction pred = backend.fit_predict(to_tabular(table), task.quantile_levels, seed);
	return unroll(pred, table, joint);
}

/// Independent single-channel problems, one backend call per channel.
inline QuantileForecast predict_channel_independent(const ForecastTask &task, RegressorBackend &backend,
                                                    const FeatureSpec &spec, std::uint64_t seed = 0) {
	ForecastTask ci = task;
	ci.mode = ForecastMode::ChannelIndependent;
	const auto tables = build_task_tables(ci, spec);
	const auto h = static_cast<Eigen::Index>(task.horizon);
	const auto d = static_cast<Eigen::Index>(task.history.num_channels());

	QuantileForecast out;
	out.channels = task.history.channels;
	out.horizon_timestamps = task.horizon_timestamps();
	out.levels = task.quantile_levels;
	out.mean = Matrix(h, d);
	out.quantiles.assign(out.levels.size(), Matrix(h, d));
	for (const auto &table : tables) {
		const BackendPrediction pred = backend.fit_predict(to_tabular(table), task.quantile_levels, seed);
		const QuantileForecast part = unroll(pred, table, ci);
		const auto c = static_cast<Eigen::Index>(table.channel_map.front());
		out.mean.col(c) = part.mean.col(0);
		for (std::size_t l = 0; l < out.levels.size(); ++l) {
			out.quantiles[l].col(c) = part.quantiles[l].col(0);
		}
	}
	return out;
}

/// Cell-by-cell prediction. Within a horizon step, channels are visited in
/// `channel_order` and each predicted mean is appended to the context before
/// the next channel of that step is predicted. Pseudo-observations are scoped
/// to their step: every step starts again from the observed history.
inline QuantileForecast predict_autoregressive(const ForecastTask &task, RegressorBackend &backend,
                                               const FeatureSpec &spec, std::vector<std::size_t> channel_order = {},
                                               std::uint64_t seed = 0) {
	ForecastTask ar = task;
	ar.mode = ForecastMode::Autoregressive;
	const auto tables = build_task_tables(ar, spec);
	const auto &table = tables.front();
	const std::size_t d = table.num_channels();
	if (channel_order.empty()) {
		channel_order.resize(d);
		std::iota(channel_order.begin(), channel_order.end(), std::size_t{0});
	}
	{
		auto sorted = channel_order;
		std::sort(sorted.begin(), sorted.end());
		bool permutation = sorted.size() == d;
		for (std::size_t i = 0; permutation && i < d; ++i) {
			permutation = sorted[i] == i;
		}
		if (!permutation) {
			throw Error(ErrorKind::InvalidArgument, "channel_order must be a permutation of [0, d)");
		}
	}

	const TabularData base = to_tabular(table);
	const std::size_t width = table.feature_names.size();
	const std::size_t levels = task.quantile_levels.size();
	BackendPrediction merged;
	merged.mean.assign(table.query_rows.size(), 0.0);
	merged.quantiles.assign(levels, std::vector<double>(table.query_rows.size(), 0.0));

	for (std::size_t step = 0; step < task.horizon; ++step) {
		TabularData context = base;
		for (std::size_t channel : channel_order) {
			const std::size_t row = step * d + channel;
			const RolledRow &query = table.query_rows[row];
			context.test_x = detail::design_matrix({query}, width);
			const BackendPrediction pred = backend.fit_predict(context, task.quantile_levels, seed);
			if (pred.mean.size() != 1) {
				throw Error(ErrorKind::LengthMismatch, "backend returned " + std::to_string(pred.mean.size()) +
				                                           " predictions for a single query row");
			}
			merged.mean[row] = pred.mean[0];
			for (std::size_t l = 0; l < levels; ++l) {
				merged.quantiles[l][row] = pred.quantiles.at(l).at(0);
			}
			RolledRow pseudo = query;
			pseudo.target = pred.mean[0];
			detail::append_row(context, pseudo);
		}
	}
	return unroll(merged, table, ar);
}

/// Dispatches on `task.mode`.
inline QuantileForecast predict(const ForecastTask &task, RegressorBackend &backend, const FeatureSpec &spec,
                                std::uint64_t seed = 0) {
	switch (task.mode) {
	case ForecastMode::Joint: return predict_joint(task, backend, spec, seed);
	case ForecastMode::Autoregressive: return predict_autoregressive(task, backend, spec, {}, seed);
	case ForecastMode::ChannelIndependent: return predict_channel_independent(task, backend, spec, seed);
	}
	return predict_joint(task, backend, spec, seed);
}

} // namespace mvroll
