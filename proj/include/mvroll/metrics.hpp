#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fnmatch.h>

#include "mvroll/core.hpp"

namespace mvroll {

/// Seasonal lag for the MASE denominator: second-level data cycles hourly,
/// minute- and hour-level data daily, day-level data weekly, weekly data 1.
inline std::int64_t default_seasonality(const Frequency &freq) {
	const std::int64_t secs = freq.seconds();
	if (secs >= 7 * 86400) {
		return 1;
	}
	if (secs >= 86400) {
		return std::max<std::int64_t>(1, 7 * 86400 / secs);
	}
	if (secs < 60) {
		return std::max<std::int64_t>(1, 3600 / secs);
	}
	return std::max<std::int64_t>(1, 86400 / secs);
}

struct MetricConfig {
	std::int64_t seasonality_m = 1;
	std::vector<double> quantile_levels = default_quantile_levels();
};

/// Pooled mean absolute scaled error: one numerator and one denominator over
/// all (step, channel) cells.
inline double mase(const Matrix &actual, const Matrix &forecast_mean, const Matrix &history, std::int64_t m) {
	if (actual.rows() != forecast_mean.rows() || actual.cols() != forecast_mean.cols()) {
		throw Error(ErrorKind::LengthMismatch, "actual and forecast shapes differ");
	}
	if (history.cols() != actual.cols()) {
		throw Error(ErrorKind::ChannelCountMismatch, "history and actual have different channel counts");
	}
	if (m < 1 || history.rows() <= m) {
		throw Error(ErrorKind::InvalidArgument, "MASE needs history longer than the seasonality (T=" +
		                                            std::to_string(history.rows()) + ", m=" + std::to_string(m) +
		                                            ")");
	}
	if (actual.size() == 0) {
		throw Error(ErrorKind::InvalidArgument, "MASE needs at least one forecast cell");
	}
	double denom = 0.0;
	for (Eigen::Index c = 0; c < history.cols(); ++c) {
		for (Eigen::Index t = m; t < history.rows(); ++t) {
			denom += std::abs(history(t, c) - history(t - m, c));
		}
	}
	denom /= static_cast<double>((history.rows() - m) * history.cols());
	if (!(denom > 0.0)) {
		throw Error(ErrorKind::DegenerateDenominator, "in-sample seasonal-naive error is zero");
	}
	double num = 0.0;
	for (Eigen::Index c = 0; c < actual.cols(); ++c) {
		for (Eigen::Index h = 0; h < actual.rows(); ++h) {
			num += std::abs(actual(h, c) - forecast_mean(h, c));
		}
	}
	num /= static_cast<double>(actual.size());
	return num / denom;
}

inline double pinball(double error, double q) {
	return error >= 0.0 ? q * error : (q - 1.0) * error;
}

/// Weighted quantile loss: twice the pinball loss summed over levels and
/// cells, over |levels| times the total absolute actual.
inline double wql(const Matrix &actual, const std::vector<Matrix> &quantile_forecasts,
                  const std::vector<double> &levels) {
	if (quantile_forecasts.size() != levels.size() || levels.empty()) {
		throw Error(ErrorKind::LengthMismatch, "need one forecast matrix per quantile level");
	}
	double scale = 0.0;
	for (Eigen::Index c = 0; c < actual.cols(); ++c) {
		for (Eigen::Index h = 0; h < actual.rows(); ++h) {
			scale += std::abs(actual(h, c));
		}
	}
	if (!(scale > 0.0)) {
		throw Error(ErrorKind::ZeroDenominator, "sum of absolute actuals is zero");
	}
	double loss = 0.0;
	for (std::size_t l = 0; l < levels.size(); ++l) {
		const Matrix &pred = quantile_forecasts[l];
		if (pred.rows() != actual.rows() || pred.cols() != actual.cols()) {
			throw Error(ErrorKind::LengthMismatch, "quantile forecast shape differs from actual");
		}
		for (Eigen::Index c = 0; c < actual.cols(); ++c) {
			for (Eigen::Index h = 0; h < actual.rows(); ++h) {
				loss += 2.0 * pinball(actual(h, c) - pred(h, c), levels[l]);
			}
		}
	}
	return loss / (static_cast<double>(levels.size()) * scale);
}

/// One scored (task, method) cell. `error` is set when the cell failed, in
/// which case the metric fields are meaningless.
struct BenchmarkRecord {
	std::string dataset_task;
	std::string method;
	double mase = 0.0;
	double wql = 0.0;
	double wall_seconds = 0.0;
	std::int64_t seed = 0;
	std::string backend_version;
	std::optional<std::string> error;
	/// Extra descriptive fields carried verbatim into the JSON line.
	std::map<std::string, std::string> metadata;

	bool ok() const {
		return !error.has_value();
	}
};

struct MethodSummary {
	std::string method;
	std::size_t datasets = 0;
	double mean_mase = 0.0;
	double mean_wql = 0.0;
	double average_rank_mase = 0.0;
	double average_rank_wql = 0.0;
};

struct AggregateOptions {
	/// Restrict to these methods (in this order); empty means every method.
	std::vector<std::string> methods;
	/// fnmatch patterns; matching dataset_task values are dropped.
	std::vector<std::string> exclude;
};

inline bool matches_any(const std::string &name, const std::vector<std::string> &patterns) {
	return std::any_of(patterns.begin(), patterns.end(),
	                   [&](const std::string &p) { return ::fnmatch(p.c_str(), name.c_str(), 0) == 0; });
}

namespace detail {

using Cells = std::map<std::string, std::map<std::string, const BenchmarkRecord *>>; // method -> dataset -> record

inline Cells index_records(const std::vector<BenchmarkRecord> &records, const std::vector<std::string> &exclude) {
	Cells cells;
	for (const auto &r : records) {
		if (!r.ok() || matches_any(r.dataset_task, exclude)) {
			continue;
		}
		auto [it, inserted] = cells[r.method].emplace(r.dataset_task, &r);
		if (!inserted) {
			throw Error(ErrorKind::InvalidArgument,
			            "duplicate record for method '" + r.method + "' on '" + r.dataset_task + "'");
		}
	}
	return cells;
}

/// 1-based ranks, ties sharing the mean of their positions.
inline std::vector<double> fractional_ranks(const std::vector<double> &scores) {
	std::vector<std::size_t> order(scores.size());
	for (std::size_t i = 0; i < order.size(); ++i) {
		order[i] = i;
	}
	std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
	std::vector<double> ranks(scores.size());
	std::size_t i = 0;
	while (i < order.size()) {
		std::size_t j = i;
		while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) {
			++j;
		}
		const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
		for (std::size_t k = i; k <= j; ++k) {
			ranks[order[k]] = shared;
		}
		i = j + 1;
	}
	return ranks;
}

} // namespace detail

/// Per-method mean MASE/WQL and average rank over a common dataset set.
inline std::vector<MethodSummary> aggregate(const std::vector<BenchmarkRecord> &records,
                                            const AggregateOptions &options = {}) {
	const auto cells = detail::index_records(records, options.exclude);
	std::vector<std::string> methods = options.methods;
	if (methods.empty()) {
		for (const auto &r : records) {
			if (cells.count(r.method) && std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
				methods.push_back(r.method);
			}
		}
	}
	std::set<std::string> datasets;
	for (const auto &m : methods) {
		auto it = cells.find(m);
		if (it == cells.end()) {
			throw Error(ErrorKind::MissingCell, "method '" + m + "' has no records");
		}
		for (const auto &[ds, _] : it->second) {
			datasets.insert(ds);
		}
	}
	for (const auto &m : methods) {
		for (const auto &ds : datasets) {
			if (!cells.at(m).count(ds)) {
				throw Error(ErrorKind::MissingCell, "method '" + m + "' lacks dataset '" + ds + "'");
			}
		}
	}

	std::vector<MethodSummary> out(methods.size());
	for (std::size_t i = 0; i < methods.size(); ++i) {
		out[i].method = methods[i];
		out[i].datasets = datasets.size();
	}
	if (datasets.empty()) {
		return out;
	}
	std::vector<double> mase_scores(methods.size()), wql_scores(methods.size());
	for (const auto &ds : datasets) {
		for (std::size_t i = 0; i < methods.size(); ++i) {
			const BenchmarkRecord *r = cells.at(methods[i]).at(ds);
			mase_scores[i] = r->mase;
			wql_scores[i] = r->wql;
			out[i].mean_mase += r->mase;
			out[i].mean_wql += r->wql;
		}
		const auto rm = detail::fractional_ranks(mase_scores);
		const auto rw = detail::fractional_ranks(wql_scores);
		for (std::size_t i = 0; i < methods.size(); ++i) {
			out[i].average_rank_mase += rm[i];
			out[i].average_rank_wql += rw[i];
		}
	}
	const auto n = static_cast<double>(datasets.size());
	for (auto &s : out) {
		s.mean_mase /= n;
		s.mean_wql /= n;
		s.average_rank_mase /= n;
		s.average_rank_wql /= n;
	}
	return out;
}

struct WinRow {
	std::string dataset_task;
	double baseline_mase = 0.0;
	double candidate_mase = 0.0;
	bool candidate_wins = false;
};

struct WinTable {
	std::string baseline;
	std::string candidate;
	std::vector<WinRow> rows;
	std::size_t wins = 0;

	double win_fraction() const {
		return rows.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(rows.size());
	}
};

/// Per-dataset strict MASE wins of `candidate` over `baseline`.
inline WinTable compare(const std::vector<BenchmarkRecord> &records, const std::string &baseline,
                        const std::string &candidate, const std::vector<std::string> &exclude = {}) {
	const auto cells = detail::index_records(records, exclude);
	auto base = cells.find(baseline);
	auto cand = cells.find(candidate);
	if (base == cells.end() || cand == cells.end()) {
		throw Error(ErrorKind::MissingCell, "both '" + baseline + "' and '" + candidate + "' need records");
	}
	WinTable table;
	table.baseline = baseline;
	table.candidate = candidate;
	for (const auto &[ds, b] : base->second) {
		auto c = cand->second.find(ds);
		if (c == cand->second.end()) {
			throw Error(ErrorKind::MissingCell, "'" + candidate + "' lacks dataset '" + ds + "'");
		}
		const bool win = c->second->mase < b->mase;
		table.rows.push_back({ds, b->mase, c->second->mase, win});
		table.wins += win ? 1 : 0;
	}
	for (const auto &[ds, _] : cand->second) {
		if (!base->second.count(ds)) {
			throw Error(ErrorKind::MissingCell, "'" + baseline + "' lacks dataset '" + ds + "'");
		}
	}
	return table;
}

} // namespace mvroll
