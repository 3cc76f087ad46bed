#pragma once

#include <cmath>
#include <map>
#include <utility>

#include "mvroll/backends/backend.hpp"

namespace mvroll {

/// Repeats the most recent observed season of the query's channel. Reads the
/// running index from column 0 and groups rows by the first categorical column.
class SeasonalNaiveBackend final : public RegressorBackend {
public:
	explicit SeasonalNaiveBackend(std::int64_t season) : season_(season) {
		if (season < 1) {
			throw Error(ErrorKind::InvalidArgument, "season must be >= 1");
		}
	}

	std::string name() const override {
		return "seasonal-naive";
	}
	std::string version() const override {
		return "seasonal-naive/m=" + std::to_string(season_);
	}
	BackendCapabilities capabilities() const override {
		return {true, std::nullopt, true};
	}

	BackendPrediction fit_predict(const TabularData &data, const std::vector<double> &levels,
	                              std::uint64_t /*seed*/) override {
		detail::check_tabular(data, capabilities());
		const Eigen::Index group_col = data.categorical_cols.empty() ? -1 : data.categorical_cols.front();
		if (group_col == 0) {
			throw Error(ErrorKind::InvalidArgument, "seasonal-naive needs the running index in column 0");
		}

		// (group, index) -> target; last write wins for duplicate keys.
		std::map<std::pair<double, std::int64_t>, double> observed;
		std::map<double, std::pair<std::int64_t, double>> latest;
		std::map<double, std::int64_t> earliest;
		for (Eigen::Index r = 0; r < data.train_x.rows(); ++r) {
			const double group = group_col >= 0 ? data.train_x(r, group_col) : 0.0;
			const std::int64_t index = std::llround(data.train_x(r, 0));
			observed[{group, index}] = data.train_y(r);
			auto it = latest.find(group);
			if (it == latest.end() || index >= it->second.first) {
				latest[group] = {index, data.train_y(r)};
			}
			auto first = earliest.find(group);
			if (first == earliest.end() || index < first->second) {
				earliest[group] = index;
			}
		}

		BackendPrediction pred;
		const Eigen::Index n = data.test_x.rows();
		pred.mean.resize(static_cast<std::size_t>(n));
		for (Eigen::Index r = 0; r < n; ++r) {
			const double group = group_col >= 0 ? data.test_x(r, group_col) : 0.0;
			const std::int64_t index = std::llround(data.test_x(r, 0));
			auto last = latest.find(group);
			if (last == latest.end()) {
				throw Error(ErrorKind::InvalidArgument, "query channel has no context rows");
			}
			double value = last->second.second;
			const std::int64_t floor_index = earliest.at(group);
			for (std::int64_t probe = index - season_; probe >= floor_index; probe -= season_) {
				auto hit = observed.find({group, probe});
				if (hit != observed.end()) {
					value = hit->second;
					break;
				}
			}
			pred.mean[static_cast<std::size_t>(r)] = value;
		}
		pred.quantiles.assign(levels.size(), pred.mean);
		return pred;
	}

private:
	std::int64_t season_;
};

} // namespace mvroll
