#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "mvroll/core.hpp"

namespace mvroll {

/// Dense view of a rolled table as handed to a regressor: the channel
/// indicator is the last column of both design matrices.
struct TabularData {
	Matrix train_x;
	Vector train_y;
	Matrix test_x;
	std::vector<int> categorical_cols;
	/// Optional, one per column of train_x.
	std::vector<std::string> feature_names;
};

/// One mean per query row and, per quantile level, one value per query row.
struct BackendPrediction {
	std::vector<double> mean;
	std::vector<std::vector<double>> quantiles;
};

struct BackendCapabilities {
	bool supports_quantiles = true;
	std::optional<std::size_t> max_context_rows;
	bool deterministic_given_seed = true;
};

/// In-context regressor: every call carries all of its conditioning data, so
/// implementations keep no learned state between calls.
class RegressorBackend {
public:
	virtual ~RegressorBackend() = default;

	virtual std::string name() const = 0;
	virtual std::string version() const {
		return name();
	}
	virtual BackendCapabilities capabilities() const = 0;
	virtual BackendPrediction fit_predict(const TabularData &data, const std::vector<double> &quantile_levels,
	                                      std::uint64_t seed) = 0;
};

namespace detail {

inline void check_tabular(const TabularData &data, const BackendCapabilities &caps) {
	if (data.train_x.rows() < 1) {
		throw Error(ErrorKind::ContextTooSmall, "backend needs at least one context row");
	}
	if (data.train_y.size() != data.train_x.rows()) {
		throw Error(ErrorKind::LengthMismatch, "context has " + std::to_string(data.train_x.rows()) +
		                                           " rows but " + std::to_string(data.train_y.size()) + " targets");
	}
	if (data.test_x.rows() > 0 && data.test_x.cols() != data.train_x.cols()) {
		throw Error(ErrorKind::LengthMismatch, "feature width differs between context (" +
		                                           std::to_string(data.train_x.cols()) + ") and query (" +
		                                           std::to_string(data.test_x.cols()) + ")");
	}
	if (caps.max_context_rows && static_cast<std::size_t>(data.train_x.rows()) > *caps.max_context_rows) {
		throw Error(ErrorKind::ContextTooLarge, std::to_string(data.train_x.rows()) + " context rows exceed the " +
		                                            std::to_string(*caps.max_context_rows) + " row budget");
	}
	for (int c : data.categorical_cols) {
		if (c < 0 || c >= data.train_x.cols()) {
			throw Error(ErrorKind::InvalidArgument, "categorical column index out of range");
		}
	}
}

inline bool is_categorical(const std::vector<int> &cats, Eigen::Index col) {
	return std::find(cats.begin(), cats.end(), static_cast<int>(col)) != cats.end();
}

/// Numeric columns whose context values are not all identical.
inline std::vector<Eigen::Index> varying_numeric_columns(const TabularData &data) {
	std::vector<Eigen::Index> cols;
	for (Eigen::Index c = 0; c < data.train_x.cols(); ++c) {
		if (is_categorical(data.categorical_cols, c)) {
			continue;
		}
		if (data.train_x.col(c).maxCoeff() != data.train_x.col(c).minCoeff()) {
			cols.push_back(c);
		}
	}
	return cols;
}

/// Sorted distinct levels seen in the context for one categorical column.
inline std::vector<double> category_levels(const Matrix &x, Eigen::Index col) {
	std::vector<double> levels(x.col(col).data(), x.col(col).data() + x.rows());
	std::sort(levels.begin(), levels.end());
	levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
	return levels;
}

inline double standard_normal_quantile(double q) {
	if (q == 0.5) {
		return 0.0;
	}
	static const boost::math::normal_distribution<double> unit;
	return boost::math::quantile(unit, q);
}

/// Linear-interpolation (type 7) empirical quantile of an ascending sample.
inline double empirical_quantile(const std::vector<double> &sorted, double q) {
	if (sorted.size() == 1) {
		return sorted.front();
	}
	const double pos = q * static_cast<double>(sorted.size() - 1);
	const auto lo = static_cast<std::size_t>(std::floor(pos));
	const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
	const double frac = pos - static_cast<double>(lo);
	return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline BackendPrediction gaussian_prediction(const std::vector<double> &mean, const std::vector<double> &stddev,
                                             const std::vector<double> &levels) {
	BackendPrediction pred;
	pred.mean = mean;
	pred.quantiles.reserve(levels.size());
	for (double q : levels) {
		const double z = standard_normal_quantile(q);
		std::vector<double> column(mean.size());
		for (std::size_t i = 0; i < mean.size(); ++i) {
			column[i] = mean[i] + z * stddev[i];
		}
		pred.quantiles.push_back(std::move(column));
	}
	return pred;
}

} // namespace detail

} // namespace mvroll
