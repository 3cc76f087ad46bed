#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvroll/backends/backend.hpp"

namespace mvroll {

struct KnnConfig {
	/// Neighbour count; defaults to min(20, ceil(sqrt(context rows))).
	std::optional<std::size_t> k;
};

/// Nonparametric quantile regressor. Numeric columns are standardised on the
/// context, categorical columns are compared one-hot, and quantiles are the
/// empirical quantiles of the neighbours' targets.
class KnnBackend final : public RegressorBackend {
public:
	explicit KnnBackend(KnnConfig config = {}) : config_(config) {
		if (config_.k && *config_.k == 0) {
			throw Error(ErrorKind::InvalidArgument, "k must be positive");
		}
	}

	std::string name() const override {
		return "knn";
	}
	std::string version() const override {
		return config_.k ? "knn/k=" + std::to_string(*config_.k) : "knn/k=auto";
	}
	BackendCapabilities capabilities() const override {
		return {true, std::nullopt, true};
	}

	static std::size_t default_k(std::size_t context_rows) {
		const auto root = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(context_rows))));
		return std::min<std::size_t>(20, root);
	}

	BackendPrediction fit_predict(const TabularData &data, const std::vector<double> &levels,
	                              std::uint64_t /*seed*/) override {
		detail::check_tabular(data, capabilities());
		const Eigen::Index n = data.train_x.rows();
		const std::size_t k = std::min<std::size_t>(config_.k.value_or(default_k(static_cast<std::size_t>(n))),
		                                            static_cast<std::size_t>(n));

		const auto numeric = detail::varying_numeric_columns(data);
		std::vector<double> centre, scale;
		for (Eigen::Index c : numeric) {
			const double mu = data.train_x.col(c).mean();
			const double var = (data.train_x.col(c).array() - mu).square().mean();
			centre.push_back(mu);
			scale.push_back(std::sqrt(var));
		}

		BackendPrediction pred;
		const Eigen::Index m = data.test_x.rows();
		pred.mean.resize(static_cast<std::size_t>(m));
		pred.quantiles.assign(levels.size(), std::vector<double>(static_cast<std::size_t>(m)));

		std::vector<double> dist(static_cast<std::size_t>(n));
		std::vector<std::size_t> order(static_cast<std::size_t>(n));
		std::vector<double> neighbours(k);
		for (Eigen::Index q = 0; q < m; ++q) {
			for (Eigen::Index r = 0; r < n; ++r) {
				double sq = 0.0;
				for (std::size_t j = 0; j < numeric.size(); ++j) {
					const Eigen::Index c = numeric[j];
					const double diff = (data.test_x(q, c) - centre[j]) / scale[j] -
					                    (data.train_x(r, c) - centre[j]) / scale[j];
					sq += diff * diff;
				}
				for (int c : data.categorical_cols) {
					if (data.test_x(q, c) != data.train_x(r, c)) {
						sq += 2.0;
					}
				}
				dist[static_cast<std::size_t>(r)] = sq;
			}
			std::iota(order.begin(), order.end(), std::size_t{0});
			std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
			                  [&](std::size_t a, std::size_t b) {
				                  return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
			                  });
			double sum = 0.0;
			for (std::size_t i = 0; i < k; ++i) {
				neighbours[i] = data.train_y(static_cast<Eigen::Index>(order[i]));
				sum += neighbours[i];
			}
			pred.mean[static_cast<std::size_t>(q)] = sum / static_cast<double>(k);
			std::sort(neighbours.begin(), neighbours.end());
			for (std::size_t l = 0; l < levels.size(); ++l) {
				pred.quantiles[l][static_cast<std::size_t>(q)] = detail::empirical_quantile(neighbours, levels[l]);
			}
		}
		return pred;
	}

private:
	KnnConfig config_;
};

} // namespace mvroll
