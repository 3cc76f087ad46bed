#pragma once

#include <cmath>
#include <cstdio>

#include "mvroll/backends/backend.hpp"

namespace mvroll {

struct RidgeConfig {
	double lambda = 1e-3;
};

/// Linear regression with an unpenalised intercept. Categorical columns are
/// treatment-coded against their smallest context level; constant numeric
/// columns are dropped. Quantiles are Gaussian around the mean with the
/// residual standard deviation.
class RidgeBackend final : public RegressorBackend {
public:
	explicit RidgeBackend(RidgeConfig config = {}) : config_(config) {
		if (!(config_.lambda >= 0.0)) {
			throw Error(ErrorKind::InvalidArgument, "ridge lambda must be >= 0");
		}
	}

	std::string name() const override {
		return "ridge";
	}
	std::string version() const override {
		char buf[64];
		std::snprintf(buf, sizeof buf, "ridge/lambda=%g", config_.lambda);
		return buf;
	}
	BackendCapabilities capabilities() const override {
		return {true, std::nullopt, true};
	}

	BackendPrediction fit_predict(const TabularData &data, const std::vector<double> &levels,
	                              std::uint64_t /*seed*/) override {
		detail::check_tabular(data, capabilities());
		const Eigen::Index n = data.train_x.rows();

		const auto numeric = detail::varying_numeric_columns(data);
		struct Dummy {
			Eigen::Index column;
			double level;
		};
		std::vector<Dummy> dummies;
		for (int c : data.categorical_cols) {
			const auto seen = detail::category_levels(data.train_x, c);
			for (std::size_t i = 1; i < seen.size(); ++i) {
				dummies.push_back({c, seen[i]});
			}
		}
		const auto p = static_cast<Eigen::Index>(numeric.size() + dummies.size());

		auto design_row = [&](const Matrix &x, Eigen::Index r, Eigen::Ref<Vector> out) {
			Eigen::Index j = 0;
			for (Eigen::Index c : numeric) {
				out(j++) = x(r, c);
			}
			for (const auto &dm : dummies) {
				out(j++) = x(r, dm.column) == dm.level ? 1.0 : 0.0;
			}
		};

		Matrix design(n, p);
		for (Eigen::Index r = 0; r < n; ++r) {
			Vector row(p);
			design_row(data.train_x, r, row);
			design.row(r) = row.transpose();
		}
		const Vector col_mean = p > 0 ? Vector(design.colwise().mean().transpose()) : Vector(0);
		const double y_mean = data.train_y.mean();

		Vector beta = Vector::Zero(p);
		if (p > 0) {
			Matrix augmented(n + (config_.lambda > 0.0 ? p : 0), p);
			Vector rhs = Vector::Zero(augmented.rows());
			augmented.topRows(n) = design.rowwise() - col_mean.transpose();
			rhs.head(n) = data.train_y.array() - y_mean;
			if (config_.lambda > 0.0) {
				augmented.bottomRows(p) = std::sqrt(config_.lambda) * Matrix::Identity(p, p);
			}
			beta = augmented.completeOrthogonalDecomposition().solve(rhs);
		}
		const double intercept = y_mean - (p > 0 ? col_mean.dot(beta) : 0.0);

		double rss = 0.0;
		Vector row(p);
		for (Eigen::Index r = 0; r < n; ++r) {
			design_row(data.train_x, r, row);
			const double e = data.train_y(r) - (intercept + row.dot(beta));
			rss += e * e;
		}
		const double dof = std::max<double>(1.0, static_cast<double>(n - p - 1));
		const double sigma = std::sqrt(rss / dof);

		const Eigen::Index m = data.test_x.rows();
		std::vector<double> mean(static_cast<std::size_t>(m));
		std::vector<double> stddev(static_cast<std::size_t>(m), sigma);
		for (Eigen::Index q = 0; q < m; ++q) {
			design_row(data.test_x, q, row);
			mean[static_cast<std::size_t>(q)] = intercept + row.dot(beta);
		}
		return detail::gaussian_prediction(mean, stddev, levels);
	}

private:
	RidgeConfig config_;
};

} // namespace mvroll
