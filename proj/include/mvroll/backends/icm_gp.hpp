#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "mvroll/backends/backend.hpp"

namespace mvroll {

enum class ChannelCorrelation { EstimatedFromContext, Identity };

struct IcmGpConfig {
	double time_lengthscale = 10.0;
	/// Applies to named calendar columns; unnamed columns all use the time scale.
	double calendar_lengthscale = 1.0;
	/// Share of the prior variance carried by the calendar term.
	double calendar_weight = 0.5;
	ChannelCorrelation channel_correlation = ChannelCorrelation::EstimatedFromContext;
	double noise_variance = 0.05;
	double jitter = 1e-6;
	/// Weight of the identity in the shrunk correlation estimate.
	double shrinkage = 0.1;
	double eigenvalue_floor = 1e-6;
	std::size_t max_context_rows = 2048;

	void validate() const {
		if (!(time_lengthscale > 0.0) || !(calendar_lengthscale > 0.0) || !(noise_variance > 0.0) ||
		    !(jitter > 0.0)) {
			throw Error(ErrorKind::InvalidArgument, "GP lengthscales, noise and jitter must be positive");
		}
		if (!(calendar_weight >= 0.0 && calendar_weight <= 1.0)) {
			throw Error(ErrorKind::InvalidArgument, "GP calendar weight must lie in [0, 1]");
		}
		if (jitter > noise_variance) {
			throw Error(ErrorKind::InvalidArgument, "GP jitter must not exceed the noise variance");
		}
	}
};

/// Exact Gaussian process under the intrinsic coregionalisation kernel
///   K((f,a),(f',b)) = k(f,f') * B[a,b] + noise * [same row]
///   k = (1-w) exp(-|t-t'|^2 / 2l_t^2) + w exp(-|c-c'|^2 / 2l_c^2)
/// where t is the running index, c the calendar columns and a,b the channel
/// indicator. Without feature names every numeric column counts as t.
class IcmGpBackend final : public RegressorBackend {
public:
	explicit IcmGpBackend(IcmGpConfig config = {}) : config_(config) {
		config_.validate();
	}

	std::string name() const override {
		return "icm-gp";
	}
	std::string version() const override {
		char buf[128];
		std::snprintf(buf, sizeof buf, "icm-gp/l=%g,lc=%g,w=%g,noise=%g,B=%s", config_.time_lengthscale,
		              config_.calendar_lengthscale, config_.calendar_weight, config_.noise_variance,
		              config_.channel_correlation == ChannelCorrelation::Identity ? "identity" : "estimated");
		return buf;
	}
	BackendCapabilities capabilities() const override {
		return {true, config_.max_context_rows, true};
	}

	const IcmGpConfig &config() const {
		return config_;
	}

	/// Shrunk empirical correlation of the per-channel targets, aligned on rows
	/// whose numeric features coincide (one time step), then floored to PD.
	static Matrix estimate_channel_covariance(const TabularData &data, std::size_t num_channels,
	                                          double shrinkage, double floor) {
		const auto d = static_cast<Eigen::Index>(num_channels);
		Matrix corr = Matrix::Identity(d, d);
		if (num_channels > 1 && !data.categorical_cols.empty()) {
			const int ind = data.categorical_cols.front();
			std::vector<Eigen::Index> numeric;
			for (Eigen::Index c = 0; c < data.train_x.cols(); ++c) {
				if (!detail::is_categorical(data.categorical_cols, c)) {
					numeric.push_back(c);
				}
			}
			std::map<std::vector<double>, std::vector<double>> by_step;
			std::map<std::vector<double>, std::vector<bool>> present;
			std::vector<std::vector<double>> step_order;
			for (Eigen::Index r = 0; r < data.train_x.rows(); ++r) {
				std::vector<double> key;
				for (auto c : numeric) {
					key.push_back(data.train_x(r, c));
				}
				const auto channel = static_cast<std::size_t>(std::llround(data.train_x(r, ind)));
				auto [it, inserted] = by_step.try_emplace(key, num_channels, 0.0);
				if (inserted) {
					present.emplace(key, std::vector<bool>(num_channels, false));
					step_order.push_back(key);
				}
				it->second[channel] = data.train_y(r);
				present[key][channel] = true;
			}
			std::vector<std::vector<double>> rows;
			for (const auto &key : step_order) {
				const auto &mask = present[key];
				if (std::all_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
					rows.push_back(by_step[key]);
				}
			}
			if (rows.size() >= 2) {
				Matrix z(static_cast<Eigen::Index>(rows.size()), d);
				for (std::size_t i = 0; i < rows.size(); ++i) {
					for (Eigen::Index c = 0; c < d; ++c) {
						z(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
					}
				}
				std::vector<bool> usable(num_channels, false);
				for (Eigen::Index c = 0; c < d; ++c) {
					const double mu = z.col(c).mean();
					z.col(c).array() -= mu;
					const double sd = std::sqrt(z.col(c).squaredNorm() / static_cast<double>(z.rows()));
					if (sd > 0.0) {
						z.col(c) /= sd;
						usable[static_cast<std::size_t>(c)] = true;
					}
				}
				const Matrix emp = z.transpose() * z / static_cast<double>(z.rows());
				for (Eigen::Index a = 0; a < d; ++a) {
					for (Eigen::Index b = 0; b < d; ++b) {
						if (a != b && usable[static_cast<std::size_t>(a)] && usable[static_cast<std::size_t>(b)]) {
							corr(a, b) = emp(a, b);
						}
					}
				}
			}
		}
		Matrix shrunk = (1.0 - shrinkage) * corr + shrinkage * Matrix::Identity(d, d);
		Eigen::SelfAdjointEigenSolver<Matrix> eig(shrunk);
		Vector values = eig.eigenvalues().cwiseMax(floor);
		return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
	}

	BackendPrediction fit_predict(const TabularData &data, const std::vector<double> &levels,
	                              std::uint64_t /*seed*/) override {
		detail::check_tabular(data, capabilities());
		const Eigen::Index n = data.train_x.rows();
		const int ind = data.categorical_cols.empty() ? -1 : data.categorical_cols.front();

		auto channel_of = [&](const Matrix &x, Eigen::Index r) -> Eigen::Index {
			return ind >= 0 ? static_cast<Eigen::Index>(std::llround(x(r, ind))) : 0;
		};
		Eigen::Index d = 1;
		for (Eigen::Index r = 0; r < n; ++r) {
			d = std::max(d, channel_of(data.train_x, r) + 1);
		}
		for (Eigen::Index r = 0; r < data.test_x.rows(); ++r) {
			d = std::max(d, channel_of(data.test_x, r) + 1);
		}

		const Matrix coreg =
		    config_.channel_correlation == ChannelCorrelation::Identity
		        ? Matrix(Matrix::Identity(d, d))
		        : estimate_channel_covariance(data, static_cast<std::size_t>(d), config_.shrinkage,
		                                      config_.eigenvalue_floor);

		const bool named = data.feature_names.size() == static_cast<std::size_t>(data.train_x.cols());
		std::vector<Eigen::Index> time_cols, calendar_cols;
		for (Eigen::Index c = 0; c < data.train_x.cols(); ++c) {
			if (detail::is_categorical(data.categorical_cols, c)) {
				continue;
			}
			if (!named || data.feature_names[static_cast<std::size_t>(c)] == "running_index") {
				time_cols.push_back(c);
			} else {
				calendar_cols.push_back(c);
			}
		}
		const double w_cal = calendar_cols.empty() ? 0.0 : time_cols.empty() ? 1.0 : config_.calendar_weight;
		const double inv_t = 1.0 / (2.0 * config_.time_lengthscale * config_.time_lengthscale);
		const double inv_c = 1.0 / (2.0 * config_.calendar_lengthscale * config_.calendar_lengthscale);
		auto sqdist = [](const std::vector<Eigen::Index> &cols, const Matrix &xa, Eigen::Index ra, const Matrix &xb,
		                 Eigen::Index rb) {
			double sq = 0.0;
			for (auto c : cols) {
				const double diff = xa(ra, c) - xb(rb, c);
				sq += diff * diff;
			}
			return sq;
		};
		auto rbf = [&](const Matrix &xa, Eigen::Index ra, const Matrix &xb, Eigen::Index rb) {
			double k = 0.0;
			if (w_cal < 1.0) {
				k += (1.0 - w_cal) * std::exp(-sqdist(time_cols, xa, ra, xb, rb) * inv_t);
			}
			if (w_cal > 0.0) {
				k += w_cal * std::exp(-sqdist(calendar_cols, xa, ra, xb, rb) * inv_c);
			}
			return k;
		};

		Matrix gram(n, n);
		for (Eigen::Index i = 0; i < n; ++i) {
			const Eigen::Index ci = channel_of(data.train_x, i);
			for (Eigen::Index j = 0; j <= i; ++j) {
				const double v = rbf(data.train_x, i, data.train_x, j) * coreg(ci, channel_of(data.train_x, j));
				gram(i, j) = v;
				gram(j, i) = v;
			}
		}

		Eigen::LLT<Matrix> chol;
		double jitter = config_.jitter;
		bool factored = false;
		for (int attempt = 0; attempt < 3 && !factored; ++attempt) {
			Matrix k = gram;
			k.diagonal().array() += config_.noise_variance + jitter;
			chol.compute(k);
			factored = chol.info() == Eigen::Success;
			jitter *= 10.0;
		}
		if (!factored) {
			throw Error(ErrorKind::FactorizationFailure,
			            "kernel matrix not positive definite after jitter escalation to " +
			                std::to_string(jitter / 10.0));
		}
		const Vector alpha = chol.solve(data.train_y);
		const auto lower = chol.matrixL();

		const Eigen::Index m = data.test_x.rows();
		std::vector<double> mean(static_cast<std::size_t>(m));
		std::vector<double> stddev(static_cast<std::size_t>(m));
		Vector kstar(n);
		for (Eigen::Index q = 0; q < m; ++q) {
			const Eigen::Index cq = channel_of(data.test_x, q);
			for (Eigen::Index r = 0; r < n; ++r) {
				kstar(r) = rbf(data.test_x, q, data.train_x, r) * coreg(cq, channel_of(data.train_x, r));
			}
			mean[static_cast<std::size_t>(q)] = kstar.dot(alpha);
			const Vector v = lower.solve(kstar);
			const double var = coreg(cq, cq) + config_.noise_variance - v.squaredNorm();
			stddev[static_cast<std::size_t>(q)] = std::sqrt(std::max(var, 0.0));
		}
		return detail::gaussian_prediction(mean, stddev, levels);
	}

private:
	IcmGpConfig config_;
};

} // namespace mvroll
