#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mvroll/core.hpp"

namespace mvroll {

enum class TransformKind { None, ZScore, Difference };

inline std::string_view to_string(TransformKind kind) {
	switch (kind) {
	case TransformKind::None: return "none";
	case TransformKind::ZScore: return "zscore";
	case TransformKind::Difference: return "diff";
	}
	return "none";
}

inline TransformKind parse_transform_kind(std::string_view text) {
	if (text == "none") {
		return TransformKind::None;
	}
	if (text == "zscore") {
		return TransformKind::ZScore;
	}
	if (text == "diff" || text == "difference") {
		return TransformKind::Difference;
	}
	throw Error(ErrorKind::InvalidArgument, "unknown normalization '" + std::string(text) + "'");
}

/// What is needed to map predictions back to each channel's original scale.
struct ChannelTransformState {
	TransformKind kind = TransformKind::None;
	std::vector<double> mu;
	std::vector<double> sigma;
	std::vector<double> anchor; // only for Difference

	std::size_t num_channels() const {
		return kind == TransformKind::Difference ? anchor.size() : mu.size();
	}
};

namespace detail {

// Population mean/sigma of one column; sigma clamped to 1 for degenerate channels.
inline std::pair<double, double> channel_moments(const Matrix &values, Eigen::Index c) {
	const Eigen::Index t = values.rows();
	double sum = 0.0;
	for (Eigen::Index r = 0; r < t; ++r) {
		sum += values(r, c);
	}
	const double mu = sum / static_cast<double>(t);
	double ss = 0.0;
	for (Eigen::Index r = 0; r < t; ++r) {
		const double e = values(r, c) - mu;
		ss += e * e;
	}
	double sigma = std::sqrt(ss / static_cast<double>(t));
	if (t < 2 || !(sigma > 0.0)) {
		sigma = 1.0;
	}
	return {mu, sigma};
}

} // namespace detail

/// Fits per-channel statistics on `series` and returns the transformed series.
/// Differencing drops the first timestamp.
inline std::pair<MultivariateSeries, ChannelTransformState> fit_transform(const MultivariateSeries &series,
                                                                          TransformKind kind) {
	ChannelTransformState state;
	state.kind = kind;
	const Eigen::Index t = series.values.rows();
	const Eigen::Index d = series.values.cols();
	switch (kind) {
	case TransformKind::None:
		state.mu.assign(static_cast<std::size_t>(d), 0.0);
		state.sigma.assign(static_cast<std::size_t>(d), 1.0);
		return {series, state};
	case TransformKind::ZScore: {
		MultivariateSeries out = series;
		for (Eigen::Index c = 0; c < d; ++c) {
			const auto [mu, sigma] = detail::channel_moments(series.values, c);
			state.mu.push_back(mu);
			state.sigma.push_back(sigma);
			for (Eigen::Index r = 0; r < t; ++r) {
				out.values(r, c) = (series.values(r, c) - mu) / sigma;
			}
		}
		return {std::move(out), state};
	}
	case TransformKind::Difference: {
		if (t < 2) {
			throw Error(ErrorKind::SeriesTooShort, "differencing needs at least 2 time steps, got " +
			                                           std::to_string(t));
		}
		MultivariateSeries out;
		out.timestamps.assign(series.timestamps.begin() + 1, series.timestamps.end());
		out.channels = series.channels;
		out.frequency = series.frequency;
		out.values = series.values.bottomRows(t - 1) - series.values.topRows(t - 1);
		for (Eigen::Index c = 0; c < d; ++c) {
			state.anchor.push_back(series.values(t - 1, c));
		}
		return {std::move(out), state};
	}
	}
	return {series, state};
}

/// Maps a forecast made in transformed space back to the original scale.
inline QuantileForecast inverse(const QuantileForecast &forecast, const ChannelTransformState &state) {
	if (state.kind == TransformKind::None) {
		return forecast;
	}
	const Eigen::Index h = forecast.mean.rows();
	const Eigen::Index d = forecast.mean.cols();
	if (static_cast<std::size_t>(d) != state.num_channels()) {
		throw Error(ErrorKind::ChannelCountMismatch, "forecast has " + std::to_string(d) +
		                                                 " channels, transform state has " +
		                                                 std::to_string(state.num_channels()));
	}
	QuantileForecast out = forecast;
	auto apply = [&](Matrix &m) {
		for (Eigen::Index c = 0; c < d; ++c) {
			const auto ci = static_cast<std::size_t>(c);
			if (state.kind == TransformKind::ZScore) {
				for (Eigen::Index r = 0; r < h; ++r) {
					m(r, c) = m(r, c) * state.sigma[ci] + state.mu[ci];
				}
			} else {
				double level = state.anchor[ci];
				for (Eigen::Index r = 0; r < h; ++r) {
					level += m(r, c);
					m(r, c) = level;
				}
			}
		}
	};
	apply(out.mean);
	for (auto &q : out.quantiles) {
		apply(q);
	}
	return out;
}

} // namespace mvroll
