#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mvroll {

/// Dense matrix used for T x d value blocks.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorKind {
	InvalidArgument,
	EmptySeries,
	NonUniformSpacing,
	NonFiniteValue,
	OffGridTimestamp,
	ContextTooSmall,
	ContextTooLarge,
	LengthMismatch,
	SeriesTooShort,
	ChannelCountMismatch,
	FactorizationFailure,
	BackendUnavailable,
	BackendError,
	MalformedResponse,
	Timeout,
	DegenerateDenominator,
	ZeroDenominator,
	MissingCell,
	SchemaError,
	UnstableSystem,
	HistoryTooShort,
	IoError,
};

inline std::string_view to_string(ErrorKind kind) {
	switch (kind) {
	case ErrorKind::InvalidArgument: return "InvalidArgument";
	case ErrorKind::EmptySeries: return "EmptySeries";
	case ErrorKind::NonUniformSpacing: return "NonUniformSpacing";
	case ErrorKind::NonFiniteValue: return "NonFiniteValue";
	case ErrorKind::OffGridTimestamp: return "OffGridTimestamp";
	case ErrorKind::ContextTooSmall: return "ContextTooSmall";
	case ErrorKind::ContextTooLarge: return "ContextTooLarge";
	case ErrorKind::LengthMismatch: return "LengthMismatch";
	case ErrorKind::SeriesTooShort: return "SeriesTooShort";
	case ErrorKind::ChannelCountMismatch: return "ChannelCountMismatch";
	case ErrorKind::FactorizationFailure: return "FactorizationFailure";
	case ErrorKind::BackendUnavailable: return "BackendUnavailable";
	case ErrorKind::BackendError: return "BackendError";
	case ErrorKind::MalformedResponse: return "MalformedResponse";
	case ErrorKind::Timeout: return "Timeout";
	case ErrorKind::DegenerateDenominator: return "DegenerateDenominator";
	case ErrorKind::ZeroDenominator: return "ZeroDenominator";
	case ErrorKind::MissingCell: return "MissingCell";
	case ErrorKind::SchemaError: return "SchemaError";
	case ErrorKind::UnstableSystem: return "UnstableSystem";
	case ErrorKind::HistoryTooShort: return "HistoryTooShort";
	case ErrorKind::IoError: return "IoError";
	}
	return "Unknown";
}

/// Every failure in the library is reported through this exception; `kind()`
/// is the stable tag written into benchmark records.
class Error : public std::runtime_error {
public:
	Error(ErrorKind kind, const std::string &message)
	    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {
	}

	ErrorKind kind() const noexcept {
		return kind_;
	}

private:
	ErrorKind kind_;
};

/// Raised by validate_series; carries the offending cell.
class NonFiniteValueError : public Error {
public:
	NonFiniteValueError(std::size_t row, std::size_t column)
	    : Error(ErrorKind::NonFiniteValue,
	            "non-finite value at (" + std::to_string(row) + "," + std::to_string(column) + ")"),
	      row_(row), column_(column) {
	}

	std::size_t row() const noexcept {
		return row_;
	}
	std::size_t column() const noexcept {
		return column_;
	}

private:
	std::size_t row_;
	std::size_t column_;
};

/// Seconds since 1970-01-01T00:00:00Z.
struct TimeStamp {
	std::int64_t epoch_seconds = 0;

	friend auto operator<=>(const TimeStamp &, const TimeStamp &) = default;
};

enum class FrequencyUnit { Seconds, Minutes, Hours, Days, Weeks };

struct Frequency {
	FrequencyUnit unit = FrequencyUnit::Hours;
	std::int64_t multiple = 1;

	friend bool operator==(const Frequency &, const Frequency &) = default;

	std::int64_t seconds() const {
		std::int64_t base = 1;
		switch (unit) {
		case FrequencyUnit::Seconds: base = 1; break;
		case FrequencyUnit::Minutes: base = 60; break;
		case FrequencyUnit::Hours: base = 3600; break;
		case FrequencyUnit::Days: base = 86400; break;
		case FrequencyUnit::Weeks: base = 7 * 86400; break;
		}
		return base * multiple;
	}

	/// Pandas-style alias: "10S", "5T", "15T", "H", "D", "W".
	std::string to_string() const {
		std::string suffix;
		switch (unit) {
		case FrequencyUnit::Seconds: suffix = "S"; break;
		case FrequencyUnit::Minutes: suffix = "T"; break;
		case FrequencyUnit::Hours: suffix = "H"; break;
		case FrequencyUnit::Days: suffix = "D"; break;
		case FrequencyUnit::Weeks: suffix = "W"; break;
		}
		return multiple == 1 ? suffix : std::to_string(multiple) + suffix;
	}

	static Frequency parse(std::string_view text) {
		std::size_t pos = 0;
		while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
			++pos;
		}
		std::int64_t multiple = 1;
		if (pos > 0) {
			multiple = std::stoll(std::string(text.substr(0, pos)));
		}
		const std::string_view suffix = text.substr(pos);
		Frequency f;
		f.multiple = multiple;
		if (suffix == "S" || suffix == "s") {
			f.unit = FrequencyUnit::Seconds;
		} else if (suffix == "T" || suffix == "min") {
			f.unit = FrequencyUnit::Minutes;
		} else if (suffix == "H" || suffix == "h") {
			f.unit = FrequencyUnit::Hours;
		} else if (suffix == "D" || suffix == "d") {
			f.unit = FrequencyUnit::Days;
		} else if (suffix == "W" || suffix == "w") {
			f.unit = FrequencyUnit::Weeks;
		} else {
			throw Error(ErrorKind::InvalidArgument, "unknown frequency alias '" + std::string(text) + "'");
		}
		if (f.multiple < 1) {
			throw Error(ErrorKind::InvalidArgument, "frequency multiple must be >= 1");
		}
		return f;
	}
};

struct MultivariateSeries {
	std::vector<TimeStamp> timestamps;
	std::vector<std::string> channels;
	Matrix values; // T x d
	Frequency frequency;

	std::size_t length() const {
		return timestamps.size();
	}
	std::size_t num_channels() const {
		return channels.size();
	}

	/// Last `steps` rows (all channels).
	MultivariateSeries tail(std::size_t steps) const {
		if (steps >= length()) {
			return *this;
		}
		const std::size_t start = length() - steps;
		MultivariateSeries out;
		out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(start), timestamps.end());
		out.channels = channels;
		out.values = values.bottomRows(static_cast<Eigen::Index>(steps));
		out.frequency = frequency;
		return out;
	}

	/// Single channel as a T x 1 series.
	MultivariateSeries channel(std::size_t c) const {
		MultivariateSeries out;
		out.timestamps = timestamps;
		out.channels = {channels.at(c)};
		out.values = values.col(static_cast<Eigen::Index>(c));
		out.frequency = frequency;
		return out;
	}
};

enum class ForecastMode { Joint, Autoregressive, ChannelIndependent };

inline std::string_view to_string(ForecastMode mode) {
	switch (mode) {
	case ForecastMode::Joint: return "joint";
	case ForecastMode::Autoregressive: return "autoregressive";
	case ForecastMode::ChannelIndependent: return "ci";
	}
	return "joint";
}

inline ForecastMode parse_mode(std::string_view text) {
	if (text == "joint") {
		return ForecastMode::Joint;
	}
	if (text == "autoregressive" || text == "ar") {
		return ForecastMode::Autoregressive;
	}
	if (text == "ci" || text == "channel_independent") {
		return ForecastMode::ChannelIndependent;
	}
	throw Error(ErrorKind::InvalidArgument, "unknown mode '" + std::string(text) + "'");
}

inline std::vector<double> default_quantile_levels() {
	return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

inline void check_quantile_levels(const std::vector<double> &levels) {
	if (levels.empty()) {
		throw Error(ErrorKind::InvalidArgument, "at least one quantile level is required");
	}
	for (std::size_t i = 0; i < levels.size(); ++i) {
		if (!(levels[i] > 0.0 && levels[i] < 1.0)) {
			throw Error(ErrorKind::InvalidArgument, "quantile levels must lie in (0,1)");
		}
		if (i > 0 && !(levels[i] > levels[i - 1])) {
			throw Error(ErrorKind::InvalidArgument, "quantile levels must be strictly increasing");
		}
	}
}

struct ForecastTask {
	MultivariateSeries history;
	std::size_t horizon = 1;
	std::vector<double> quantile_levels = default_quantile_levels();
	ForecastMode mode = ForecastMode::Joint;
	/// Maximum number of rolled context rows shown to the backend.
	std::optional<std::size_t> context_limit;

	void validate() const {
		if (horizon < 1) {
			throw Error(ErrorKind::InvalidArgument, "horizon must be >= 1");
		}
		check_quantile_levels(quantile_levels);
		if (context_limit && *context_limit == 0) {
			throw Error(ErrorKind::InvalidArgument, "context_limit must be positive");
		}
	}

	std::vector<TimeStamp> horizon_timestamps() const {
		std::vector<TimeStamp> out;
		out.reserve(horizon);
		const std::int64_t step = history.frequency.seconds();
		const std::int64_t last = history.timestamps.back().epoch_seconds;
		for (std::size_t h = 1; h <= horizon; ++h) {
			out.push_back({last + static_cast<std::int64_t>(h) * step});
		}
		return out;
	}
};

struct QuantileForecast {
	std::vector<std::string> channels;
	std::vector<TimeStamp> horizon_timestamps;
	Matrix mean;                   // H x d
	std::vector<double> levels;    // parallel to `quantiles`
	std::vector<Matrix> quantiles; // one H x d matrix per level

	const Matrix &quantile(double level) const {
		for (std::size_t i = 0; i < levels.size(); ++i) {
			if (levels[i] == level) {
				return quantiles[i];
			}
		}
		throw Error(ErrorKind::InvalidArgument, "quantile level not present in forecast");
	}
};

/// Checks the series invariants and returns it unchanged when they hold.
inline MultivariateSeries validate_series(MultivariateSeries raw) {
	const std::size_t t = raw.timestamps.size();
	const std::size_t d = raw.channels.size();
	if (t == 0 || d == 0) {
		throw Error(ErrorKind::EmptySeries, "series needs at least one timestamp and one channel");
	}
	if (static_cast<std::size_t>(raw.values.rows()) != t || static_cast<std::size_t>(raw.values.cols()) != d) {
		throw Error(ErrorKind::InvalidArgument, "value matrix is " + std::to_string(raw.values.rows()) + "x" +
		                                            std::to_string(raw.values.cols()) + ", expected " +
		                                            std::to_string(t) + "x" + std::to_string(d));
	}
	if (raw.frequency.multiple < 1) {
		throw Error(ErrorKind::InvalidArgument, "frequency multiple must be >= 1");
	}
	const std::int64_t step = raw.frequency.seconds();
	for (std::size_t k = 1; k < t; ++k) {
		const std::int64_t gap = raw.timestamps[k].epoch_seconds - raw.timestamps[k - 1].epoch_seconds;
		if (gap != step) {
			throw Error(ErrorKind::NonUniformSpacing, "gap of " + std::to_string(gap) + " s between rows " +
			                                              std::to_string(k - 1) + " and " + std::to_string(k) +
			                                              ", frequency requires " + std::to_string(step) + " s");
		}
	}
	for (std::size_t r = 0; r < t; ++r) {
		for (std::size_t c = 0; c < d; ++c) {
			if (!std::isfinite(raw.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)))) {
				throw NonFiniteValueError(r, c);
			}
		}
	}
	return raw;
}

/// Evenly spaced grid at `freq` starting at `origin`.
inline std::vector<TimeStamp> uniform_grid(std::size_t length, const Frequency &freq, std::int64_t origin = 0) {
	std::vector<TimeStamp> out(length);
	for (std::size_t k = 0; k < length; ++k) {
		out[k].epoch_seconds = origin + static_cast<std::int64_t>(k) * freq.seconds();
	}
	return out;
}

} // namespace mvroll
