#pragma once

#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mvroll/core.hpp"

namespace mvroll {

enum class CalendarComponent { SecondOfMinute, MinuteOfHour, HourOfDay, DayOfWeek, DayOfYear, WeekOfYear };

enum class FeatureEncoding { Raw, SineCosine };

inline std::string_view to_string(CalendarComponent c) {
	switch (c) {
	case CalendarComponent::SecondOfMinute: return "second_of_minute";
	case CalendarComponent::MinuteOfHour: return "minute_of_hour";
	case CalendarComponent::HourOfDay: return "hour_of_day";
	case CalendarComponent::DayOfWeek: return "day_of_week";
	case CalendarComponent::DayOfYear: return "day_of_year";
	case CalendarComponent::WeekOfYear: return "week_of_year";
	}
	return "";
}

inline CalendarComponent parse_calendar_component(std::string_view text) {
	for (auto c : {CalendarComponent::SecondOfMinute, CalendarComponent::MinuteOfHour, CalendarComponent::HourOfDay,
	               CalendarComponent::DayOfWeek, CalendarComponent::DayOfYear, CalendarComponent::WeekOfYear}) {
		if (to_string(c) == text) {
			return c;
		}
	}
	throw Error(ErrorKind::InvalidArgument, "unknown calendar component '" + std::string(text) + "'");
}

/// Period of each component in its own units. Proleptic Gregorian, UTC.
inline double calendar_period(CalendarComponent c) {
	switch (c) {
	case CalendarComponent::SecondOfMinute: return 60.0;
	case CalendarComponent::MinuteOfHour: return 60.0;
	case CalendarComponent::HourOfDay: return 24.0;
	case CalendarComponent::DayOfWeek: return 7.0;
	case CalendarComponent::DayOfYear: return 366.0;
	case CalendarComponent::WeekOfYear: return 53.0;
	}
	return 1.0;
}

/// Integer value of a calendar component at `ts`. Day of week is Monday = 0,
/// day of year is 0-based, week of year is the ISO week minus one.
inline std::int64_t calendar_value(TimeStamp ts, CalendarComponent c) {
	using namespace std::chrono;
	const std::int64_t secs = ts.epoch_seconds;
	const std::int64_t day_index = secs >= 0 ? secs / 86400 : -((-secs + 86399) / 86400);
	const std::int64_t second_of_day = secs - day_index * 86400;
	const sys_days day{days{day_index}};
	switch (c) {
	case CalendarComponent::SecondOfMinute: return second_of_day % 60;
	case CalendarComponent::MinuteOfHour: return (second_of_day / 60) % 60;
	case CalendarComponent::HourOfDay: return second_of_day / 3600;
	case CalendarComponent::DayOfWeek: return static_cast<std::int64_t>(weekday{day}.iso_encoding()) - 1;
	case CalendarComponent::DayOfYear: {
		const year_month_day ymd{day};
		return (day - sys_days{ymd.year() / January / 1}).count();
	}
	case CalendarComponent::WeekOfYear: {
		const auto iso = static_cast<int>(weekday{day}.iso_encoding());
		const sys_days thursday = day + days{4 - iso};
		const year_month_day ymd{thursday};
		return (thursday - sys_days{ymd.year() / January / 1}).count() / 7;
	}
	}
	return 0;
}

struct FeatureSpec {
	bool use_running_index = true;
	std::vector<CalendarComponent> calendar_components;
	FeatureEncoding encoding = FeatureEncoding::SineCosine;

	friend bool operator==(const FeatureSpec &, const FeatureSpec &) = default;

	std::size_t width() const {
		const std::size_t per = encoding == FeatureEncoding::SineCosine ? 2 : 1;
		return (use_running_index ? 1 : 0) + per * calendar_components.size();
	}

	std::vector<std::string> column_names() const {
		std::vector<std::string> names;
		if (use_running_index) {
			names.emplace_back("running_index");
		}
		for (auto c : calendar_components) {
			const std::string base(to_string(c));
			if (encoding == FeatureEncoding::SineCosine) {
				names.push_back(base + "_sin");
				names.push_back(base + "_cos");
			} else {
				names.push_back(base);
			}
		}
		return names;
	}

	void validate() const {
		if (!use_running_index && calendar_components.empty()) {
			throw Error(ErrorKind::InvalidArgument, "feature spec must contain at least one column");
		}
	}
};

struct FeatureVector {
	std::vector<double> values;
	std::vector<std::string> column_names;
};

inline FeatureSpec default_spec_for(const Frequency &freq) {
	FeatureSpec spec;
	spec.use_running_index = true;
	spec.encoding = FeatureEncoding::SineCosine;
	const std::int64_t secs = freq.seconds();
	if (secs < 3600) {
		spec.calendar_components = {CalendarComponent::MinuteOfHour, CalendarComponent::HourOfDay,
		                            CalendarComponent::DayOfWeek};
	} else if (secs < 86400) {
		spec.calendar_components = {CalendarComponent::HourOfDay, CalendarComponent::DayOfWeek,
		                            CalendarComponent::DayOfYear};
	} else if (secs < 7 * 86400) {
		spec.calendar_components = {CalendarComponent::DayOfWeek, CalendarComponent::DayOfYear};
	} else {
		spec.calendar_components = {CalendarComponent::WeekOfYear};
	}
	return spec;
}

/// Appends the feature values of `ts` to `out` (no allocation of names).
inline void featurize_into(TimeStamp ts, TimeStamp origin, const Frequency &freq, const FeatureSpec &spec,
                           std::vector<double> &out) {
	const std::int64_t step = freq.seconds();
	const std::int64_t offset = ts.epoch_seconds - origin.epoch_seconds;
	if (offset % step != 0) {
		throw Error(ErrorKind::OffGridTimestamp, "timestamp " + std::to_string(ts.epoch_seconds) +
		                                             " is not on the grid of origin " +
		                                             std::to_string(origin.epoch_seconds) + " with step " +
		                                             std::to_string(step) + " s");
	}
	if (spec.use_running_index) {
		out.push_back(static_cast<double>(offset / step));
	}
	for (auto c : spec.calendar_components) {
		const double value = static_cast<double>(calendar_value(ts, c));
		if (spec.encoding == FeatureEncoding::SineCosine) {
			const double angle = 2.0 * std::numbers::pi * value / calendar_period(c);
			out.push_back(std::sin(angle));
			out.push_back(std::cos(angle));
		} else {
			out.push_back(value);
		}
	}
}

inline FeatureVector featurize(TimeStamp ts, TimeStamp origin, const Frequency &freq, const FeatureSpec &spec) {
	FeatureVector fv;
	fv.values.reserve(spec.width());
	featurize_into(ts, origin, freq, spec, fv.values);
	fv.column_names = spec.column_names();
	return fv;
}

} // namespace mvroll
