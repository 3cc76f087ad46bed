#pragma once

#include <memory>
#include <string>

#include "mvroll/backends/backend.hpp"
#include "mvroll/backends/external.hpp"
#include "mvroll/backends/icm_gp.hpp"
#include "mvroll/backends/knn.hpp"
#include "mvroll/backends/ridge.hpp"
#include "mvroll/backends/seasonal_naive.hpp"

namespace mvroll {

/// Builds a backend from its command-line spelling:
///   seasonal-naive[:m]  knn[:k]  ridge[:lambda]  icm-gp[:identity]  extern:<cmd-or-host:port>
/// `default_season` is used when seasonal-naive carries no explicit period.
inline std::unique_ptr<RegressorBackend> make_backend(const std::string &spec, std::int64_t default_season = 1) {
	const auto colon = spec.find(':');
	const std::string kind = spec.substr(0, colon);
	const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
	try {
		if (kind == "seasonal-naive") {
			return std::make_unique<SeasonalNaiveBackend>(arg.empty() ? default_season : std::stoll(arg));
		}
		if (kind == "knn") {
			KnnConfig config;
			if (!arg.empty()) {
				config.k = static_cast<std::size_t>(std::stoull(arg));
			}
			return std::make_unique<KnnBackend>(config);
		}
		if (kind == "ridge") {
			RidgeConfig config;
			if (!arg.empty()) {
				config.lambda = std::stod(arg);
			}
			return std::make_unique<RidgeBackend>(config);
		}
		if (kind == "icm-gp") {
			IcmGpConfig config;
			if (arg == "identity") {
				config.channel_correlation = ChannelCorrelation::Identity;
			} else if (!arg.empty() && arg != "estimated") {
				throw Error(ErrorKind::InvalidArgument, "icm-gp option must be 'identity' or 'estimated'");
			}
			return std::make_unique<IcmGpBackend>(config);
		}
		if (kind == "extern") {
			return std::make_unique<ExternalBackend>(ExternalConfig{arg, std::chrono::milliseconds(300000)});
		}
	} catch (const std::logic_error &) {
		throw Error(ErrorKind::InvalidArgument, "bad backend argument in '" + spec + "'");
	}
	throw Error(ErrorKind::InvalidArgument, "unknown backend '" + spec + "'");
}

} // namespace mvroll
