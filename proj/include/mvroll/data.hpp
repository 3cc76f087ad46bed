#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvroll/core.hpp"

namespace mvroll {

/// Portable Gaussian stream: 53-bit uniforms from mt19937_64 fed through
/// Box-Muller. Both halves of each pair are used, cosine half first.
class NormalStream {
public:
	static constexpr const char *algorithm = "mt19937_64/box-muller";

	explicit NormalStream(std::uint64_t seed) : engine_(seed) {
	}

	double uniform() {
		return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
	}

	double operator()() {
		if (cached_) {
			cached_ = false;
			return spare_;
		}
		double u1 = uniform();
		while (u1 <= 0.0) {
			u1 = uniform();
		}
		const double u2 = uniform();
		const double radius = std::sqrt(-2.0 * std::log(u1));
		const double angle = 2.0 * std::numbers::pi * u2;
		spare_ = radius * std::sin(angle);
		cached_ = true;
		return radius * std::cos(angle);
	}

private:
	std::mt19937_64 engine_;
	double spare_ = 0.0;
	bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Timestamps

inline TimeStamp parse_iso8601(const std::string &text) {
	int year = 0;
	unsigned month = 0, day = 0, hour = 0, minute = 0, second = 0;
	char sep = 'T';
	const int fields = std::sscanf(text.c_str(), "%d-%u-%u%c%u:%u:%u", &year, &month, &day, &sep, &hour, &minute,
	                               &second);
	if (fields != 3 && fields != 7) {
		throw Error(ErrorKind::SchemaError, "unparseable timestamp '" + text + "'");
	}
	if (fields == 7 && sep != 'T' && sep != ' ') {
		throw Error(ErrorKind::SchemaError, "unparseable timestamp '" + text + "'");
	}
	using namespace std::chrono;
	const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
	if (!ymd.ok() || hour > 23 || minute > 59 || second > 59) {
		throw Error(ErrorKind::SchemaError, "invalid calendar timestamp '" + text + "'");
	}
	const std::int64_t days_since_epoch = sys_days{ymd}.time_since_epoch().count();
	return {days_since_epoch * 86400 + hour * 3600 + minute * 60 + second};
}

inline std::string format_iso8601(TimeStamp ts) {
	using namespace std::chrono;
	const std::int64_t secs = ts.epoch_seconds;
	const std::int64_t day_index = secs >= 0 ? secs / 86400 : -((-secs + 86399) / 86400);
	const std::int64_t rem = secs - day_index * 86400;
	const year_month_day ymd{sys_days{days{day_index}}};
	char buf[32];
	std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
	              static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
	              static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
	return buf;
}

// ---------------------------------------------------------------------------
// On-disk datasets

struct DatasetManifest {
	std::string name;
	Frequency frequency;
	std::vector<std::string> channels;
	std::map<std::string, std::size_t> horizon_by_term;
	std::string csv_path;

	std::size_t horizon(const std::string &term) const {
		auto it = horizon_by_term.find(term);
		if (it == horizon_by_term.end()) {
			throw Error(ErrorKind::InvalidArgument, "dataset '" + name + "' has no '" + term + "' horizon");
		}
		return it->second;
	}
};

inline nlohmann::json manifest_to_json(const DatasetManifest &m) {
	nlohmann::json horizons = nlohmann::json::object();
	for (const auto &[term, h] : m.horizon_by_term) {
		horizons[term] = h;
	}
	return {{"name", m.name},
	        {"frequency", m.frequency.to_string()},
	        {"channels", m.channels},
	        {"horizon_by_term", horizons},
	        {"csv_path", m.csv_path}};
}

/// Relative csv_path values are resolved against `base_dir`.
inline DatasetManifest manifest_from_json(const nlohmann::json &j, const std::filesystem::path &base_dir = {}) {
	try {
		DatasetManifest m;
		m.name = j.at("name").get<std::string>();
		m.frequency = Frequency::parse(j.at("frequency").get<std::string>());
		m.channels = j.at("channels").get<std::vector<std::string>>();
		for (const auto &[term, h] : j.at("horizon_by_term").items()) {
			const auto value = h.get<std::int64_t>();
			if (value < 1) {
				throw Error(ErrorKind::SchemaError, "horizon for '" + term + "' must be positive");
			}
			m.horizon_by_term[term] = static_cast<std::size_t>(value);
		}
		std::filesystem::path csv = j.at("csv_path").get<std::string>();
		if (csv.is_relative() && !base_dir.empty()) {
			csv = base_dir / csv;
		}
		m.csv_path = csv.string();
		if (m.channels.empty()) {
			throw Error(ErrorKind::SchemaError, "manifest lists no channels");
		}
		return m;
	} catch (const nlohmann::json::exception &e) {
		throw Error(ErrorKind::SchemaError, std::string("malformed manifest: ") + e.what());
	}
}

inline DatasetManifest load_manifest(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw Error(ErrorKind::IoError, "cannot open manifest " + path.string());
	}
	nlohmann::json j;
	try {
		in >> j;
	} catch (const nlohmann::json::exception &e) {
		throw Error(ErrorKind::SchemaError, "manifest " + path.string() + " is not valid JSON: " + e.what());
	}
	return manifest_from_json(j, path.parent_path());
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string &line) {
	std::vector<std::string> out;
	std::string cell;
	std::istringstream stream(line);
	while (std::getline(stream, cell, ',')) {
		while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) {
			cell.pop_back();
		}
		while (!cell.empty() && cell.front() == ' ') {
			cell.erase(cell.begin());
		}
		out.push_back(cell);
	}
	if (!line.empty() && line.back() == ',') {
		out.emplace_back();
	}
	return out;
}

inline double parse_cell(const std::string &cell) {
	if (cell.empty()) {
		return std::numeric_limits<double>::quiet_NaN();
	}
	double value = 0.0;
	const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
	if (ec != std::errc() || ptr != cell.data() + cell.size()) {
		if (cell == "nan" || cell == "NaN" || cell == "inf" || cell == "-inf") {
			return std::numeric_limits<double>::quiet_NaN();
		}
		throw Error(ErrorKind::SchemaError, "unparseable number '" + cell + "'");
	}
	return value;
}

} // namespace detail

/// Reads a wide CSV (timestamp, then one column per channel) into a validated
/// series with channels in manifest order.
inline MultivariateSeries load_dataset(const DatasetManifest &manifest) {
	std::ifstream in(manifest.csv_path);
	if (!in) {
		throw Error(ErrorKind::IoError, "cannot open " + manifest.csv_path);
	}
	std::string line;
	if (!std::getline(in, line)) {
		throw Error(ErrorKind::SchemaError, manifest.csv_path + " is empty");
	}
	const auto header = detail::split_csv_line(line);
	if (header.empty() || header.front() != "timestamp") {
		throw Error(ErrorKind::SchemaError, "first column of " + manifest.csv_path + " must be 'timestamp'");
	}
	const std::vector<std::string> columns(header.begin() + 1, header.end());
	std::vector<std::string> missing, extra;
	for (const auto &c : manifest.channels) {
		if (std::find(columns.begin(), columns.end(), c) == columns.end()) {
			missing.push_back(c);
		}
	}
	for (const auto &c : columns) {
		if (std::find(manifest.channels.begin(), manifest.channels.end(), c) == manifest.channels.end()) {
			extra.push_back(c);
		}
	}
	if (!missing.empty() || !extra.empty() || columns.size() != manifest.channels.size()) {
		auto join = [](const std::vector<std::string> &v) {
			std::string s;
			for (const auto &x : v) {
				s += (s.empty() ? "" : ",") + x;
			}
			return s.empty() ? std::string("none") : s;
		};
		throw Error(ErrorKind::SchemaError, "channel mismatch in " + manifest.csv_path +
		                                        ": missing from CSV [" + join(missing) + "], not in manifest [" +
		                                        join(extra) + "]");
	}
	std::vector<std::size_t> position(manifest.channels.size());
	for (std::size_t i = 0; i < manifest.channels.size(); ++i) {
		position[i] = static_cast<std::size_t>(
		    std::find(columns.begin(), columns.end(), manifest.channels[i]) - columns.begin());
	}

	std::vector<std::pair<TimeStamp, std::vector<double>>> rows;
	std::size_t line_no = 1;
	while (std::getline(in, line)) {
		++line_no;
		if (line.empty() || line == "\r") {
			continue;
		}
		const auto cells = detail::split_csv_line(line);
		if (cells.size() != header.size()) {
			throw Error(ErrorKind::SchemaError, manifest.csv_path + ":" + std::to_string(line_no) + " has " +
			                                        std::to_string(cells.size()) + " cells, header has " +
			                                        std::to_string(header.size()));
		}
		std::vector<double> values(manifest.channels.size());
		for (std::size_t i = 0; i < values.size(); ++i) {
			values[i] = detail::parse_cell(cells[1 + position[i]]);
		}
		rows.emplace_back(parse_iso8601(cells[0]), std::move(values));
	}
	std::stable_sort(rows.begin(), rows.end(), [](const auto &a, const auto &b) { return a.first < b.first; });

	MultivariateSeries series;
	series.channels = manifest.channels;
	series.frequency = manifest.frequency;
	series.values = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(series.channels.size()));
	for (std::size_t r = 0; r < rows.size(); ++r) {
		series.timestamps.push_back(rows[r].first);
		for (std::size_t c = 0; c < series.channels.size(); ++c) {
			series.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r].second[c];
		}
	}
	return validate_series(std::move(series));
}

inline void write_dataset_csv(const MultivariateSeries &series, const std::filesystem::path &path) {
	std::ofstream out(path);
	if (!out) {
		throw Error(ErrorKind::IoError, "cannot write " + path.string());
	}
	out << "timestamp";
	for (const auto &c : series.channels) {
		out << ',' << c;
	}
	out << '\n';
	char buf[32];
	for (std::size_t r = 0; r < series.length(); ++r) {
		out << format_iso8601(series.timestamps[r]);
		for (std::size_t c = 0; c < series.num_channels(); ++c) {
			std::snprintf(buf, sizeof buf, "%.17g",
			              series.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
			out << ',' << buf;
		}
		out << '\n';
	}
}

// ---------------------------------------------------------------------------
// Synthetic generators. All emit an hourly grid starting at epoch 0.

struct LorenzConfig {
	double sigma = 10.0;
	double rho = 28.0;
	double beta = 8.0 / 3.0;
	double dt = 0.01;
	std::array<double, 3> initial{1.0, 1.0, 1.0};
	std::size_t steps = 1000;
};

/// Classic RK4 integration; sample 0 is the initial state. A non-zero seed
/// adds 1e-6-scale Gaussian noise to the initial condition.
inline MultivariateSeries gen_lorenz(const LorenzConfig &config, std::uint64_t seed) {
	if (!(config.dt > 0.0) || config.steps < 1) {
		throw Error(ErrorKind::InvalidArgument, "Lorenz needs dt > 0 and steps >= 1");
	}
	using State = std::array<double, 3>;
	State s = config.initial;
	if (seed != 0) {
		NormalStream noise(seed);
		for (double &v : s) {
			v += 1e-6 * noise();
		}
	}
	auto deriv = [&](const State &v) -> State {
		return {config.sigma * (v[1] - v[0]), v[0] * (config.rho - v[2]) - v[1], v[0] * v[1] - config.beta * v[2]};
	};
	auto axpy = [](const State &v, double a, const State &k) -> State {
		return {v[0] + a * k[0], v[1] + a * k[1], v[2] + a * k[2]};
	};

	MultivariateSeries series;
	series.channels = {"x", "y", "z"};
	series.frequency = {FrequencyUnit::Hours, 1};
	series.timestamps = uniform_grid(config.steps, series.frequency);
	series.values = Matrix(static_cast<Eigen::Index>(config.steps), 3);
	const double h = config.dt;
	for (std::size_t k = 0; k < config.steps; ++k) {
		for (int c = 0; c < 3; ++c) {
			series.values(static_cast<Eigen::Index>(k), c) = s[static_cast<std::size_t>(c)];
		}
		const State k1 = deriv(s);
		const State k2 = deriv(axpy(s, h / 2.0, k1));
		const State k3 = deriv(axpy(s, h / 2.0, k2));
		const State k4 = deriv(axpy(s, h, k3));
		for (std::size_t i = 0; i < 3; ++i) {
			s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
		}
	}
	return validate_series(std::move(series));
}

/// v_t = A v_{t-1} + eps_t with v_0 = 0; rows are v_1 .. v_T.
inline MultivariateSeries gen_var1(const Matrix &coupling, double noise_scale, std::size_t length,
                                   std::uint64_t seed) {
	if (coupling.rows() != coupling.cols() || coupling.rows() < 1) {
		throw Error(ErrorKind::InvalidArgument, "coupling matrix must be square and non-empty");
	}
	if (length < 1 || noise_scale < 0.0) {
		throw Error(ErrorKind::InvalidArgument, "VAR(1) needs T >= 1 and noise_scale >= 0");
	}
	const double radius = Eigen::EigenSolver<Matrix>(coupling, false).eigenvalues().cwiseAbs().maxCoeff();
	if (!(radius < 1.0)) {
		throw Error(ErrorKind::UnstableSystem, "spectral radius " + std::to_string(radius) + " is not below 1");
	}
	const Eigen::Index d = coupling.rows();
	NormalStream noise(seed);
	MultivariateSeries series;
	for (Eigen::Index c = 0; c < d; ++c) {
		series.channels.push_back("c" + std::to_string(c));
	}
	series.frequency = {FrequencyUnit::Hours, 1};
	series.timestamps = uniform_grid(length, series.frequency);
	series.values = Matrix(static_cast<Eigen::Index>(length), d);
	Vector state = Vector::Zero(d);
	Vector eps(d);
	for (std::size_t t = 0; t < length; ++t) {
		for (Eigen::Index c = 0; c < d; ++c) {
			eps(c) = noise_scale * noise();
		}
		Vector next = eps;
		for (Eigen::Index i = 0; i < d; ++i) {
			for (Eigen::Index j = 0; j < d; ++j) {
				next(i) += coupling(i, j) * state(j);
			}
		}
		state = next;
		series.values.row(static_cast<Eigen::Index>(t)) = state.transpose();
	}
	return validate_series(std::move(series));
}

/// Two noisy views of one latent s_t = sin(2 pi t / 24) + 0.5 sin(2 pi t / 168):
/// channel x with small noise, channel y with large noise.
inline MultivariateSeries gen_shared_latent(std::size_t length, double clean_noise, double noisy_noise,
                                            std::uint64_t seed) {
	if (clean_noise < 0.0 || noisy_noise < 0.0 || clean_noise > noisy_noise) {
		throw Error(ErrorKind::InvalidArgument, "need 0 <= clean_noise <= noisy_noise");
	}
	if (length < 1) {
		throw Error(ErrorKind::InvalidArgument, "shared-latent series needs T >= 1");
	}
	NormalStream noise(seed);
	MultivariateSeries series;
	series.channels = {"x", "y"};
	series.frequency = {FrequencyUnit::Hours, 1};
	series.timestamps = uniform_grid(length, series.frequency);
	series.values = Matrix(static_cast<Eigen::Index>(length), 2);
	constexpr double two_pi = 2.0 * std::numbers::pi;
	for (std::size_t t = 0; t < length; ++t) {
		const double tt = static_cast<double>(t);
		const double latent = std::sin(two_pi * tt / 24.0) + 0.5 * std::sin(two_pi * tt / 168.0);
		const double ex = noise();
		const double ey = noise();
		series.values(static_cast<Eigen::Index>(t), 0) = latent + clean_noise * ex;
		series.values(static_cast<Eigen::Index>(t), 1) = latent + noisy_noise * ey;
	}
	return validate_series(std::move(series));
}

} // namespace mvroll
