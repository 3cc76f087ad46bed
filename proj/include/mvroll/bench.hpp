#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mvroll/backends/factory.hpp"
#include "mvroll/data.hpp"
#include "mvroll/featurize.hpp"
#include "mvroll/metrics.hpp"
#include "mvroll/rollout.hpp"
#include "mvroll/transform.hpp"

namespace mvroll {

inline constexpr std::size_t kDefaultContextLimit = 4096;

/// One column of the method matrix.
struct MethodSpec {
	std::string label;
	ForecastMode mode = ForecastMode::Joint;
	TransformKind norm = TransformKind::ZScore;
	std::string backend = "icm-gp";
	/// Frequency-dependent default when unset.
	std::optional<FeatureSpec> features;
	std::optional<std::size_t> context_limit = kDefaultContextLimit;
};

struct RunConfig {
	std::vector<DatasetManifest> datasets;
	std::vector<std::string> terms{"short"};
	std::vector<MethodSpec> methods;
	std::vector<double> quantile_levels = default_quantile_levels();
	std::int64_t seed = 0;
	std::string output_dir = "bench_out";
	std::size_t workers = 1;
	/// Frequency alias -> seasonality override for MASE.
	std::map<std::string, std::int64_t> seasonality;
	/// Method used as the reference in win tables; defaults to the first method.
	std::optional<std::string> baseline;

	void validate() const {
		if (datasets.empty() || methods.empty()) {
			throw Error(ErrorKind::InvalidArgument, "run config needs at least one dataset and one method");
		}
		std::set<std::string> labels;
		for (const auto &m : methods) {
			if (!labels.insert(m.label).second) {
				throw Error(ErrorKind::InvalidArgument, "duplicate method label '" + m.label + "'");
			}
		}
		check_quantile_levels(quantile_levels);
	}

	std::int64_t seasonality_for(const Frequency &freq) const {
		auto it = seasonality.find(freq.to_string());
		return it != seasonality.end() ? it->second : default_seasonality(freq);
	}
};

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::json feature_spec_to_json(const FeatureSpec &spec) {
	std::vector<std::string> comps;
	for (auto c : spec.calendar_components) {
		comps.emplace_back(to_string(c));
	}
	return {{"use_running_index", spec.use_running_index},
	        {"calendar_components", comps},
	        {"encoding", spec.encoding == FeatureEncoding::SineCosine ? "sine_cosine" : "raw"}};
}

inline FeatureSpec feature_spec_from_json(const nlohmann::json &j) {
	FeatureSpec spec;
	spec.use_running_index = j.value("use_running_index", true);
	spec.calendar_components.clear();
	for (const auto &c : j.value("calendar_components", std::vector<std::string>{})) {
		spec.calendar_components.push_back(parse_calendar_component(c));
	}
	const std::string enc = j.value("encoding", std::string("sine_cosine"));
	if (enc == "sine_cosine") {
		spec.encoding = FeatureEncoding::SineCosine;
	} else if (enc == "raw") {
		spec.encoding = FeatureEncoding::Raw;
	} else {
		throw Error(ErrorKind::InvalidArgument, "unknown feature encoding '" + enc + "'");
	}
	spec.validate();
	return spec;
}

/// Parses a run configuration; dataset entries are either inline manifests
/// or paths to manifest files (relative to `base_dir`).
inline RunConfig run_config_from_json(const nlohmann::json &j, const std::filesystem::path &base_dir = {}) {
	try {
		RunConfig config;
		for (const auto &d : j.at("datasets")) {
			if (d.is_string()) {
				std::filesystem::path p = d.get<std::string>();
				config.datasets.push_back(load_manifest(p.is_relative() && !base_dir.empty() ? base_dir / p : p));
			} else {
				config.datasets.push_back(manifest_from_json(d, base_dir));
			}
		}
		if (j.contains("terms")) {
			config.terms = j.at("terms").get<std::vector<std::string>>();
		}
		for (const auto &m : j.at("methods")) {
			MethodSpec spec;
			spec.mode = parse_mode(m.value("mode", std::string("joint")));
			spec.norm = parse_transform_kind(m.value("norm", std::string("zscore")));
			spec.backend = m.value("backend", std::string("icm-gp"));
			spec.label = m.value("label", std::string(to_string(spec.mode)) + "/" +
			                                  std::string(to_string(spec.norm)) + "/" + spec.backend);
			if (m.contains("features")) {
				spec.features = feature_spec_from_json(m.at("features"));
			}
			if (m.contains("context_limit")) {
				if (m.at("context_limit").is_null()) {
					spec.context_limit.reset();
				} else {
					spec.context_limit = m.at("context_limit").get<std::size_t>();
				}
			}
			config.methods.push_back(std::move(spec));
		}
		if (j.contains("quantiles")) {
			config.quantile_levels = j.at("quantiles").get<std::vector<double>>();
		}
		config.seed = j.value("seed", std::int64_t{0});
		config.output_dir = j.value("output_dir", config.output_dir);
		config.workers = j.value("workers", std::size_t{1});
		if (j.contains("seasonality")) {
			config.seasonality = j.at("seasonality").get<std::map<std::string, std::int64_t>>();
		}
		if (j.contains("baseline")) {
			config.baseline = j.at("baseline").get<std::string>();
		}
		config.validate();
		return config;
	} catch (const nlohmann::json::exception &e) {
		throw Error(ErrorKind::SchemaError, std::string("malformed run config: ") + e.what());
	}
}

inline nlohmann::json record_to_json(const BenchmarkRecord &r) {
	nlohmann::json j;
	j["dataset_task"] = r.dataset_task;
	j["method"] = r.method;
	if (r.ok()) {
		j["mase"] = r.mase;
		j["wql"] = r.wql;
	} else {
		j["mase"] = nullptr;
		j["wql"] = nullptr;
		j["error"] = *r.error;
	}
	j["wall_seconds"] = r.wall_seconds;
	j["seed"] = r.seed;
	j["backend_version"] = r.backend_version;
	j["metadata"] = r.metadata;
	return j;
}

inline BenchmarkRecord record_from_json(const nlohmann::json &j) {
	try {
		BenchmarkRecord r;
		r.dataset_task = j.at("dataset_task").get<std::string>();
		r.method = j.at("method").get<std::string>();
		if (j.contains("error") && !j.at("error").is_null()) {
			r.error = j.at("error").get<std::string>();
		} else {
			r.mase = j.at("mase").get<double>();
			r.wql = j.at("wql").get<double>();
		}
		r.wall_seconds = j.value("wall_seconds", 0.0);
		r.seed = j.value("seed", std::int64_t{0});
		r.backend_version = j.value("backend_version", std::string());
		if (j.contains("metadata")) {
			r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
		}
		return r;
	} catch (const nlohmann::json::exception &e) {
		throw Error(ErrorKind::SchemaError, std::string("malformed record: ") + e.what());
	}
}

inline std::vector<BenchmarkRecord> read_records_jsonl(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw Error(ErrorKind::IoError, "cannot open " + path.string());
	}
	std::vector<BenchmarkRecord> out;
	std::string line;
	while (std::getline(in, line)) {
		if (line.empty()) {
			continue;
		}
		try {
			out.push_back(record_from_json(nlohmann::json::parse(line)));
		} catch (const nlohmann::json::parse_error &e) {
			throw Error(ErrorKind::SchemaError, path.string() + ": " + e.what());
		}
	}
	return out;
}

/// Result rows produced elsewhere: CSV with dataset_task, method, mase, wql
/// columns (any order, extra columns ignored).
inline std::vector<BenchmarkRecord> import_external(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw Error(ErrorKind::IoError, "cannot open " + path.string());
	}
	std::string line;
	if (!std::getline(in, line)) {
		throw Error(ErrorKind::SchemaError, path.string() + " has no header");
	}
	const auto header = detail::split_csv_line(line);
	auto column = [&](const std::string &name) -> std::size_t {
		auto it = std::find(header.begin(), header.end(), name);
		if (it == header.end()) {
			throw Error(ErrorKind::SchemaError, path.string() + " lacks column '" + name + "'");
		}
		return static_cast<std::size_t>(it - header.begin());
	};
	const std::size_t ds = column("dataset_task"), method = column("method"), mase_col = column("mase"),
	                  wql_col = column("wql");
	std::vector<BenchmarkRecord> out;
	std::size_t line_no = 1;
	while (std::getline(in, line)) {
		++line_no;
		if (line.empty() || line == "\r") {
			continue;
		}
		const auto cells = detail::split_csv_line(line);
		if (cells.size() != header.size()) {
			throw Error(ErrorKind::SchemaError, path.string() + ":" + std::to_string(line_no) + " has " +
			                                        std::to_string(cells.size()) + " cells, expected " +
			                                        std::to_string(header.size()));
		}
		BenchmarkRecord r;
		r.dataset_task = cells[ds];
		r.method = cells[method];
		r.mase = detail::parse_cell(cells[mase_col]);
		r.wql = detail::parse_cell(cells[wql_col]);
		if (!std::isfinite(r.mase) || !std::isfinite(r.wql) || r.mase < 0.0 || r.wql < 0.0) {
			throw Error(ErrorKind::SchemaError, path.string() + ":" + std::to_string(line_no) +
			                                        " has a missing or negative metric");
		}
		r.backend_version = "external";
		out.push_back(std::move(r));
	}
	return out;
}

/// Loads records from a .jsonl run log or an external-results CSV.
inline std::vector<BenchmarkRecord> load_records(const std::filesystem::path &path) {
	return path.extension() == ".csv" ? import_external(path) : read_records_jsonl(path);
}

// ---------------------------------------------------------------------------
// Tasks

/// A forecast task together with the held-out window it is scored on.
struct EvaluationTask {
	std::string dataset_task;
	ForecastTask task;
	Matrix actual;
	std::int64_t seasonality = 1;
};

/// Final-window split: the last H steps are held out, everything before is history.
inline EvaluationTask make_task(const MultivariateSeries &series, const DatasetManifest &manifest,
                                const std::string &term, std::int64_t seasonality,
                                const std::vector<double> &levels = default_quantile_levels()) {
	const std::size_t horizon = manifest.horizon(term);
	const std::size_t t = series.length();
	if (t <= horizon + static_cast<std::size_t>(seasonality)) {
		throw Error(ErrorKind::HistoryTooShort, "'" + manifest.name + "' has " + std::to_string(t) +
		                                            " steps; needs more than horizon " + std::to_string(horizon) +
		                                            " + seasonality " + std::to_string(seasonality));
	}
	EvaluationTask out;
	out.dataset_task = manifest.name + "/" + manifest.frequency.to_string() + "/" + term;
	out.seasonality = seasonality;
	out.task.history.channels = series.channels;
	out.task.history.frequency = series.frequency;
	out.task.history.timestamps.assign(series.timestamps.begin(),
	                                   series.timestamps.begin() + static_cast<std::ptrdiff_t>(t - horizon));
	out.task.history.values = series.values.topRows(static_cast<Eigen::Index>(t - horizon));
	out.task.horizon = horizon;
	out.task.quantile_levels = levels;
	out.actual = series.values.bottomRows(static_cast<Eigen::Index>(horizon));
	return out;
}

inline std::vector<EvaluationTask> make_tasks(const MultivariateSeries &series, const DatasetManifest &manifest,
                                              const std::string &term, std::int64_t seasonality,
                                              const std::vector<double> &levels = default_quantile_levels()) {
	return {make_task(series, manifest, term, seasonality, levels)};
}

// ---------------------------------------------------------------------------
// Forecast pipeline

struct PipelineResult {
	QuantileForecast forecast; // original scale
	std::size_t context_steps = 0;
	std::size_t context_rows = 0;
};

/// Truncate, normalise per channel, predict in the requested mode, invert.
/// Transform statistics come from the truncated context only.
inline PipelineResult forecast_task(const ForecastTask &task, RegressorBackend &backend, const FeatureSpec &spec,
                                    TransformKind norm, std::uint64_t seed) {
	task.validate();
	const MultivariateSeries context = truncate_history(task.history, task.context_limit);
	auto [transformed, state] = fit_transform(context, norm);
	ForecastTask inner = task;
	inner.history = std::move(transformed);
	inner.context_limit.reset();
	PipelineResult result;
	result.context_steps = inner.history.length();
	result.context_rows = result.context_steps * inner.history.num_channels();
	result.forecast = inverse(predict(inner, backend, spec, seed), state);
	return result;
}

inline BenchmarkRecord evaluate(const EvaluationTask &job, const MethodSpec &method, RegressorBackend &backend,
                                std::int64_t seed) {
	BenchmarkRecord record;
	record.dataset_task = job.dataset_task;
	record.method = method.label;
	record.seed = seed;
	record.metadata["mode"] = std::string(to_string(method.mode));
	record.metadata["norm"] = std::string(to_string(method.norm));
	record.metadata["backend"] = method.backend;
	record.metadata["context_limit"] = method.context_limit ? std::to_string(*method.context_limit) : "none";
	record.metadata["mase_pooling"] = "pooled";
	record.metadata["window"] = "final";
	record.metadata["seasonality"] = std::to_string(job.seasonality);
	const auto start = std::chrono::steady_clock::now();
	try {
		ForecastTask task = job.task;
		task.mode = method.mode;
		task.context_limit = method.context_limit;
		const FeatureSpec spec = method.features.value_or(default_spec_for(task.history.frequency));
		record.metadata["features"] = feature_spec_to_json(spec).dump();
		const PipelineResult result = forecast_task(task, backend, spec, method.norm, static_cast<std::uint64_t>(seed));
		record.metadata["context_steps"] = std::to_string(result.context_steps);
		record.mase = mase(job.actual, result.forecast.mean, job.task.history.values, job.seasonality);
		record.wql = wql(job.actual, result.forecast.quantiles, result.forecast.levels);
		if (!std::isfinite(record.mase) || !std::isfinite(record.wql)) {
			throw Error(ErrorKind::InvalidArgument, "non-finite metric");
		}
	} catch (const Error &e) {
		record.error = e.what();
		record.metadata["error_kind"] = std::string(to_string(e.kind()));
	} catch (const std::exception &e) {
		record.error = e.what();
		record.metadata["error_kind"] = "Unexpected";
	}
	record.backend_version = backend.version();
	record.wall_seconds =
	    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
	return record;
}

// ---------------------------------------------------------------------------
// Tables

inline std::string format_number(double v, int digits = 4) {
	char buf[64];
	std::snprintf(buf, sizeof buf, "%.*f", digits, v);
	return buf;
}

inline std::string summary_csv(const std::vector<MethodSummary> &rows) {
	std::ostringstream out;
	out << "method,datasets,mean_mase,mean_wql,average_rank_mase,average_rank_wql\n";
	for (const auto &r : rows) {
		out << r.method << ',' << r.datasets << ',' << format_number(r.mean_mase, 6) << ','
		    << format_number(r.mean_wql, 6) << ',' << format_number(r.average_rank_mase, 6) << ','
		    << format_number(r.average_rank_wql, 6) << '\n';
	}
	return out.str();
}

/// Pipe table with columns padded to a common width.
inline std::string markdown_table(const std::vector<std::string> &header,
                                  const std::vector<std::vector<std::string>> &rows) {
	std::vector<std::size_t> width(header.size());
	for (std::size_t c = 0; c < header.size(); ++c) {
		width[c] = std::max<std::size_t>(3, header[c].size());
		for (const auto &r : rows) {
			width[c] = std::max(width[c], r[c].size());
		}
	}
	std::ostringstream out;
	auto emit = [&](const std::vector<std::string> &cells) {
		out << '|';
		for (std::size_t c = 0; c < cells.size(); ++c) {
			out << ' ' << cells[c] << std::string(width[c] - cells[c].size(), ' ') << " |";
		}
		out << '\n';
	};
	emit(header);
	out << '|';
	for (std::size_t c = 0; c < header.size(); ++c) {
		out << ' ' << std::string(width[c], '-') << " |";
	}
	out << '\n';
	for (const auto &r : rows) {
		emit(r);
	}
	return out.str();
}

inline std::string summary_markdown(const std::vector<MethodSummary> &rows) {
	std::vector<std::vector<std::string>> cells;
	for (const auto &r : rows) {
		cells.push_back({r.method, std::to_string(r.datasets), format_number(r.mean_mase),
		                 format_number(r.mean_wql), format_number(r.average_rank_mase),
		                 format_number(r.average_rank_wql)});
	}
	return markdown_table({"method", "datasets", "MASE", "WQL", "avg rank MASE", "avg rank WQL"}, cells);
}

inline std::string wins_csv(const WinTable &table) {
	std::ostringstream out;
	out << "dataset_task,baseline_mase,candidate_mase,candidate_wins\n";
	for (const auto &r : table.rows) {
		out << r.dataset_task << ',' << format_number(r.baseline_mase, 6) << ','
		    << format_number(r.candidate_mase, 6) << ',' << (r.candidate_wins ? 1 : 0) << '\n';
	}
	return out.str();
}

inline std::string wins_markdown(const WinTable &table) {
	std::vector<std::vector<std::string>> cells;
	for (const auto &r : table.rows) {
		cells.push_back({r.dataset_task, format_number(r.baseline_mase), format_number(r.candidate_mase),
		                 r.candidate_wins ? "win" : "loss"});
	}
	std::string md = markdown_table({"dataset_task", table.baseline, table.candidate, "candidate"}, cells);
	md += "\n" + table.candidate + " lowers MASE on " + std::to_string(table.wins) + " of " +
	      std::to_string(table.rows.size()) + " tasks (" + format_number(table.win_fraction(), 3) + ")\n";
	return md;
}

inline void write_text(const std::filesystem::path &path, const std::string &text) {
	std::ofstream out(path);
	if (!out) {
		throw Error(ErrorKind::IoError, "cannot write " + path.string());
	}
	out << text;
}

inline std::string file_safe(std::string s) {
	for (char &c : s) {
		if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') {
			c = '_';
		}
	}
	return s;
}

/// Writes summary.{csv,md} and, with two or more methods, one win table per
/// non-baseline method. Summary emission is skipped when cells are missing.
inline void write_tables(const std::vector<BenchmarkRecord> &records, const std::filesystem::path &dir,
                         const std::vector<std::string> &methods, const std::string &baseline,
                         const std::vector<std::string> &exclude = {}) {
	std::filesystem::create_directories(dir);
	try {
		const auto summary = aggregate(records, {methods, exclude});
		write_text(dir / "summary.csv", summary_csv(summary));
		write_text(dir / "summary.md", summary_markdown(summary));
	} catch (const Error &e) {
		if (e.kind() != ErrorKind::MissingCell) {
			throw;
		}
	}
	for (const auto &m : methods) {
		if (m == baseline) {
			continue;
		}
		try {
			const WinTable wins = compare(records, baseline, m, exclude);
			const std::string stem = "wins_" + file_safe(m) + "_vs_" + file_safe(baseline);
			write_text(dir / (stem + ".csv"), wins_csv(wins));
			write_text(dir / (stem + ".md"), wins_markdown(wins));
		} catch (const Error &e) {
			if (e.kind() != ErrorKind::MissingCell) {
				throw;
			}
		}
	}
}

// ---------------------------------------------------------------------------
// Run

/// Executes every (dataset task, method) cell. Cells run on `config.workers`
/// threads, each with its own backend instance; records are appended to
/// records.jsonl in matrix order as soon as all earlier cells are done.
/// Throws only when every cell failed.
inline std::vector<BenchmarkRecord> run(const RunConfig &config,
                                        const std::function<void(const BenchmarkRecord &)> &on_record = {}) {
	config.validate();
	struct Job {
		const EvaluationTask *task;
		const MethodSpec *method;
	};
	std::vector<EvaluationTask> tasks;
	std::vector<BenchmarkRecord> setup_failures;
	for (const auto &manifest : config.datasets) {
		for (const auto &term : config.terms) {
			try {
				const MultivariateSeries series = load_dataset(manifest);
				const std::int64_t m = config.seasonality_for(manifest.frequency);
				tasks.push_back(make_task(series, manifest, term, m, config.quantile_levels));
			} catch (const Error &e) {
				for (const auto &method : config.methods) {
					BenchmarkRecord r;
					r.dataset_task = manifest.name + "/" + manifest.frequency.to_string() + "/" + term;
					r.method = method.label;
					r.seed = config.seed;
					r.error = e.what();
					r.metadata["error_kind"] = std::string(to_string(e.kind()));
					setup_failures.push_back(std::move(r));
				}
			}
		}
	}
	std::vector<Job> jobs;
	for (const auto &t : tasks) {
		for (const auto &m : config.methods) {
			jobs.push_back({&t, &m});
		}
	}

	const std::filesystem::path dir = config.output_dir;
	std::filesystem::create_directories(dir);
	std::ofstream sink(dir / "records.jsonl", std::ios::trunc);
	if (!sink) {
		throw Error(ErrorKind::IoError, "cannot write " + (dir / "records.jsonl").string());
	}
	std::vector<BenchmarkRecord> records;
	auto emit = [&](const BenchmarkRecord &r) {
		sink << record_to_json(r).dump() << '\n';
		sink.flush();
		if (on_record) {
			on_record(r);
		}
		records.push_back(r);
	};
	for (const auto &r : setup_failures) {
		emit(r);
	}

	std::vector<std::optional<BenchmarkRecord>> done(jobs.size());
	std::mutex mutex;
	std::condition_variable ready;
	std::atomic<std::size_t> next{0};
	auto worker = [&] {
		for (;;) {
			const std::size_t i = next.fetch_add(1);
			if (i >= jobs.size()) {
				return;
			}
			const Job &job = jobs[i];
			BenchmarkRecord record;
			try {
				auto backend = make_backend(job.method->backend, job.task->seasonality);
				record = evaluate(*job.task, *job.method, *backend, config.seed);
			} catch (const Error &e) {
				record.dataset_task = job.task->dataset_task;
				record.method = job.method->label;
				record.seed = config.seed;
				record.error = e.what();
				record.metadata["error_kind"] = std::string(to_string(e.kind()));
			}
			{
				std::lock_guard lock(mutex);
				done[i] = std::move(record);
			}
			ready.notify_one();
		}
	};
	const std::size_t threads = std::max<std::size_t>(1, std::min(config.workers, jobs.size()));
	std::vector<std::thread> pool;
	for (std::size_t t = 0; t < threads; ++t) {
		pool.emplace_back(worker);
	}
	for (std::size_t i = 0; i < jobs.size(); ++i) {
		std::unique_lock lock(mutex);
		ready.wait(lock, [&] { return done[i].has_value(); });
		BenchmarkRecord r = std::move(*done[i]);
		lock.unlock();
		emit(r);
	}
	for (auto &t : pool) {
		t.join();
	}

	std::vector<std::string> labels;
	for (const auto &m : config.methods) {
		labels.push_back(m.label);
	}
	write_tables(records, dir, labels, config.baseline.value_or(labels.front()));

	if (!records.empty() && std::none_of(records.begin(), records.end(), [](const auto &r) { return r.ok(); })) {
		throw Error(ErrorKind::BackendError, "all " + std::to_string(records.size()) + " benchmark cells failed; first: " +
		                                         *records.front().error);
	}
	return records;
}

} // namespace mvroll
