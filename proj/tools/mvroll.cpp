#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mvroll/mvroll.hpp"

namespace fs = std::filesystem;
using namespace mvroll;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCellFailures = 1;
constexpr int kExitError = 2;

std::vector<double> parse_levels(const std::string &text) {
	std::vector<double> out;
	std::stringstream in(text);
	std::string item;
	while (std::getline(in, item, ',')) {
		try {
			out.push_back(std::stod(item));
		} catch (const std::logic_error &) {
			throw Error(ErrorKind::InvalidArgument, "bad quantile level '" + item + "'");
		}
	}
	check_quantile_levels(out);
	return out;
}

/// Rows separated by ';', entries by ','.
Matrix parse_matrix(const std::string &text) {
	std::vector<std::vector<double>> rows;
	std::stringstream in(text);
	std::string row;
	while (std::getline(in, row, ';')) {
		std::vector<double> values;
		std::stringstream cells(row);
		std::string cell;
		while (std::getline(cells, cell, ',')) {
			values.push_back(std::stod(cell));
		}
		rows.push_back(std::move(values));
	}
	const auto n = static_cast<Eigen::Index>(rows.size());
	Matrix m(n, n);
	for (Eigen::Index r = 0; r < n; ++r) {
		if (static_cast<Eigen::Index>(rows[r].size()) != n) {
			throw Error(ErrorKind::InvalidArgument, "coupling matrix must be square");
		}
		for (Eigen::Index c = 0; c < n; ++c) {
			m(r, c) = rows[r][c];
		}
	}
	return m;
}

nlohmann::json matrix_json(const Matrix &m) {
	nlohmann::json rows = nlohmann::json::array();
	for (Eigen::Index r = 0; r < m.rows(); ++r) {
		std::vector<double> row(m.cols());
		for (Eigen::Index c = 0; c < m.cols(); ++c) {
			row[c] = m(r, c);
		}
		rows.push_back(row);
	}
	return rows;
}

nlohmann::json forecast_json(const QuantileForecast &f) {
	nlohmann::json j;
	j["channels"] = f.channels;
	std::vector<std::string> stamps;
	for (auto ts : f.horizon_timestamps) {
		stamps.push_back(format_iso8601(ts));
	}
	j["timestamps"] = stamps;
	j["mean"] = matrix_json(f.mean);
	j["quantiles"] = nlohmann::json::array();
	for (std::size_t i = 0; i < f.levels.size(); ++i) {
		j["quantiles"].push_back({{"level", f.levels[i]}, {"values", matrix_json(f.quantiles[i])}});
	}
	return j;
}

void emit(const std::string &text, const std::string &out) {
	if (out.empty()) {
		std::cout << text;
	} else {
		write_text(out, text);
	}
}

std::vector<BenchmarkRecord> load_all(const std::vector<std::string> &paths) {
	std::vector<BenchmarkRecord> records;
	for (const auto &p : paths) {
		auto part = load_records(p);
		records.insert(records.end(), part.begin(), part.end());
	}
	return records;
}

struct SynthArgs {
	std::string kind;
	std::string name;
	std::string out = ".";
	std::size_t length = 1000;
	std::uint64_t seed = 0;
	std::size_t horizon = 24;
	std::string coupling = "0.9,0;0.8,0";
	double noise = 1.0;
	double clean = 0.05;
	double noisy = 0.5;
};

int synth(const SynthArgs &a) {
	MultivariateSeries series;
	if (a.kind == "lorenz") {
		LorenzConfig config;
		config.steps = a.length;
		series = gen_lorenz(config, a.seed);
	} else if (a.kind == "var1") {
		series = gen_var1(parse_matrix(a.coupling), a.noise, a.length, a.seed);
	} else {
		series = gen_shared_latent(a.length, a.clean, a.noisy, a.seed);
	}
	const std::string name = a.name.empty() ? a.kind : a.name;
	fs::create_directories(a.out);
	write_dataset_csv(series, fs::path(a.out) / (name + ".csv"));
	DatasetManifest manifest;
	manifest.name = name;
	manifest.frequency = series.frequency;
	manifest.channels = series.channels;
	manifest.horizon_by_term = {{"short", a.horizon}};
	manifest.csv_path = name + ".csv";
	write_text(fs::path(a.out) / (name + ".json"), manifest_to_json(manifest).dump(2) + "\n");
	std::cout << (fs::path(a.out) / (name + ".json")).string() << "\n";
	return kExitOk;
}

struct ForecastArgs {
	std::string manifest;
	std::string term = "short";
	std::string mode = "joint";
	std::string norm = "zscore";
	std::string backend = "icm-gp";
	std::size_t context_limit = kDefaultContextLimit;
	std::string quantiles;
	std::int64_t seed = 0;
	bool holdout = false;
	std::string out;
};

int forecast(const ForecastArgs &a) {
	const DatasetManifest manifest = load_manifest(a.manifest);
	const MultivariateSeries series = load_dataset(manifest);
	const std::vector<double> levels = a.quantiles.empty() ? default_quantile_levels() : parse_levels(a.quantiles);
	const std::int64_t m = default_seasonality(series.frequency);
	auto backend = make_backend(a.backend, m);
	ForecastTask task;
	std::optional<EvaluationTask> job;
	if (a.holdout) {
		job = make_task(series, manifest, a.term, m, levels);
		task = job->task;
	} else {
		task.history = series;
		task.horizon = manifest.horizon(a.term);
		task.quantile_levels = levels;
	}
	task.mode = parse_mode(a.mode);
	task.context_limit = a.context_limit == 0 ? std::nullopt : std::optional<std::size_t>(a.context_limit);
	const PipelineResult result = forecast_task(task, *backend, default_spec_for(series.frequency),
	                                            parse_transform_kind(a.norm), static_cast<std::uint64_t>(a.seed));
	nlohmann::json j = forecast_json(result.forecast);
	j["context_steps"] = result.context_steps;
	j["backend_version"] = backend->version();
	if (job) {
		j["mase"] = mase(job->actual, result.forecast.mean, job->task.history.values, m);
		j["wql"] = wql(job->actual, result.forecast.quantiles, result.forecast.levels);
	}
	emit(j.dump(2) + "\n", a.out);
	return kExitOk;
}

int bench(const std::string &config_path, const std::string &out, std::size_t workers) {
	std::ifstream in(config_path);
	if (!in) {
		throw Error(ErrorKind::IoError, "cannot open " + config_path);
	}
	nlohmann::json j;
	try {
		j = nlohmann::json::parse(in);
	} catch (const nlohmann::json::parse_error &e) {
		throw Error(ErrorKind::SchemaError, config_path + ": " + e.what());
	}
	RunConfig config = run_config_from_json(j, fs::path(config_path).parent_path());
	if (!out.empty()) {
		config.output_dir = out;
	}
	if (workers > 0) {
		config.workers = workers;
	}
	std::size_t failed = 0;
	try {
		run(config, [&](const BenchmarkRecord &r) {
			if (r.ok()) {
				std::fprintf(stderr, "%s %s mase=%.4f wql=%.4f (%.2fs)\n", r.dataset_task.c_str(), r.method.c_str(),
				             r.mase, r.wql, r.wall_seconds);
			} else {
				++failed;
				std::fprintf(stderr, "%s %s FAILED: %s\n", r.dataset_task.c_str(), r.method.c_str(), r.error->c_str());
			}
		});
	} catch (const Error &e) {
		std::fprintf(stderr, "error: %s\n", e.what());
		return kExitCellFailures;
	}
	const fs::path summary = fs::path(config.output_dir) / "summary.md";
	if (fs::exists(summary)) {
		std::ifstream s(summary);
		std::cout << s.rdbuf();
	}
	return failed == 0 ? kExitOk : kExitCellFailures;
}

} // namespace

int main(int argc, char **argv) {
	CLI::App app{"Multivariate forecasting by rolling channels into a tabular regressor"};
	app.require_subcommand(1);

	SynthArgs synth_args;
	auto *synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset and its manifest");
	synth_cmd->add_option("kind", synth_args.kind, "lorenz, var1 or shared-latent")
	    ->required()
	    ->check(CLI::IsMember({"lorenz", "var1", "shared-latent"}));
	synth_cmd->add_option("--name", synth_args.name, "Dataset name (defaults to kind)");
	synth_cmd->add_option("--out", synth_args.out, "Output directory");
	synth_cmd->add_option("--length", synth_args.length, "Number of steps")->check(CLI::PositiveNumber);
	synth_cmd->add_option("--seed", synth_args.seed);
	synth_cmd->add_option("--horizon", synth_args.horizon, "Horizon of the 'short' term")->check(CLI::PositiveNumber);
	synth_cmd->add_option("--coupling", synth_args.coupling, "VAR(1) matrix, rows split by ';'");
	synth_cmd->add_option("--noise", synth_args.noise, "VAR(1) noise scale");
	synth_cmd->add_option("--clean", synth_args.clean, "Shared-latent noise on x");
	synth_cmd->add_option("--noisy", synth_args.noisy, "Shared-latent noise on y");

	ForecastArgs fc;
	auto *forecast_cmd = app.add_subcommand("forecast", "Forecast one dataset");
	forecast_cmd->add_option("manifest", fc.manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
	forecast_cmd->add_option("--horizon-term", fc.term);
	forecast_cmd->add_option("--mode", fc.mode)->check(CLI::IsMember({"joint", "ar", "ci"}));
	forecast_cmd->add_option("--norm", fc.norm)->check(CLI::IsMember({"none", "zscore", "diff"}));
	forecast_cmd->add_option("--backend", fc.backend, "seasonal-naive[:m], knn[:k], ridge[:l], icm-gp[:identity], extern:<endpoint>");
	forecast_cmd->add_option("--context-limit", fc.context_limit, "Max rolled context rows, 0 for none");
	forecast_cmd->add_option("--quantiles", fc.quantiles, "Comma-separated levels");
	forecast_cmd->add_option("--seed", fc.seed);
	forecast_cmd->add_flag("--holdout", fc.holdout, "Score against the final window instead of forecasting past the end");
	forecast_cmd->add_option("--out", fc.out, "Write JSON here instead of stdout");

	std::string bench_config, bench_out;
	std::size_t bench_workers = 0;
	auto *bench_cmd = app.add_subcommand("bench", "Run a benchmark configuration");
	bench_cmd->add_option("config", bench_config, "Run configuration JSON")->required()->check(CLI::ExistingFile);
	bench_cmd->add_option("--out", bench_out, "Output directory (overrides the config)");
	bench_cmd->add_option("--workers", bench_workers, "Worker threads (overrides the config)");

	std::vector<std::string> compare_files, compare_exclude;
	std::string baseline, candidate, compare_out;
	auto *compare_cmd = app.add_subcommand("compare", "Per-dataset MASE wins of one method over another");
	compare_cmd->add_option("records", compare_files, ".jsonl run logs or result CSVs")->required();
	compare_cmd->add_option("--baseline", baseline)->required();
	compare_cmd->add_option("--candidate", candidate)->required();
	compare_cmd->add_option("--exclude", compare_exclude, "Glob over dataset_task");
	compare_cmd->add_option("--csv", compare_out, "Also write the table as CSV");

	std::vector<std::string> agg_files, agg_exclude, agg_methods;
	std::string agg_out;
	auto *aggregate_cmd = app.add_subcommand("aggregate", "Mean metrics and average ranks per method");
	aggregate_cmd->add_option("records", agg_files, ".jsonl run logs or result CSVs")->required();
	aggregate_cmd->add_option("--exclude", agg_exclude, "Glob over dataset_task");
	aggregate_cmd->add_option("--methods", agg_methods, "Methods to rank, in output order");
	aggregate_cmd->add_option("--csv", agg_out, "Also write the table as CSV");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError &e) {
		return app.exit(e) == 0 ? kExitOk : kExitError;
	}

	try {
		if (*synth_cmd) {
			return synth(synth_args);
		}
		if (*forecast_cmd) {
			return forecast(fc);
		}
		if (*bench_cmd) {
			return bench(bench_config, bench_out, bench_workers);
		}
		if (*compare_cmd) {
			const WinTable table = compare(load_all(compare_files), baseline, candidate, compare_exclude);
			std::cout << wins_markdown(table);
			if (!compare_out.empty()) {
				write_text(compare_out, wins_csv(table));
			}
			return kExitOk;
		}
		if (*aggregate_cmd) {
			const auto summary = aggregate(load_all(agg_files), {agg_methods, agg_exclude});
			std::cout << summary_markdown(summary);
			if (!agg_out.empty()) {
				write_text(agg_out, summary_csv(summary));
			}
			return kExitOk;
		}
	} catch (const Error &e) {
		std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
		return kExitError;
	} catch (const std::exception &e) {
		std::fprintf(stderr, "error: %s\n", e.what());
		return kExitError;
	}
	return kExitError;
}
