#pragma once

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "mvroll/backends/backend.hpp"

namespace mvroll {

/// Newline-framed duplex byte stream to a model server.
class LineChannel {
public:
	virtual ~LineChannel() = default;
	virtual void write_line(const std::string &line) = 0;
	/// Returns nullopt when no complete line arrived before the deadline.
	virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
};

namespace detail {

/// Buffered line reader over a readable file descriptor.
class FdLineReader {
public:
	std::optional<std::string> read_line(int fd, std::chrono::milliseconds timeout, const std::string &peer) {
		const auto deadline = std::chrono::steady_clock::now() + timeout;
		for (;;) {
			const auto nl = buffer_.find('\n');
			if (nl != std::string::npos) {
				std::string line = buffer_.substr(0, nl);
				buffer_.erase(0, nl + 1);
				if (!line.empty() && line.back() == '\r') {
					line.pop_back();
				}
				return line;
			}
			const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
			    deadline - std::chrono::steady_clock::now());
			if (left.count() <= 0) {
				return std::nullopt;
			}
			pollfd pfd{fd, POLLIN, 0};
			const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
			if (ready < 0) {
				if (errno == EINTR) {
					continue;
				}
				throw Error(ErrorKind::BackendUnavailable, "poll failed on " + peer + ": " + std::strerror(errno));
			}
			if (ready == 0) {
				return std::nullopt;
			}
			char chunk[65536];
			const ssize_t got = ::read(fd, chunk, sizeof chunk);
			if (got < 0) {
				if (errno == EINTR || errno == EAGAIN) {
					continue;
				}
				throw Error(ErrorKind::BackendUnavailable, "read failed on " + peer + ": " + std::strerror(errno));
			}
			if (got == 0) {
				throw Error(ErrorKind::BackendUnavailable, peer + " closed the connection");
			}
			buffer_.append(chunk, static_cast<std::size_t>(got));
		}
	}

private:
	std::string buffer_;
};

inline void write_all(int fd, const std::string &data, const std::string &peer, bool socket) {
	std::size_t off = 0;
	while (off < data.size()) {
		const ssize_t put = socket ? ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL)
		                           : ::write(fd, data.data() + off, data.size() - off);
		if (put < 0) {
			if (errno == EINTR) {
				continue;
			}
			throw Error(ErrorKind::BackendUnavailable, "write to " + peer + " failed: " + std::strerror(errno));
		}
		off += static_cast<std::size_t>(put);
	}
}

} // namespace detail

/// Child process spoken to over its stdin/stdout, started with /bin/sh -c.
class ProcessChannel final : public LineChannel {
public:
	explicit ProcessChannel(const std::string &command) : peer_("process '" + command + "'") {
		std::signal(SIGPIPE, SIG_IGN);
		int to_child[2];
		int from_child[2];
		if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0) {
			throw Error(ErrorKind::BackendUnavailable, "pipe() failed: " + std::string(std::strerror(errno)));
		}
		const char *script = command.c_str();
		pid_ = ::fork();
		if (pid_ < 0) {
			throw Error(ErrorKind::BackendUnavailable, "fork() failed: " + std::string(std::strerror(errno)));
		}
		if (pid_ == 0) {
			// Own process group so the whole shell pipeline can be killed.
			::setpgid(0, 0);
			::dup2(to_child[0], STDIN_FILENO);
			::dup2(from_child[1], STDOUT_FILENO);
			::execl("/bin/sh", "sh", "-c", script, static_cast<char *>(nullptr));
			::_exit(127);
		}
		::setpgid(pid_, pid_);
		::close(to_child[0]);
		::close(from_child[1]);
		in_ = to_child[1];
		out_ = from_child[0];
	}

	ProcessChannel(const ProcessChannel &) = delete;
	ProcessChannel &operator=(const ProcessChannel &) = delete;

	~ProcessChannel() override {
		if (in_ >= 0) {
			::close(in_);
		}
		if (out_ >= 0) {
			::close(out_);
		}
		if (pid_ > 0) {
			int status = 0;
			bool exited = false;
			for (int i = 0; i < 50 && !exited; ++i) {
				exited = ::waitpid(pid_, &status, WNOHANG) == pid_;
				if (!exited) {
					::usleep(10000);
				}
			}
			::kill(-pid_, SIGKILL);
			if (!exited) {
				::waitpid(pid_, &status, 0);
			}
		}
	}

	void write_line(const std::string &line) override {
		detail::write_all(in_, line + "\n", peer_, false);
	}

	std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
		return reader_.read_line(out_, timeout, peer_);
	}

private:
	std::string peer_;
	pid_t pid_ = -1;
	int in_ = -1;
	int out_ = -1;
	detail::FdLineReader reader_;
};

class TcpChannel final : public LineChannel {
public:
	TcpChannel(const std::string &host, const std::string &port) : peer_(host + ":" + port) {
		addrinfo hints{};
		hints.ai_family = AF_UNSPEC;
		hints.ai_socktype = SOCK_STREAM;
		addrinfo *result = nullptr;
		if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &result); rc != 0) {
			throw Error(ErrorKind::BackendUnavailable, "cannot resolve " + peer_ + ": " + ::gai_strerror(rc));
		}
		for (addrinfo *ai = result; ai != nullptr; ai = ai->ai_next) {
			const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
			if (fd < 0) {
				continue;
			}
			if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
				fd_ = fd;
				break;
			}
			::close(fd);
		}
		::freeaddrinfo(result);
		if (fd_ < 0) {
			throw Error(ErrorKind::BackendUnavailable, "cannot connect to " + peer_);
		}
	}

	TcpChannel(const TcpChannel &) = delete;
	TcpChannel &operator=(const TcpChannel &) = delete;

	~TcpChannel() override {
		if (fd_ >= 0) {
			::close(fd_);
		}
	}

	void write_line(const std::string &line) override {
		detail::write_all(fd_, line + "\n", peer_, true);
	}

	std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
		return reader_.read_line(fd_, timeout, peer_);
	}

private:
	std::string peer_;
	int fd_ = -1;
	detail::FdLineReader reader_;
};

struct ExternalConfig {
	/// "host:port" for TCP, anything else is run as a shell command.
	std::string endpoint;
	std::chrono::milliseconds timeout{300000};
};

namespace protocol {

using nlohmann::json;

inline json matrix_to_json(const Matrix &x) {
	json rows = json::array();
	for (Eigen::Index r = 0; r < x.rows(); ++r) {
		json row = json::array();
		for (Eigen::Index c = 0; c < x.cols(); ++c) {
			if (!std::isfinite(x(r, c))) {
				throw Error(ErrorKind::InvalidArgument, "non-finite feature cannot be sent over the wire");
			}
			row.push_back(x(r, c));
		}
		rows.push_back(std::move(row));
	}
	return rows;
}

inline json make_request(const std::string &id, const TabularData &data, const std::vector<double> &levels,
                         std::uint64_t seed) {
	json y = json::array();
	for (Eigen::Index r = 0; r < data.train_y.size(); ++r) {
		if (!std::isfinite(data.train_y(r))) {
			throw Error(ErrorKind::InvalidArgument, "non-finite target cannot be sent over the wire");
		}
		y.push_back(data.train_y(r));
	}
	json request;
	request["id"] = id;
	request["op"] = "fit_predict";
	request["train"] = {{"X", matrix_to_json(data.train_x)}, {"y", std::move(y)},
	                    {"categorical_cols", data.categorical_cols}};
	request["test"] = {{"X", matrix_to_json(data.test_x)}};
	request["quantiles"] = levels;
	request["seed"] = seed;
	return request;
}

inline std::vector<double> finite_array(const json &value, const std::string &what, std::size_t expected) {
	if (!value.is_array()) {
		throw Error(ErrorKind::MalformedResponse, what + " is not an array");
	}
	if (value.size() != expected) {
		throw Error(ErrorKind::MalformedResponse, what + " has length " + std::to_string(value.size()) +
		                                              ", expected " + std::to_string(expected));
	}
	std::vector<double> out;
	out.reserve(expected);
	for (const auto &v : value) {
		if (!v.is_number()) {
			throw Error(ErrorKind::MalformedResponse, what + " contains a non-number");
		}
		const double x = v.get<double>();
		if (!std::isfinite(x)) {
			throw Error(ErrorKind::MalformedResponse, what + " contains a non-finite number");
		}
		out.push_back(x);
	}
	return out;
}

/// Validates a response object against the request it answers.
inline BackendPrediction parse_response(const json &response, const std::string &id, std::size_t rows,
                                        std::size_t num_levels) {
	if (!response.is_object()) {
		throw Error(ErrorKind::MalformedResponse, "response is not a JSON object");
	}
	if (!response.contains("id") || !response["id"].is_string() || response["id"].get<std::string>() != id) {
		throw Error(ErrorKind::MalformedResponse, "response id does not match request id '" + id + "'");
	}
	if (response.contains("error")) {
		throw Error(ErrorKind::BackendError, "backend reported: " + response["error"].dump());
	}
	if (!response.contains("mean")) {
		throw Error(ErrorKind::MalformedResponse, "response lacks 'mean'");
	}
	BackendPrediction pred;
	pred.mean = finite_array(response["mean"], "mean", rows);
	if (!response.contains("quantiles") || !response["quantiles"].is_array()) {
		throw Error(ErrorKind::MalformedResponse, "response lacks a 'quantiles' array");
	}
	const auto &qs = response["quantiles"];
	if (qs.size() != num_levels) {
		throw Error(ErrorKind::MalformedResponse, "quantiles has " + std::to_string(qs.size()) +
		                                              " levels, expected " + std::to_string(num_levels));
	}
	for (std::size_t l = 0; l < num_levels; ++l) {
		pred.quantiles.push_back(finite_array(qs[l], "quantiles[" + std::to_string(l) + "]", rows));
	}
	return pred;
}

} // namespace protocol

/// Client side of the line-delimited JSON protocol. One request is in flight
/// per instance; the connection is opened lazily and kept across calls.
class ExternalBackend final : public RegressorBackend {
public:
	explicit ExternalBackend(ExternalConfig config) : config_(std::move(config)) {
		if (config_.endpoint.empty()) {
			throw Error(ErrorKind::InvalidArgument, "external endpoint is empty");
		}
	}

	std::string name() const override {
		return "extern";
	}
	std::string version() const override {
		std::lock_guard lock(mutex_);
		return server_version_.empty() ? "extern:" + config_.endpoint : server_version_;
	}
	BackendCapabilities capabilities() const override {
		return {true, std::nullopt, true};
	}

	static bool is_tcp_endpoint(const std::string &endpoint) {
		static const std::regex host_port(R"(^[A-Za-z0-9_.\-]+:[0-9]{1,5}$)");
		return std::regex_match(endpoint, host_port);
	}

	BackendPrediction fit_predict(const TabularData &data, const std::vector<double> &levels,
	                              std::uint64_t seed) override {
		detail::check_tabular(data, capabilities());
		std::lock_guard lock(mutex_);
		const std::string id = "req-" + std::to_string(++counter_);
		const std::string line = protocol::make_request(id, data, levels, seed).dump();
		const auto rows = static_cast<std::size_t>(data.test_x.rows());
		try {
			return exchange(line, id, rows, levels.size());
		} catch (const Error &e) {
			if (e.kind() != ErrorKind::Timeout) {
				if (e.kind() != ErrorKind::BackendError) {
					channel_.reset();
				}
				throw;
			}
		}
		// One retry on a fresh connection; the stale one may still answer the old request.
		channel_.reset();
		try {
			return exchange(line, id, rows, levels.size());
		} catch (...) {
			channel_.reset();
			throw;
		}
	}

private:
	void connect() {
		if (is_tcp_endpoint(config_.endpoint)) {
			const auto colon = config_.endpoint.rfind(':');
			channel_ = std::make_unique<TcpChannel>(config_.endpoint.substr(0, colon),
			                                        config_.endpoint.substr(colon + 1));
		} else {
			channel_ = std::make_unique<ProcessChannel>(config_.endpoint);
		}
	}

	BackendPrediction exchange(const std::string &line, const std::string &id, std::size_t rows,
	                           std::size_t num_levels) {
		if (!channel_) {
			connect();
		}
		channel_->write_line(line);
		const auto deadline = std::chrono::steady_clock::now() + config_.timeout;
		for (;;) {
			const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
			    deadline - std::chrono::steady_clock::now());
			auto reply = left.count() > 0 ? channel_->read_line(left) : std::nullopt;
			if (!reply) {
				throw Error(ErrorKind::Timeout, "no response from " + config_.endpoint + " within " +
				                                    std::to_string(config_.timeout.count()) + " ms");
			}
			nlohmann::json parsed;
			try {
				parsed = nlohmann::json::parse(*reply);
			} catch (const nlohmann::json::exception &e) {
				throw Error(ErrorKind::MalformedResponse, std::string("unparseable response line: ") + e.what());
			}
			if (parsed.is_object() && parsed.contains("hello")) {
				const auto &hello = parsed["hello"];
				server_version_ = hello.value("model", std::string("unknown")) + "/" +
				                  hello.value("version", std::string("unknown"));
				continue;
			}
			return protocol::parse_response(parsed, id, rows, num_levels);
		}
	}

	ExternalConfig config_;
	mutable std::mutex mutex_;
	std::unique_ptr<LineChannel> channel_;
	std::uint64_t counter_ = 0;
	std::string server_version_;
};

} // namespace mvroll
