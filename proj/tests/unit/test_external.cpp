#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <string>
#include <thread>

#include "mvroll/backends/external.hpp"

using namespace mvroll;
using nlohmann::json;

namespace {

const std::vector<double> kLevels = default_quantile_levels();

TabularData toy_table() {
	TabularData data;
	data.train_x = Matrix{{0.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}};
	data.train_y = Vector{{1.0, 2.0, 3.0, 4.0}};
	data.test_x = Matrix{{2.0, 0.0}, {2.0, 1.0}};
	data.categorical_cols = {1};
	return data;
}

std::string stub(const std::string &mode) {
	return std::string(MVROLL_STUB_BACKEND) + " " + mode;
}

ExternalBackend backend_for(const std::string &endpoint, int timeout_ms = 10000) {
	return ExternalBackend(ExternalConfig{endpoint, std::chrono::milliseconds(timeout_ms)});
}

ErrorKind failure_kind(ExternalBackend &backend, const TabularData &data = toy_table()) {
	try {
		backend.fit_predict(data, kLevels, 0);
	} catch (const Error &e) {
		return e.kind();
	}
	ADD_FAILURE() << "expected an error";
	return ErrorKind::InvalidArgument;
}

/// Accepts one connection and answers each request line with zeros.
class ZeroServer {
public:
	ZeroServer() {
		fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
		sockaddr_in addr{};
		addr.sin_family = AF_INET;
		addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
		addr.sin_port = 0;
		::bind(fd_, reinterpret_cast<sockaddr *>(&addr), sizeof addr);
		::listen(fd_, 1);
		socklen_t len = sizeof addr;
		::getsockname(fd_, reinterpret_cast<sockaddr *>(&addr), &len);
		port_ = ntohs(addr.sin_port);
		thread_ = std::thread([this] { serve(); });
	}
	~ZeroServer() {
		finish();
		::close(fd_);
	}
	int port() const {
		return port_;
	}
	/// Waits for the client to disconnect and returns the request lines seen.
	std::vector<std::string> finish() {
		if (thread_.joinable()) {
			thread_.join();
		}
		return requests_;
	}

private:
	void serve() {
		const int conn = ::accept(fd_, nullptr, nullptr);
		std::string buffer;
		char chunk[4096];
		for (;;) {
			const ssize_t got = ::read(conn, chunk, sizeof chunk);
			if (got <= 0) {
				break;
			}
			buffer.append(chunk, static_cast<std::size_t>(got));
			std::size_t nl;
			while ((nl = buffer.find('\n')) != std::string::npos) {
				const auto request = json::parse(buffer.substr(0, nl));
				requests_.push_back(buffer.substr(0, nl));
				buffer.erase(0, nl + 1);
				const std::size_t rows = request["test"]["X"].size();
				json response{{"id", request["id"]},
				              {"mean", std::vector<double>(rows, 0.0)},
				              {"quantiles", std::vector<std::vector<double>>(request["quantiles"].size(),
				                                                             std::vector<double>(rows, 0.0))}};
				const std::string line = response.dump() + "\n";
				::send(conn, line.data(), line.size(), MSG_NOSIGNAL);
			}
		}
		::close(conn);
	}

	int fd_ = -1;
	int port_ = 0;
	std::vector<std::string> requests_;
	std::thread thread_;
};

} // namespace

TEST(Protocol, RequestMatchesWireSchema) {
	const auto request = protocol::make_request("a", toy_table(), {0.1, 0.5}, 17);
	EXPECT_EQ(request["id"], "a");
	EXPECT_EQ(request["op"], "fit_predict");
	EXPECT_EQ(request["train"]["X"].size(), 4u);
	EXPECT_EQ(request["train"]["X"][1], json::array({0.0, 1.0}));
	EXPECT_EQ(request["train"]["y"], json::array({1.0, 2.0, 3.0, 4.0}));
	EXPECT_EQ(request["train"]["categorical_cols"], json::array({1}));
	EXPECT_EQ(request["test"]["X"].size(), 2u);
	EXPECT_EQ(request["quantiles"], json::array({0.1, 0.5}));
	EXPECT_EQ(request["seed"], 17);
	// One line on the wire.
	EXPECT_EQ(request.dump().find('\n'), std::string::npos);
}

TEST(Protocol, NonFiniteInputsAreNotSerialised) {
	auto data = toy_table();
	data.train_y(2) = std::nan("");
	EXPECT_THROW(protocol::make_request("a", data, kLevels, 0), Error);
}

TEST(Protocol, WrongMeanLengthNamesBothCounts) {
	const json response{{"id", "a"}, {"mean", {1.0}}, {"quantiles", json::array()}};
	try {
		protocol::parse_response(response, "a", 2, 0);
		FAIL();
	} catch (const Error &e) {
		EXPECT_EQ(e.kind(), ErrorKind::MalformedResponse);
		EXPECT_NE(std::string(e.what()).find("length 1"), std::string::npos);
		EXPECT_NE(std::string(e.what()).find("expected 2"), std::string::npos);
	}
}

TEST(Protocol, QuantileLevelCountMustMatchRequest) {
	json quantiles = json::array();
	for (int l = 0; l < 8; ++l) {
		quantiles.push_back({0.0});
	}
	const json response{{"id", "a"}, {"mean", {0.0}}, {"quantiles", quantiles}};
	EXPECT_THROW(protocol::parse_response(response, "a", 1, 9), Error);
	quantiles.push_back({0.0});
	const json ok{{"id", "a"}, {"mean", {0.0}}, {"quantiles", quantiles}};
	EXPECT_EQ(protocol::parse_response(ok, "a", 1, 9).quantiles.size(), 9u);
}

TEST(Protocol, IdMustRoundTrip) {
	const json response{{"id", "b"}, {"mean", {0.0}}, {"quantiles", json::array()}};
	EXPECT_THROW(protocol::parse_response(response, "a", 1, 0), Error);
}

TEST(ExternalProcess, ZeroStubYieldsZerosWithCorrectLengths) {
	// The stub answers with the training mean; zero targets make it a zero stub.
	auto data = toy_table();
	data.train_y.setZero();
	auto backend = backend_for(stub("mean"));
	const auto pred = backend.fit_predict(data, kLevels, 0);
	EXPECT_EQ(pred.mean, std::vector<double>(2, 0.0));
	ASSERT_EQ(pred.quantiles.size(), 9u);
	for (const auto &q : pred.quantiles) {
		EXPECT_EQ(q, std::vector<double>(2, 0.0));
	}
	// The connection is reused for a second request.
	const auto again = backend.fit_predict(toy_table(), kLevels, 0);
	EXPECT_EQ(again.mean, std::vector<double>(2, 2.5));
}

TEST(ExternalProcess, HandshakeVersionIsRecorded) {
	auto backend = backend_for(stub("hello 2.1.3"));
	backend.fit_predict(toy_table(), kLevels, 0);
	EXPECT_EQ(backend.version(), "stub/2.1.3");
}

TEST(ExternalProcess, WrongLengthIsMalformed) {
	auto backend = backend_for(stub("wrong-length"));
	EXPECT_EQ(failure_kind(backend), ErrorKind::MalformedResponse);
}

TEST(ExternalProcess, MismatchedIdIsMalformed) {
	auto backend = backend_for(stub("bad-id"));
	EXPECT_EQ(failure_kind(backend), ErrorKind::MalformedResponse);
}

TEST(ExternalProcess, NanTokenIsMalformed) {
	auto backend = backend_for(stub("nan"));
	EXPECT_EQ(failure_kind(backend), ErrorKind::MalformedResponse);
}

TEST(ExternalProcess, GarbageLineIsMalformed) {
	auto backend = backend_for(stub("garbage"));
	EXPECT_EQ(failure_kind(backend), ErrorKind::MalformedResponse);
}

TEST(ExternalProcess, ErrorResponseSurfacesAndConnectionSurvives) {
	auto backend = backend_for(stub("error"));
	EXPECT_EQ(failure_kind(backend), ErrorKind::BackendError);
	EXPECT_EQ(failure_kind(backend), ErrorKind::BackendError);
}

TEST(ExternalProcess, DeadEndpointIsUnavailable) {
	auto backend = backend_for("/nonexistent/model-server 2>/dev/null");
	EXPECT_EQ(failure_kind(backend), ErrorKind::BackendUnavailable);
	auto exits = backend_for(stub("exit"));
	EXPECT_EQ(failure_kind(exits), ErrorKind::BackendUnavailable);
}

TEST(ExternalProcess, SilentServerTimesOutAfterOneRetry) {
	auto backend = backend_for(stub("sleep"), 300);
	const auto start = std::chrono::steady_clock::now();
	EXPECT_EQ(failure_kind(backend), ErrorKind::Timeout);
	const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
	EXPECT_GE(elapsed, 0.6);
	EXPECT_LT(elapsed, 5.0);
}

TEST(ExternalTcp, ExchangesOverSocket) {
	ZeroServer server;
	const std::string endpoint = "127.0.0.1:" + std::to_string(server.port());
	EXPECT_TRUE(ExternalBackend::is_tcp_endpoint(endpoint));
	{
		auto backend = backend_for(endpoint);
		const auto a = backend.fit_predict(toy_table(), kLevels, 0);
		const auto b = backend.fit_predict(toy_table(), {0.5}, 0);
		EXPECT_EQ(a.mean, std::vector<double>(2, 0.0));
		EXPECT_EQ(b.quantiles.size(), 1u);
	}
	const auto seen = server.finish();
	ASSERT_EQ(seen.size(), 2u);
	EXPECT_EQ(json::parse(seen[0])["id"], "req-1");
	EXPECT_EQ(json::parse(seen[1])["id"], "req-2");
}

TEST(ExternalTcp, RefusedConnectionIsUnavailable) {
	const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
	sockaddr_in addr{};
	addr.sin_family = AF_INET;
	addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
	::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof addr);
	socklen_t len = sizeof addr;
	::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len);
	const int port = ntohs(addr.sin_port);
	::close(fd); // nothing listens on the port now
	auto backend = backend_for("127.0.0.1:" + std::to_string(port));
	EXPECT_EQ(failure_kind(backend), ErrorKind::BackendUnavailable);
}

TEST(ExternalEndpoint, ClassifiesTcpVersusCommand) {
	EXPECT_TRUE(ExternalBackend::is_tcp_endpoint("localhost:8080"));
	EXPECT_TRUE(ExternalBackend::is_tcp_endpoint("model-host.internal:9000"));
	EXPECT_FALSE(ExternalBackend::is_tcp_endpoint("python -m bridge"));
	EXPECT_FALSE(ExternalBackend::is_tcp_endpoint("./server --port:80"));
}
