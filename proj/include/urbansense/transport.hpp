#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "urbansense/error.hpp"

namespace urbansense::providers {

struct HttpRequest {
    std::string url;   // absolute, e.g. "http://localhost:8000/v1/embeddings" or "mock://v1/embeddings"
    std::string body;  // JSON
    std::map<std::string, std::string> headers;
    double timeout_s = 60.0;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Connection failures and timeouts. Retryable.
class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error(ErrorKind::Provider, what) {}
};

/// POST-only request/response channel. Implementations must be safe to call concurrently.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// Real HTTP(S) via cpp-httplib. One short-lived client per request.
std::shared_ptr<Transport> make_http_transport();

/// Decorator that counts calls and tracks peak concurrency.
class CountingTransport : public Transport {
public:
    explicit CountingTransport(std::shared_ptr<Transport> inner) : inner_(std::move(inner)) {}

    HttpResponse post(const HttpRequest& request) override;

    std::size_t calls() const noexcept { return calls_.load(); }
    std::size_t peak_in_flight() const noexcept { return peak_.load(); }
    void reset() noexcept {
        calls_ = 0;
        peak_ = 0;
    }

private:
    std::shared_ptr<Transport> inner_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> peak_{0};
};

}  // namespace urbansense::providers
