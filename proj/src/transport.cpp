#include <httplib.h>

#include <cmath>

#include "urbansense/transport.hpp"

namespace urbansense::providers {

namespace {

class HttpTransport : public Transport {
public:
    HttpResponse post(const HttpRequest& request) override {
        const auto scheme_end = request.url.find("://");
        if (scheme_end == std::string::npos) throw Error(ErrorKind::Validation, "bad endpoint url: " + request.url);
        const auto path_start = request.url.find('/', scheme_end + 3);
        const std::string origin = request.url.substr(0, path_start);
        const std::string path = path_start == std::string::npos ? "/" : request.url.substr(path_start);

        httplib::Client client(origin);
        const auto secs = static_cast<time_t>(request.timeout_s);
        const auto usecs = static_cast<time_t>((request.timeout_s - std::floor(request.timeout_s)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);

        httplib::Headers headers;
        for (const auto& [k, v] : request.headers) headers.emplace(k, v);
        auto res = client.Post(path, headers, request.body, "application/json");
        if (!res) throw TransportError("POST " + request.url + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }
};

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttpTransport>(); }

HttpResponse CountingTransport::post(const HttpRequest& request) {
    ++calls_;
    const auto now = ++in_flight_;
    auto peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    struct Guard {
        std::atomic<std::size_t>& n;
        ~Guard() { --n; }
    } guard{in_flight_};
    return inner_->post(request);
}

}  // namespace urbansense::providers
