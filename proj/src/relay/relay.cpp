#include "quictun/relay/relay.hpp"

#include <optional>
#include <vector>

#include <boost/asio/co_spawn.hpp>
#include <boost/asio/this_coro.hpp>
#include <boost/system/system_error.hpp>

#include "quictun/common/async_event.hpp"
#include "quictun/common/log.hpp"

namespace quictun::relay {

namespace asio = boost::asio;

const char* to_string(Termination t)
{
    switch (t) {
    case Termination::clean_eof_both: return "clean_eof_both";
    case Termination::error_a: return "error_a";
    case Termination::error_b: return "error_b";
    case Termination::cancelled: return "cancelled";
    }
    return "?";
}

namespace {

PumpResult::Status classify(std::exception_ptr ep, PumpResult::Status failure, std::string& what)
{
    try {
        std::rethrow_exception(ep);
    } catch (const boost::system::system_error& e) {
        what = e.what();
        if (e.code() == asio::error::operation_aborted) return PumpResult::Status::cancelled;
    } catch (const std::exception& e) {
        what = e.what();
    }
    return failure;
}

}  // namespace

asio::awaitable<PumpResult> pump(DuplexEndpoint& src, DuplexEndpoint& dst, std::size_t buffer_size)
{
    if (buffer_size == 0) throw std::invalid_argument("pump buffer_size must be >= 1");
    PumpResult result;
    std::vector<std::uint8_t> buf(buffer_size);
    for (;;) {
        std::size_t n = 0;
        std::exception_ptr ep;
        try {
            n = co_await src.read_some(MutableByteView(buf.data(), buf.size()));
        } catch (...) {
            ep = std::current_exception();
        }
        if (ep) {
            result.status = classify(ep, PumpResult::Status::read_failed, result.error);
            co_return result;
        }
        if (n == 0) break;
        try {
            co_await dst.write_all(ByteView(buf.data(), n));
        } catch (...) {
            ep = std::current_exception();
        }
        if (ep) {
            result.status = classify(ep, PumpResult::Status::write_failed, result.error);
            co_return result;
        }
        result.bytes += n;
    }
    std::exception_ptr ep;
    try {
        co_await dst.shutdown_write();
    } catch (...) {
        ep = std::current_exception();
    }
    if (ep) result.status = classify(ep, PumpResult::Status::write_failed, result.error);
    co_return result;
}

asio::awaitable<RelayOutcome> bidirectional_copy(DuplexEndpoint& a, DuplexEndpoint& b, RelayOptions options)
{
    auto ex = co_await asio::this_coro::executor;
    AsyncEvent changed(ex);
    std::optional<PumpResult> ab, ba;
    // Failures in completion order; the first one decides the termination.
    std::vector<Termination> failures;
    std::string first_error;
    int running = 2;

    auto on_done = [&](std::optional<PumpResult>& slot, bool a_is_src) {
        return [&, slotp = &slot, a_is_src](std::exception_ptr ep, PumpResult r) {
            if (ep) {
                r.status = PumpResult::Status::read_failed;
                classify(ep, r.status, r.error);
            }
            using S = PumpResult::Status;
            if (r.status == S::read_failed || r.status == S::write_failed) {
                bool a_failed = (r.status == S::read_failed) == a_is_src;
                failures.push_back(a_failed ? Termination::error_a : Termination::error_b);
                if (first_error.empty()) first_error = r.error;
            }
            *slotp = std::move(r);
            --running;
            changed.notify_all();
        };
    };
    asio::co_spawn(ex, pump(a, b, options.buffer_size), on_done(ab, true));
    asio::co_spawn(ex, pump(b, a, options.buffer_size), on_done(ba, false));

    auto cancelled = [&] {
        return (ab && ab->status == PumpResult::Status::cancelled) ||
               (ba && ba->status == PumpResult::Status::cancelled);
    };
    while (running > 0 && failures.empty() && !cancelled()) co_await changed.wait();
    if (running > 0) {
        auto deadline = std::chrono::steady_clock::now() + options.drain_timeout;
        while (running > 0 && std::chrono::steady_clock::now() < deadline) co_await changed.wait_until(deadline);
        if (running > 0) {
            a.cancel();
            b.cancel();
            while (running > 0) co_await changed.wait();
        }
    }

    RelayOutcome out;
    out.bytes_a_to_b = ab->bytes;
    out.bytes_b_to_a = ba->bytes;
    if (!failures.empty()) {
        out.termination = failures.front();
        out.error = first_error;
        a.abort(options.abort_code);
        b.abort(options.abort_code);
    } else if (cancelled()) {
        out.termination = Termination::cancelled;
        out.error = "cancelled";
    }
    co_return out;
}

}  // namespace quictun::relay
