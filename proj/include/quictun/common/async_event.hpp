#pragma once

// Broadcast wake-up for coroutines on one executor. Waiters re-check their
// condition after waking; notify_all() with no waiters is a no-op.

#include <algorithm>
#include <chrono>
#include <vector>

#include <boost/asio/awaitable.hpp>
#include <boost/asio/redirect_error.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/use_awaitable.hpp>

namespace quictun {

class AsyncEvent {
public:
    explicit AsyncEvent(boost::asio::any_io_executor ex) : ex_(std::move(ex)) {}
    AsyncEvent(const AsyncEvent&) = delete;
    AsyncEvent& operator=(const AsyncEvent&) = delete;

    boost::asio::awaitable<void> wait()
    {
        co_await wait_until(boost::asio::steady_timer::time_point::max());
    }

    // Returns false if the deadline passed without a notification.
    boost::asio::awaitable<bool> wait_until(std::chrono::steady_clock::time_point deadline)
    {
        boost::asio::steady_timer timer(ex_, deadline);
        waiters_.push_back(&timer);
        boost::system::error_code ec;
        co_await timer.async_wait(boost::asio::redirect_error(boost::asio::use_awaitable, ec));
        auto it = std::find(waiters_.begin(), waiters_.end(), &timer);
        if (it != waiters_.end()) waiters_.erase(it);
        co_return ec == boost::asio::error::operation_aborted;
    }

    boost::asio::awaitable<bool> wait_for(std::chrono::steady_clock::duration d)
    {
        co_return co_await wait_until(std::chrono::steady_clock::now() + d);
    }

    void notify_all()
    {
        for (auto* t : waiters_) t->cancel();
        waiters_.clear();
    }

    bool has_waiters() const { return !waiters_.empty(); }

private:
    boost::asio::any_io_executor ex_;
    std::vector<boost::asio::steady_timer*> waiters_;
};

}  // namespace quictun
