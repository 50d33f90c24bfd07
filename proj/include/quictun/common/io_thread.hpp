#pragma once

// An io_context running on its own thread. Handles built on it (tunnel roles,
// impairer) are driven from any thread through run_sync().

#include <future>
#include <optional>
#include <string>
#include <thread>

#include <boost/asio/co_spawn.hpp>
#include <boost/asio/executor_work_guard.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/post.hpp>

namespace quictun {

class IoThread {
public:
    explicit IoThread(std::string name = "io");
    ~IoThread();
    IoThread(const IoThread&) = delete;
    IoThread& operator=(const IoThread&) = delete;

    boost::asio::io_context& context() { return ctx_; }
    boost::asio::any_io_executor executor() { return ctx_.get_executor(); }
    bool in_thread() const { return std::this_thread::get_id() == thread_.get_id(); }
    // Stops the loop and joins; pending handlers are dropped.
    void stop();
    // CPU time (user + system) consumed by the loop thread so far; 0 once stopped.
    double cpu_seconds() const;

    // Runs `f` on the loop thread and waits for its result.
    template <typename F>
    auto run_sync(F&& f) -> decltype(f())
    {
        if (in_thread() || !thread_.joinable()) return f();
        std::packaged_task<decltype(f())()> task(std::forward<F>(f));
        auto fut = task.get_future();
        boost::asio::post(ctx_, [&task] { task(); });
        return fut.get();
    }

    // Runs a coroutine on the loop and waits for it to finish.
    template <typename T>
    T run_sync(boost::asio::awaitable<T> aw)
    {
        std::promise<T> p;
        auto fut = p.get_future();
        boost::asio::co_spawn(ctx_, std::move(aw), [&p](std::exception_ptr ep, auto... value) {
            if (ep) p.set_exception(ep);
            else if constexpr (sizeof...(value) == 0) p.set_value();
            else p.set_value(std::move(value)...);
        });
        return fut.get();
    }

private:
    boost::asio::io_context ctx_{1};
    std::optional<boost::asio::executor_work_guard<boost::asio::io_context::executor_type>> work_;
    std::thread thread_;
};

}  // namespace quictun
