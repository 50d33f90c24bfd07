#include "quictun/common/io_thread.hpp"

#include <pthread.h>
#include <time.h>

#include "quictun/common/log.hpp"

namespace quictun {

IoThread::IoThread(std::string name) : work_(boost::asio::make_work_guard(ctx_))
{
    thread_ = std::thread([this, name] {
        for (;;) {
            try {
                ctx_.run();
                return;
            } catch (const std::exception& e) {
                log().error("{}: unhandled exception: {}", name, e.what());
            }
        }
    });
}

IoThread::~IoThread()
{
    stop();
}

void IoThread::stop()
{
    if (!thread_.joinable()) return;
    work_.reset();
    ctx_.stop();
    if (in_thread()) {
        thread_.detach();
        return;
    }
    thread_.join();
}

double IoThread::cpu_seconds() const
{
    if (!thread_.joinable()) return 0;
    clockid_t clock;
    // native_handle() is not const in libstdc++.
    if (pthread_getcpuclockid(const_cast<std::thread&>(thread_).native_handle(), &clock) != 0) return 0;
    timespec ts{};
    if (clock_gettime(clock, &ts) != 0) return 0;
    return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

}  // namespace quictun
