#pragma once

#include <chrono>
#include <mutex>
#include <thread>

namespace csp {

// Time source abstraction so rate limiting and retry backoff can run against
// a virtual clock in tests.
class Clock {
public:
    using TimePoint = std::chrono::steady_clock::time_point;
    using Duration = std::chrono::milliseconds;

    virtual ~Clock() = default;
    virtual TimePoint now() = 0;
    virtual void sleep_for(Duration d) = 0;
};

class SystemClock final : public Clock {
public:
    TimePoint now() override { return std::chrono::steady_clock::now(); }
    void sleep_for(Duration d) override {
        if (d.count() > 0) std::this_thread::sleep_for(d);
    }

    static SystemClock& instance() {
        static SystemClock clock;
        return clock;
    }
};

// Virtual clock: sleeping advances time instead of blocking.
class ManualClock final : public Clock {
public:
    TimePoint now() override {
        std::lock_guard<std::mutex> lock(mutex_);
        return now_;
    }

    void sleep_for(Duration d) override {
        std::lock_guard<std::mutex> lock(mutex_);
        if (d.count() > 0) now_ += d;
    }

    void advance(Duration d) {
        std::lock_guard<std::mutex> lock(mutex_);
        now_ += d;
    }

private:
    std::mutex mutex_;
    TimePoint now_{};  // starts at the steady_clock epoch
};

}  // namespace csp
