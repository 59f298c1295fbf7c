#ifndef EXANETSIM_SIM_HPP_
#define EXANETSIM_SIM_HPP_

#include <cmath>
#include <coroutine>
#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <vector>

namespace exns {

// All simulated time is kept in integer picoseconds so that runs are
// bit-reproducible regardless of event ordering or host FP settings.
using TimePs = std::int64_t;

inline TimePs ns_to_ps(double ns) { return static_cast<TimePs>(std::llround(ns * 1e3)); }
inline double ps_to_ns(TimePs ps) { return static_cast<double>(ps) * 1e-3; }
inline double ps_to_us(TimePs ps) { return static_cast<double>(ps) * 1e-6; }

// Transmission time of `bits` on a `gbps` link, rounded to whole ps.
inline TimePs tx_time_ps(std::int64_t bits, double gbps) {
  return static_cast<TimePs>(std::llround(static_cast<double>(bits) * 1e3 / gbps));
}

class DeadlockDetected : public std::runtime_error {
 public:
  explicit DeadlockDetected(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic discrete-event queue. Events fire in nondecreasing
// timestamp order; ties break by insertion order.
class EventQueue {
 public:
  using Fn = std::function<void()>;

  void post(TimePs t, Fn fn) {
    if (t < now_) t = now_;
    heap_.push(Ev{t, next_seq_++, std::move(fn)});
  }
  void post_now(Fn fn) { post(now_, std::move(fn)); }

  bool empty() const { return heap_.empty(); }
  TimePs now() const { return now_; }
  TimePs next_time() const { return heap_.top().t; }
  std::uint64_t dispatched() const { return dispatched_; }

  // Dispatches one event; returns false when the queue is empty.
  bool step() {
    if (heap_.empty()) return false;
    Ev ev = std::move(const_cast<Ev&>(heap_.top()));
    heap_.pop();
    now_ = ev.t;
    ++dispatched_;
    ev.fn();
    return true;
  }

  void run_until(TimePs t) {
    while (!heap_.empty() && heap_.top().t <= t) step();
    if (now_ < t) now_ = t;
  }

  void run_all() {
    while (step()) {
    }
  }

 private:
  struct Ev {
    TimePs t;
    std::uint64_t seq;
    Fn fn;
  };
  struct Later {
    bool operator()(const Ev& a, const Ev& b) const {
      if (a.t != b.t) return a.t > b.t;
      return a.seq > b.seq;
    }
  };
  std::priority_queue<Ev, std::vector<Ev>, Later> heap_;
  TimePs now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t dispatched_ = 0;
};

// Fire-and-forget coroutine used for rank programs and protocol actors.
// Bodies run eagerly until their first suspension point.
struct Proc {
  struct promise_type {
    Proc get_return_object() { return {}; }
    std::suspend_never initial_suspend() noexcept { return {}; }
    std::suspend_never final_suspend() noexcept { return {}; }
    void return_void() {}
    void unhandled_exception() { std::terminate(); }
  };
};

// Lazy awaitable coroutine with continuation chaining; the building
// block for sequential simulation programs.
struct Task {
  struct promise_type {
    std::coroutine_handle<> cont;
    Task get_return_object() {
      return Task{std::coroutine_handle<promise_type>::from_promise(*this)};
    }
    std::suspend_always initial_suspend() noexcept { return {}; }
    auto final_suspend() noexcept {
      struct Fin {
        bool await_ready() noexcept { return false; }
        std::coroutine_handle<> await_suspend(std::coroutine_handle<promise_type> h) noexcept {
          auto c = h.promise().cont;
          return c ? c : std::noop_coroutine();
        }
        void await_resume() noexcept {}
      };
      return Fin{};
    }
    void return_void() {}
    void unhandled_exception() { std::terminate(); }
  };

  explicit Task(std::coroutine_handle<promise_type> h) : handle(h) {}
  Task(Task&& o) noexcept : handle(o.handle) { o.handle = {}; }
  Task(const Task&) = delete;
  ~Task() {
    if (handle) handle.destroy();
  }

  bool await_ready() const { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> c) {
    handle.promise().cont = c;
    return handle;
  }
  void await_resume() const {}

  std::coroutine_handle<promise_type> handle;
};

// Runs a task as a detached simulation process.
inline void spawn_task(Task t) {
  [](Task tt) -> Proc { co_await tt; }(std::move(t));
}

// One-shot gate: coroutines block on it until open() is called. Waiters
// are resumed through the event queue, never inline.
class Gate {
 public:
  explicit Gate(EventQueue& q) : q_(&q) {}

  bool is_open() const { return open_; }

  void open() {
    if (open_) return;
    open_ = true;
    for (auto h : waiters_) q_->post_now([h] { h.resume(); });
    waiters_.clear();
  }

  auto wait() {
    struct Aw {
      Gate* g;
      bool await_ready() const { return g->open_; }
      void await_suspend(std::coroutine_handle<> h) { g->waiters_.push_back(h); }
      void await_resume() const {}
    };
    return Aw{this};
  }

 private:
  EventQueue* q_;
  bool open_ = false;
  std::vector<std::coroutine_handle<>> waiters_;
};

// Awaitable relative delay.
struct Sleep {
  EventQueue* q;
  TimePs dt;
  bool await_ready() const { return dt <= 0; }
  void await_suspend(std::coroutine_handle<> h) {
    q->post(q->now() + dt, [h] { h.resume(); });
  }
  void await_resume() const {}
};

inline Sleep sleep_for(EventQueue& q, TimePs dt) { return Sleep{&q, dt}; }

// xoshiro-style generator, hand rolled so results never depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    s_ = seed ? seed : 0x9e3779b97f4a7c15ull;
    for (int i = 0; i < 4; ++i) next_u64();
  }
  std::uint64_t next_u64() {
    std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // Uniform in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }
  // Uniform in [0, 1).
  double next_double() { return (next_u64() >> 11) * (1.0 / 9007199254740992.0); }
  bool chance(double p) { return next_double() < p; }

 private:
  std::uint64_t s_ = 0;
};

}  // namespace exns

#endif  // EXANETSIM_SIM_HPP_
