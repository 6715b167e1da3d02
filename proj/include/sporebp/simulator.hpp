/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cstdint>
#include <exception>
#include <initializer_list>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sporebp/errors.hpp"
#include "sporebp/model.hpp"
#include "sporebp/random.hpp"

namespace sporebp {

// Host counts by spore count (type). Hosts of one type are exchangeable, so
// this is the full Markov state. Type 0 is never stored and neither are zero
// counts.
class PopulationState {
 public:
  using Counts = std::map<std::uint64_t, std::uint64_t>;

  PopulationState() = default;

  explicit PopulationState(const Counts& counts) {
    for (const auto& [k, n] : counts) {
      if (k == 0) throw ConfigError("initial counts: type 0 hosts are not allowed");
      add(k, n);
    }
  }

  PopulationState(std::initializer_list<Counts::value_type> counts) : PopulationState(Counts(counts)) {}

  static PopulationState single(std::uint64_t k) { return PopulationState(Counts{{k, 1}}); }

  void add(std::uint64_t k, std::uint64_t n = 1) {
    if (k == 0 || n == 0) return;
    counts_[k] += n;
    hosts_ += n;
    spores_ += k * n;
  }

  void remove_one(std::uint64_t k) {
    auto it = counts_.find(k);
    assert(it != counts_.end());
    if (--it->second == 0) counts_.erase(it);
    --hosts_;
    spores_ -= k;
  }

  void advance(double dt) { time_ += dt; }

  const Counts& counts() const noexcept { return counts_; }
  std::uint64_t hosts() const noexcept { return hosts_; }
  std::uint64_t spores() const noexcept { return spores_; }
  double time() const noexcept { return time_; }
  bool extinct() const noexcept { return hosts_ == 0; }

  double total_rate(const ModelParams& m) const {
    return m.rho() * static_cast<double>(hosts_) + m.beta() * static_cast<double>(spores_);
  }

  // Cached totals agree with the counts.
  bool consistent() const {
    std::uint64_t n = 0, s = 0;
    for (const auto& [k, c] : counts_) {
      if (k == 0 || c == 0) return false;
      n += c;
      s += k * c;
    }
    return n == hosts_ && s == spores_;
  }

 private:
  Counts counts_;
  std::uint64_t hosts_ = 0;
  std::uint64_t spores_ = 0;
  double time_ = 0.0;
};

enum class EventKind { removal, release };

struct EventRecord {
  double dt;
  EventKind kind;
  std::uint64_t type;       // type of the host the event happened to
  std::uint64_t offspring;  // J for a release, 0 for a removal
};

namespace detail {

// Type of the `target`-th unit when each type k contributes weight(k, n_k) units.
template <typename Weight>
std::uint64_t pick_type(const PopulationState::Counts& counts, std::uint64_t target, Weight weight) {
  for (const auto& [k, n] : counts) {
    const std::uint64_t w = weight(k, n);
    if (target < w) return k;
    target -= w;
  }
  assert(false && "target beyond total weight");
  return counts.rbegin()->first;
}

// Applies one event (without advancing the clock).
inline EventRecord apply_event(PopulationState& state, const ModelParams& m, RandomStream& rng,
                               double dt) {
  const double removal_rate = m.rho() * static_cast<double>(state.hosts());
  const double total = removal_rate + m.beta() * static_cast<double>(state.spores());
  if (rng.uniform() * total < removal_rate) {
    const auto k = pick_type(state.counts(), rng.below(state.hosts()),
                             [](std::uint64_t, std::uint64_t n) { return n; });
    state.remove_one(k);
    return {dt, EventKind::removal, k, 0};
  }
  const auto k = pick_type(state.counts(), rng.below(state.spores()),
                           [](std::uint64_t type, std::uint64_t n) { return type * n; });
  state.remove_one(k);
  state.add(k - 1);
  const std::uint64_t j = m.offspring().sample(rng);
  state.add(j);
  return {dt, EventKind::release, k, j};
}

}  // namespace detail

// Advances the state by one event: an Exp(rho N + beta S) holding time, then
// either removal of a uniformly chosen host or release of a uniformly chosen
// spore.
inline EventRecord step(PopulationState& state, const ModelParams& m, RandomStream& rng) {
  if (state.extinct()) throw std::logic_error("step: population is extinct");
  const double dt = rng.exponential(state.total_rate(m));
  state.advance(dt);
  auto rec = detail::apply_event(state, m, rng, dt);
  assert(state.consistent());
  return rec;
}

struct SimOutcome {
  // Extinction time, or the horizon when censored.
  double time = 0.0;
  bool censored = false;
  std::uint64_t events = 0;
  std::uint64_t peak_hosts = 0;

  bool operator==(const SimOutcome&) const = default;
};

inline constexpr std::uint64_t kDefaultMaxEvents = 1'000'000'000;

// Runs until extinction or until the next event would fall after `horizon`.
// A censored outcome means the population is alive at the horizon.
inline SimOutcome run_to_extinction(PopulationState state, const ModelParams& m, RandomStream& rng,
                                    std::optional<double> horizon = std::nullopt,
                                    std::uint64_t max_events = kDefaultMaxEvents) {
  if (max_events < 1) throw ConfigError("max_events must be >= 1");
  SimOutcome out;
  out.peak_hosts = state.hosts();
  while (!state.extinct()) {
    const double dt = rng.exponential(state.total_rate(m));
    if (horizon && state.time() + dt > *horizon) {
      out.time = *horizon;
      out.censored = true;
      return out;
    }
    if (out.events == max_events) {
      throw BudgetExhausted("event budget of " + std::to_string(max_events) +
                                " exhausted at t = " + std::to_string(state.time()) + " with " +
                                std::to_string(state.hosts()) + " hosts (replicate " +
                                std::to_string(rng.index()) + ")",
                            rng.index());
    }
    state.advance(dt);
    detail::apply_event(state, m, rng, dt);
    assert(state.consistent());
    ++out.events;
    out.peak_hosts = std::max(out.peak_hosts, state.hosts());
  }
  out.time = state.time();
  return out;
}

// One replicate from a single type-k host: true iff alive at time t.
inline bool survival_indicator(std::uint64_t k, double t, const ModelParams& m, RandomStream& rng,
                               std::uint64_t max_events = kDefaultMaxEvents) {
  if (k == 0) throw ConfigError("survival_indicator: k must be >= 1");
  if (!(t >= 0.0)) throw ConfigError("survival_indicator: t must be >= 0");
  return run_to_extinction(PopulationState::single(k), m, rng, t, max_events).censored;
}

// Calls fn(i) for i in [0, n) on up to `threads` workers. Indices are claimed
// in increasing order; after a failure no new indices are claimed, and the
// exception of the smallest failing index is rethrown, so the reported error
// does not depend on scheduling.
template <typename Fn>
void parallel_for_index(std::uint64_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::min<std::uint64_t>(n, 1024))));
  if (threads == 1) {
    for (std::uint64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::uint64_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::uint64_t failed_index = std::numeric_limits<std::uint64_t>::max();
  std::exception_ptr error;

  auto worker = [&] {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) return;
      const std::uint64_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          error = std::current_exception();
        }
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct BatchOptions {
  unsigned threads = 1;
  std::uint64_t max_events = kDefaultMaxEvents;
};

// Replicate i uses RandomStream(master_seed, i); output is in replicate order
// and independent of the thread count.
inline std::vector<SimOutcome> run_batch(const PopulationState& init, const ModelParams& m,
                                         std::uint64_t master_seed, std::uint64_t replicates,
                                         std::optional<double> horizon = std::nullopt,
                                         BatchOptions opts = {}) {
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  std::vector<SimOutcome> out(replicates);
  parallel_for_index(replicates, opts.threads, [&](std::uint64_t i) {
    RandomStream rng(master_seed, i);
    out[i] = run_to_extinction(init, m, rng, horizon, opts.max_events);
  });
  return out;
}

}  // namespace sporebp
