#ifndef GEOINV_SCHEDULER_HPP
#define GEOINV_SCHEDULER_HPP

#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <variant>

#include "geoinv/inverse.hpp"

namespace geoinv {

enum class ScheduleMode { dynamic, static_ };

inline const char* to_string(ScheduleMode m) { return m == ScheduleMode::dynamic ? "dynamic" : "static"; }

inline ScheduleMode schedule_mode_from_string(const std::string& s) {
  if (s == "dynamic") return ScheduleMode::dynamic;
  if (s == "static") return ScheduleMode::static_;
  throw Error(Errc::invalid_argument, "unknown scheduler mode '" + s + "'");
}

enum class BatchGrouping { physics_frequency, per_term };

inline BatchGrouping batch_grouping_from_string(const std::string& s) {
  if (s == "physics_frequency") return BatchGrouping::physics_frequency;
  if (s == "per_term") return BatchGrouping::per_term;
  throw Error(Errc::invalid_argument, "unknown batch grouping '" + s + "'");
}

/// Term indices per batch, batches ordered by their first term.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<MisfitTerm>& terms, BatchGrouping g) {
  std::vector<std::vector<std::size_t>> batches;
  if (g == BatchGrouping::per_term) {
    for (std::size_t i = 0; i < terms.size(); ++i) batches.push_back({i});
    return batches;
  }
  std::map<std::pair<std::string, double>, std::size_t> slot;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto key = std::make_pair(terms[i].forward().physics(), terms[i].forward().frequency());
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(key, batches.size());
      batches.push_back({i});
    } else {
      batches[it->second].push_back(i);
    }
  }
  return batches;
}

/// batch index -> worker index.
struct AssignmentMap {
  std::vector<int> owner;

  std::vector<std::size_t> batches_of(int worker) const {
    std::vector<std::size_t> b;
    for (std::size_t i = 0; i < owner.size(); ++i)
      if (owner[i] == worker) b.push_back(i);
    return b;
  }
  bool operator==(const AssignmentMap&) const = default;
};

/// Handle to state resident on a worker.
struct RemoteRef {
  int worker = -1;
  std::size_t batch = 0;
  std::uint64_t epoch = 0;
};

struct TrafficCounters {
  std::uint64_t model_bytes = 0;    ///< coordinator -> worker model snapshots and directions
  std::uint64_t payload_bytes = 0;  ///< coordinator -> worker problem descriptions (mesh, sources, data)
  std::uint64_t control_bytes = 0;  ///< coordinator -> worker message envelopes
  std::uint64_t result_bytes = 0;   ///< worker -> coordinator values and partial sums
  std::uint64_t messages = 0;

  std::uint64_t to_workers() const { return model_bytes + payload_bytes + control_bytes; }
};

namespace detail {

constexpr std::uint64_t kEnvelopeBytes = 16;

template <typename T>
class Mailbox {
 public:
  void push(T msg) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      q_.push_back(std::move(msg));
    }
    cv_.notify_one();
  }
  T pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty(); });
    T msg = std::move(q_.front());
    q_.pop_front();
    return msg;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
};

using ModelPtr = std::shared_ptr<const Vector>;

struct MsgInstall {
  std::size_t batch;
  std::vector<std::pair<std::size_t, MisfitTerm>> terms;
  std::uint64_t bytes;
};
struct MsgBeginEpoch {
  std::uint64_t epoch;
  bool drop_residents;
};
struct MsgModel {
  std::uint64_t epoch;
  ModelPtr model;
};
struct MsgEvaluate {
  std::uint64_t epoch;
  std::size_t batch;
  std::vector<std::pair<std::size_t, MisfitTerm>> terms;  ///< empty when resident
  ModelPtr model;                                        ///< null when the epoch model was sent before
  bool fail = false;
};
struct MsgGradient {
  std::uint64_t epoch;
  std::vector<std::size_t> batches;
};
struct MsgHessian {
  std::uint64_t epoch;
  std::vector<std::size_t> batches;
  ModelPtr v;
};
struct MsgDropResidents {};
struct MsgShutdown {};

using Message = std::variant<MsgInstall, MsgBeginEpoch, MsgModel, MsgEvaluate, MsgGradient, MsgHessian,
                             MsgDropResidents, MsgShutdown>;

enum class ReplyKind { installed, refused, evaluated, failed, partial, error };

struct Reply {
  int worker = -1;
  ReplyKind kind = ReplyKind::error;
  std::size_t batch = 0;
  std::vector<std::pair<std::size_t, double>> values;
  ExactVector partial;
  Index solves = 0;
  Errc code = Errc::scheduler;
  std::string what;
  std::uint64_t bytes = 0;
};

/// Worker-owned state; touched only by the worker thread.
class WorkerState {
 public:
  WorkerState(int id, std::uint64_t budget) : id_(id), budget_(budget) {}

  std::optional<Reply> handle(Message& msg) {
    return std::visit([&](auto& m) { return on(m); }, msg);
  }

 private:
  struct Resident {
    std::vector<std::pair<std::size_t, MisfitTerm>> terms;
    std::uint64_t bytes = 0;
    std::uint64_t warm_epoch = 0;
    bool warm = false;
  };

  Reply reply(ReplyKind k, std::size_t batch = 0) {
    Reply r;
    r.worker = id_;
    r.kind = k;
    r.batch = batch;
    return r;
  }

  std::optional<Reply> on(MsgInstall& m) {
    if (budget_ > 0 && resident_bytes_ + m.bytes > budget_) {
      auto r = reply(ReplyKind::refused, m.batch);
      r.code = Errc::distribution;
      r.what = "worker " + std::to_string(id_) + " refused batch " + std::to_string(m.batch) + ": needs " +
               std::to_string(m.bytes) + " bytes with " + std::to_string(resident_bytes_) + " of " +
               std::to_string(budget_) + " in use";
      return r;
    }
    resident_bytes_ += m.bytes;
    residents_[m.batch] = Resident{std::move(m.terms), m.bytes, 0, false};
    return reply(ReplyKind::installed, m.batch);
  }

  std::optional<Reply> on(MsgBeginEpoch& m) {
    epoch_ = m.epoch;
    model_.reset();
    if (m.drop_residents) {
      residents_.clear();
      resident_bytes_ = 0;
    }
    return std::nullopt;
  }

  std::optional<Reply> on(MsgModel& m) {
    epoch_ = m.epoch;
    model_ = m.model;
    return std::nullopt;
  }

  std::optional<Reply> on(MsgEvaluate& m) {
    if (m.model) {
      epoch_ = m.epoch;
      model_ = m.model;
    }
    if (!m.terms.empty()) {
      residents_[m.batch] = Resident{std::move(m.terms), 0, 0, false};
    }
    auto it = residents_.find(m.batch);
    if (it == residents_.end() || !model_ || epoch_ != m.epoch) {
      auto r = reply(ReplyKind::error, m.batch);
      r.code = Errc::stale_assignment;
      r.what = "worker " + std::to_string(id_) + " holds no resident state for batch " + std::to_string(m.batch);
      return r;
    }
    auto& res = it->second;
    res.warm = false;
    if (m.fail) {
      auto r = reply(ReplyKind::failed, m.batch);
      r.what = "injected fault on worker " + std::to_string(id_) + " for batch " + std::to_string(m.batch);
      return r;
    }
    auto r = reply(ReplyKind::evaluated, m.batch);
    try {
      for (auto& [idx, term] : res.terms) {
        const Index before = term.forward().pde_solves();
        r.values.emplace_back(idx, term.evaluate(*model_).value);
        r.solves += term.forward().pde_solves() - before;
      }
    } catch (const Error& e) {
      return error_reply(m.batch, e.code(), e.what());
    } catch (const std::exception& e) {
      return error_reply(m.batch, Errc::scheduler, e.what());
    }
    res.warm = true;
    res.warm_epoch = m.epoch;
    r.bytes = 16 * r.values.size();
    return r;
  }

  template <typename F>
  std::optional<Reply> reduce(std::uint64_t epoch, const std::vector<std::size_t>& batches, F&& per_term) {
    auto r = reply(ReplyKind::partial);
    r.partial = ExactVector(model_ ? model_->size() : 0);
    for (std::size_t b : batches) {
      auto it = residents_.find(b);
      if (it == residents_.end() || !it->second.warm || it->second.warm_epoch != epoch || epoch_ != epoch) {
        auto e = reply(ReplyKind::error, b);
        e.code = Errc::frozen_assignment;
        e.what = "worker " + std::to_string(id_) + " does not own a warm cache for batch " + std::to_string(b) +
                 " in epoch " + std::to_string(epoch);
        return e;
      }
    }
    try {
      for (std::size_t b : batches)
        for (auto& [idx, term] : residents_[b].terms) {
          const Index before = term.forward().pde_solves();
          r.partial.add(per_term(term));
          r.solves += term.forward().pde_solves() - before;
        }
    } catch (const Error& e) {
      return error_reply(0, e.code(), e.what());
    } catch (const std::exception& e) {
      return error_reply(0, Errc::scheduler, e.what());
    }
    r.bytes = r.partial.bytes();
    return r;
  }

  std::optional<Reply> on(MsgGradient& m) {
    return reduce(m.epoch, m.batches, [&](const MisfitTerm& t) { return t.gradient(*model_); });
  }

  std::optional<Reply> on(MsgHessian& m) {
    return reduce(m.epoch, m.batches, [&](const MisfitTerm& t) { return t.gn_hessian_matvec(*model_, *m.v); });
  }

  std::optional<Reply> on(MsgDropResidents&) {
    residents_.clear();
    resident_bytes_ = 0;
    return std::nullopt;
  }

  std::optional<Reply> on(MsgShutdown&) { return std::nullopt; }

  Reply error_reply(std::size_t batch, Errc code, const std::string& what) {
    auto r = reply(ReplyKind::error, batch);
    r.code = code;
    r.what = "worker " + std::to_string(id_) + ": " + what;
    return r;
  }

  int id_;
  std::uint64_t budget_;
  std::uint64_t epoch_ = 0;
  ModelPtr model_;
  std::map<std::size_t, Resident> residents_;
  std::uint64_t resident_bytes_ = 0;
};

}  // namespace detail

struct SchedulerOptions {
  ScheduleMode mode = ScheduleMode::dynamic;
  int n_workers = 1;
  BatchGrouping grouping = BatchGrouping::physics_frequency;
  std::uint64_t memory_budget_bytes = 0;  ///< per worker; 0 means unlimited
};

/// In-process workers that communicate with the coordinator only through
/// mailboxes. Every message carries owned data or immutable snapshots.
class WorkerPool {
 public:
  WorkerPool(int n_workers, std::uint64_t memory_budget_bytes = 0) : mailboxes_(static_cast<std::size_t>(n_workers)) {
    require(n_workers >= 1, Errc::invalid_argument, "worker pool needs at least one worker");
    for (int w = 0; w < n_workers; ++w)
      threads_.emplace_back([this, w, memory_budget_bytes] {
        detail::WorkerState state(w, memory_budget_bytes);
        for (;;) {
          auto msg = mailboxes_[w].pop();
          if (std::holds_alternative<detail::MsgShutdown>(msg)) return;
          if (auto r = state.handle(msg)) replies_.push(std::move(*r));
        }
      });
  }
  ~WorkerPool() {
    for (std::size_t w = 0; w < threads_.size(); ++w) mailboxes_[w].push(detail::MsgShutdown{});
    for (auto& t : threads_) t.join();
  }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return static_cast<int>(threads_.size()); }

  void send(int worker, detail::Message msg) { mailboxes_[static_cast<std::size_t>(worker)].push(std::move(msg)); }
  detail::Reply receive() { return replies_.pop(); }

 private:
  std::vector<detail::Mailbox<detail::Message>> mailboxes_;
  detail::Mailbox<detail::Reply> replies_;
  std::vector<std::thread> threads_;
};

/// Executor that evaluates misfit terms on a worker pool under dynamic
/// (shared queue, payload per assignment) or static (resident batches, model
/// only) scheduling. Reductions are exact, so results do not depend on the
/// mode, the worker count or the realized assignment.
class DistributedExecutor final : public Executor {
 public:
  DistributedExecutor(std::vector<MisfitTerm> terms, SchedulerOptions opts)
      : terms_(std::move(terms)), opts_(opts), pool_(opts.n_workers, opts.memory_budget_bytes) {
    require(!terms_.empty(), Errc::invalid_argument, "at least one misfit term required");
    for (const auto& t : terms_)
      require(t.model_size() == terms_.front().model_size(), Errc::dimension_mismatch, "terms disagree on model size");
    batches_ = make_batches(terms_, opts_.grouping);
    eval_counts_.assign(batches_.size(), 0);
    if (opts_.mode == ScheduleMode::static_) static_distribute();
  }

  Index model_size() const override { return terms_.front().model_size(); }
  std::size_t num_terms() const override { return terms_.size(); }
  std::size_t num_batches() const { return batches_.size(); }
  const std::vector<std::vector<std::size_t>>& batches() const { return batches_; }
  ScheduleMode mode() const { return opts_.mode; }
  int n_workers() const { return pool_.size(); }
  const std::vector<MisfitTerm>& terms() const { return terms_; }

  MisfitSummary evaluate(std::span<const double> m) override {
    return opts_.mode == ScheduleMode::dynamic ? dynamic_compute_misfits(m) : static_compute_misfits(m);
  }

  Vector gradient(std::span<const double> m) override {
    check_frozen(m);
    return reduce_partials(frozen_, [&](std::uint64_t epoch, std::vector<std::size_t> b) {
      return detail::Message(detail::MsgGradient{epoch, std::move(b)});
    });
  }

  Vector hessian_matvec(std::span<const double> m, std::span<const double> v) override {
    return distributed_hessian_matvec(frozen_, m, v);
  }

  /// Hessian product under an explicit assignment, which must match the
  /// ownership realized by the last misfit evaluation at m.
  Vector distributed_hessian_matvec(const AssignmentMap& assignment, std::span<const double> m,
                                    std::span<const double> v) {
    check_frozen(m);
    require(v.size() == m.size(), Errc::dimension_mismatch, "direction length");
    require(assignment.owner.size() == batches_.size(), Errc::frozen_assignment, "assignment does not cover all batches");
    auto vp = std::make_shared<const Vector>(v.begin(), v.end());
    return reduce_partials(assignment, [&](std::uint64_t epoch, std::vector<std::size_t> b) {
      traffic_.model_bytes += 8 * vp->size();
      return detail::Message(detail::MsgHessian{epoch, std::move(b), vp});
    });
  }

  /// Alg. 1: idle workers draw the next batch from a shared queue; each
  /// assignment ships the model and the batch description.
  MisfitSummary dynamic_compute_misfits(std::span<const double> m) {
    require(opts_.mode == ScheduleMode::dynamic, Errc::scheduler, "pool is not in dynamic mode");
    require(static_cast<Index>(m.size()) == model_size(), Errc::dimension_mismatch, "model length");
    begin_epoch(m, true);
    auto model = std::make_shared<const Vector>(m.begin(), m.end());
    std::deque<std::size_t> queue;
    for (std::size_t b = 0; b < batches_.size(); ++b) queue.push_back(b);
    AssignmentMap realized{std::vector<int>(batches_.size(), -1)};
    auto dispatch = [&](int w) {
      const std::size_t b = queue.front();
      queue.pop_front();
      std::vector<std::pair<std::size_t, MisfitTerm>> payload;
      std::uint64_t bytes = 0;
      for (std::size_t i : batches_[b]) {
        payload.emplace_back(i, terms_[i]);
        bytes += terms_[i].payload_bytes();
      }
      traffic_.payload_bytes += bytes;
      traffic_.model_bytes += 8 * model->size();
      realized.owner[b] = w;
      send(w, detail::MsgEvaluate{epoch_, b, std::move(payload), model, take_fault(b)});
    };
    int outstanding = 0;
    for (int w = 0; w < pool_.size() && !queue.empty(); ++w, ++outstanding) dispatch(w);
    return collect(outstanding, realized, [&](int w) {
      if (queue.empty()) return false;
      dispatch(w);
      return true;
    }, [&](std::size_t b) { queue.push_back(b); });
  }

  /// Alg. 2: greedy least-loaded placement in batch order (ties to the lowest
  /// worker index); batches stay resident on their workers.
  AssignmentMap static_distribute() {
    require(opts_.mode == ScheduleMode::static_, Errc::scheduler, "pool is not in static mode");
    std::vector<double> load(static_cast<std::size_t>(pool_.size()), 0.0);
    AssignmentMap map{std::vector<int>(batches_.size(), -1)};
    for (std::size_t b = 0; b < batches_.size(); ++b) {
      const int w = static_cast<int>(std::min_element(load.begin(), load.end()) - load.begin());
      double cost = 0.0;
      std::vector<std::pair<std::size_t, MisfitTerm>> payload;
      std::uint64_t bytes = 0;
      for (std::size_t i : batches_[b]) {
        cost += static_cast<double>(std::max<Index>(1, terms_[i].forward().num_sources()));
        payload.emplace_back(i, terms_[i]);
        bytes += terms_[i].payload_bytes();
      }
      load[static_cast<std::size_t>(w)] += cost;
      map.owner[b] = w;
      traffic_.payload_bytes += bytes;
      send(w, detail::MsgInstall{b, std::move(payload), bytes});
      auto r = receive();
      if (r.kind == detail::ReplyKind::refused) throw Error(Errc::distribution, r.what);
      require(r.kind == detail::ReplyKind::installed, Errc::scheduler, "unexpected reply during distribution");
    }
    static_map_ = map;
    frozen_ = AssignmentMap{};
    return map;
  }

  /// Alg. 3: only the model crosses to the workers; each evaluates its
  /// resident batches and returns scalar misfits.
  MisfitSummary static_compute_misfits(std::span<const double> m) {
    require(opts_.mode == ScheduleMode::static_, Errc::scheduler, "pool is not in static mode");
    require(!static_map_.owner.empty(), Errc::scheduler, "static_distribute has not run");
    require(static_cast<Index>(m.size()) == model_size(), Errc::dimension_mismatch, "model length");
    begin_epoch(m, false);
    auto model = std::make_shared<const Vector>(m.begin(), m.end());
    for (int w = 0; w < pool_.size(); ++w) {
      traffic_.model_bytes += 8 * model->size();
      send(w, detail::MsgModel{epoch_, model});
    }
    int outstanding = 0;
    for (std::size_t b = 0; b < batches_.size(); ++b, ++outstanding)
      send(static_map_.owner[b], detail::MsgEvaluate{epoch_, b, {}, nullptr, take_fault(b)});
    return collect(outstanding, static_map_, [](int) { return false; }, [&](std::size_t b) {
      send(static_map_.owner[b], detail::MsgEvaluate{epoch_, b, {}, nullptr, take_fault(b)});
    });
  }

  const AssignmentMap& frozen_assignment() const { return frozen_; }
  const AssignmentMap& static_assignment() const { return static_map_; }
  const std::vector<int>& last_batch_counts() const { return eval_counts_; }
  const TrafficCounters& traffic() const { return traffic_; }
  Index pde_solves() const override { return solves_; }
  std::uint64_t epoch() const { return epoch_; }

  /// RemoteRefs for state resident after the last evaluation.
  std::vector<RemoteRef> remote_refs() const {
    std::vector<RemoteRef> refs;
    for (std::size_t b = 0; b < frozen_.owner.size(); ++b) refs.push_back({frozen_.owner[b], b, epoch_});
    return refs;
  }

  /// Failure injection: the next `times` evaluations of batch b fail on
  /// whichever worker runs them.
  void inject_fault(std::size_t batch, int times = 1) { faults_[batch] += times; }

  /// Simulates a worker losing its resident state.
  void drop_worker_state(int worker) {
    send(worker, detail::MsgDropResidents{});
  }

 private:
  void send(int w, detail::Message msg) {
    traffic_.control_bytes += detail::kEnvelopeBytes;
    ++traffic_.messages;
    pool_.send(w, std::move(msg));
  }
  detail::Reply receive() {
    auto r = pool_.receive();
    traffic_.result_bytes += r.bytes + detail::kEnvelopeBytes;
    solves_ += r.solves;
    return r;
  }

  bool take_fault(std::size_t b) {
    auto it = faults_.find(b);
    if (it == faults_.end() || it->second <= 0) return false;
    --it->second;
    return true;
  }

  void begin_epoch(std::span<const double> m, bool drop) {
    ++epoch_;
    frozen_ = AssignmentMap{};
    pending_hash_ = hash_values(m);
    std::fill(eval_counts_.begin(), eval_counts_.end(), 0);
    for (int w = 0; w < pool_.size(); ++w) send(w, detail::MsgBeginEpoch{epoch_, drop});
  }

  template <typename Next, typename Requeue>
  MisfitSummary collect(int outstanding, const AssignmentMap& assignment, Next&& next, Requeue&& requeue) {
    std::vector<double> values(terms_.size(), 0.0);
    std::vector<int> failures(batches_.size(), 0);
    std::optional<Error> first_error;
    AssignmentMap realized = assignment;
    while (outstanding > 0) {
      auto r = receive();
      --outstanding;
      if (r.kind == detail::ReplyKind::evaluated) {
        ++eval_counts_[r.batch];
        realized.owner[r.batch] = r.worker;
        for (auto& [i, v] : r.values) values[i] = v;
      } else if (r.kind == detail::ReplyKind::failed) {
        if (++failures[r.batch] >= 2 || first_error) {
          if (!first_error) first_error = Error(Errc::scheduler, r.what + " (already re-queued once)");
        } else {
          requeue(r.batch);
          if (opts_.mode == ScheduleMode::static_) {
            ++outstanding;
            continue;
          }
        }
      } else {
        if (!first_error) first_error = Error(r.code, r.what);
      }
      if (!first_error && next(r.worker)) ++outstanding;
    }
    if (first_error) {
      frozen_ = AssignmentMap{};
      throw *first_error;
    }
    frozen_ = realized;
    frozen_hash_ = pending_hash_;
    MisfitSummary s;
    s.term_values = std::move(values);
    s.value = exact_sum(s.term_values);
    return s;
  }

  void check_frozen(std::span<const double> m) {
    require(!frozen_.owner.empty(), Errc::frozen_assignment, "no frozen assignment; evaluate the misfit first");
    require(hash_values(m) == frozen_hash_, Errc::frozen_assignment,
            "sensitivity requested at a model other than the one the assignment was frozen at");
  }

  template <typename Make>
  Vector reduce_partials(const AssignmentMap& assignment, Make&& make) {
    int outstanding = 0;
    for (int w = 0; w < pool_.size(); ++w) {
      auto mine = assignment.batches_of(w);
      if (mine.empty()) continue;
      send(w, make(epoch_, std::move(mine)));
      ++outstanding;
    }
    ExactVector total(static_cast<std::size_t>(model_size()));
    std::optional<Error> first_error;
    while (outstanding-- > 0) {
      auto r = receive();
      if (r.kind == detail::ReplyKind::partial) {
        total.merge(r.partial);
      } else if (!first_error) {
        const Errc code = r.code == Errc::frozen_assignment && opts_.mode == ScheduleMode::static_ &&
                                  assignment == static_map_
                              ? Errc::stale_assignment
                              : r.code;
        first_error = Error(code, r.what);
      }
    }
    if (first_error) throw *first_error;
    return total.value();
  }

 private:
  std::vector<MisfitTerm> terms_;
  SchedulerOptions opts_;
  WorkerPool pool_;
  std::vector<std::vector<std::size_t>> batches_;
  AssignmentMap static_map_;
  AssignmentMap frozen_;
  std::uint64_t frozen_hash_ = 0;
  std::uint64_t pending_hash_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<int> eval_counts_;
  std::map<std::size_t, int> faults_;
  TrafficCounters traffic_;
  Index solves_ = 0;
};

// ---------------------------------------------------------------------------
// Scaling metrics

/// efficiency(n) = t(1) / t(n) * 100 for constant per-worker workload.
inline std::map<int, double> weak_scaling_efficiency(const std::map<int, double>& timings) {
  auto it = timings.find(1);
  require(it != timings.end(), Errc::metric, "weak scaling needs the single-worker time t(1)");
  std::map<int, double> eff;
  for (const auto& [n, t] : timings) {
    require(t > 0.0 && std::isfinite(t), Errc::metric, "timings must be positive");
    eff[n] = it->second / t * 100.0;
  }
  return eff;
}

/// speedup(n) = t(1) / t(n) for a fixed total workload.
inline std::map<int, double> strong_scaling_speedup(const std::map<int, double>& timings) {
  auto eff = weak_scaling_efficiency(timings);
  for (auto& [n, e] : eff) e /= 100.0;
  return eff;
}

struct ScalingOptions {
  std::vector<int> workers{1, 2, 4};
  int trials = 3;
  int batches_per_worker = 2;
  Index cells_per_axis = 64;
  Index repeats = 200;
  ScheduleMode mode = ScheduleMode::static_;
};

struct ScalingRow {
  int n_workers = 0;
  int trial = 0;
  double seconds = 0.0;
};

/// Synthetic equal-cost batches: each term applies a fixed sparse operator a
/// fixed number of times, and the number of batches grows with the workers.
inline std::vector<MisfitTerm> synthetic_terms(std::size_t count, Index cells_per_axis, Index repeats) {
  auto mesh = TensorMesh::uniform({cells_per_axis, cells_per_axis}, {1.0, 1.0});
  const auto g = gradient_operator(mesh);
  const auto a = add(multiply(g.transpose(), g), SparseMatrix::identity(mesh.num_cells()));
  std::vector<MisfitTerm> terms;
  for (std::size_t k = 0; k < count; ++k) {
    const auto n = static_cast<std::size_t>(a.rows());
    terms.emplace_back(std::make_unique<LinearProblem>(mesh, a, repeats), Vector(n, 1.0), Vector(n, 1.0),
                       ModelMap::identity(), std::nullopt, MisfitKind::weighted_l2, 1e-3, "synthetic");
  }
  return terms;
}

inline std::vector<ScalingRow> run_scaling_test(const ScalingOptions& o) {
  std::vector<ScalingRow> rows;
  for (int n : o.workers) {
    require(n >= 1, Errc::invalid_argument, "worker counts must be positive");
    DistributedExecutor exec(
        synthetic_terms(static_cast<std::size_t>(n * o.batches_per_worker), o.cells_per_axis, o.repeats),
        SchedulerOptions{o.mode, n, BatchGrouping::per_term, 0});
    const Vector m(static_cast<std::size_t>(exec.model_size()), 1.0);
    exec.evaluate(m);
    for (int t = 0; t < o.trials; ++t) {
      const auto start = std::chrono::steady_clock::now();
      exec.evaluate(m);
      rows.push_back({n, t, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
    }
  }
  return rows;
}

/// Per worker count, the median over trials.
inline std::map<int, double> median_timings(const std::vector<ScalingRow>& rows) {
  std::map<int, std::vector<double>> by;
  for (const auto& r : rows) by[r.n_workers].push_back(r.seconds);
  std::map<int, double> out;
  for (auto& [n, ts] : by) {
    std::sort(ts.begin(), ts.end());
    out[n] = ts.size() % 2 ? ts[ts.size() / 2] : 0.5 * (ts[ts.size() / 2 - 1] + ts[ts.size() / 2]);
  }
  return out;
}

inline void write_scaling_csv(const std::string& path, const std::vector<ScalingRow>& rows) {
  std::ofstream f(path);
  require(f.good(), Errc::io, "cannot open " + path);
  f << "n_workers,trial,seconds\n";
  f.precision(9);
  for (const auto& r : rows) f << r.n_workers << ',' << r.trial << ',' << r.seconds << '\n';
  require(f.good(), Errc::io, "write failed for " + path);
}

}  // namespace geoinv

#endif  // GEOINV_SCHEDULER_HPP
