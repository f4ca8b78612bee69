#pragma once

// Streaming signal transforms: missing-value policy, Savitzky-Golay
// smoothing, scalar Kalman filtering, noise injection and delay simulation,
// composed into per-stream pipelines.

#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "thalamus/model.hpp"

namespace thalamus::dsp {

class InvalidParams : public Error {
 public:
  explicit InvalidParams(const std::string& msg) : Error("invalid_params", msg) {}
};

class InvalidPipeline : public Error {
 public:
  explicit InvalidPipeline(const std::string& msg) : Error("invalid_pipeline", msg) {}
};

// ---------------------------------------------------------------------------
// Missing values

enum class MissingMode { passthrough, zero_fill, hold_last };

struct MissingPolicy {
  MissingMode mode = MissingMode::passthrough;
};

/// `last` is the per-channel hold state; it only matters for hold_last.
inline SampleValue apply_missing_policy(const SampleValue& v, MissingPolicy policy,
                                        std::optional<double>& last) {
  if (!v.is_missing()) {
    last = v.number();
    return v;
  }
  switch (policy.mode) {
    case MissingMode::passthrough: return v;
    case MissingMode::zero_fill: return SampleValue{0.0};
    case MissingMode::hold_last: return last ? SampleValue{*last} : SampleValue::missing();
  }
  return v;
}

// ---------------------------------------------------------------------------
// Savitzky-Golay

struct SavGolParams {
  int window = 5;
  int order = 2;
};

inline void validate(const SavGolParams& p) {
  if (p.window < 3 || p.window % 2 == 0)
    throw InvalidParams("savgol window must be an odd integer >= 3");
  if (p.order < 0) throw InvalidParams("savgol order must be >= 0");
  if (p.order >= p.window) throw InvalidParams("savgol order must be < window");
}

/// Smoothing weights of the centered least-squares polynomial fit.
///
/// The fitted value at the window center is a linear functional of the
/// window samples; its weights are row `h` of the hat matrix Q Q^T, where Q
/// is an orthonormal basis of the polynomial space sampled at -h..+h. Q is
/// built by Gram-Schmidt with one reorthogonalization pass, on abscissae
/// scaled to [-1, 1], in long double. The result is symmetrized, which the
/// exact weights are.
inline std::vector<double> savgol_coefficients(const SavGolParams& p) {
  validate(p);
  const int n = p.window;
  const int h = (n - 1) / 2;
  const int m = p.order + 1;

  std::vector<std::vector<long double>> q(m, std::vector<long double>(n));
  for (int k = 0; k < m; ++k) {
    auto& col = q[k];
    for (int j = 0; j < n; ++j) {
      long double u = static_cast<long double>(j - h) / h;
      col[j] = std::pow(u, k);
    }
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < k; ++i) {
        long double dot = 0;
        for (int j = 0; j < n; ++j) dot += q[i][j] * col[j];
        for (int j = 0; j < n; ++j) col[j] -= dot * q[i][j];
      }
    }
    long double norm = 0;
    for (int j = 0; j < n; ++j) norm += col[j] * col[j];
    norm = std::sqrt(norm);
    for (int j = 0; j < n; ++j) col[j] /= norm;
  }

  std::vector<long double> w(n, 0.0L);
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < n; ++j) w[j] += q[k][h] * q[k][j];

  std::vector<double> out(n);
  for (int j = 0; j < n; ++j) out[j] = static_cast<double>((w[j] + w[n - 1 - j]) / 2);
  return out;
}

/// Single-channel centered streaming smoother. Output lags input by h
/// samples; nullopt means the window is still filling.
class SavGolChannel {
 public:
  explicit SavGolChannel(const SavGolParams& p) : weights_(savgol_coefficients(p)) {}

  std::optional<SampleValue> push(const SampleValue& x) {
    window_.push_back(x);
    if (window_.size() > weights_.size()) window_.pop_front();
    if (window_.size() < weights_.size()) return std::nullopt;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (window_[i].is_missing()) return SampleValue::missing();
      acc += weights_[i] * window_[i].number();
    }
    return SampleValue{acc};
  }

  std::size_t latency() const noexcept { return (weights_.size() - 1) / 2; }

 private:
  std::vector<double> weights_;
  std::deque<SampleValue> window_;
};

// ---------------------------------------------------------------------------
// Kalman (scalar constant-state / random-walk model)

struct KalmanParams {
  double q = 1e-3;
  double r = 1e-1;
  double x0 = 0.0;
  double p0 = 1.0;
};

inline void validate(const KalmanParams& k) {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(k.q) || !finite(k.r) || !finite(k.x0) || !finite(k.p0))
    throw InvalidParams("kalman parameters must be finite");
  if (!(k.p0 > 0)) throw InvalidParams("kalman p0 must be > 0");
  if (k.q < 0 || k.r < 0) throw InvalidParams("kalman q and r must be >= 0");
  if (k.q == 0 && k.r == 0) throw InvalidParams("kalman q and r must not both be 0");
}

struct KalmanState {
  double x = 0.0;
  double p = 1.0;
};

inline KalmanState kalman_init(const KalmanParams& k) { return {k.x0, k.p0}; }

/// One predict/update cycle. Without a measurement only the predict step
/// runs and the estimate stays at the prior.
inline KalmanState kalman_step(KalmanState s, std::optional<double> z, const KalmanParams& k) {
  s.p += k.q;
  if (!z) return s;
  const double gain = s.p / (s.p + k.r);
  // Convex form: gain == 1 (r == 0) returns z exactly.
  s.x = (1.0 - gain) * s.x + gain * *z;
  s.p = (1.0 - gain) * s.p;
  return s;
}

// ---------------------------------------------------------------------------
// Noise

enum class NoiseKind { constant, uniform, gaussian };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double amplitude = 0.0;
  std::optional<std::int64_t> seed;
};

inline void validate(const NoiseSpec& n) {
  if (!std::isfinite(n.amplitude)) throw InvalidParams("noise amplitude must be finite");
  if (n.kind != NoiseKind::constant && n.amplitude < 0)
    throw InvalidParams("noise amplitude must be >= 0 for uniform/gaussian");
}

/// Seeded additive noise source. Missing values pass through untouched and
/// do not consume random draws.
class NoiseGenerator {
 public:
  NoiseGenerator(const NoiseSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {
    validate(spec_);
    if (spec_.amplitude > 0) {
      uniform_ = std::uniform_real_distribution<double>(-spec_.amplitude, spec_.amplitude);
      normal_ = std::normal_distribution<double>(0.0, spec_.amplitude);
    }
  }

  SampleValue apply(const SampleValue& v) {
    if (v.is_missing()) return v;
    return SampleValue{v.number() + draw()};
  }

  double draw() {
    switch (spec_.kind) {
      case NoiseKind::constant: return spec_.amplitude;
      case NoiseKind::uniform: return spec_.amplitude == 0 ? 0.0 : uniform_(rng_);
      case NoiseKind::gaussian: return spec_.amplitude == 0 ? 0.0 : normal_(rng_);
    }
    return 0.0;
  }

 private:
  NoiseSpec spec_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_;
  std::normal_distribution<double> normal_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stable per-stage seed from (base seed, device, signal, stage index).
inline std::uint64_t derive_seed(std::int64_t base, std::string_view device_id,
                                 std::string_view signal, std::size_t stage_index) {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(base));
  h = fnv1a(device_id, h);
  h = fnv1a("/", h);
  h = fnv1a(signal, h);
  return splitmix64(h ^ splitmix64(stage_index));
}

// ---------------------------------------------------------------------------
// Delay

enum class DelayMode { fixed_latency, buffer_window };

struct DelaySpec {
  DelayMode mode = DelayMode::fixed_latency;
  Timestamp latency_ms = 0;
  Timestamp window_ms = 0;
};

inline void validate(const DelaySpec& d) {
  if (d.mode == DelayMode::fixed_latency && d.latency_ms < 0)
    throw InvalidParams("delay latency_ms must be >= 0");
  if (d.mode == DelayMode::buffer_window && d.window_ms <= 0)
    throw InvalidParams("delay window_ms must be > 0");
}

struct Delivery {
  Timestamp deliver_at = 0;
  Sample sample;
  friend bool operator==(const Delivery&, const Delivery&) = default;
};

/// Fixed latency shifts delivery time only; embedded timestamps are kept.
/// Buffer window collects samples and releases the batch on the first
/// arrival at or past window_open + window_ms; that arrival opens the next
/// window.
class DelayLine {
 public:
  explicit DelayLine(const DelaySpec& spec) : spec_(spec) { validate(spec_); }

  std::vector<Delivery> admit(Sample s, Timestamp now) {
    std::vector<Delivery> out;
    if (spec_.mode == DelayMode::fixed_latency) {
      out.push_back({now + spec_.latency_ms, std::move(s)});
      return out;
    }
    if (window_open_ && now >= *window_open_ + spec_.window_ms) {
      out.reserve(batch_.size());
      for (auto& b : batch_) out.push_back({now, std::move(b)});
      batch_.clear();
      window_open_.reset();
    }
    if (!window_open_) window_open_ = now;
    batch_.push_back(std::move(s));
    return out;
  }

  std::size_t pending() const noexcept { return batch_.size(); }

 private:
  DelaySpec spec_;
  std::optional<Timestamp> window_open_;
  std::vector<Sample> batch_;
};

// ---------------------------------------------------------------------------
// Parameter parsing from TransformSpec

inline MissingPolicy missing_policy_from(const Params& p) {
  auto mode = require(param_string(p, "mode"), "mode");
  if (mode == "passthrough") return {MissingMode::passthrough};
  if (mode == "zero_fill") return {MissingMode::zero_fill};
  if (mode == "hold_last") return {MissingMode::hold_last};
  throw InvalidParams("unknown missing_policy mode: " + mode);
}

inline SavGolParams savgol_params_from(const Params& p) {
  SavGolParams s{static_cast<int>(require(param_integer(p, "window"), "window")),
                 static_cast<int>(require(param_integer(p, "order"), "order"))};
  validate(s);
  return s;
}

inline KalmanParams kalman_params_from(const Params& p) {
  KalmanParams k{require(param_number(p, "q"), "q"), require(param_number(p, "r"), "r"),
                 param_number(p, "x0").value_or(0.0), param_number(p, "p0").value_or(1.0)};
  validate(k);
  return k;
}

inline NoiseSpec noise_spec_from(const Params& p) {
  auto kind = require(param_string(p, "kind"), "kind");
  NoiseSpec n;
  if (kind == "constant") n.kind = NoiseKind::constant;
  else if (kind == "uniform") n.kind = NoiseKind::uniform;
  else if (kind == "gaussian") n.kind = NoiseKind::gaussian;
  else throw InvalidParams("unknown noise kind: " + kind);
  n.amplitude = require(param_number(p, "amplitude"), "amplitude");
  n.seed = param_integer(p, "seed");
  validate(n);
  return n;
}

inline DelaySpec delay_spec_from(const Params& p) {
  auto mode = require(param_string(p, "mode"), "mode");
  DelaySpec d;
  if (mode == "fixed_latency") {
    d.mode = DelayMode::fixed_latency;
    d.latency_ms = require(param_integer(p, "latency_ms"), "latency_ms");
  } else if (mode == "buffer_window") {
    d.mode = DelayMode::buffer_window;
    d.window_ms = require(param_integer(p, "window_ms"), "window_ms");
  } else {
    throw InvalidParams("unknown delay mode: " + mode);
  }
  validate(d);
  return d;
}

// ---------------------------------------------------------------------------
// Pipeline

/// Checks stage parameters and ordering. The delay stage, if any, must be
/// the single last stage; `allow_delay=false` rejects it entirely (offline
/// use).
inline void validate_pipeline(const std::vector<TransformSpec>& stages, bool allow_delay = true) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    try {
      switch (s.kind) {
        case TransformKind::missing_policy: missing_policy_from(s.params); break;
        case TransformKind::savgol: savgol_params_from(s.params); break;
        case TransformKind::kalman: kalman_params_from(s.params); break;
        case TransformKind::noise: noise_spec_from(s.params); break;
        case TransformKind::delay:
          delay_spec_from(s.params);
          if (!allow_delay) throw InvalidPipeline("delay stages are not allowed here");
          if (i + 1 != stages.size()) throw InvalidPipeline("delay stage must be last");
          break;
      }
    } catch (const InvalidPipeline&) {
      throw;
    } catch (const Error& e) {
      throw InvalidPipeline("stage " + std::to_string(i) + " (" + to_string(s.kind) +
                            "): " + e.what());
    }
  }
}

/// Per-stream transform chain with its own state. Value stages map each
/// channel independently; the optional trailing delay stage decides
/// delivery times.
class Pipeline {
 public:
  /// `seed` is the base seed; noise stages without an explicit seed use it.
  Pipeline(const std::vector<TransformSpec>& stages, std::int64_t seed, const SignalKey& key) {
    validate_pipeline(stages);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& s = stages[i];
      switch (s.kind) {
        case TransformKind::missing_policy:
          stages_.emplace_back(MissingStage{missing_policy_from(s.params), {}});
          break;
        case TransformKind::savgol: stages_.emplace_back(SavGolStage{savgol_params_from(s.params), {}, {}}); break;
        case TransformKind::kalman: stages_.emplace_back(KalmanStage{kalman_params_from(s.params), {}}); break;
        case TransformKind::noise: {
          auto spec = noise_spec_from(s.params);
          auto stage_seed = derive_seed(spec.seed.value_or(seed), key.device_id, key.signal, i);
          stages_.emplace_back(NoiseStage{NoiseGenerator(spec, stage_seed)});
          break;
        }
        case TransformKind::delay: delay_.emplace(delay_spec_from(s.params)); break;
      }
    }
  }

  /// Runs `s` through every stage. Returns nothing while a smoothing window
  /// is warming up; a buffer-window delay can return several samples.
  std::vector<Delivery> apply(const Sample& s, Timestamp now) {
    std::optional<Sample> cur = s;
    for (auto& stage : stages_) {
      cur = std::visit([&](auto& st) { return st.apply(std::move(*cur)); }, stage);
      if (!cur) return {};
    }
    if (delay_) return delay_->admit(std::move(*cur), now);
    std::vector<Delivery> out;
    out.push_back({now, std::move(*cur)});
    return out;
  }

  bool has_delay() const noexcept { return delay_.has_value(); }

 private:
  struct MissingStage {
    MissingPolicy policy;
    std::vector<std::optional<double>> last;
    std::optional<Sample> apply(Sample s) {
      last.resize(s.values.size());
      for (std::size_t c = 0; c < s.values.size(); ++c)
        s.values[c] = apply_missing_policy(s.values[c], policy, last[c]);
      return s;
    }
  };

  struct SavGolStage {
    SavGolParams params;
    std::vector<SavGolChannel> channels;
    std::deque<Sample> held;  // samples awaiting their centered output
    std::optional<Sample> apply(Sample s) {
      if (channels.size() != s.values.size()) {
        channels.assign(s.values.size(), SavGolChannel(params));
        held.clear();
      }
      Values smoothed(s.values.size());
      bool ready = true;
      for (std::size_t c = 0; c < s.values.size(); ++c) {
        auto v = channels[c].push(s.values[c]);
        if (!v) ready = false;
        else smoothed[c] = *v;
      }
      held.push_back(std::move(s));
      const std::size_t h = static_cast<std::size_t>(params.window - 1) / 2;
      if (held.size() > h + 1) held.pop_front();
      if (!ready) return std::nullopt;
      Sample center = held.front();
      center.values = std::move(smoothed);
      return center;
    }
  };

  struct KalmanStage {
    KalmanParams params;
    std::vector<KalmanState> state;
    std::optional<Sample> apply(Sample s) {
      if (state.size() != s.values.size()) state.assign(s.values.size(), kalman_init(params));
      for (std::size_t c = 0; c < s.values.size(); ++c) {
        auto& v = s.values[c];
        state[c] = kalman_step(state[c], v.raw(), params);
        // Missing stays Missing: the state advances but no number is made up.
        if (!v.is_missing()) v = SampleValue{state[c].x};
      }
      return s;
    }
  };

  struct NoiseStage {
    NoiseGenerator gen;
    std::optional<Sample> apply(Sample s) {
      for (auto& v : s.values) v = gen.apply(v);
      return s;
    }
  };

  using Stage = std::variant<MissingStage, SavGolStage, KalmanStage, NoiseStage>;
  std::vector<Stage> stages_;
  std::optional<DelayLine> delay_;
};

/// Convenience entry point matching the single-call form.
inline std::vector<Delivery> apply_pipeline(const Sample& s, Pipeline& state, Timestamp now) {
  return state.apply(s, now);
}

}  // namespace thalamus::dsp
