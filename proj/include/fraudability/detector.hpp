#pragma once

// LSTM autoencoder fraud detector, quantile threshold calibration and
// sequential per-transaction detection over sliding windows.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraudability/common.hpp"
#include "fraudability/features.hpp"
#include "fraudability/io.hpp"
#include "fraudability/nn/autodiff.hpp"
#include "fraudability/nn/checkpoint.hpp"
#include "fraudability/nn/layers.hpp"
#include "fraudability/nn/optimizer.hpp"
#include "fraudability/synth.hpp"

namespace fraudability {

/// Windows of n consecutive encoded transactions, stored window-major:
/// values[(k * n + step) * width + feature].
struct WindowSet {
  std::size_t n = 0;
  std::size_t width = 0;
  std::size_t count = 0;
  std::vector<double> values;
  std::vector<int> categories;  // count * n
  std::vector<int> payments;    // count * n

  std::span<const double> window(std::size_t k) const { return {values.data() + k * n * width, n * width}; }
};

inline void append_windows(WindowSet& out, const FeatureEncoder& encoder, const UserHistory& user,
                           std::size_t stride = 1) {
  require(out.n > 0 && out.width == encoder.width(), ErrorCategory::shape, "append_windows: window set shape");
  require(stride > 0, ErrorCategory::invalid_argument, "append_windows: stride must be > 0");
  if (user.size() < out.n) return;
  EncodedHistory h = encoder.encode_history(user);
  for (std::size_t s = 0; s + out.n <= h.rows; s += stride) {
    out.values.insert(out.values.end(), h.data.begin() + static_cast<std::ptrdiff_t>(s * h.width),
                      h.data.begin() + static_cast<std::ptrdiff_t>((s + out.n) * h.width));
    for (std::size_t k = s; k < s + out.n; ++k) {
      out.categories.push_back(user.transactions[k].category_id);
      out.payments.push_back(user.transactions[k].payment_type);
    }
    ++out.count;
  }
}

/// Every full window of every user.
inline WindowSet extract_windows(const FeatureEncoder& encoder, const Dataset& dataset, std::size_t n,
                                 std::size_t stride = 1) {
  WindowSet w{n, encoder.width(), 0, {}, {}, {}};
  for (const auto& u : dataset.users) append_windows(w, encoder, u, stride);
  return w;
}

/// Result of testing one injected transaction against every window containing it.
struct DetectionOutcome {
  bool detected = false;
  std::size_t detection_time = 0;  // n when undetected
  double injected_amount = 0.0;

  bool operator==(const DetectionOutcome&) const = default;
};

/// Start indices of the full windows containing position `i` in a history of
/// `length` rows, ordered by time unit: unit 0 is the window where `i` is the
/// last element, unit n-1 the window where it is the first. Truncated windows
/// are skipped, so entry k has time unit `start + n - 1 - i`.
inline std::vector<std::size_t> windows_containing(std::size_t length, std::size_t i, std::size_t n) {
  require(n > 0, ErrorCategory::invalid_argument, "window length must be > 0");
  require(i < length && length >= n, ErrorCategory::invalid_argument,
          "no full window contains position " + std::to_string(i) + " (length " + std::to_string(length) +
              ", n " + std::to_string(n) + ")");
  std::vector<std::size_t> starts;
  const std::size_t first = i + 1 >= n ? i + 1 - n : 0;
  const std::size_t last = std::min(i, length - n);
  for (std::size_t s = first; s <= last; ++s) starts.push_back(s);
  require(!starts.empty(), ErrorCategory::invalid_argument, "no full window contains position " + std::to_string(i));
  return starts;
}

/// Sequential detection with an arbitrary window classifier `is_fraud(start)`.
template <typename IsFraud>
DetectionOutcome detect_transaction(std::size_t length, std::size_t i, std::size_t n, IsFraud&& is_fraud) {
  for (std::size_t s : windows_containing(length, i, n))
    if (is_fraud(s)) return {true, s + n - 1 - i, 0.0};
  return {false, n, 0.0};
}

/// `q`-quantile by nearest rank: the ceil(q*N)-th smallest value.
inline double nearest_rank_quantile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCategory::invalid_argument, "quantile of empty set");
  require(q > 0.0 && q < 1.0, ErrorCategory::invalid_argument, "quantile must lie in (0,1)");
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q * static_cast<double>(values.size()) - 1e-9);
  const std::size_t idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
  return values[idx];
}

enum class Verdict { benign, fraud };

/// Anything that scores windows and flags those above a threshold.
class WindowDetector {
 public:
  virtual ~WindowDetector() = default;
  virtual const FeatureEncoder& encoder() const = 0;
  virtual std::size_t window() const = 0;
  virtual bool calibrated() const = 0;
  virtual double threshold() const = 0;
  /// Scores of the windows [s, s+n) of `h` for each s in `starts`.
  virtual std::vector<double> window_scores(const EncodedHistory& h, std::span<const std::size_t> starts) const = 0;

  Verdict classify_score(double score) const { return score > threshold() ? Verdict::fraud : Verdict::benign; }
};

/// Sequential detection of the transaction at row `i` of an encoded history.
inline DetectionOutcome detect_transaction(const WindowDetector& d, const EncodedHistory& h, std::size_t i,
                                           double amount = 0.0) {
  require(d.calibrated(), ErrorCategory::state, "detector threshold not calibrated");
  const std::size_t n = d.window();
  auto starts = windows_containing(h.rows, i, n);
  auto scores = d.window_scores(h, starts);
  const double alpha = d.threshold();
  for (std::size_t k = 0; k < starts.size(); ++k)
    if (scores[k] > alpha) return {true, starts[k] + n - 1 - i, amount};
  return {false, n, amount};
}

/// Encodes rows [begin, end) of `txs`, using txs[begin-1] for the first gap.
inline EncodedHistory encode_rows(const FeatureEncoder& enc, std::span<const Transaction> txs, std::size_t begin,
                                  std::size_t end) {
  EncodedHistory h{end - begin, enc.width(), std::vector<double>((end - begin) * enc.width())};
  for (std::size_t r = begin; r < end; ++r)
    enc.encode_into(txs[r], r == 0 ? std::nullopt : std::optional<std::int64_t>(txs[r - 1].timestamp),
                    h.row(r - begin));
  return h;
}

/// Sequential detection of raw transaction `i` in `txs`; encodes only the rows
/// that windows containing `i` can reach.
inline DetectionOutcome detect_injected(const WindowDetector& d, std::span<const Transaction> txs, std::size_t i,
                                        double amount) {
  const std::size_t n = d.window();
  windows_containing(txs.size(), i, n);
  const std::size_t begin = i + 1 >= n ? i + 1 - n : 0;
  const std::size_t end = std::min(txs.size(), i + n);
  EncodedHistory h = encode_rows(d.encoder(), txs, begin, end);
  return detect_transaction(d, h, i - begin, amount);
}

/// Sequence-to-sequence LSTM autoencoder. `layers` lists hidden widths; the
/// middle entry is the bottleneck, whose final state is repeated n times and
/// decoded by the remaining layers plus a linear dense projection per step.
class LstmAutoencoder {
 public:
  LstmAutoencoder() = default;
  LstmAutoencoder(std::size_t width, std::size_t n, std::vector<std::size_t> layers, Rng& rng)
      : width_(width), n_(n), layers_(std::move(layers)) {
    require(!layers_.empty() && layers_.size() % 2 == 1, ErrorCategory::config,
            "autoencoder layers must be an odd-length list (encoder, bottleneck, decoder)");
    require(width > 0 && n > 0, ErrorCategory::config, "autoencoder: empty input");
    const std::size_t mid = layers_.size() / 2;
    require(layers_[mid] < n * width, ErrorCategory::config,
            "autoencoder bottleneck " + std::to_string(layers_[mid]) + " must be narrower than input " +
                std::to_string(n * width));
    std::size_t in = width;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      lstms_.emplace_back(in, layers_[k], rng, "lstm" + std::to_string(k));
      in = layers_[k];
    }
    out_ = nn::Dense(in, width, nn::Activation::linear, rng, "out");
  }

  std::vector<nn::Var> forward(nn::Tape& t, std::span<const nn::Var> steps) const {
    require(steps.size() == n_, ErrorCategory::shape,
            "autoencoder expects " + std::to_string(n_) + " steps, got " + std::to_string(steps.size()));
    const std::size_t mid = layers_.size() / 2;
    std::vector<nn::Var> seq(steps.begin(), steps.end());
    for (std::size_t k = 0; k <= mid; ++k) seq = lstms_[k].forward(t, seq);
    seq.assign(n_, seq.back());
    for (std::size_t k = mid + 1; k < lstms_.size(); ++k) seq = lstms_[k].forward(t, seq);
    for (auto& v : seq) v = out_.forward(t, v);
    return seq;
  }

  /// Per-window squared reconstruction error, summed over steps and features (batch x 1).
  nn::Var window_errors(nn::Tape& t, std::span<const nn::Var> steps) const {
    auto rec = forward(t, steps);
    nn::Var total = nn::row_squared_error(t, rec[0], steps[0]);
    for (std::size_t k = 1; k < n_; ++k) total = nn::add(t, total, nn::row_squared_error(t, rec[k], steps[k]));
    return total;
  }

  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> ps;
    for (auto& l : lstms_) l.collect(ps);
    out_.collect(ps);
    return ps;
  }

  std::size_t width() const { return width_; }
  std::size_t window() const { return n_; }
  const std::vector<std::size_t>& layers() const { return layers_; }

 private:
  std::size_t width_ = 0, n_ = 0;
  std::vector<std::size_t> layers_;
  std::vector<nn::Lstm> lstms_;
  nn::Dense out_;
};

struct DetectorConfig {
  std::size_t window = 10;
  std::vector<std::size_t> layers{64, 16, 64};
  nn::TrainConfig train{50, 32, 1e-3, 0};
  double quantile = 0.99;
  bool finetune_embeddings = true;
};

inline nlohmann::json to_json(const DetectorConfig& c) {
  return {{"window", c.window},
          {"layers", c.layers},
          {"train", nn::to_json(c.train)},
          {"quantile", c.quantile},
          {"finetune_embeddings", c.finetune_embeddings}};
}

inline void from_json(const nlohmann::json& j, DetectorConfig& c) {
  c.window = j.value("window", c.window);
  c.layers = j.value("layers", c.layers);
  if (j.contains("train")) nn::from_json(j.at("train"), c.train);
  c.quantile = j.value("quantile", c.quantile);
  c.finetune_embeddings = j.value("finetune_embeddings", c.finetune_embeddings);
}

namespace detail {

/// Step-major batch tensors from window-major storage.
inline std::vector<nn::Tensor> step_tensors(std::span<const double> windows, std::size_t count, std::size_t n,
                                            std::size_t width) {
  require(windows.size() == count * n * width, ErrorCategory::shape,
          "windows: expected " + std::to_string(count * n * width) + " values, got " + std::to_string(windows.size()));
  std::vector<nn::Tensor> steps(n, nn::Tensor::matrix(count, width));
  for (std::size_t b = 0; b < count; ++b)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(windows.data() + (b * n + k) * width, width, steps[k].values.data() + b * width);
  return steps;
}

}  // namespace detail

/// The attacker's detector: autoencoder, threshold alpha and the encoder it was trained with.
class SurrogateDetector : public WindowDetector {
 public:
  SurrogateDetector() = default;
  SurrogateDetector(FeatureEncoder encoder, DetectorConfig config, std::uint64_t seed)
      : encoder_(std::move(encoder)), config_(std::move(config)) {
    Rng rng(derive_seed(seed, 0xde7));
    model_ = LstmAutoencoder(encoder_.width(), config_.window, config_.layers, rng);
  }

  const FeatureEncoder& encoder() const override { return encoder_; }
  std::size_t window() const override { return config_.window; }
  bool calibrated() const override { return alpha_ > 0.0; }
  double threshold() const override {
    require(calibrated(), ErrorCategory::state, "detector threshold not calibrated");
    return alpha_;
  }
  double quantile() const { return quantile_; }
  void set_threshold(double alpha, double q) {
    require(std::isfinite(alpha) && alpha > 0.0, ErrorCategory::numeric, "threshold must be positive");
    alpha_ = alpha;
    quantile_ = q;
  }

  /// Squared L2 reconstruction error of each window (window-major input).
  std::vector<double> reconstruction_errors(std::span<const double> windows, std::size_t count) const {
    if (count == 0) return {};
    nn::Tape t(false);
    std::vector<nn::Var> steps;
    for (auto& s : detail::step_tensors(windows, count, window(), encoder_.width())) steps.push_back(t.constant(std::move(s)));
    return nn::to_vector(t.value(model_.window_errors(t, steps)).values);
  }

  double reconstruction_error(std::span<const double> window_values) const {
    return reconstruction_errors(window_values, 1)[0];
  }

  /// Reconstruction errors and the gradient of their sum with respect to the
  /// window inputs (window-major, same layout as `windows`).
  std::vector<double> error_gradient(std::span<const double> windows, std::size_t count,
                                     std::vector<double>& gradient) const {
    const std::size_t n = window(), w = encoder_.width();
    nn::Tape t(false);
    std::vector<nn::Var> steps;
    for (auto& s : detail::step_tensors(windows, count, n, w)) steps.push_back(t.input(std::move(s)));
    nn::Var errs = model_.window_errors(t, steps);
    t.backward(nn::sum(t, errs));
    gradient.assign(count * n * w, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const nn::Tensor g = t.grad(steps[k]);
      for (std::size_t b = 0; b < count; ++b)
        std::copy_n(g.values.data() + b * w, w, gradient.data() + (b * n + k) * w);
    }
    return nn::to_vector(t.value(errs).values);
  }

  std::vector<double> window_scores(const EncodedHistory& h, std::span<const std::size_t> starts) const override {
    require(h.width == encoder_.width(), ErrorCategory::shape, "window_scores: encoded width mismatch");
    const std::size_t n = window(), w = h.width;
    std::vector<double> buf;
    buf.reserve(starts.size() * n * w);
    for (std::size_t s : starts) {
      require(s + n <= h.rows, ErrorCategory::invalid_argument, "window_scores: window out of range");
      buf.insert(buf.end(), h.data.begin() + static_cast<std::ptrdiff_t>(s * w),
                 h.data.begin() + static_cast<std::ptrdiff_t>((s + n) * w));
    }
    return reconstruction_errors(buf, starts.size());
  }

  LstmAutoencoder& model() { return model_; }
  const LstmAutoencoder& model() const { return model_; }
  FeatureEncoder& mutable_encoder() { return encoder_; }
  const DetectorConfig& config() const { return config_; }
  std::vector<double> train_curve;

 private:
  FeatureEncoder encoder_;
  DetectorConfig config_;
  LstmAutoencoder model_;
  double alpha_ = 0.0;
  double quantile_ = 0.0;
};

inline Verdict classify_window(const SurrogateDetector& d, std::span<const double> window_values) {
  require(d.calibrated(), ErrorCategory::state, "detector threshold not calibrated");
  return d.classify_score(d.reconstruction_error(window_values));
}

namespace detail {

/// Root-mean-square of a table after removing its column means.
inline double centered_rms(const nn::Parameter& p) {
  auto m = p.value.mat();
  const Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
  return std::sqrt(c.squaredNorm() / static_cast<double>(c.size()));
}

/// Re-centers an embedding table and restores its spread. Without this the
/// joint objective pulls all rows together, which reconstructs trivially.
inline void project_embeddings(nn::Parameter& p, double target_rms) {
  if (p.value.rows() < 2) return;
  auto m = p.value.mat();
  m.rowwise() -= Eigen::RowVectorXd(m.colwise().mean());
  const double rms = std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
  if (rms > 0.0) m *= target_rms / rms;
}

}  // namespace detail

/// Trains the autoencoder on every window of `split`, fine-tuning the
/// category and payment embeddings jointly (they enter both the input and
/// the reconstruction target). After every step each table is re-centered
/// and rescaled to its initial spread.
inline SurrogateDetector train_surrogate(const Dataset& split, const FeatureEncoder& encoder,
                                         const DetectorConfig& config, std::uint64_t seed) {
  const std::size_t n = config.window;
  std::string short_users;
  for (const auto& u : split.users)
    if (u.size() < n + 1) short_users += (short_users.empty() ? "" : ", ") + u.user_id;
  require(short_users.empty(), ErrorCategory::invalid_argument,
          "histories shorter than n+1 = " + std::to_string(n + 1) + ": " + short_users);
  require(!split.users.empty(), ErrorCategory::invalid_argument, "train_surrogate: empty split");

  SurrogateDetector det(encoder, config, seed);
  const WindowSet ws = extract_windows(encoder, split, n);
  const std::size_t w = encoder.width(), d = encoder.embed_dim;
  const std::size_t cat0 = encoder.category_offset(), pay0 = encoder.payment_offset(), rest0 = encoder.age_index();

  auto table = [&](const std::vector<std::vector<double>>& rows, const std::string& name) {
    nn::Tensor t = nn::Tensor::matrix(rows.size(), d);
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), t.values.begin() + r * d);
    return nn::Parameter(name, std::move(t));
  };
  nn::Parameter cat_emb = table(encoder.category_embeddings, "embed.category");
  nn::Parameter pay_emb = table(encoder.payment_embeddings, "embed.payment");

  const double cat_rms = detail::centered_rms(cat_emb), pay_rms = detail::centered_rms(pay_emb);
  auto params = det.model().parameters();
  if (config.finetune_embeddings) params.insert(params.end(), {&cat_emb, &pay_emb});

  nn::TrainConfig tc = config.train;
  tc.seed = derive_seed(seed, 0x7a1, config.train.seed);
  const double scale = 1.0 / static_cast<double>(n * w);
  det.train_curve = nn::train_loop(params, ws.count, tc, [&](nn::Tape& t, std::span<const std::size_t> idx) {
    const std::size_t B = idx.size();
    nn::Var ct = t.parameter(cat_emb), pt = t.parameter(pay_emb);
    std::vector<nn::Var> inputs;
    for (std::size_t k = 0; k < n; ++k) {
      nn::Tensor x = nn::Tensor::matrix(B, w);
      std::vector<std::size_t> cids(B), pids(B);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t row = idx[b] * n + k;
        std::copy_n(ws.values.data() + row * w, w, x.values.data() + b * w);
        cids[b] = static_cast<std::size_t>(ws.categories[row]);
        pids[b] = static_cast<std::size_t>(ws.payments[row]);
        std::copy_n(cat_emb.value.values.data() + cids[b] * d, d, x.values.data() + b * w + cat0);
        std::copy_n(pay_emb.value.values.data() + pids[b] * d, d, x.values.data() + b * w + pay0);
      }
      nn::Var fixed = t.constant(std::move(x));
      if (!config.finetune_embeddings) {
        inputs.push_back(fixed);
        continue;
      }
      const nn::Var parts[] = {nn::slice_cols(t, fixed, 0, cat0), nn::gather_rows(t, ct, std::move(cids)),
                               nn::gather_rows(t, pt, std::move(pids)), nn::slice_cols(t, fixed, rest0, w - rest0)};
      inputs.push_back(nn::concat_cols(t, parts));
    }
    nn::Var total = det.model().window_errors(t, inputs);
    return nn::scale(t, nn::sum(t, total), scale / static_cast<double>(B));
  }, [&] {
    if (!config.finetune_embeddings) return;
    detail::project_embeddings(cat_emb, cat_rms);
    detail::project_embeddings(pay_emb, pay_rms);
  });
  if (config.finetune_embeddings) {
    for (std::size_t r = 0; r < det.encoder().category_embeddings.size(); ++r)
      std::copy_n(cat_emb.value.values.data() + r * d, d, det.mutable_encoder().category_embeddings[r].begin());
    for (std::size_t r = 0; r < det.encoder().payment_embeddings.size(); ++r)
      std::copy_n(pay_emb.value.values.data() + r * d, d, det.mutable_encoder().payment_embeddings[r].begin());
  }
  return det;
}

inline constexpr std::size_t kMinCalibrationWindows = 100;

/// Sets alpha to the nearest-rank q-quantile of benign validation errors.
inline double calibrate_threshold(SurrogateDetector& d, const WindowSet& validation, double q) {
  require(q > 0.0 && q < 1.0, ErrorCategory::invalid_argument, "calibration quantile must lie in (0,1)");
  require(validation.count >= kMinCalibrationWindows, ErrorCategory::invalid_argument,
          "calibration needs >= " + std::to_string(kMinCalibrationWindows) + " windows, got " +
              std::to_string(validation.count));
  require(validation.n == d.window() && validation.width == d.encoder().width(), ErrorCategory::shape,
          "calibration windows do not match the detector");
  const double alpha = nearest_rank_quantile(d.reconstruction_errors(validation.values, validation.count), q);
  d.set_threshold(alpha, q);
  return alpha;
}

/// Fraction of windows scored above the detector's threshold.
inline double flagged_fraction(const SurrogateDetector& d, const WindowSet& windows) {
  require(windows.count > 0, ErrorCategory::invalid_argument, "no windows");
  const double alpha = d.threshold();
  auto errs = d.reconstruction_errors(windows.values, windows.count);
  return static_cast<double>(std::count_if(errs.begin(), errs.end(), [&](double e) { return e > alpha; })) /
         static_cast<double>(errs.size());
}

inline std::string detector_sidecar_path(const std::string& path) { return path + ".meta.json"; }

/// Writes network parameters to `path` and alpha, q, n, architecture and the
/// (fine-tuned) feature encoder to the sidecar.
inline void save_detector(SurrogateDetector& d, const std::string& path) {
  auto params = d.model().parameters();
  write_json(path, nn::save_parameters(params));
  nlohmann::json meta{{"format", "fraudability-detector"},
                      {"version", 1},
                      {"alpha", d.calibrated() ? nlohmann::json(d.threshold()) : nlohmann::json(nullptr)},
                      {"quantile", d.quantile()},
                      {"window", d.window()},
                      {"config", to_json(d.config())},
                      {"train_curve", d.train_curve},
                      {"encoder", to_json(d.encoder())}};
  write_json(detector_sidecar_path(path), meta);
}

inline SurrogateDetector load_detector(const std::string& path) {
  const nlohmann::json meta = read_json(detector_sidecar_path(path));
  const nlohmann::json params_json = read_json(path);
  try {
    require(meta.at("format").get<std::string>() == "fraudability-detector", ErrorCategory::parse,
            "detector sidecar: wrong format tag");
    DetectorConfig config;
    from_json(meta.at("config"), config);
    SurrogateDetector d(encoder_from_json(meta.at("encoder")), config, 0);
    auto params = d.model().parameters();
    nn::load_parameters(params, params_json);
    d.train_curve = meta.at("train_curve").get<std::vector<double>>();
    if (!meta.at("alpha").is_null()) d.set_threshold(meta.at("alpha").get<double>(), meta.at("quantile").get<double>());
    return d;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::parse, detector_sidecar_path(path) + ": " + e.what());
  }
}

}  // namespace fraudability
