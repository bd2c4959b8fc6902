#pragma once

// Preprocessing filters, resampling, windowing and spectral features.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "innerspeech/core.hpp"
#include "innerspeech/error.hpp"
#include "innerspeech/fft.hpp"

namespace innerspeech::dsp {

using Signal = std::vector<double>;

// ---------------------------------------------------------------------------
// IIR design: second-order sections

/// One biquad, b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
  double b0, b1, b2;
  double a1, a2;

  std::complex<double> response(double omega) const {
    const std::complex<double> z1 = std::polar(1.0, -omega);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }
};

struct SosFilter {
  std::vector<Biquad> sections;

  /// Complex frequency response at `freq_hz` for sampling rate `fs`.
  std::complex<double> response(double freq_hz, double fs) const {
    const double omega = 2.0 * std::numbers::pi * freq_hz / fs;
    std::complex<double> h = 1.0;
    for (const auto& s : sections) h *= s.response(omega);
    return h;
  }
};

/// Butterworth bandpass of prototype order `order` (2*order poles), bilinear
/// transform with prewarped band edges, normalized to unit gain at the
/// geometric band center.
inline SosFilter butter_bandpass(double fs, double low, double high, int order) {
  if (!(low > 0.0) || !(low < high) || !(high < fs / 2.0) || order < 1) {
    throw Error(ErrorCode::InvalidBandEdges, "dsp",
                "need 0 < low < high < fs/2 and order >= 1 (low=" + std::to_string(low) +
                    ", high=" + std::to_string(high) + ", fs=" + std::to_string(fs) + ")");
  }
  using cd = std::complex<double>;
  const double pi = std::numbers::pi;
  const double k2 = 2.0 * fs;
  const double wl = k2 * std::tan(pi * low / fs);
  const double wh = k2 * std::tan(pi * high / fs);
  const double bw = wh - wl;
  const double w0 = std::sqrt(wl * wh);

  auto to_z = [&](cd s) { return (k2 + s) / (k2 - s); };
  auto section_from = [](cd za, cd zb) {
    // Zeros at z = +1 and z = -1 for every bandpass section.
    const cd sum = za + zb;
    const cd prod = za * zb;
    return Biquad{1.0, 0.0, -1.0, -sum.real(), prod.real()};
  };

  SosFilter f;
  for (int k = 0; k < order; ++k) {
    const cd p = std::polar(1.0, pi * (2.0 * k + order + 1) / (2.0 * order));
    if (p.imag() < -1e-12) continue;  // conjugates are handled with their partner
    const cd half = p * bw / 2.0;
    const cd root = std::sqrt(half * half - w0 * w0);
    const cd s1 = half + root;
    const cd s2 = half - root;
    if (std::abs(p.imag()) <= 1e-12) {
      // Real prototype pole: its two bandpass poles form one real section.
      f.sections.push_back(section_from(to_z(s1), to_z(s2)));
    } else {
      f.sections.push_back(section_from(to_z(s1), std::conj(to_z(s1))));
      f.sections.push_back(section_from(to_z(s2), std::conj(to_z(s2))));
    }
  }
  const double center_hz = fs / pi * std::atan(w0 / k2);
  const double gain = std::abs(f.response(center_hz, fs));
  const double per_section = std::pow(gain, -1.0 / static_cast<double>(f.sections.size()));
  for (auto& s : f.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  return f;
}

/// Second-order IIR notch at f0 with quality factor Q (-3 dB width f0/Q).
inline SosFilter iir_notch(double fs, double f0, double quality) {
  if (!(f0 > 0.0) || !(f0 < fs / 2.0) || !(quality > 0.0)) {
    throw Error(ErrorCode::InvalidFrequency, "dsp",
                "notch needs 0 < f0 < fs/2 (f0=" + std::to_string(f0) + ", fs=" + std::to_string(fs) + ")");
  }
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  const double bw = w0 / quality;
  const double g = 1.0 / (1.0 + std::tan(bw / 2.0));
  const double c = std::cos(w0);
  return SosFilter{{Biquad{g, -2.0 * g * c, g, -2.0 * g * c, 2.0 * g - 1.0}}};
}

namespace detail {

/// Direct-form II transposed cascade, each section started in the steady state
/// it would reach for a constant input equal to x[0].
inline void sos_run(const SosFilter& f, std::vector<double>& x) {
  if (x.empty()) return;
  double level = x.front();
  for (const auto& s : f.sections) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z1 = (g - s.b0) * level;
    double z2 = (s.b2 - s.a2 * g) * level;
    for (auto& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    level *= g;
  }
}

inline std::size_t default_padlen(const SosFilter& f) { return 3 * (2 * f.sections.size() + 1); }

/// Odd extension by `pad` samples at both ends.
inline std::vector<double> odd_extend(std::span<const double> x, std::size_t pad) {
  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    ext[i] = 2.0 * x[0] - x[pad - i];
    ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  return ext;
}

/// Forward pass then backward pass over an odd-extended copy.
inline std::vector<double> forward_backward(const SosFilter& f, std::span<const double> x, std::size_t pad) {
  auto ext = odd_extend(x, pad);
  sos_run(f, ext);
  std::reverse(ext.begin(), ext.end());
  sos_run(f, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + x.size())};
}

}  // namespace detail

/// Zero-phase application: the mean of the forward-backward and the
/// backward-forward passes, which makes the operator exactly time-reversal
/// equivariant (squared magnitude response, no phase shift).
inline Signal filtfilt(const SosFilter& f, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorCode::SignalTooShort, "dsp", "signal needs at least 2 samples");
  const std::size_t pad = std::min(detail::default_padlen(f), n - 1);
  auto fb = detail::forward_backward(f, x, pad);
  std::vector<double> rev(x.rbegin(), x.rend());
  auto bf = detail::forward_backward(f, rev, pad);
  Signal out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = 0.5 * (fb[i] + bf[n - 1 - i]);
  return out;
}

inline Signal bandpass_filter(std::span<const double> signal, double fs, double low, double high, int order = 4) {
  auto f = butter_bandpass(fs, low, high, order);
  if (signal.size() <= 3 * static_cast<std::size_t>(order)) {
    throw Error(ErrorCode::SignalTooShort, "dsp",
                "bandpass needs more than " + std::to_string(3 * order) + " samples");
  }
  return filtfilt(f, signal);
}

inline Signal notch_filter(std::span<const double> signal, double fs, double f0, double quality = 30.0) {
  auto f = iir_notch(fs, f0, quality);
  if (signal.size() < 2) throw Error(ErrorCode::SignalTooShort, "dsp", "notch needs at least 2 samples");
  return filtfilt(f, signal);
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

inline double blackman(double u) {
  // u in [-1, 1]
  const double t = std::numbers::pi * (u + 1.0);
  return 0.42 - 0.5 * std::cos(t) + 0.08 * std::cos(2.0 * t);
}

}  // namespace detail

/// Band-limited resampling with a Blackman-windowed sinc kernel whose cutoff
/// sits at 0.45 * fs_out; each output sample is the kernel-weighted sum of
/// the input around its fractional position. Edges are even-reflected.
inline Signal resample(std::span<const double> signal, double fs_in, double fs_out) {
  if (!(fs_out > 0.0) || !(fs_in > 0.0)) {
    throw Error(ErrorCode::InvalidFrequency, "dsp", "sampling rates must be positive");
  }
  if (fs_out > fs_in) {
    throw Error(ErrorCode::UpsamplingUnsupported, "dsp",
                "fs_out " + std::to_string(fs_out) + " exceeds fs_in " + std::to_string(fs_in));
  }
  if (fs_out == fs_in) return Signal(signal.begin(), signal.end());
  const std::size_t n = signal.size();
  const double ratio = fs_in / fs_out;
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n) / ratio));
  Signal out(n_out, 0.0);
  if (n == 0) return out;

  const double cutoff = 0.45 * fs_out / fs_in;  // cycles per input sample
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(28.0 * ratio));
  auto sample_at = [&](std::ptrdiff_t i) {
    const auto len = static_cast<std::ptrdiff_t>(n);
    if (len == 1) return signal[0];
    const std::ptrdiff_t period = 2 * (len - 1);
    std::ptrdiff_t k = i % period;
    if (k < 0) k += period;
    if (k >= len) k = period - k;
    return signal[static_cast<std::size_t>(k)];
  };
  for (std::size_t m = 0; m < n_out; ++m) {
    const double t = static_cast<double>(m) * ratio;
    const auto center = static_cast<std::ptrdiff_t>(std::floor(t));
    double acc = 0.0;
    double wsum = 0.0;
    for (std::ptrdiff_t i = center - half; i <= center + half + 1; ++i) {
      const double d = t - static_cast<double>(i);
      if (std::abs(d) > static_cast<double>(half)) continue;
      const double w = 2.0 * cutoff * detail::sinc(2.0 * cutoff * d) * detail::blackman(d / static_cast<double>(half));
      acc += w * sample_at(i);
      wsum += w;
    }
    // Unit DC gain regardless of the fractional offset.
    out[m] = acc / wsum;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sliding windows

/// Window count floor((T - W) / hop) + 1 with hop = W * (1 - overlap); start
/// samples are rounded multiples of the exact hop, so consecutive windows
/// cover the epoch contiguously.
inline std::vector<Epoch> sliding_windows(const Epoch& epoch, double fs, double width_s = 0.5,
                                          double overlap_frac = 0.5) {
  if (!(overlap_frac >= 0.0 && overlap_frac < 1.0) || !(width_s > 0.0)) {
    throw Error(ErrorCode::WindowTooLong, "dsp", "invalid window width or overlap");
  }
  const auto width = samples_for(width_s, fs);
  const std::size_t total = epoch.n_timesteps;
  if (width == 0 || width > total) {
    throw Error(ErrorCode::WindowTooLong, "dsp",
                "window of " + std::to_string(width) + " samples exceeds epoch of " + std::to_string(total));
  }
  const double hop = static_cast<double>(width) * (1.0 - overlap_frac);
  const auto count =
      static_cast<std::size_t>(std::floor(static_cast<double>(total - width) / hop + 1e-9)) + 1;
  std::vector<Epoch> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto start = static_cast<std::size_t>(std::llround(static_cast<double>(k) * hop));
    Epoch w(epoch.n_channels, width, epoch.label);
    for (std::size_t c = 0; c < epoch.n_channels; ++c) {
      auto src = epoch.channel(c);
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(start), width, w.channel(c).begin());
    }
    const double start_s = epoch.interval.start_s + static_cast<double>(k) * hop / fs;
    w.interval = {IntervalKind::Window, start_s, start_s + static_cast<double>(width) / fs};
    w.subject_id = epoch.subject_id;
    out.push_back(std::move(w));
  }
  return out;
}

/// Start sample of each window, matching sliding_windows.
inline std::vector<std::size_t> window_starts(std::size_t total, std::size_t width, double overlap_frac) {
  const double hop = static_cast<double>(width) * (1.0 - overlap_frac);
  const auto count =
      static_cast<std::size_t>(std::floor(static_cast<double>(total - width) / hop + 1e-9)) + 1;
  std::vector<std::size_t> starts;
  for (std::size_t k = 0; k < count; ++k) {
    starts.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(k) * hop)));
  }
  return starts;
}

// ---------------------------------------------------------------------------
// Welch PSD

enum class Taper { Hann, Rectangular };
enum class Detrend { None, Constant };

struct PsdEstimate {
  std::vector<double> freqs_hz;
  std::vector<double> power;  // density, units^2 / Hz
  std::size_t seg_len = 0;
  double overlap_frac = 0.0;
  double fs = 0.0;
};

/// Periodic taper of length n.
inline std::vector<double> make_taper(Taper taper, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (taper == Taper::Hann) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return w;
}

/// Averaged one-sided periodogram density. Segments start every
/// seg_len - floor(seg_len * overlap) samples; trailing samples that do not
/// fill a segment are ignored.
inline PsdEstimate welch_psd(std::span<const double> signal, double fs, std::size_t seg_len,
                             double overlap_frac = 0.5, Taper taper = Taper::Hann,
                             Detrend detrend = Detrend::Constant) {
  if (seg_len == 0 || seg_len > signal.size()) {
    throw Error(ErrorCode::SegmentTooLong, "dsp",
                "segment of " + std::to_string(seg_len) + " samples for signal of " +
                    std::to_string(signal.size()));
  }
  if (!(overlap_frac >= 0.0 && overlap_frac < 1.0)) {
    throw Error(ErrorCode::SegmentTooLong, "dsp", "overlap must lie in [0, 1)");
  }
  const auto noverlap = static_cast<std::size_t>(std::floor(static_cast<double>(seg_len) * overlap_frac));
  const std::size_t step = seg_len - noverlap;
  const std::size_t n_segments = (signal.size() - seg_len) / step + 1;
  const auto window = make_taper(taper, seg_len);
  double wss = 0.0;
  for (double v : window) wss += v * v;
  const std::size_t n_bins = seg_len / 2 + 1;

  PsdEstimate est;
  est.seg_len = seg_len;
  est.overlap_frac = overlap_frac;
  est.fs = fs;
  est.power.assign(n_bins, 0.0);
  est.freqs_hz.resize(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) est.freqs_hz[k] = static_cast<double>(k) * fs / static_cast<double>(seg_len);

  std::vector<double> seg(seg_len);
  for (std::size_t s = 0; s < n_segments; ++s) {
    const auto* src = signal.data() + s * step;
    double mean = 0.0;
    if (detrend == Detrend::Constant) {
      for (std::size_t i = 0; i < seg_len; ++i) mean += src[i];
      mean /= static_cast<double>(seg_len);
    }
    for (std::size_t i = 0; i < seg_len; ++i) seg[i] = (src[i] - mean) * window[i];
    const auto bins = fft::rfft(seg);
    for (std::size_t k = 0; k < n_bins; ++k) est.power[k] += std::norm(bins[k]);
  }
  const double scale = 1.0 / (fs * wss * static_cast<double>(n_segments));
  for (std::size_t k = 0; k < n_bins; ++k) {
    double p = est.power[k] * scale;
    const bool nyquist = (seg_len % 2 == 0) && (k == n_bins - 1);
    if (k != 0 && !nyquist) p *= 2.0;
    est.power[k] = p;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Band power

struct BandDef {
  std::string name;
  double low_hz = 0.0;
  double high_hz = 0.0;
  bool truncated = false;  // narrowed from its canonical range by the profile

  bool operator==(const BandDef&) const = default;
};

inline BandDef make_band(std::string name, double low, double high, bool truncated = false) {
  if (!(low > 0.0) || !(low < high)) {
    throw Error(ErrorCode::InvalidBandEdges, "dsp", "band " + name + " needs 0 < low < high");
  }
  return {std::move(name), low, high, truncated};
}

/// alpha 8-13, beta 13-30, gamma 30-100 Hz.
inline std::vector<BandDef> canonical_bands() {
  return {make_band("alpha", 8.0, 13.0), make_band("beta", 13.0, 30.0), make_band("gamma", 30.0, 100.0)};
}

/// Canonical bands with gamma truncated to 30-40 Hz, for data bandpassed at 2-40 Hz.
inline std::vector<BandDef> imagined_speech_bands() {
  return {make_band("alpha", 8.0, 13.0), make_band("beta", 13.0, 30.0), make_band("gamma", 30.0, 40.0, true)};
}

/// Integral of the piecewise-linear PSD interpolant over [lo, hi].
inline double integrate_psd(const PsdEstimate& psd, double lo, double hi) {
  const auto& f = psd.freqs_hz;
  const auto& p = psd.power;
  if (f.size() < 2 || hi <= lo) return 0.0;
  lo = std::max(lo, f.front());
  hi = std::min(hi, f.back());
  if (hi <= lo) return 0.0;
  auto interp = [&](double x) {
    auto it = std::upper_bound(f.begin(), f.end(), x);
    std::size_t j = static_cast<std::size_t>(it - f.begin());
    if (j == 0) return p.front();
    if (j >= f.size()) return p.back();
    const double t = (x - f[j - 1]) / (f[j] - f[j - 1]);
    return p[j - 1] + t * (p[j] - p[j - 1]);
  };
  double total = 0.0;
  double x0 = lo;
  double y0 = interp(lo);
  auto it = std::upper_bound(f.begin(), f.end(), lo);
  for (; it != f.end() && *it < hi; ++it) {
    const double x1 = *it;
    const double y1 = p[static_cast<std::size_t>(it - f.begin())];
    total += 0.5 * (y0 + y1) * (x1 - x0);
    x0 = x1;
    y0 = y1;
  }
  total += 0.5 * (y0 + interp(hi)) * (hi - x0);
  return total;
}

enum class PowerReference { BandUnion, Total };

/// Band integral divided by the integral over the union of the requested bands
/// (or over [0, fs/2] with PowerReference::Total).
inline std::vector<double> relative_band_power(const PsdEstimate& psd, std::span<const BandDef> bands,
                                               PowerReference reference = PowerReference::BandUnion) {
  const double nyquist = psd.fs / 2.0;
  for (const auto& b : bands) {
    if (b.low_hz < 0.0 || b.high_hz > nyquist + 1e-9 || !(b.low_hz < b.high_hz)) {
      throw Error(ErrorCode::BandOutOfRange, "dsp",
                  "band " + b.name + " outside [0, " + std::to_string(nyquist) + "] Hz");
    }
  }
  std::vector<double> out;
  out.reserve(bands.size());
  for (const auto& b : bands) out.push_back(integrate_psd(psd, b.low_hz, b.high_hz));

  double denom = 0.0;
  if (reference == PowerReference::Total) {
    denom = integrate_psd(psd, 0.0, nyquist);
  } else {
    std::vector<std::pair<double, double>> spans;
    for (const auto& b : bands) spans.emplace_back(b.low_hz, b.high_hz);
    std::sort(spans.begin(), spans.end());
    double cur_lo = spans.front().first;
    double cur_hi = spans.front().second;
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].first <= cur_hi) {
        cur_hi = std::max(cur_hi, spans[i].second);
      } else {
        denom += integrate_psd(psd, cur_lo, cur_hi);
        cur_lo = spans[i].first;
        cur_hi = spans[i].second;
      }
    }
    denom += integrate_psd(psd, cur_lo, cur_hi);
  }
  if (!(denom > 0.0)) throw Error(ErrorCode::ZeroTotalPower, "dsp", "no power in the reference range");
  for (auto& v : out) v /= denom;
  return out;
}

// ---------------------------------------------------------------------------
// Welch defaults and preprocessing profiles

struct WelchParams {
  double seg_s = 1.0;  // segment length in seconds, capped at the signal length
  double overlap_frac = 0.5;
  Taper taper = Taper::Hann;
  Detrend detrend = Detrend::Constant;
  PowerReference reference = PowerReference::BandUnion;

  std::size_t seg_len(std::size_t n_samples, double fs) const {
    return std::max<std::size_t>(1, std::min(n_samples, samples_for(seg_s, fs)));
  }
};

struct PreprocessProfile {
  std::optional<std::pair<double, double>> bandpass;
  std::optional<double> notch_hz;
  std::optional<double> target_rate_hz;
  int filter_order = 4;
  double notch_quality = 30.0;

  void validate() const {
    if (bandpass && target_rate_hz && !(bandpass->second < *target_rate_hz / 2.0)) {
      throw Error(ErrorCode::InvalidBandEdges, "dsp", "bandpass high edge must sit below the target Nyquist");
    }
  }
};

inline nlohmann::json to_json(const PreprocessProfile& p) {
  nlohmann::json j;
  j["bandpass"] = p.bandpass ? nlohmann::json::array({p.bandpass->first, p.bandpass->second}) : nlohmann::json();
  j["notch_hz"] = p.notch_hz ? nlohmann::json(*p.notch_hz) : nlohmann::json();
  j["target_rate_hz"] = p.target_rate_hz ? nlohmann::json(*p.target_rate_hz) : nlohmann::json();
  j["filter_order"] = p.filter_order;
  return j;
}

inline PreprocessProfile profile_from_json(const nlohmann::json& j) {
  PreprocessProfile p;
  try {
    if (j.contains("bandpass") && !j["bandpass"].is_null()) {
      const auto bp = j["bandpass"].get<std::vector<double>>();
      if (bp.size() != 2) throw Error(ErrorCode::InvalidBandEdges, "dsp", "bandpass needs two edges");
      p.bandpass = std::make_pair(bp[0], bp[1]);
    }
    if (j.contains("notch_hz") && !j["notch_hz"].is_null()) p.notch_hz = j["notch_hz"].get<double>();
    if (j.contains("target_rate_hz") && !j["target_rate_hz"].is_null()) {
      p.target_rate_hz = j["target_rate_hz"].get<double>();
    }
    p.filter_order = j.value("filter_order", 4);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, "dsp", std::string("bad preprocess profile: ") + e.what());
  }
  p.validate();
  return p;
}

inline PreprocessProfile thinking_out_loud_profile() {
  return {std::make_pair(0.5, 100.0), 50.0, 254.0, 4};
}

inline PreprocessProfile imagined_speech_profile() {
  return {std::make_pair(2.0, 40.0), std::nullopt, std::nullopt, 4};
}

inline PreprocessProfile profile_by_name(const std::string& name) {
  if (name == "thinking-out-loud") return thinking_out_loud_profile();
  if (name == "imagined-speech") return imagined_speech_profile();
  throw Error(ErrorCode::ConfigInvalid, "dsp", "unknown preprocess profile '" + name + "'");
}

inline std::vector<BandDef> bands_for_profile(const std::string& name) {
  if (name == "imagined-speech") return imagined_speech_bands();
  return canonical_bands();
}

/// Applies bandpass, notch and resampling (in that order) to every channel.
inline EpochSet preprocess(const EpochSet& set, const PreprocessProfile& profile) {
  profile.validate();
  const double fs = set.sampling_rate_hz;
  const double fs_out = profile.target_rate_hz.value_or(fs);
  EpochSet out = set.with_metadata_only();
  out.sampling_rate_hz = fs_out;
  out.epochs.reserve(set.size());
  std::vector<double> x;
  for (const auto& e : set.epochs) {
    const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(e.n_timesteps) * fs_out / fs));
    Epoch r(e.n_channels, n_out, e.label);
    r.interval = e.interval;
    r.subject_id = e.subject_id;
    for (std::size_t c = 0; c < e.n_channels; ++c) {
      auto ch = e.channel(c);
      x.assign(ch.begin(), ch.end());
      if (profile.bandpass) x = bandpass_filter(x, fs, profile.bandpass->first, profile.bandpass->second, profile.filter_order);
      if (profile.notch_hz) x = notch_filter(x, fs, *profile.notch_hz, profile.notch_quality);
      if (fs_out != fs) x = resample(x, fs, fs_out);
      std::transform(x.begin(), x.end(), r.channel(c).begin(), [](double v) { return static_cast<float>(v); });
    }
    out.epochs.push_back(std::move(r));
  }
  return out;
}

}  // namespace innerspeech::dsp
