// Acceptance gate: one PASS/FAIL/SKIP line per criterion. Exit status is
// non-zero if any criterion fails.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "innerspeech/pipeline.hpp"
#include "oracles.hpp"

using namespace innerspeech;
namespace pl = innerspeech::pipeline;

namespace {

// Pinned tolerances and budgets.
constexpr double welch_rel_tol = 1e-10;
constexpr double alpha_share_min = 0.95;
constexpr double band_share_rel_tol = 0.10;
constexpr double parseval_rel_tol = 0.05;
constexpr double dsp_cpu_budget_s = 10.0;
constexpr double grad_rel_tol = 1e-4;
constexpr double grad_eps = 1e-5;
constexpr double grad_cpu_budget_s = 60.0;
constexpr double uniform_loss_tol = 1e-9;
constexpr double target_accuracy = 0.90;
constexpr double bilstm_cpu_budget_s = 300.0;
constexpr double shallow_cpu_budget_s = 60.0;
constexpr double chance_sigmas = 3.0;
constexpr double real_tol_mean = 0.361, real_tol_band = 0.07;
constexpr double real_words_mean = 0.251, real_words_band = 0.05;

struct Outcome {
  enum Status { Pass, Fail, Skip } status = Fail;
  std::string detail;
};

class CpuTimer {
 public:
  CpuTimer() : start_(std::clock()) {}
  double seconds() const { return static_cast<double>(std::clock() - start_) / CLOCKS_PER_SEC; }

 private:
  std::clock_t start_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void note(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)}; }

std::vector<double> white_noise(std::size_t n, unsigned seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sigma);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// ---------------------------------------------------------------------------

Outcome dsp_oracles() {
  CpuTimer timer;
  bool ok = true;

  double worst = 0.0;
  for (std::size_t n : {128u, 254u, 255u, 635u}) {
    const auto x = white_noise(n, static_cast<unsigned>(n));
    const auto p = dsp::welch_psd(x, 254.0, n, 0.0, dsp::Taper::Rectangular, dsp::Detrend::None);
    const auto direct = oracle::periodogram(x, 254.0);
    for (std::size_t k = 0; k < direct.size(); ++k) {
      if (direct[k] > 0) worst = std::max(worst, std::abs(p.power[k] - direct[k]) / direct[k]);
    }
  }
  ok &= worst < welch_rel_tol;
  note("welch vs periodogram max relative error " + fmt("%.2e", worst));

  const auto tone = oracle::sine(static_cast<std::size_t>(254 * 2.5), 10.0, 254.0);
  const auto bands = dsp::canonical_bands();
  const double alpha = dsp::relative_band_power(dsp::welch_psd(tone, 254.0, 254), bands)[0];
  ok &= alpha > alpha_share_min;
  note("10 Hz alpha share " + fmt("%.4f", alpha));

  const double expected[3] = {5.0 / 92.0, 17.0 / 92.0, 70.0 / 92.0};
  double share[3] = {0, 0, 0};
  const int runs = 20;
  for (int r = 0; r < runs; ++r) {
    const auto rel = dsp::relative_band_power(dsp::welch_psd(white_noise(254 * 60, 1000 + r), 254.0, 254), bands);
    for (int b = 0; b < 3; ++b) share[b] += rel[b] / runs;
  }
  double worst_share = 0.0;
  for (int b = 0; b < 3; ++b) worst_share = std::max(worst_share, std::abs(share[b] / expected[b] - 1.0));
  ok &= worst_share < band_share_rel_tol;
  note("white-noise shares " + fmt("%.4f", share[0]) + " " + fmt("%.4f", share[1]) + " " + fmt("%.4f", share[2]) +
       ", worst relative deviation " + fmt("%.3f", worst_share));

  const auto noise = white_noise(254 * 30, 3, 2.0);
  double mean = 0.0, var = 0.0;
  for (double v : noise) mean += v / static_cast<double>(noise.size());
  for (double v : noise) var += (v - mean) * (v - mean) / static_cast<double>(noise.size());
  const auto psd = dsp::welch_psd(noise, 254.0, 254, 0.5, dsp::Taper::Hann, dsp::Detrend::Constant);
  const double parseval = dsp::integrate_psd(psd, 0.0, 127.0) / var;
  ok &= std::abs(parseval - 1.0) < parseval_rel_tol;
  note("psd integral / variance " + fmt("%.4f", parseval));

  const double cpu = timer.seconds();
  ok &= cpu < dsp_cpu_budget_s;
  return verdict(ok, fmt("%.2f s cpu", cpu));
}

double gradient_error(neural::FrontKind front, neural::Mode mode, unsigned seed) {
  using MatD = neural::Mat<double>;
  neural::NetworkSpec spec;
  spec.front = front;
  spec.input_size = 3;
  spec.hidden = 4;
  spec.dense1 = 6;
  spec.dense2 = 5;
  spec.n_classes = 3;
  spec.dropout1 = spec.dropout2 = mode == neural::Mode::Train ? 0.3 : 0.0;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto params = neural::init_params<double>(spec, seed);
  for (auto* t : params.tensors()) {
    for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] += 0.3 * u(rng);
  }
  std::vector<MatD> xs;
  for (int t = 0; t < 5; ++t) xs.push_back(MatD::NullaryExpr(3, 2, [&] { return u(rng); }));
  const std::vector<int> labels{static_cast<int>(seed % 3), static_cast<int>((seed + 1) % 3)};
  auto loss_at = [&] {
    Rng r(seed);  // same dropout masks on every evaluation
    return neural::loss<double>(neural::forward<double>(spec, params, xs, 2, mode, &r), labels);
  };
  neural::ForwardCache<double> cache;
  Rng r(seed);
  neural::forward<double>(spec, params, xs, 2, mode, &r, &cache);
  auto grad = neural::backward<double>(spec, params, xs, cache, labels);
  double worst = 0.0;
  auto pt = params.tensors();
  auto gt = grad.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    for (Eigen::Index i = 0; i < pt[k]->size(); ++i) {
      double& w = pt[k]->data()[i];
      const double keep = w;
      w = keep + grad_eps;
      const double up = loss_at();
      w = keep - grad_eps;
      const double down = loss_at();
      w = keep;
      const double numeric = (up - down) / (2 * grad_eps);
      const double analytic = gt[k]->data()[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
    }
  }
  return worst;
}

Outcome gradient_check() {
  CpuTimer timer;
  double worst = 0.0;
  int nets = 0;
  for (auto front : {neural::FrontKind::Lstm, neural::FrontKind::BiLstm}) {
    for (auto mode : {neural::Mode::Eval, neural::Mode::Train}) {
      for (unsigned seed = 1; seed <= 10; ++seed) {
        worst = std::max(worst, gradient_error(front, mode, seed));
        ++nets;
      }
    }
  }
  const double cpu = timer.seconds();
  return verdict(worst < grad_rel_tol && cpu < grad_cpu_budget_s,
                 std::to_string(nets) + " networks, max relative error " + fmt("%.2e", worst) + ", " + fmt("%.2f s cpu", cpu));
}

Outcome metrics_oracle() {
  std::mt19937 rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 6);
    const std::size_t n = 1 + rng() % 80;
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng() % static_cast<unsigned>(k));
      p[i] = rng() % 3 == 0 ? t[i] : static_cast<int>(rng() % static_cast<unsigned>(k));
    }
    const auto m = eval::compute_metrics(t, p, static_cast<std::size_t>(k));
    const auto o = oracle::metrics(t, p, k);
    const bool same = m.confusion == o.conf && m.accuracy == o.acc && std::abs(m.macro_precision - o.p) < 1e-12 &&
                      std::abs(m.macro_recall - o.r) < 1e-12 && std::abs(m.macro_f1 - o.f1) < 1e-12;
    mismatches += !same;
  }
  double worst_loss = 0.0;
  for (std::size_t k = 2; k <= 12; ++k) {
    std::vector<int> labels;
    for (std::size_t i = 0; i < 3 * k; ++i) labels.push_back(static_cast<int>(i % k));
    const neural::Mat<double> uniform = neural::Mat<double>::Constant(static_cast<Eigen::Index>(labels.size()),
                                                                      static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
    worst_loss = std::max(worst_loss, std::abs(neural::loss<double>(uniform, labels) - std::log(static_cast<double>(k))));
  }
  return verdict(mismatches == 0 && worst_loss < uniform_loss_tol,
                 std::to_string(mismatches) + "/1000 mismatches, uniform loss error " + fmt("%.1e", worst_loss));
}

Outcome cv_properties() {
  bool ok = true;
  std::mt19937 rng(5);
  std::size_t bad_partitions = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng() % 6;
    const std::size_t n = 4 * k + rng() % 300;  // every class has at least k epochs
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 4);
    std::shuffle(y.begin(), y.end(), rng);
    const auto plan = eval::kfold(n, y, k, trial % 2 == 0, rng());
    std::vector<int> seen(n, 0);
    for (std::size_t f = 0; f < k; ++f) {
      const auto te = plan.test_indices(f);
      const auto tr = plan.train_indices(f);
      if (te.size() + tr.size() != n || te.size() < n / k || te.size() > (n + k - 1) / k) ++bad_partitions;
      for (auto i : te) seen[i] += 1;
    }
    if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) ++bad_partitions;
  }
  ok &= bad_partitions == 0;
  note("kfold partitions: " + std::to_string(bad_partitions) + "/300 violations");

  std::size_t smallest = SIZE_MAX, largest = 0;
  for (std::size_t n = 950; n <= 1140; ++n) {
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 4);
    for (auto s : eval::kfold(n, y, 4, true, n).fold_sizes()) {
      smallest = std::min(smallest, s);
      largest = std::max(largest, s);
    }
  }
  ok &= smallest == 237 && largest == 285;
  note("test folds for n in [950, 1140]: " + std::to_string(smallest) + " to " + std::to_string(largest));

  std::vector<int> y(90);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>((i * 7) % 3);
  auto fit = [&](std::span<const std::size_t> tr, std::span<const std::size_t> te) {
    std::vector<int> out;
    for (auto i : te) out.push_back(y[tr[(i * 31) % tr.size()]]);
    return out;
  };
  bool singleton_same = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    eval::CvOptions opt;
    opt.seed = seed;
    const auto plain = eval::cross_validate(y, 3, fit, opt);
    const auto nested = eval::nested_cv(
        y, 3, 1, [&](std::span<const std::size_t> tr, std::span<const std::size_t> te, std::size_t) { return fit(tr, te); }, opt);
    singleton_same &= plain.predictions == nested.predictions && plain.mean.accuracy == nested.mean.accuracy &&
                      plain.plan.fold_of == nested.plan.fold_of;
  }
  ok &= singleton_same;
  note(std::string("nested with one grid point equals plain k-fold: ") + (singleton_same ? "yes" : "no"));

  auto set = synth::default_4class(1.0, 3);
  set.epochs.resize(40);
  auto constant = [](std::span<const std::size_t>, std::span<const std::size_t> te) { return std::vector<int>(te.size(), 0); };
  bool control_quiet = true, probe_fires = false;
  try {
    eval::cross_validate(set.labels(), 4, constant, {}, eval::content_hashes(set));
  } catch (const Error&) {
    control_quiet = false;
  }
  auto leaky = set;
  leaky.epochs.push_back(set.epochs[0]);
  eval::CvOptions opt;
  for (opt.seed = 0; opt.seed < 100; ++opt.seed) {
    const auto plan = eval::kfold(leaky.size(), leaky.labels(), 4, true, opt.seed);
    if (plan.fold_of.front() != plan.fold_of.back()) break;
  }
  try {
    eval::cross_validate(leaky.labels(), 4, constant, opt, eval::content_hashes(leaky));
  } catch (const Error& e) {
    probe_fires = e.code() == ErrorCode::LeakageDetected;
  }
  ok &= control_quiet && probe_fires;
  note(std::string("leakage probe: control ") + (control_quiet ? "quiet" : "fired") + ", duplicate " +
       (probe_fires ? "detected" : "missed"));
  return verdict(ok, "");
}

double run_accuracy(const pl::PipelineConfig& c, double* cpu) {
  CpuTimer timer;
  const auto rr = pl::run_eval(c);
  if (cpu) *cpu = timer.seconds();
  return rr.report.average.accuracy;
}

Outcome end_to_end() {
  bool ok = true;
  auto bilstm = pl::preset("synth-bilstm-raw-all");
  bilstm.synth->snr = 10.0;
  double cpu = 0.0;
  const double acc = run_accuracy(bilstm, &cpu);
  const bool bilstm_ok = acc >= target_accuracy && cpu < bilstm_cpu_budget_s;
  ok &= bilstm_ok;
  note("bilstm raw_all snr 10: accuracy " + fmt("%.4f", acc) + ", " + fmt("%.1f s cpu", cpu) + (bilstm_ok ? "" : "  <-- FAIL"));

  const double sigma = std::sqrt(0.25 * 0.75 / 400.0);
  const double lo = 0.25 - chance_sigmas * sigma, hi = 0.25 + chance_sigmas * sigma;
  bilstm.synth->snr = 0.0;
  const double null_acc = run_accuracy(bilstm, &cpu);
  const bool null_ok = null_acc >= lo && null_acc <= hi;
  ok &= null_ok;
  note("bilstm raw_all snr 0: accuracy " + fmt("%.4f", null_acc) + " (band " + fmt("%.3f", lo) + " to " + fmt("%.3f", hi) +
       "), " + fmt("%.1f s cpu", cpu) + (null_ok ? "" : "  <-- FAIL"));

  for (auto cls : {pl::Classifier::Gbt, pl::Classifier::Svm}) {
    pl::PipelineConfig c;
    c.synth = pl::SynthSource{};
    c.classifier = cls;
    const double a = run_accuracy(c, &cpu);
    const bool shallow_ok = a >= target_accuracy && cpu < shallow_cpu_budget_s;
    ok &= shallow_ok;
    note(std::string(pl::to_string(cls)) + " psd snr 10: accuracy " + fmt("%.4f", a) + ", " + fmt("%.2f s cpu", cpu) +
         (shallow_ok ? "" : "  <-- FAIL"));
  }
  return verdict(ok, "");
}

Outcome importance_sanity() {
  const auto spec = synth::default_4class_spec(10.0, 0);
  const auto set = synth::generate(spec);
  const auto bands = dsp::canonical_bands();
  const auto fm = features::build_feature_matrix(set, bands, dsp::WelchParams{});
  const auto x = features::Standardizer::fit(fm.values).apply(fm.values);
  const auto picked = pl::detail::gain_pick(x, fm.labels, pl::ModelSettings{}.importance, 0.95);
  std::set<std::pair<std::string, std::string>> chosen;
  for (auto col : picked) chosen.insert({fm.provenance[col].channel, fm.provenance[col].band});
  const auto names = spec.resolved_channel_names();
  std::size_t covered = 0;
  for (std::size_t k = 0; k < spec.signatures.size(); ++k) {
    std::vector<std::string> hits;
    for (const auto& inj : spec.signatures[k]) {
      for (const auto& b : bands) {
        if (inj.low_hz >= b.low_hz && inj.high_hz <= b.high_hz && chosen.count({names[inj.channel], b.name})) {
          hits.push_back(names[inj.channel] + ":" + b.name);
        }
      }
    }
    covered += !hits.empty();
    std::string line = "class " + set.class_names[k] + ":";
    for (const auto& h : hits) line += " " + h;
    note(hits.empty() ? line + " none selected" : line);
  }
  return verdict(covered == spec.signatures.size(),
                 std::to_string(picked.size()) + " of " + std::to_string(fm.n_features()) + " features selected, " +
                     std::to_string(covered) + "/" + std::to_string(spec.signatures.size()) + " classes covered");
}

Outcome determinism() {
  const auto root = std::filesystem::temp_directory_path() / ("innerspeech_acceptance_" + std::to_string(::getpid()));
  std::size_t configs = 0, differing = 0;
  for (const auto& [name, base] : pl::presets()) {
    auto c = base;
    c.synth = pl::SynthSource{3.0, 1, 16, 2, 1.5};
    c.subjects.clear();
    c.model.train.max_epochs = std::min<std::size_t>(c.model.train.max_epochs, 3);
    c.model.network.hidden = std::min<std::size_t>(c.model.network.hidden, 8);
    for (int run = 0; run < 2; ++run) eval::emit_report(pl::run_eval(c).report, root / name / std::to_string(run));
    for (const auto& e : std::filesystem::directory_iterator(root / name / "0")) {
      if (slurp(e.path()) != slurp(root / name / "1" / e.path().filename())) {
        ++differing;
        note(name + ": " + e.path().filename().string() + " differs");
      }
    }
    ++configs;
  }
  std::error_code ec;
  std::filesystem::remove_all(root, ec);
  return verdict(differing == 0, std::to_string(configs) + " presets run twice, " + std::to_string(differing) + " differing files");
}

std::vector<pl::SubjectSource> subjects_in(const std::filesystem::path& dir) {
  std::vector<pl::SubjectSource> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".json") out.push_back({e.path().stem().string(), e.path().parent_path() / e.path().stem(), {}});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

Outcome real_data() {
  const char* tol = std::getenv("INNERSPEECH_TOL_DIR");
  const char* words = std::getenv("INNERSPEECH_WORDS_DIR");
  if (!tol && !words) return {Outcome::Skip, "set INNERSPEECH_TOL_DIR and/or INNERSPEECH_WORDS_DIR to converted EpochSets"};
  bool ok = true;
  if (tol) {
    auto c = pl::preset("bilstm-raw-all");
    c.subjects = subjects_in(tol);
    const auto rr = pl::run_eval(c);
    std::size_t above = 0;
    for (const auto& s : rr.report.subjects) above += s.metrics.accuracy > 0.25;
    const double mean = rr.report.average.accuracy;
    const bool pass = rr.report.subjects.size() == 10 && above >= 9 && std::abs(mean - real_tol_mean) <= real_tol_band;
    ok &= pass;
    note("thinking out loud: " + std::to_string(above) + "/" + std::to_string(rr.report.subjects.size()) +
         " above chance, mean " + fmt("%.4f", mean));
  }
  if (words) {
    auto c = pl::preset("bilstm-raw-all");
    c.preprocess = "imagined-speech";
    c.subjects = subjects_in(words);
    if (!c.subjects.empty()) {
      const auto first = load_epochset(c.subjects.front().epochs);
      c.action_s = static_cast<double>(first.n_timesteps()) / first.sampling_rate_hz;
    }
    const double mean = pl::run_eval(c).report.average.accuracy;
    const bool pass = std::abs(mean - real_words_mean) <= real_words_band;
    ok &= pass;
    note("imagined speech words: mean " + fmt("%.4f", mean));
  }
  return verdict(ok, "");
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<std::string> only(argv + 1, argv + argc);  // optional criterion names
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"dsp-oracles", dsp_oracles},
      {"gradient-check", gradient_check},
      {"metrics-oracle", metrics_oracle},
      {"cv-properties", cv_properties},
      {"end-to-end-synthetic", end_to_end},
      {"importance-sanity", importance_sanity},
      {"determinism", determinism},
      {"real-data", real_data},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("threw: ") + e.what()};
    }
    const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Skip ? "SKIP" : "FAIL";
    failures += o.status == Outcome::Fail;
    std::printf("%s %s%s%s\n", tag, name, o.detail.empty() ? "" : "  ", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
