#include "commands.hpp"

#include <udiffse/corpus.hpp>
#include <udiffse/metrics.hpp>
#include <udiffse/sampler.hpp>
#include <udiffse/score_models.hpp>
#include <udiffse/wav.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace udiffse::cli {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kNmfStream = 0x6e6d66;
constexpr std::uint64_t kTrainStream = 0x747261;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const std::string& item : split_list(s)) {
    std::istringstream in(item);
    T v{};
    if (!(in >> v) || !in.eof()) throw CliError(kBadConfig, std::string("bad ") + what + " list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw CliError(kBadConfig, std::string("empty ") + what + " list");
  return out;
}

// Ordered key = value lines, then a [metrics] block.
class Report {
 public:
  explicit Report(const std::string& command) { set("command", command); }

  void set(const std::string& key, const std::string& value) { params_.emplace_back(key, value); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  template <typename T>
  void set(const std::string& key, T value) {
    params_.emplace_back(key, format(value));
  }
  template <typename T>
  void metric(const std::string& key, T value) {
    metrics_.emplace_back(key, format(value));
  }

  void write(const std::string& path) const {
    if (path.empty()) {
      emit(std::cout);
      return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw CliError(kFailure, "cannot write report " + path);
    emit(out);
  }

 private:
  template <typename T>
  static std::string format(T value) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << value;
    return s.str();
  }

  void emit(std::ostream& out) const {
    for (const auto& [k, v] : params_)
      if (!v.empty()) out << k << " = " << v << '\n';
    out << "\n[metrics]\n";
    for (const auto& [k, v] : metrics_) out << k << " = " << v << '\n';
  }

  std::vector<std::pair<std::string, std::string>> params_;
  std::vector<std::pair<std::string, std::string>> metrics_;
};

// Wraps library loaders so failures carry the unreadable-input exit code.
template <typename F>
auto load_or_fail(const std::string& what, const std::string& path, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw CliError(kUnreadableInput, "cannot read " + what + " '" + path + "': " + e.what());
  }
}

template <typename F>
void validate_or_fail(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw CliError(kBadConfig, e.what());
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string out_dir;
  std::string report;
  std::string prior;
  std::string source = "harmonic";
  std::string noise = "white";
  int count = 1;
  std::uint64_t seed = 0;
  double snr = 0.0;
  double duration = 2.04;
  int visual_dim = VisualEmbedding::kDefaultDim;
};

void add_synth(CLI::App& app, SynthOptions& o) {
  app.add_option("--out-dir", o.out_dir, "Directory for WAVs, embeddings and manifest.txt")->required();
  app.add_option("--count", o.count, "Number of scenes")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "Base seed; scene i uses seed + i");
  app.add_option("--snr", o.snr, "Mixture SNR in dB");
  app.add_option("--source", o.source)->check(CLI::IsMember({"harmonic", "am-modulated", "gaussian-prior-draw"}));
  app.add_option("--noise", o.noise)->check(CLI::IsMember({"white", "lowpass", "babble-surrogate"}));
  app.add_option("--duration", o.duration, "Seconds")->check(CLI::PositiveNumber);
  app.add_option("--prior", o.prior, "Prior file for gaussian-prior-draw sources");
  app.add_option("--visual-dim", o.visual_dim)->check(CLI::PositiveNumber);
  app.add_option("--report", o.report, "Report path (stdout when omitted)");
}

int run_synth(const SynthOptions& o) {
  SceneSpec base;
  base.duration = o.duration;
  base.snr_db = o.snr;
  base.source = parse_source_kind(o.source);
  base.noise = parse_noise_kind(o.noise);
  base.visual_dim = o.visual_dim;

  std::optional<GaussianPrior> prior;
  if (base.source == SourceKind::GaussianPriorDraw) {
    if (o.prior.empty()) throw CliError(kBadConfig, "gaussian-prior-draw sources need --prior");
    prior = load_or_fail("prior", o.prior, [&] { return load_prior(o.prior); });
  }

  fs::create_directories(o.out_dir);
  std::vector<ManifestEntry> manifest;
  char name[64];
  for (int i = 0; i < o.count; ++i) {
    SceneSpec spec = base;
    spec.seed = o.seed + static_cast<std::uint64_t>(i);
    Scene scene;
    try {
      scene = gen_synthetic_scene(spec, prior ? &*prior : nullptr);
    } catch (const std::invalid_argument& e) {
      throw CliError(prior ? kMismatch : kBadConfig, e.what());
    }
    ManifestEntry e;
    std::snprintf(name, sizeof name, "clean_%03d.wav", i);
    e.clean = name;
    std::snprintf(name, sizeof name, "noisy_%03d.wav", i);
    e.noisy = name;
    std::snprintf(name, sizeof name, "visual_%03d.bin", i);
    e.visual = name;
    e.seed = spec.seed;
    e.snr_db = spec.snr_db;
    write_wav(fs::path(o.out_dir) / e.clean, scene.clean);
    write_wav(fs::path(o.out_dir) / e.noisy, scene.noisy);
    save_visual_embedding(fs::path(o.out_dir) / e.visual, scene.visual);
    manifest.push_back(std::move(e));
  }
  write_manifest(fs::path(o.out_dir) / "manifest.txt", manifest);

  Report r("synth");
  r.set("out-dir", o.out_dir);
  r.set("count", o.count);
  r.set("seed", o.seed);
  r.set("snr", o.snr);
  r.set("source", o.source);
  r.set("noise", o.noise);
  r.set("duration", o.duration);
  r.set("prior", o.prior);
  r.set("visual-dim", o.visual_dim);
  r.set("report", o.report);
  r.metric("scenes", o.count);
  r.write(o.report);
  return kOk;
}

// ---------------------------------------------------------------------------
// train-prior

struct TrainOptions {
  std::string manifest;
  std::string output;
  std::string report;
  std::string loss_log;
  std::string optimizer = "sgd";
  std::string init = "moments";
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  double t_min = kDefaultTrainTimeFloor;
  double variance_floor = 1e-4;
  bool conditional = false;
  std::uint64_t seed = 0;
  double gamma = 1.5, sigma_min = 0.05, sigma_max = 0.5;
};

void add_train(CLI::App& app, TrainOptions& o) {
  app.add_option("--manifest", o.manifest, "Manifest whose clean column is the training set")->required();
  app.add_option("--output", o.output, "Prior file to write")->required();
  app.add_option("--report", o.report);
  app.add_option("--loss-log", o.loss_log, "Write one loss value per step");
  app.add_option("--steps", o.steps);
  app.add_option("--batch-size", o.batch_size)->check(CLI::PositiveNumber);
  app.add_option("--learning-rate", o.learning_rate)->check(CLI::PositiveNumber);
  app.add_option("--optimizer", o.optimizer)->check(CLI::IsMember({"sgd", "momentum", "adam"}));
  app.add_option("--init", o.init, "Starting point: data moments or zero mean / unit variance")
      ->check(CLI::IsMember({"moments", "zero"}));
  app.add_option("--t-min", o.t_min)->check(CLI::Range(0.0, 1.0));
  app.add_option("--variance-floor", o.variance_floor)->check(CLI::PositiveNumber);
  app.add_flag("--conditional", o.conditional, "Learn a visual conditioning map (needs the visual column)");
  app.add_option("--seed", o.seed);
  app.add_option("--gamma", o.gamma);
  app.add_option("--sigma-min", o.sigma_min);
  app.add_option("--sigma-max", o.sigma_max);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

int run_train(const TrainOptions& o) {
  DiffusionSchedule<> sched{o.gamma, o.sigma_min, o.sigma_max, 30};
  validate_or_fail([&] { sched.validate(); });
  const auto entries = load_or_fail("manifest", o.manifest, [&] { return read_manifest(o.manifest); });
  if (entries.empty()) throw CliError(kBadConfig, "manifest " + o.manifest + " is empty");
  const fs::path base = fs::path(o.manifest).parent_path();

  std::vector<CMatrix> data;
  std::vector<VisualEmbedding> visual;
  for (const ManifestEntry& e : entries) {
    const fs::path p = resolve(base, e.clean);
    const Waveform w = load_or_fail("clean audio", p.string(), [&] { return read_wav(p); });
    data.push_back(stft(w).data);
    if (data.back().rows() != data.front().rows() || data.back().cols() != data.front().cols())
      throw CliError(kMismatch, "training item " + p.string() + " has a different spectrogram shape");
    if (o.conditional) {
      const fs::path vp = resolve(base, e.visual);
      visual.push_back(load_or_fail("embedding", vp.string(), [&] { return load_visual_embedding(vp); }));
      if (visual.back().dim() != visual.front().dim())
        throw CliError(kMismatch, "embedding " + vp.string() + " has a different dimension");
    }
  }

  const Eigen::Index f = data.front().rows(), t = data.front().cols();
  GaussianPrior init = make_gaussian_prior(CMatrix::Zero(f, t), RMatrix::Ones(f, t));
  if (o.init == "moments") {
    for (const CMatrix& d : data) init.mean += d;
    init.mean /= static_cast<double>(data.size());
    RMatrix var = RMatrix::Zero(f, t);
    for (const CMatrix& d : data) var += (d - init.mean).cwiseAbs2();
    init.variance = (var / static_cast<double>(data.size())).cwiseMax(o.variance_floor);
  }
  if (o.conditional) init.conditioning = CMatrix::Zero(f * t, visual.front().dim());

  TrainConfig cfg;
  cfg.steps = o.steps;
  cfg.batch_size = o.batch_size;
  cfg.learning_rate = o.learning_rate;
  cfg.optimizer = o.optimizer == "adam" ? Optimizer::Adam : o.optimizer == "momentum" ? Optimizer::Momentum
                                                                                     : Optimizer::Sgd;
  cfg.t_min = o.t_min;
  Rng rng = substream(o.seed, kTrainStream);
  TrainResult result;
  try {
    result = train_dsm(init, data, visual, sched, cfg, rng);
  } catch (const TrainingDiverged& e) {
    throw CliError(kDiverged, e.what());
  } catch (const std::invalid_argument& e) {
    throw CliError(kBadConfig, e.what());
  }
  save_prior(o.output, result.prior);
  if (!o.loss_log.empty()) {
    std::ofstream log(o.loss_log, std::ios::trunc);
    log << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (double l : result.loss_history) log << l << '\n';
  }

  Report r("train-prior");
  r.set("manifest", o.manifest);
  r.set("output", o.output);
  r.set("report", o.report);
  r.set("loss-log", o.loss_log);
  r.set("steps", o.steps);
  r.set("batch-size", o.batch_size);
  r.set("learning-rate", o.learning_rate);
  r.set("optimizer", o.optimizer);
  r.set("init", o.init);
  r.set("t-min", o.t_min);
  r.set("variance-floor", o.variance_floor);
  r.set("conditional", o.conditional);
  r.set("seed", o.seed);
  r.set("gamma", o.gamma);
  r.set("sigma-min", o.sigma_min);
  r.set("sigma-max", o.sigma_max);
  r.metric("items", data.size());
  r.metric("bins", f);
  r.metric("frames", t);
  const auto& h = result.loss_history;
  if (!h.empty()) {
    const std::size_t w = std::min<std::size_t>(100, h.size());
    double head = 0, tail = 0;
    for (std::size_t k = 0; k < w; ++k) {
      head += h[k];
      tail += h[h.size() - 1 - k];
    }
    r.metric("initial_loss", head / w);
    r.metric("final_loss", tail / w);
  }
  r.write(o.report);
  return kOk;
}

// ---------------------------------------------------------------------------
// enhance

struct EnhanceOptions {
  std::string input;
  std::string output;
  std::string prior;
  std::string visual;
  std::string reference;
  std::string report;
  std::string algo = "udiffse+";
  std::string cadence = "even";
  int steps = 30;
  double lambda = 1.5;
  double corrector_snr = 0.5;
  int em = 5;
  int mstep_iterations = 50;
  bool update_noise = true;
  std::uint64_t seed = 0;
  int nmf_rank = 4;
  double nmf_eps = 1e-10;
  double gamma = 1.5, sigma_min = 0.05, sigma_max = 0.5;

  DiffusionSchedule<> schedule() const { return {gamma, sigma_min, sigma_max, steps}; }

  SamplerConfig sampler() const {
    SamplerConfig c;
    c.n_steps = steps;
    c.corrector_snr = corrector_snr;
    c.likelihood_weight = lambda;
    c.em_iterations = algo == "udiffse" ? em : 1;
    c.mstep_iterations = mstep_iterations;
    c.cadence = cadence == "never" ? PosteriorCadence::Never : PosteriorCadence::EvenSteps;
    c.update_noise = update_noise;
    c.seed = seed;
    return c;
  }

  void validate() const {
    validate_or_fail([&] {
      schedule().validate();
      sampler().validate();
    });
    if (nmf_rank < 1) throw CliError(kBadConfig, "--nmf-rank must be >= 1");
    if (!(nmf_eps > 0)) throw CliError(kBadConfig, "--nmf-eps must be positive");
  }
};

// bench sweeps algo, steps and em itself, so it passes with_cell = false.
void add_sampler_options(CLI::App& app, EnhanceOptions& o, bool with_cell) {
  if (with_cell) {
    app.add_option("--algo", o.algo)->check(CLI::IsMember({"udiffse+", "udiffse"}));
    app.add_option("--steps", o.steps, "Reverse diffusion steps N");
    app.add_option("--em", o.em, "EM rounds for --algo udiffse");
  }
  app.add_option("--lambda", o.lambda, "Likelihood weight");
  app.add_option("--corrector-snr", o.corrector_snr, "Corrector step ratio r");
  app.add_option("--mstep-iterations", o.mstep_iterations, "Multiplicative updates per EM round");
  app.add_option("--cadence", o.cadence, "Posterior step cadence")->check(CLI::IsMember({"even", "never"}));
  app.add_flag("--update-noise,!--freeze-noise", o.update_noise, "Update the NMF noise model");
  app.add_option("--seed", o.seed);
  app.add_option("--nmf-rank", o.nmf_rank);
  app.add_option("--nmf-eps", o.nmf_eps);
  app.add_option("--gamma", o.gamma);
  app.add_option("--sigma-min", o.sigma_min);
  app.add_option("--sigma-max", o.sigma_max);
}

void add_enhance(CLI::App& app, EnhanceOptions& o) {
  app.add_option("--input", o.input, "Noisy mono 16 kHz WAV")->required();
  app.add_option("--output", o.output, "Enhanced WAV (float32)")->required();
  app.add_option("--prior", o.prior, "Prior file")->required();
  app.add_option("--visual", o.visual, "Visual embedding; required iff the prior is conditional");
  app.add_option("--reference", o.reference, "Clean WAV for SI-SDR in the report");
  app.add_option("--report", o.report);
  add_sampler_options(app, o, true);
}

void set_sampler_params(Report& r, const EnhanceOptions& o, bool with_cell) {
  if (with_cell) {
    r.set("algo", o.algo);
    r.set("steps", o.steps);
    r.set("em", o.em);
  }
  r.set("lambda", o.lambda);
  r.set("corrector-snr", o.corrector_snr);
  r.set("mstep-iterations", o.mstep_iterations);
  r.set("cadence", o.cadence);
  r.set("update-noise", o.update_noise);
  r.set("seed", o.seed);
  r.set("nmf-rank", o.nmf_rank);
  r.set("nmf-eps", o.nmf_eps);
  r.set("gamma", o.gamma);
  r.set("sigma-min", o.sigma_min);
  r.set("sigma-max", o.sigma_max);
}

GaussianPrior read_prior(const std::string& path) {
  return load_or_fail("prior", path, [&] { return load_prior(path); });
}

// The prior/embedding pairing is a configuration question and is checked
// before any audio is touched.
void check_visual_pairing(const GaussianPrior& prior, bool have_visual) {
  if (prior.conditional() && !have_visual)
    throw CliError(kBadConfig, "prior is conditional; --visual is required");
  if (!prior.conditional() && have_visual)
    throw CliError(kBadConfig, "prior is unconditional; drop --visual");
}

void check_shapes(const GaussianPrior& prior, const Spectrogram& x, const VisualEmbedding* v) {
  if (prior.bins() != x.bins() || prior.frames() != x.frames())
    throw CliError(kMismatch, "prior is " + std::to_string(prior.bins()) + "x" + std::to_string(prior.frames()) +
                                  ", input spectrogram is " + std::to_string(x.bins()) + "x" +
                                  std::to_string(x.frames()));
  if (v != nullptr && v->dim() != prior.visual_dim())
    throw CliError(kMismatch, "embedding dimension " + std::to_string(v->dim()) + " does not match prior's " +
                                  std::to_string(prior.visual_dim()));
  if (v != nullptr && v->frames() < 1) throw CliError(kMismatch, "embedding has no frames");
}

EnhanceResult enhance_spectrogram(const Spectrogram& x, const ScoreModel& model, const VisualEmbedding* v,
                                  const EnhanceOptions& o) {
  Rng nmf_rng = substream(o.seed, kNmfStream);
  const double power = x.data.cwiseAbs2().mean() / 2;
  if (!(power > 0)) throw CliError(kUnreadableInput, "input is silent");
  const NmfModel<double> nmf = init_nmf<double>(x.bins(), x.frames(), o.nmf_rank, power, nmf_rng, o.nmf_eps);
  try {
    return o.algo == "udiffse" ? run_udiffse(x, model, v, nmf, o.schedule(), o.sampler())
                               : run_udiffse_plus(x, model, v, nmf, o.schedule(), o.sampler());
  } catch (const SamplerDiverged& e) {
    throw CliError(kDiverged, e.what());
  }
}

int run_enhance(const EnhanceOptions& o) {
  o.validate();
  auto prior = std::make_shared<const GaussianPrior>(read_prior(o.prior));
  check_visual_pairing(*prior, !o.visual.empty());

  const Waveform noisy = load_or_fail("input", o.input, [&] { return read_wav(o.input); });
  std::optional<VisualEmbedding> visual;
  if (!o.visual.empty())
    visual = load_or_fail("embedding", o.visual, [&] { return load_visual_embedding(o.visual); });
  std::optional<Waveform> reference;
  if (!o.reference.empty()) {
    reference = load_or_fail("reference", o.reference, [&] { return read_wav(o.reference); });
    if (reference->size() != noisy.size()) throw CliError(kMismatch, "reference and input lengths differ");
  }
  if (noisy.size() <= StftConfig{}.pad())
    throw CliError(kUnreadableInput, "input " + o.input + " is too short to analyse");
  const Spectrogram x = stft(noisy);
  const VisualEmbedding* v = visual ? &*visual : nullptr;
  check_shapes(*prior, x, v);

  const GaussianScoreModel model(prior, o.schedule());
  const EnhanceResult result = enhance_spectrogram(x, model, v, o);
  const Waveform out = istft(result.estimate);
  write_wav(o.output, out);

  Report r("enhance");
  r.set("input", o.input);
  r.set("output", o.output);
  r.set("prior", o.prior);
  r.set("visual", o.visual);
  r.set("reference", o.reference);
  r.set("report", o.report);
  set_sampler_params(r, o, true);
  r.metric("score_evaluations", result.stats.score_evaluations);
  r.metric("nmf_updates", result.stats.nmf_updates);
  r.metric("wall_time", result.stats.wall_time);
  r.metric("rtf", rtf(result.stats));
  if (reference) {
    r.metric("si_sdr_in", si_sdr(noisy, *reference));
    r.metric("si_sdr_out", si_sdr(out, *reference));
  }
  r.write(o.report);
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string estimate;
  std::string reference;
  std::string noisy;
  std::string report;
};

void add_eval(CLI::App& app, EvalOptions& o) {
  app.add_option("--estimate", o.estimate)->required();
  app.add_option("--reference", o.reference)->required();
  app.add_option("--noisy", o.noisy, "Mixture, to also report the input SI-SDR");
  app.add_option("--report", o.report);
}

int run_eval(const EvalOptions& o) {
  const Waveform est = load_or_fail("estimate", o.estimate, [&] { return read_wav(o.estimate); });
  const Waveform ref = load_or_fail("reference", o.reference, [&] { return read_wav(o.reference); });
  if (est.size() != ref.size()) throw CliError(kMismatch, "estimate and reference lengths differ");
  Report r("eval");
  r.set("estimate", o.estimate);
  r.set("reference", o.reference);
  r.set("noisy", o.noisy);
  r.set("report", o.report);
  try {
    const double out = si_sdr(est, ref);
    if (!o.noisy.empty()) {
      const Waveform mix = load_or_fail("mixture", o.noisy, [&] { return read_wav(o.noisy); });
      if (mix.size() != ref.size()) throw CliError(kMismatch, "mixture and reference lengths differ");
      const double in = si_sdr(mix, ref);
      r.metric("si_sdr_in", in);
      r.metric("si_sdr_gain", out - in);
    }
    r.metric("si_sdr", out);
  } catch (const std::invalid_argument& e) {
    throw CliError(kMismatch, e.what());
  }
  r.write(o.report);
  return kOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  EnhanceOptions sampler;
  std::string manifest;
  std::string prior;
  std::string report;
  std::string table;
  std::string algos = "udiffse+,udiffse";
  std::string step_list = "30";
  std::string em_list = "5";
  int jobs = 1;
};

void add_bench(CLI::App& app, BenchOptions& o) {
  app.add_option("--manifest", o.manifest, "Scenes to enhance (noisy, clean and visual columns)")->required();
  app.add_option("--prior", o.prior)->required();
  app.add_option("--report", o.report);
  app.add_option("--table", o.table, "Results table path (stdout when omitted)");
  app.add_option("--algos", o.algos, "Comma-separated subset of udiffse+,udiffse");
  app.add_option("--step-list", o.step_list, "Comma-separated N values");
  app.add_option("--em-list", o.em_list, "Comma-separated EM round counts for udiffse");
  app.add_option("--jobs", o.jobs, "Scenes enhanced in parallel; skews RTF when > 1")->check(CLI::PositiveNumber);
  add_sampler_options(app, o.sampler, false);
}

struct Cell {
  std::string algo;
  int steps;
  int em;
};

struct SceneData {
  Waveform clean;
  Waveform noisy;
  Spectrogram x;
  std::optional<VisualEmbedding> visual;
};

int run_bench(const BenchOptions& o) {
  std::vector<Cell> cells;
  const auto algos = split_list(o.algos);
  const auto step_values = parse_list<int>(o.step_list, "step");
  const auto em_values = parse_list<int>(o.em_list, "em");
  for (const std::string& a : algos) {
    if (a != "udiffse+" && a != "udiffse") throw CliError(kBadConfig, "unknown algorithm '" + a + "'");
    for (int n : step_values) {
      if (a == "udiffse+") {
        cells.push_back({a, n, 1});
        continue;
      }
      for (int em : em_values) cells.push_back({a, n, em});
    }
  }
  if (cells.empty()) throw CliError(kBadConfig, "nothing to benchmark");
  for (const Cell& c : cells) {
    EnhanceOptions opt = o.sampler;
    opt.algo = c.algo;
    opt.steps = c.steps;
    opt.em = c.em;
    opt.validate();
  }

  auto prior = std::make_shared<const GaussianPrior>(read_prior(o.prior));
  const auto entries = load_or_fail("manifest", o.manifest, [&] { return read_manifest(o.manifest); });
  if (entries.empty()) throw CliError(kBadConfig, "manifest " + o.manifest + " is empty");
  const fs::path base = fs::path(o.manifest).parent_path();
  std::vector<SceneData> scenes;
  for (const ManifestEntry& e : entries) {
    SceneData s;
    const fs::path cp = resolve(base, e.clean), np = resolve(base, e.noisy);
    s.clean = load_or_fail("clean audio", cp.string(), [&] { return read_wav(cp); });
    s.noisy = load_or_fail("noisy audio", np.string(), [&] { return read_wav(np); });
    if (s.clean.size() != s.noisy.size()) throw CliError(kMismatch, "clean and noisy lengths differ for " + np.string());
    if (prior->conditional()) {
      const fs::path vp = resolve(base, e.visual);
      s.visual = load_or_fail("embedding", vp.string(), [&] { return load_visual_embedding(vp); });
    }
    s.x = stft(s.noisy);
    check_shapes(*prior, s.x, s.visual ? &*s.visual : nullptr);
    scenes.push_back(std::move(s));
  }

  std::ostringstream table;
  table << std::fixed << std::setprecision(3);
  table << "algo      N    em  rtf       si_sdr_in  si_sdr_out  gain      score_evals\n";
  Report r("bench");
  r.set("manifest", o.manifest);
  r.set("prior", o.prior);
  r.set("report", o.report);
  r.set("table", o.table);
  r.set("algos", o.algos);
  r.set("step-list", o.step_list);
  r.set("em-list", o.em_list);
  r.set("jobs", o.jobs);
  set_sampler_params(r, o.sampler, false);

  for (const Cell& c : cells) {
    EnhanceOptions opt = o.sampler;
    opt.algo = c.algo;
    opt.steps = c.steps;
    opt.em = c.em;
    const GaussianScoreModel model(prior, opt.schedule());
    std::vector<double> sdr_in(scenes.size()), sdr_out(scenes.size());
    std::vector<RunStats> stats(scenes.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto worker = [&] {
      for (std::size_t k = next++; k < scenes.size(); k = next++) {
        try {
          const SceneData& s = scenes[k];
          const EnhanceResult res = enhance_spectrogram(s.x, model, s.visual ? &*s.visual : nullptr, opt);
          sdr_in[k] = si_sdr(s.noisy, s.clean);
          sdr_out[k] = si_sdr(istft(res.estimate), s.clean);
          stats[k] = res.stats;
        } catch (...) {
          std::lock_guard lock(failure_lock);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const int threads = std::min<int>(o.jobs, static_cast<int>(scenes.size()));
    if (threads <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    RunStats total;
    double in = 0, out = 0;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      total.wall_time += stats[k].wall_time;
      total.audio_duration += stats[k].audio_duration;
      in += sdr_in[k];
      out += sdr_out[k];
    }
    in /= static_cast<double>(scenes.size());
    out /= static_cast<double>(scenes.size());
    table << std::left << std::setw(10) << c.algo << std::setw(5) << c.steps << std::setw(4) << c.em
          << std::setw(10) << rtf(total) << std::setw(11) << in << std::setw(12) << out << std::setw(10)
          << out - in << stats.front().score_evaluations << '\n';
    const std::string key = c.algo + "_N" + std::to_string(c.steps) + "_em" + std::to_string(c.em);
    r.metric(key + "_rtf", rtf(total));
    r.metric(key + "_si_sdr_out", out);
  }
  r.metric("scenes", scenes.size());

  if (o.table.empty()) {
    std::cout << table.str();
  } else {
    std::ofstream t(o.table, std::ios::trunc);
    if (!t) throw CliError(kFailure, "cannot write table " + o.table);
    t << table.str();
  }
  r.write(o.report);
  return kOk;
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::vector<std::string> rest;
  std::string config;
  for (std::size_t k = 2; k < args.size(); ++k) {
    if (args[k] == "--config") {
      if (k + 1 >= args.size()) throw CliError(kBadConfig, "--config needs a file");
      config = args[++k];
    } else if (args[k].rfind("--config=", 0) == 0) {
      config = args[k].substr(9);
    } else {
      rest.push_back(args[k]);
    }
  }
  std::vector<std::string> out{args[0], args[1]};
  if (!config.empty()) {
    std::ifstream in(config);
    if (!in) throw CliError(kBadConfig, "cannot open config " + config);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (t[0] == '[') break;  // metrics and anything after are not inputs
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw CliError(kBadConfig, config + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(std::string_view(t).substr(0, eq));
      std::string value = trim(std::string_view(t).substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (key == "command") {
        if (value != args[1])
          throw CliError(kBadConfig, config + " was written by '" + value + "', not '" + args[1] + "'");
        continue;
      }
      out.push_back("--" + key + "=" + value);
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Unsupervised diffusion-based speech enhancement"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  SynthOptions synth;
  TrainOptions train;
  EnhanceOptions enhance;
  EvalOptions eval;
  BenchOptions bench;
  std::string config_unused;
  auto config_flag = [&](CLI::App* sub) {
    sub->add_option("--config", config_unused, "key = value file; command-line flags take precedence");
  };

  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic scenes and a manifest");
  add_synth(*synth_cmd, synth);
  auto* train_cmd = app.add_subcommand("train-prior", "Fit a Gaussian prior by denoising score matching");
  add_train(*train_cmd, train);
  auto* enhance_cmd = app.add_subcommand("enhance", "Enhance one noisy recording");
  add_enhance(*enhance_cmd, enhance);
  auto* eval_cmd = app.add_subcommand("eval", "SI-SDR of an estimate against a reference");
  add_eval(*eval_cmd, eval);
  auto* bench_cmd = app.add_subcommand("bench", "RTF and SI-SDR sweep over algorithms and step counts");
  add_bench(*bench_cmd, bench);
  for (CLI::App* sub : {synth_cmd, train_cmd, enhance_cmd, eval_cmd, bench_cmd}) config_flag(sub);

  try {
    const std::vector<std::string> expanded = expand_config(std::vector<std::string>(argv, argv + argc));
    std::vector<const char*> cargs;
    for (const std::string& s : expanded) cargs.push_back(s.c_str());
    try {
      app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? kOk : kBadConfig;
    }

    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train);
    if (enhance_cmd->parsed()) return run_enhance(enhance);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (bench_cmd->parsed()) return run_bench(bench);
    return kBadConfig;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace udiffse::cli
