#include "emosynth/cli.hpp"

#include "emosynth/checkpoint.hpp"
#include "emosynth/config.hpp"
#include "emosynth/eval.hpp"
#include "emosynth/selfcheck.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace emosynth::cli {

namespace fs = std::filesystem;

namespace {

/// Raised for a missing or unreadable checkpoint (exit 3).
class MissingCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string runs_root = "runs";
  std::string world_path;
  std::string checkpoint_path;
  bool quiet = false;
};

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path make_run_dir(const Options& opt, const std::string& resolved) {
  fs::path dir;
  if (!opt.out_dir.empty()) {
    dir = opt.out_dir;
  } else {
    const fs::path base = fs::path(opt.runs_root) / (hex64(fnv1a(resolved)) + "-" + utc_timestamp());
    dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
  }
  fs::create_directories(dir);
  return dir;
}

/// "metric,value,n" table.
class MetricTable {
 public:
  void add(const std::string& metric, double value, Index n) {
    text_ += metric + "," + fmt(value) + "," + std::to_string(n) + "\n";
  }
  [[nodiscard]] std::string str() const { return "metric,value,n\n" + text_; }

 private:
  std::string text_;
};

struct Context {
  Options opt;
  ExperimentConfig config;
  World world;
  SpeakerSplit split;
  fs::path dir;
  std::ostream& out;
  std::ostream& err;
};

Checkpoint load_required_checkpoint(const Context& ctx) {
  if (ctx.opt.checkpoint_path.empty()) throw MissingCheckpoint("no checkpoint given (use --checkpoint)");
  if (!fs::is_regular_file(ctx.opt.checkpoint_path)) {
    throw MissingCheckpoint("checkpoint '" + ctx.opt.checkpoint_path + "' not found");
  }
  Checkpoint ckpt = load_checkpoint(ctx.opt.checkpoint_path);
  if (ckpt.world_hash != ctx.world.hash()) {
    throw std::runtime_error("checkpoint was trained on a different world (world hash " + hex64(ckpt.world_hash) +
                             ", config gives " + hex64(ctx.world.hash()) + ")");
  }
  return ckpt;
}

Fingerprint fingerprint(const Context& ctx, const Checkpoint* ckpt, double gamma, GuidanceMode mode) {
  return Fingerprint{ctx.world.hash(), ckpt ? checkpoint_hash(*ckpt) : 0, gamma, std::string(guidance_mode_name(mode)),
                     ctx.config.seed};
}

int cmd_gen_data(Context& ctx) {
  std::ostringstream world_text;
  write_world(world_text, ctx.world);
  write_file(ctx.dir / "world.txt", world_text.str());
  std::string split = "speaker\tgroup\n";
  for (Index s : ctx.split.seen) split += std::to_string(s) + "\tseen\n";
  for (Index s : ctx.split.unseen) split += std::to_string(s) + "\tunseen\n";
  write_file(ctx.dir / "split.tsv", split);
  MetricTable m;
  m.add("min_speaker_distance", min_pairwise_distance(ctx.world.speaker_base), ctx.world.speakers());
  m.add("min_emotion_distance", min_pairwise_distance(ctx.world.emotion_offset), ctx.world.emotions());
  write_file(ctx.dir / "metrics.csv", m.str());
  ctx.out << "world " << hex64(ctx.world.hash()) << " written to " << (ctx.dir / "world.txt").string() << "\n";
  return kExitOk;
}

int cmd_verify(Context& ctx) {
  const auto results = run_oracle_checks(ctx.world, ctx.config.schedule, ctx.config.seed);
  std::string report;
  std::string csv = "check,passed,max_error,tolerance,cases\n";
  bool ok = true;
  for (const auto& r : results) {
    report += to_json_line(r) + "\n";
    csv += r.name + "," + (r.passed ? "1" : "0") + "," + fmt(r.value) + "," + fmt(r.tolerance) + "," +
           std::to_string(r.cases) + "\n";
    ctx.out << (r.passed ? "PASS " : "FAIL ") << r.name << " max_error=" << r.value << " tol=" << r.tolerance << "\n";
    ok = ok && r.passed;
  }
  write_file(ctx.dir / "report.jsonl", report);
  write_file(ctx.dir / "metrics.csv", csv);
  ctx.out << (ok ? "all oracle checks passed" : "oracle checks FAILED") << "\n";
  return ok ? kExitOk : kExitFailure;
}

int cmd_train(Context& ctx) {
  const ExperimentConfig& c = ctx.config;
  std::ostream& err = ctx.err;
  const bool quiet = ctx.opt.quiet;
  auto result = train_model(ctx.world, ctx.split, c.train_config(), c.dims(), c.schedule, [&](const LossRecord& r) {
    if (!quiet) err << "step " << r.step << " total " << r.total << " recon " << r.recon << " dsm " << r.dsm << " dat "
                    << r.dat << "\n";
  });
  save_checkpoint(result.checkpoint, ctx.dir / "checkpoint.bin");
  std::string losses;
  for (const auto& r : result.trace) losses += to_json_line(r) + "\n";
  write_file(ctx.dir / "losses.jsonl", losses);

  const StyleSet styles = collect_styles(ctx.world, ctx.split.seen, result.checkpoint.model.style,
                                         c.eval.probe_per_emotion, c.eval.reference_len, derive_seed(c.seed, "styles"));
  write_file(ctx.dir / "styles.tsv", styles_tsv(styles));
  const double probe = probe_disentanglement(styles.vectors, styles.emotions, ctx.world.emotions(),
                                             ProbeOptions{.seed = derive_seed(c.seed, "probe")});
  const auto n_styles = static_cast<Index>(styles.emotions.size());

  const LossRecord& last = result.trace.back();
  MetricTable m;
  m.add("final_recon", last.recon, 1);
  m.add("final_dsm", last.dsm, 1);
  m.add("final_dat", last.dat, 1);
  m.add("probe_accuracy", probe, n_styles);
  write_file(ctx.dir / "metrics.csv", m.str());
  write_file(ctx.dir / "report.jsonl",
             to_json_line(EvalReport{"probe_accuracy", probe, n_styles,
                                     fingerprint(ctx, &result.checkpoint, 0.0, GuidanceMode::None)}) +
                 "\n");
  ctx.out << "checkpoint " << (ctx.dir / "checkpoint.bin").string() << " probe_accuracy " << probe << "\n";
  return kExitOk;
}

int cmd_train_clf(Context& ctx) {
  Checkpoint ckpt = load_required_checkpoint(ctx);
  // The classifier settings come from the current config, not the checkpoint.
  const TrainConfig tc = ctx.config.train_config();
  ckpt.config.clf_steps = tc.clf_steps;
  ckpt.config.clf_batch = tc.clf_batch;
  ckpt.config.clf_lr = tc.clf_lr;
  ckpt.config.clf_examples = tc.clf_examples;
  ckpt.config.clf_reference_len = tc.clf_reference_len;
  const auto losses = fit_classifier(ckpt, ctx.world, ctx.split);
  save_checkpoint(ckpt, ctx.dir / "checkpoint.bin");

  std::string trace;
  const Index every = std::max<Index>(1, ctx.config.train.log_every);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (static_cast<Index>(i) % every == 0 || i + 1 == losses.size()) {
      nlohmann::ordered_json j;
      j["step"] = i;
      j["loss"] = losses[i];
      trace += j.dump() + "\n";
    }
  }
  write_file(ctx.dir / "clf_losses.jsonl", trace);

  const auto held_out = classifier_dataset(ctx.world, ctx.split, ckpt.model, 500, tc.clf_reference_len,
                                           derive_seed(ctx.config.seed, "clf_eval"));
  MetricTable m;
  std::string report;
  for (double t : {0.01, 0.25, 0.5, 1.0}) {
    const double acc = 100.0 * classifier_accuracy(ckpt.model.classifier, held_out, ckpt.model.schedule, t,
                                                   derive_seed(ctx.config.seed, "clf_acc"));
    const std::string name = "classifier_accuracy_t" + fmt(t);
    m.add(name, acc, static_cast<Index>(held_out.size()));
    report += to_json_line(EvalReport{name, acc, static_cast<Index>(held_out.size()),
                                      fingerprint(ctx, &ckpt, 0.0, GuidanceMode::Classifier)}) +
              "\n";
  }
  write_file(ctx.dir / "metrics.csv", m.str());
  write_file(ctx.dir / "report.jsonl", report);
  ctx.out << "checkpoint with classifier " << (ctx.dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

int cmd_sample(Context& ctx) {
  const Checkpoint ckpt = load_required_checkpoint(ctx);
  const SampleConfig& sc = ctx.config.sample;
  if (sc.mode == GuidanceMode::Classifier && !ckpt.classifier_trained) {
    throw std::runtime_error("classifier guidance needs a checkpoint from train-clf");
  }
  const Index speaker = sc.speaker < 0 ? ctx.split.unseen.front() : sc.speaker;
  ctx.world.check_speaker(speaker);
  ctx.world.check_emotion(sc.emotion);

  Rng rng(derive_seed(ctx.config.seed, "sample"));
  const Utterance reference =
      reference_utterance(ctx.world, ctx.split, speaker, kNeutral, random_tokens(ctx.world, sc.reference_len, rng), rng());
  const StyleVector style = ckpt.model.style.encode(reference.frames);
  const DiffusionModel dm = ckpt.diffusion();
  const RowVector<double> ref_embedding = mean_frame_embedding(ctx.world, reference.frames, reference.tokens, kNeutral);

  std::vector<FrameMatrix> samples;
  std::vector<EvalCondition> conds;
  std::string samples_tsv = "sample\trow\ttoken";
  for (Index d = 0; d < ctx.world.dim(); ++d) samples_tsv += "\ty" + std::to_string(d);
  samples_tsv += "\n";
  std::string trace;
  double secs_frame = 0.0, secs_style = 0.0;
  Index speaker_hits = 0;
  std::set<std::string> warnings;
  for (Index i = 0; i < sc.count; ++i) {
    EvalCondition cond{speaker, sc.emotion, random_tokens(ctx.world, sc.length, rng)};
    SamplerOptions so;
    so.steps = sc.steps;
    so.stochastic = sc.stochastic;
    so.seed = rng();
    if (sc.trace) {
      so.trace = [&trace, i](const TraceRecord& r) {
        nlohmann::ordered_json j;
        j["sample"] = i;
        j["step"] = r.step;
        j["t"] = r.t;
        j["score_norm"] = r.score_norm;
        j["guidance_norm"] = r.guidance_norm;
        trace += j.dump() + "\n";
      };
    }
    const double gamma = sc.mode == GuidanceMode::None ? 0.0 : sc.gamma;
    SampleResult res = sc.mode == GuidanceMode::Classifier
                           ? sample_cg(dm, ckpt.model.classifier, cond.tokens, style, cond.emotion, gamma, so)
                           : sample_cfg(dm, cond.tokens, style, cond.emotion, gamma, so);
    for (auto& w : res.warnings) warnings.insert(w);
    const FrameMatrix& y = res.frames;
    for (Index r = 0; r < y.rows(); ++r) {
      samples_tsv += std::to_string(i) + "\t" + std::to_string(r) + "\t" +
                     std::to_string(cond.tokens[static_cast<std::size_t>(r)]);
      for (Index d = 0; d < y.cols(); ++d) samples_tsv += "\t" + fmt(y(r, d));
      samples_tsv += "\n";
    }
    const Index predicted = bayes_emotion(ctx.world, speaker, cond.tokens, y);
    secs_frame += secs_analog(mean_frame_embedding(ctx.world, y, cond.tokens, predicted), ref_embedding);
    secs_style += secs_analog(ckpt.model.style.encode(y), style);
    speaker_hits += nearest_speaker(ctx.world, y, cond.tokens) == speaker ? 1 : 0;
    samples.push_back(y);
    conds.push_back(std::move(cond));
  }
  for (const auto& w : warnings) ctx.err << "warning: " << w << "\n";

  const auto n = static_cast<Index>(samples.size());
  const double dn = static_cast<double>(n);
  const std::pair<std::string, double> metrics[] = {
      {"eca", eca_oracle(ctx.world, samples, conds)},
      {"content_error", content_error(ctx.world, samples, conds).mean},
      {"secs_mean_frame", secs_frame / dn},
      {"secs_style", secs_style / dn},
      {"speaker_accuracy", 100.0 * static_cast<double>(speaker_hits) / dn},
  };
  MetricTable m;
  std::string report;
  for (const auto& [name, value] : metrics) {
    m.add(name, value, n);
    report += to_json_line(EvalReport{name, value, n, fingerprint(ctx, &ckpt, sc.gamma, sc.mode)}) + "\n";
  }
  write_file(ctx.dir / "samples.tsv", samples_tsv);
  write_file(ctx.dir / "metrics.csv", m.str());
  write_file(ctx.dir / "report.jsonl", report);
  if (sc.trace) write_file(ctx.dir / "trace.jsonl", trace);
  ctx.out << n << " samples for speaker " << speaker << " emotion " << sc.emotion << ": eca " << metrics[0].second
          << " content_error " << metrics[1].second << "\n";
  return kExitOk;
}

int cmd_eval(Context& ctx) {
  const Checkpoint ckpt = load_required_checkpoint(ctx);
  const ExperimentConfig& c = ctx.config;
  const SampleConfig& sc = c.sample;
  if (sc.mode == GuidanceMode::Classifier && !ckpt.classifier_trained) {
    throw std::runtime_error("classifier guidance needs a checkpoint from train-clf");
  }
  MetricTable m;
  std::string report;
  auto emit = [&](const std::string& name, double value, Index n, double gamma, GuidanceMode mode) {
    m.add(name, value, n);
    report += to_json_line(EvalReport{name, value, n, fingerprint(ctx, &ckpt, gamma, mode)}) + "\n";
  };

  const StyleSet styles = collect_styles(ctx.world, ctx.split.seen, ckpt.model.style, c.eval.probe_per_emotion,
                                         c.eval.reference_len, derive_seed(c.seed, "styles"));
  write_file(ctx.dir / "styles.tsv", styles_tsv(styles));
  emit("probe_accuracy",
       probe_disentanglement(styles.vectors, styles.emotions, ctx.world.emotions(),
                             ProbeOptions{.seed = derive_seed(c.seed, "probe")}),
       static_cast<Index>(styles.emotions.size()), 0.0, GuidanceMode::None);

  SweepOptions so = c.sweep_options();
  so.mode = sc.mode == GuidanceMode::None ? GuidanceMode::ClassifierFree : sc.mode;
  so.gammas = {0.0};
  if (sc.mode != GuidanceMode::None && sc.gamma > 0.0) so.gammas.push_back(sc.gamma);
  for (SpeakerGroup group : {SpeakerGroup::Seen, SpeakerGroup::Unseen}) {
    so.group = group;
    const std::string g(speaker_group_name(group));
    for (const SweepRow& r : guidance_sweep(ckpt, ctx.world, ctx.split, so)) {
      const std::string suffix = "_" + g + "_" + std::string(guidance_mode_name(r.mode)) + "_g" + fmt(r.gamma);
      emit("eca" + suffix, r.eca, r.n, r.gamma, r.mode);
      emit("content_error" + suffix, r.content_error, r.n, r.gamma, r.mode);
      emit("secs_mean_frame" + suffix, r.secs_mean_frame, r.n, r.gamma, r.mode);
      emit("secs_style" + suffix, r.secs_style, r.n, r.gamma, r.mode);
      emit("speaker_accuracy" + suffix, r.speaker_accuracy, r.n, r.gamma, r.mode);
      ctx.out << g << " " << guidance_mode_name(r.mode) << " gamma " << r.gamma << ": eca " << r.eca
              << " speaker_accuracy " << r.speaker_accuracy << "\n";
    }
  }
  write_file(ctx.dir / "metrics.csv", m.str());
  write_file(ctx.dir / "report.jsonl", report);
  return kExitOk;
}

int cmd_sweep(Context& ctx) {
  const Checkpoint ckpt = load_required_checkpoint(ctx);
  const auto rows = guidance_sweep(ckpt, ctx.world, ctx.split, ctx.config.sweep_options());
  write_file(ctx.dir / "metrics.csv", sweep_csv(rows));
  std::string report;
  for (const auto& r : rows) {
    report += to_json_line(EvalReport{"eca", r.eca, r.n, fingerprint(ctx, &ckpt, r.gamma, r.mode)}) + "\n";
    report += to_json_line(EvalReport{"content_error", r.content_error, r.n, fingerprint(ctx, &ckpt, r.gamma, r.mode)}) +
              "\n";
  }
  write_file(ctx.dir / "report.jsonl", report);
  ctx.out << sweep_csv(rows);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Emotional style transfer on a synthetic speech world", "emosynth"};
  app.require_subcommand(1, 1);
  Options opt;

  struct Sub {
    const char* name;
    const char* help;
    bool needs_checkpoint;
  };
  const Sub subs[] = {
      {"gen-data", "write the synthetic world and speaker split", false},
      {"train", "train the style encoder, generator and score network", false},
      {"train-clf", "train the noisy emotion classifier for classifier guidance", true},
      {"sample", "generate samples for one speaker and emotion", true},
      {"eval", "probe accuracy plus guided and unguided metrics on both speaker groups", true},
      {"sweep", "guidance-scale sweep, one CSV row per gamma", true},
      {"verify", "oracle self-tests and gradient checks", false},
  };
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("-c,--config", opt.config_path, "config file (defaults when omitted)");
    sub->add_option("--set", opt.overrides, "override, section.key=value (repeatable)")->allow_extra_args(false);
    sub->add_option("-o,--out", opt.out_dir, "run directory (default: <runs>/<hash>-<timestamp>)");
    sub->add_option("--runs", opt.runs_root, "root for generated run directories")->capture_default_str();
    sub->add_option("--world", opt.world_path, "world file from gen-data (default: generated from the config)");
    sub->add_flag("-q,--quiet", opt.quiet, "no progress output");
    if (s.needs_checkpoint) sub->add_option("--checkpoint", opt.checkpoint_path, "checkpoint.bin to load");
  }

  if (!args.empty() && !args.front().starts_with('-') && app.get_subcommand_no_throw(args.front()) == nullptr) {
    err << "error: unknown subcommand '" << args.front() << "'\n" << app.help();
    return kExitUsage;
  }
  std::vector<std::string> argv_store{"emosynth"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ExperimentConfig config;
  try {
    config = opt.config_path.empty() ? default_config() : parse_config(read_file(opt.config_path), opt.config_path);
    for (const auto& o : opt.overrides) apply_override(config, o);
    validate(config);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    World world;
    if (opt.world_path.empty()) {
      world = make_world(config.world, config.seed);
    } else {
      std::ifstream is(opt.world_path);
      if (!is) throw std::runtime_error("cannot read world '" + opt.world_path + "'");
      world = read_world(is);
    }
    const SpeakerSplit split = split_speakers(world, config.n_seen, config.seed);
    const std::string resolved = resolved_config(config);
    Context ctx{opt, config, std::move(world), split, make_run_dir(opt, resolved), out, err};
    write_file(ctx.dir / "config.resolved", resolved);
    if (!opt.quiet) err << "run directory " << ctx.dir.string() << "\n";

    if (command == "gen-data") return cmd_gen_data(ctx);
    if (command == "verify") return cmd_verify(ctx);
    if (command == "train") return cmd_train(ctx);
    if (command == "train-clf") return cmd_train_clf(ctx);
    if (command == "sample") return cmd_sample(ctx);
    if (command == "eval") return cmd_eval(ctx);
    return cmd_sweep(ctx);
  } catch (const MissingCheckpoint& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingCheckpoint;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace emosynth::cli
