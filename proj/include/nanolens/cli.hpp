#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "nanolens/checkpoint.hpp"
#include "nanolens/dataset.hpp"
#include "nanolens/manifest.hpp"
#include "nanolens/service.hpp"
#include "nanolens/synthetic.hpp"
#include "nanolens/training.hpp"
#include "nanolens/visualization.hpp"

namespace nanolens::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad arguments discovered after parsing (cross-option checks, config file problems).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

/// Required options are checked after the config file is applied, so either source may supply them.
inline CLI::Option* mark_required(CLI::Option* opt) {
  opt->group("Required");
  return opt;
}

inline void check_required(const CLI::App& sub) {
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_group() == "Required" && opt->count() == 0) {
      throw UsageError(opt->get_name() + " is required");
    }
  }
}

/// Feeds config entries into options the command line left unset, so flags win.
inline void apply_config(CLI::App& sub, const std::filesystem::path& path) {
  for (const auto& [key, value] : read_config_file(path)) {
    if (key == "config") throw UsageError("config files cannot include other config files");
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw UsageError("unknown key '" + key + "' in " + path.string());
    if (opt->count() > 0) continue;
    if (opt->get_expected_max() > 1) {
      std::stringstream parts(value);
      for (std::string item; std::getline(parts, item, ',');) opt->add_result(item);
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  RunManifest manifest;

  Context(std::ostream& o, std::ostream& e, std::string command) : out(o), err(e) {
    manifest.command = std::move(command);
    manifest.started_at = utc_timestamp(std::chrono::system_clock::now());
  }

  void write_output(const std::filesystem::path& dir, const std::string& name, std::span<const std::uint8_t> bytes) {
    write_file_atomic(dir / name, bytes);
    manifest.outputs.push_back(name);
    out << (dir / name).string() << "\n";
  }
  void write_output(const std::filesystem::path& dir, const std::string& name, std::string_view text) {
    write_output(dir, name,
                 std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  void finish(const std::filesystem::path& dir) {
    manifest.output_dir = dir.string();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest, dir / "manifest.json");
  }
};

inline OptimizerKind parse_optimizer(const std::string& s) {
  return s == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
}

inline std::function<void(const EpochRecord&)> epoch_logger(std::ostream& err, std::size_t epochs,
                                                            const std::string& val_name) {
  return [&err, epochs, val_name](const EpochRecord& r) {
    err << "epoch " << r.epoch << "/" << epochs << " train_loss=" << r.train_loss;
    if (r.val_metric) err << " " << val_name << "=" << *r.val_metric;
    err << "\n";
  };
}

struct TrainArgs {
  std::filesystem::path data;
  std::filesystem::path out = "nanolens_out";
  std::size_t size = 64;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  double train_fraction = 0.9;
};

inline void add_train_options(CLI::App& sub, TrainArgs& a) {
  mark_required(sub.add_option("--data", a.data, "Corpus root with one subdirectory per class")->check(CLI::ExistingDirectory));
  sub.add_option("--out", a.out, "Output directory")->capture_default_str();
  sub.add_option("--size", a.size, "Input side length in pixels")->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--epochs", a.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--batch", a.batch, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--lr", a.lr, "Learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--optimizer", a.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  sub.add_option("--seed", a.seed)->capture_default_str();
  sub.add_option("--train-fraction", a.train_fraction)->check(CLI::Range(0.0, 1.0))->capture_default_str();
}

inline TrainConfig train_config(const TrainArgs& a) {
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.optimizer = parse_optimizer(a.optimizer);
  tc.seed = a.seed;
  tc.image_size = a.size;
  tc.train_fraction = a.train_fraction;
  return tc;
}

inline nlohmann::json train_json(const TrainArgs& a) {
  return {{"data", a.data.string()}, {"out", a.out.string()}, {"size", a.size},
          {"epochs", a.epochs},      {"batch", a.batch},      {"lr", a.lr},
          {"optimizer", a.optimizer}, {"seed", a.seed},       {"train_fraction", a.train_fraction}};
}

inline DatasetIndex ingest_logged(const std::filesystem::path& root, std::ostream& err) {
  auto index = ingest_dataset(root);
  for (const auto& w : index.warnings) err << "warning: " << w << "\n";
  err << "dataset: " << index.size() << " images in " << index.class_count() << " classes\n";
  return index;
}

struct CaeArgs {
  TrainArgs train;
  std::vector<std::size_t> schedule{16, 8, 8};
};

inline int cmd_train_cae(const CaeArgs& a, Context& ctx) {
  AutoencoderConfig ac;
  ac.input_size = a.train.size;
  ac.channel_schedule = a.schedule;
  ac.seed = a.train.seed;
  const auto model = build_autoencoder<float>(ac);
  auto tc = train_config(a.train);
  tc.on_epoch = epoch_logger(ctx.err, tc.epochs, "val_loss");
  const auto index = ingest_logged(a.train.data, ctx.err);
  const auto result = train_autoencoder(model, index, tc);

  ctx.manifest.config = train_json(a.train);
  ctx.manifest.config["schedule"] = join(a.schedule);
  ctx.manifest.seed = a.train.seed;
  ctx.write_output(a.train.out, "model.ckpt", result.checkpoint);
  ctx.write_output(a.train.out, "loss.csv", history_csv(result.history, "val_loss"));
  ctx.manifest.checkpoints.push_back((a.train.out / "model.ckpt").string());
  ctx.manifest.config["best_epoch"] = result.best_epoch;
  ctx.finish(a.train.out);
  return kExitOk;
}

struct ClsArgs {
  TrainArgs train;
  std::string regime = "a3";
  std::optional<std::filesystem::path> base;
  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::size_t hidden = 64;
};

inline int cmd_train_cls(const ClsArgs& a, CLI::App& sub, Context& ctx) {
  Regime regime{a.regime == "a1" ? RegimeKind::kA1 : a.regime == "a2" ? RegimeKind::kA2 : RegimeKind::kA3, a.base};
  if (regime.kind != RegimeKind::kA3 && !a.base) {
    throw UsageError("--regime " + a.regime + " requires --base CKPT");
  }
  if (regime.kind == RegimeKind::kA3 && a.base) {
    ctx.err << "warning: --base is ignored by regime a3\n";
    regime.base_checkpoint.reset();
  }
  ClassifierConfig cc;
  cc.input_size = a.train.size;
  cc.conv_channels = a.conv_channels;
  cc.hidden_units = a.hidden;
  cc.seed = a.train.seed;
  TrainArgs train = a.train;
  if (regime.base_checkpoint) {
    // the conv stages and input size come from the base unless given explicitly
    const auto base = load_checkpoint(*regime.base_checkpoint);
    if (base.kind != ModelKind::kClassifier) throw UsageError("--base must be a classifier checkpoint");
    if (sub.get_option("--size")->count() == 0) cc.input_size = train.size = base.input_shape.h;
    if (sub.get_option("--conv-channels")->count() == 0) {
      cc.conv_channels.clear();
      for (std::size_t i = 0; i < detail::conv_base_end(base); ++i) {
        if (base.layers[i].kind == LayerKind::kConv2D) cc.conv_channels.push_back(base.layers[i].units);
      }
    }
  }
  const auto index = ingest_logged(train.data, ctx.err);
  cc.num_classes = index.class_count();
  if (cc.num_classes < 2) throw UsageError("classification needs at least two class directories");
  const auto model = build_classifier<float>(cc);
  auto tc = train_config(train);
  tc.on_epoch = epoch_logger(ctx.err, tc.epochs, "val_accuracy");
  const auto result = train_classifier(model, index, tc, regime);

  ctx.manifest.config = train_json(train);
  ctx.manifest.config["regime"] = a.regime;
  ctx.manifest.config["base"] = regime.base_checkpoint ? regime.base_checkpoint->string() : "";
  ctx.manifest.config["conv_channels"] = join(cc.conv_channels);
  ctx.manifest.config["hidden"] = cc.hidden_units;
  ctx.manifest.config["classes"] = index.class_names;
  ctx.manifest.config["best_epoch"] = result.best_epoch;
  ctx.manifest.seed = train.seed;
  if (regime.base_checkpoint) ctx.manifest.checkpoints.push_back(regime.base_checkpoint->string());
  ctx.write_output(train.out, "model.ckpt", result.checkpoint);
  ctx.write_output(train.out, "accuracy.csv", history_csv(result.history, "val_accuracy"));
  ctx.manifest.checkpoints.push_back((train.out / "model.ckpt").string());
  ctx.finish(train.out);
  return kExitOk;
}

struct SurrogateArgs {
  SurrogateConfig sc;
  std::filesystem::path out = "nanolens_out";
};

inline int cmd_surrogate_base(const SurrogateArgs& a, Context& ctx) {
  const auto result = make_surrogate_base(a.sc);
  ctx.manifest.config = {{"size", a.sc.image_size},   {"conv_channels", join(a.sc.conv_channels)},
                         {"hidden", a.sc.hidden_units}, {"per_class", a.sc.per_class},
                         {"epochs", a.sc.epochs},     {"seed", a.sc.seed},
                         {"out", a.out.string()},     {"best_epoch", result.best_epoch}};
  ctx.manifest.seed = a.sc.seed;
  ctx.write_output(a.out, "surrogate.ckpt", result.checkpoint);
  ctx.write_output(a.out, "accuracy.csv", history_csv(result.history, "val_accuracy"));
  ctx.manifest.checkpoints.push_back((a.out / "surrogate.ckpt").string());
  ctx.finish(a.out);
  return kExitOk;
}

struct LensArgs {
  std::filesystem::path ckpt;
  std::filesystem::path image;
  std::vector<std::size_t> depths;
  std::filesystem::path out = "nanolens_out";
};

inline int cmd_lens(LensArgs a, Context& ctx) {
  const auto model = load_checkpoint(a.ckpt);
  const std::size_t max = model.max_depth();
  for (std::size_t d : a.depths) {
    if (d < 1 || d > max) {
      throw UsageError("depth " + std::to_string(d) + " outside valid range [1, " + std::to_string(max) + "]");
    }
  }
  std::sort(a.depths.begin(), a.depths.end());
  a.depths.erase(std::unique(a.depths.begin(), a.depths.end()), a.depths.end());
  const auto x = preprocess(read_file_bytes(a.image), model.input_shape.h);

  ctx.manifest.config = {{"ckpt", a.ckpt.string()}, {"image", a.image.string()},
                         {"depth", a.depths},       {"out", a.out.string()}};
  ctx.manifest.checkpoints.push_back(a.ckpt.string());
  for (std::size_t d : a.depths) {
    const auto grid = extract_activations(model, d, x);
    const std::string stem = "lens_d" + std::to_string(d);
    ctx.write_output(a.out, stem + ".png", encode_png(grid.image));
    ctx.write_output(a.out, stem + ".csv", activation_csv(grid));
  }
  ctx.finish(a.out);
  return kExitOk;
}

struct FiltersArgs {
  std::filesystem::path ckpt;
  std::size_t layer = 0;
  std::optional<std::size_t> filter;
  GradientAscentConfig ascent;
  std::string init = "gray_noise";
  bool no_clamp = false;
  std::filesystem::path out = "nanolens_out";
};

inline int cmd_filters(FiltersArgs a, Context& ctx) {
  const auto model = load_checkpoint(a.ckpt);
  a.ascent.init = a.init == "zeros" ? AscentInit::kZeros : AscentInit::kGrayNoise;
  a.ascent.clamp = !a.no_clamp;
  a.ascent.validate();
  detail::ascent_prefix(model, a.layer, a.filter.value_or(0));  // reject bad layer/filter before any work

  ctx.manifest.config = {{"ckpt", a.ckpt.string()},
                         {"layer", a.layer},
                         {"filter", a.filter ? nlohmann::json(*a.filter) : nlohmann::json(nullptr)},
                         {"steps", a.ascent.steps},
                         {"step_size", a.ascent.step_size},
                         {"seed", a.ascent.seed},
                         {"init", a.init},
                         {"clamp", a.ascent.clamp},
                         {"out", a.out.string()}};
  ctx.manifest.seed = a.ascent.seed;
  ctx.manifest.checkpoints.push_back(a.ckpt.string());
  const std::string stem = "filters_l" + std::to_string(a.layer);
  if (a.filter) {
    const auto v = visualize_filter(model, a.layer, *a.filter, filter_seed_config(a.ascent, *a.filter));
    const FilterAtlas one = assemble_atlas(a.layer, {v});  // reuses the score CSV layout
    ctx.write_output(a.out, stem + "_f" + std::to_string(*a.filter) + ".png", encode_png(deprocess(v.image)));
    ctx.write_output(a.out, stem + "_f" + std::to_string(*a.filter) + ".csv", one.csv());
  } else {
    const auto atlas = filter_atlas(model, a.layer, a.ascent);
    ctx.write_output(a.out, stem + "_atlas.png", encode_png(atlas.image));
    ctx.write_output(a.out, stem + "_atlas.csv", atlas.csv());
  }
  ctx.finish(a.out);
  return kExitOk;
}

struct SynthArgs {
  std::filesystem::path out;
  std::size_t per_class = 32;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

inline int cmd_synth_corpus(const SynthArgs& a, Context& ctx) {
  synthetic::write_stripes_dots_corpus(a.out, a.per_class, a.size, a.seed);
  ctx.manifest.config = {{"out", a.out.string()}, {"per_class", a.per_class}, {"size", a.size}, {"seed", a.seed}};
  ctx.manifest.seed = a.seed;
  for (const char* cls : {"dots", "stripes"}) ctx.manifest.outputs.push_back(std::string(cls) + "/");
  ctx.out << a.out.string() << "\n";
  ctx.finish(a.out);
  return kExitOk;
}

struct ServeArgs {
  std::filesystem::path ckpt_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::filesystem::path store = "nanolens_store";
  std::size_t max_upload_mib = 32;
};

/// Serves until SIGINT or SIGTERM.
inline int cmd_serve(const ServeArgs& a, Context& ctx) {
  // block the shutdown signals before any thread starts, so only sigwait sees them
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ServiceConfig sc;
  sc.ckpt_dir = a.ckpt_dir;
  sc.static_dir = a.static_dir;
  sc.store_dir = a.store;
  sc.workers = a.workers;
  sc.max_upload_bytes = a.max_upload_mib << 20;
  Service service(sc);
  const int port = service.bind(a.host, a.port);
  ctx.err << "serving " << service.model_count() << " model(s) on http://" << a.host << ":" << port << "\n";
  ctx.err.flush();
  std::thread server([&service] { service.serve(); });
  int sig = 0;
  sigwait(&signals, &sig);
  ctx.err << "shutting down on signal " << sig << "\n";
  service.stop();
  server.join();

  ctx.manifest.config = {{"ckpt_dir", a.ckpt_dir.string()},
                         {"host", a.host},
                         {"port", port},
                         {"static", a.static_dir ? a.static_dir->string() : ""},
                         {"workers", a.workers},
                         {"store", a.store.string()},
                         {"max_upload_mib", a.max_upload_mib}};
  ctx.finish(a.store);
  return kExitOk;
}

/// Parses `args` (program name first) and runs one subcommand.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"nanolens: train small CNNs on micrographs and look inside them", "nanolens"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kEngineVersion));

  std::map<CLI::App*, std::filesystem::path> configs;
  auto add_config = [&configs](CLI::App* sub) {
    sub->add_option_function<std::string>(
        "--config", [&configs, sub](const std::string& p) { configs[sub] = p; },
        "key=value file; explicit flags take precedence");
  };

  CaeArgs cae;
  auto* s_cae = app.add_subcommand("train-cae", "Train the convolutional autoencoder");
  add_train_options(*s_cae, cae.train);
  s_cae->add_option("--schedule", cae.schedule, "Encoder channels per stage, comma separated")
      ->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
  add_config(s_cae);

  ClsArgs cls;
  auto* s_cls = app.add_subcommand("train-cls", "Train the classifier under regime a1, a2 or a3");
  add_train_options(*s_cls, cls.train);
  s_cls->add_option("--regime", cls.regime, "a1 frozen base, a2 fine-tuned base, a3 from scratch")
      ->check(CLI::IsMember({"a1", "a2", "a3"}))->capture_default_str();
  s_cls->add_option("--base", cls.base, "Pretrained classifier checkpoint (a1, a2)")->check(CLI::ExistingFile);
  s_cls->add_option("--conv-channels", cls.conv_channels)->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
  s_cls->add_option("--hidden", cls.hidden)->check(CLI::PositiveNumber)->capture_default_str();
  add_config(s_cls);

  SurrogateArgs sur;
  sur.sc.image_size = 32;
  auto* s_sur = app.add_subcommand("surrogate-base", "Pretrain a transfer base on synthetic gratings");
  s_sur->add_option("--out", sur.out)->capture_default_str();
  s_sur->add_option("--size", sur.sc.image_size)->check(CLI::PositiveNumber)->capture_default_str();
  s_sur->add_option("--conv-channels", sur.sc.conv_channels)->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
  s_sur->add_option("--hidden", sur.sc.hidden_units)->check(CLI::PositiveNumber)->capture_default_str();
  s_sur->add_option("--per-class", sur.sc.per_class)->check(CLI::PositiveNumber)->capture_default_str();
  s_sur->add_option("--epochs", sur.sc.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  s_sur->add_option("--seed", sur.sc.seed)->capture_default_str();
  add_config(s_sur);

  LensArgs lens;
  auto* s_lens = app.add_subcommand("lens", "Render activation grids at one or more depths");
  mark_required(s_lens->add_option("--ckpt", lens.ckpt)->check(CLI::ExistingFile));
  mark_required(s_lens->add_option("--image", lens.image)->check(CLI::ExistingFile));
  mark_required(s_lens->add_option("--depth", lens.depths, "Number of leading layers to run (repeatable)"));
  s_lens->add_option("--out", lens.out)->capture_default_str();
  add_config(s_lens);

  FiltersArgs fil;
  auto* s_fil = app.add_subcommand("filters", "Synthesize filter-maximizing inputs by gradient ascent");
  mark_required(s_fil->add_option("--ckpt", fil.ckpt)->check(CLI::ExistingFile));
  mark_required(s_fil->add_option("--layer", fil.layer, "Conv layer index"));
  s_fil->add_option("--filter", fil.filter, "Single filter; omit for the full atlas");
  s_fil->add_option("--steps", fil.ascent.steps)->check(CLI::PositiveNumber)->capture_default_str();
  s_fil->add_option("--step-size", fil.ascent.step_size, "Per-step RMS move in 8-bit gray levels")
      ->check(CLI::PositiveNumber)->capture_default_str();
  s_fil->add_option("--seed", fil.ascent.seed)->capture_default_str();
  s_fil->add_option("--init", fil.init)->check(CLI::IsMember({"gray_noise", "zeros"}))->capture_default_str();
  s_fil->add_flag("--no-clamp", fil.no_clamp, "Let x leave [0, 1] during ascent");
  s_fil->add_option("--out", fil.out)->capture_default_str();
  add_config(s_fil);

  SynthArgs syn;
  auto* s_syn = app.add_subcommand("synth-corpus", "Write the synthetic stripes/dots corpus");
  mark_required(s_syn->add_option("--out", syn.out));
  s_syn->add_option("--per-class", syn.per_class)->check(CLI::PositiveNumber)->capture_default_str();
  s_syn->add_option("--size", syn.size)->check(CLI::PositiveNumber)->capture_default_str();
  s_syn->add_option("--seed", syn.seed)->capture_default_str();
  add_config(s_syn);

  ServeArgs srv;
  auto* s_srv = app.add_subcommand("serve", "Run the HTTP service");
  mark_required(s_srv->add_option("--ckpt-dir", srv.ckpt_dir, "Directory of *.ckpt files"));
  s_srv->add_option("--host", srv.host)->capture_default_str();
  s_srv->add_option("--port", srv.port, "0 picks a free port")->check(CLI::Range(0, 65535))->capture_default_str();
  s_srv->add_option("--static", srv.static_dir, "UI assets to serve at /");
  s_srv->add_option("--workers", srv.workers)->check(CLI::PositiveNumber)->capture_default_str();
  s_srv->add_option("--store", srv.store, "Image and artifact store")->capture_default_str();
  s_srv->add_option("--max-upload-mib", srv.max_upload_mib)->check(CLI::PositiveNumber)->capture_default_str();
  add_config(s_srv);

  CLI::App* sub = nullptr;
  try {
    app.parse(argc, argv);
    sub = app.get_subcommands().front();
    if (const auto it = configs.find(sub); it != configs.end()) apply_config(*sub, it->second);
    check_required(*sub);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    CLI::App* target = sub ? sub : (app.get_subcommands().empty() ? &app : app.get_subcommands().front());
    err << target->help();
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << sub->help();
    return kExitUsage;
  }

  Context ctx(out, err, sub->get_name());
  try {
    if (sub == s_cae) return cmd_train_cae(cae, ctx);
    if (sub == s_cls) return cmd_train_cls(cls, *s_cls, ctx);
    if (sub == s_sur) return cmd_surrogate_base(sur, ctx);
    if (sub == s_lens) return cmd_lens(lens, ctx);
    if (sub == s_fil) return cmd_filters(fil, ctx);
    if (sub == s_syn) return cmd_synth_corpus(syn, ctx);
    if (sub == s_srv) return cmd_serve(srv, ctx);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {  // invalid parameter values reported by the library
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const RangeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace nanolens::cli
