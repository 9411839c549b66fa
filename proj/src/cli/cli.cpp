#include <atomic>
#include <csignal>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pmk/cli.hpp"
#include "pmk/collect.hpp"
#include "pmk/error.hpp"
#include "pmk/trainer.hpp"

namespace pmk::cli {

namespace {

struct MetricFlags {
  std::vector<std::string> names;
  std::string backbone, weights, calib;

  MetricOptions options() const {
    MetricOptions o;
    if (!backbone.empty()) o.backbone = backbone;
    if (!weights.empty()) o.weights = weights;
    if (!calib.empty()) o.calib = calib;
    return o;
  }
};

void add_metric_flags(CLI::App* sub, MetricFlags& m, bool many) {
  auto* opt = sub->add_option("--metric", m.names, many ? "Metrics to evaluate (repeat or comma-separate)" : "Metric")
                  ->check(CLI::IsMember(metric_names()));
  if (many) opt->delimiter(',')->required();
  else opt->default_val("lpips")->expected(1);
  sub->add_option("--backbone", m.backbone, "Backbone spec JSON (default TinyConv)");
  sub->add_option("--weights", m.weights, "Backbone weights (.lpw), required for lpips");
  sub->add_option("--calib", m.calib, "Channel weights (.lpw) from train; all ones when absent");
}

CLI::Option* add_seed(CLI::App* sub, std::uint64_t& seed) {
  return sub->add_option("--seed", seed, "Random seed")->envname("PMK_SEED")->default_val(0);
}

void check_jobs(unsigned jobs) {
  if (jobs == 0) throw Error(ErrorKind::config, "--jobs must be >= 1");
}

std::string csv_line(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + "\n";
}

// dist

struct DistArgs {
  std::string a, b;
  MetricFlags metric;
};

int cmd_dist(const DistArgs& args, std::ostream& out) {
  const auto a = to_tensor(read_image(args.a));
  const auto b = to_tensor(read_image(args.b));
  if (!a.same_shape(b)) throw Error(ErrorKind::range, "images differ in size");
  const auto& name = args.metric.names.at(0);
  if (name == "lpips") {
    const auto model = load_lpips(args.metric.options());
    const auto r = model(a, b);
    out << "total " << format_number(r.total) << "\n";
    for (std::size_t l = 0; l < r.per_layer.size(); ++l) out << "layer" << l << " " << format_number(r.per_layer[l]) << "\n";
    return 0;
  }
  out << format_number(metric_value(name, a, b, nullptr)) << "\n";
  return 0;
}

// build-2afc / build-jnd

struct Build2afcArgs {
  std::string corpus, out;
  Build2afcOptions opt;
  std::size_t bank_base = 20;
  std::size_t bank_composed = 308;
};

int cmd_build_2afc(Build2afcArgs args, std::ostream& out, std::ostream& err) {
  const auto corpus = load_corpus(args.corpus);
  Rng bank_rng(args.opt.seed, 0x62616e6b);
  const auto bank = sample_distortion_bank(args.bank_base, args.bank_composed, bank_rng);
  const auto records = build_2afc_dataset(args.out, corpus, bank, args.opt);
  std::size_t train = 0, val = 0, sentinels = 0;
  for (const auto& r : records) {
    if (r.is_sentinel) ++sentinels;
    else if (r.split == Split::train) ++train;
    else ++val;
  }
  err << "wrote " << records.size() << " records to " << args.out << "\n";
  out << csv_line({"train", "val", "sentinels"}) << csv_line({std::to_string(train), std::to_string(val), std::to_string(sentinels)});
  return 0;
}

struct BuildJndArgs {
  std::string corpus, out;
  BuildJndOptions opt;
};

int cmd_build_jnd(const BuildJndArgs& args, std::ostream& out, std::ostream& err) {
  const auto pairs = build_jnd_dataset(args.out, load_corpus(args.corpus), args.opt);
  std::map<std::string, std::size_t> roles;
  for (const auto& p : pairs) ++roles[std::string(to_string(p.role))];
  err << "wrote " << pairs.size() << " pairs to " << args.out << "\n";
  out << "role,count\n";
  for (const auto& [role, n] : roles) out << role << "," << n << "\n";
  return 0;
}

// train

struct TrainArgs {
  std::string dataset, out, backbone, weights, mode = "lin", loss = "bce", optimizer = "sgd";
  TrainConfig cfg;
  bool keep_failed = false;
};

int cmd_train(TrainArgs args, std::ostream& out, std::ostream& err) {
  args.cfg.mode = train_mode_from_string(args.mode);
  args.cfg.loss = loss_kind_from_string(args.loss);
  args.cfg.optimizer = optimizer_kind_from_string(args.optimizer);
  args.cfg.validate();
  const auto spec = args.backbone.empty() ? tiny_conv_spec() : load_backbone_spec(args.backbone);
  WeightStore weights;
  if (args.cfg.mode != TrainMode::scratch) {
    if (args.weights.empty()) throw Error(ErrorKind::config, "--weights is required for mode " + args.mode);
    weights = load_weights(args.weights);
  }
  const auto records = load_2afc_dataset(args.dataset, args.keep_failed);
  const auto train_set = load_training_split(args.dataset, records, Split::train);
  const auto val_set = load_training_split(args.dataset, records, Split::val);
  err << "training on " << train_set.size() << " triplets, validating on " << val_set.size() << "\n";
  const auto state = initial_state(spec, std::move(weights), args.cfg);
  const auto result = train(train_set, val_set, state, args.cfg);
  std::filesystem::create_directories(args.out);
  save_checkpoint(args.out, result, args.cfg);
  out << "epoch,lr,train_loss,val_2afc\n";
  for (const auto& e : result.log)
    out << csv_line({std::to_string(e.epoch), format_number(e.lr), format_number(e.train_loss),
                     e.val_2afc ? format_number(*e.val_2afc) : ""});
  if (result.skipped_fractional) err << "skipped " << result.skipped_fractional << " fractional labels\n";
  return 0;
}

// eval-2afc / eval-jnd

struct EvalArgs {
  std::string dataset, out, split = "val";
  MetricFlags metric;
  unsigned jobs = 1;
  bool keep_failed = false;
};

void emit_report(const Report& report, const EvalArgs& args, std::ostream& out) {
  if (!args.out.empty()) write_report(args.out, report);
  out << report_csv(report);
}

int cmd_eval_2afc(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  check_jobs(args.jobs);
  std::vector<JudgmentTriplet> records;
  std::size_t unlabeled = 0;
  for (auto& r : load_2afc_dataset(args.dataset, args.keep_failed)) {
    if (r.is_sentinel) continue;
    if (args.split != "all" && split_from_string(args.split) != r.split) continue;
    if (r.votes.empty()) {
      ++unlabeled;
      continue;
    }
    records.push_back(std::move(r));
  }
  if (unlabeled) err << "skipped " << unlabeled << " unlabeled triplets\n";
  if (records.empty()) throw Error(ErrorKind::missing_label, "no labeled triplets in split '" + args.split + "'");

  Report report;
  const auto p = vote_fractions(records);
  report.human_ceiling = human_ceiling(p);
  report.oracle_maximum = oracle_maximum(p);
  report.triplets = records.size();
  for (const auto& name : args.metric.names) {
    const auto items = score_triplets(args.dataset, records, make_distance(name, args.metric.options()), args.jobs);
    report.metrics.push_back(MetricReport{name, two_afc_score(items), std::nullopt});
  }
  emit_report(report, args, out);
  return 0;
}

int cmd_eval_jnd(const EvalArgs& args, std::ostream& out, std::ostream&) {
  check_jobs(args.jobs);
  const auto pairs = load_jnd_dataset(args.dataset, args.keep_failed);
  Report report;
  for (const auto& name : args.metric.names) {
    const auto items = score_jnd_pairs(args.dataset, pairs, make_distance(name, args.metric.options()), args.jobs);
    if (items.empty()) throw Error(ErrorKind::missing_label, "no labeled JND test pairs");
    report.jnd_pairs = items.size();
    report.metrics.push_back(MetricReport{name, std::nullopt, jnd_map(items)});
  }
  emit_report(report, args, out);
  return 0;
}

// corr / spearman-mos

struct CorrArgs {
  std::string table, kind = "pearson";
};

int cmd_corr(const CorrArgs& args, std::ostream& out) {
  const auto table = read_score_table(args.table);
  const auto m = cross_task_correlation(table, args.kind == "spearman" ? CorrelationKind::spearman : CorrelationKind::pearson);
  out << "task";
  for (const auto& t : table.tasks) out << "," << t;
  out << "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << table.tasks[i];
    for (double v : m[i]) out << "," << format_number(v);
    out << "\n";
  }
  return 0;
}

struct MosArgs {
  std::string mos;
  MetricFlags metric;
};

int cmd_spearman_mos(const MosArgs& args, std::ostream& out) {
  const std::filesystem::path file = args.mos;
  const auto rows = read_mos_csv(file);
  if (rows.size() < 2) throw Error(ErrorKind::undefined, "need at least 2 MOS rows");
  const auto base = file.parent_path();
  std::vector<PatchTensor> refs, dists;
  std::vector<double> mos;
  for (const auto& r : rows) {
    refs.push_back(to_tensor(read_image(base / r.ref)));
    dists.push_back(to_tensor(read_image(base / r.distorted)));
    if (!refs.back().same_shape(dists.back())) throw Error(ErrorKind::range, r.ref + " and " + r.distorted + " differ in size");
    mos.push_back(r.mos);
  }
  out << "metric,spearman,n\n";
  for (const auto& name : args.metric.names) {
    const auto d = make_distance(name, args.metric.options());
    std::vector<double> similarity;
    for (std::size_t i = 0; i < rows.size(); ++i) similarity.push_back(-d(refs[i], dists[i]));
    out << csv_line({name, format_number(spearman(similarity, mos)), std::to_string(rows.size())});
  }
  return 0;
}

// serve

struct ServeArgs {
  std::string dataset, host = "127.0.0.1", static_dir;
  int port = 8080;
  std::uint64_t seed = 0;
  std::size_t judgments = 60;
};

std::atomic<collect::Server*> active_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = active_server.load()) s->stop();
}

int cmd_serve(const ServeArgs& args, std::ostream& err) {
  collect::ServiceConfig cfg;
  cfg.root = args.dataset;
  cfg.seed = args.seed;
  cfg.two_afc.judgments = args.judgments;
  collect::Service service(cfg);
  std::optional<std::filesystem::path> ui;
  if (!args.static_dir.empty()) ui = args.static_dir;
  collect::Server server(service, ui);
  const int port = server.bind(args.host, args.port);
  err << "listening on http://" << args.host << ":" << port << "\n" << std::flush;
  active_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  active_server = nullptr;
  service.expire_idle();
  const auto bad = service.audit();
  err << "accepted " << service.accepted_answers() << " answers; " << bad << " votes outside their session plan\n";
  return bad ? 1 : 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perceptual image similarity toolkit", "pmk"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "INI file; [section] per subcommand, flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);

  DistArgs dist;
  auto* s_dist = app.add_subcommand("dist", "Distance between two images");
  s_dist->add_option("a", dist.a, "First image (PNG or PPM)")->required();
  s_dist->add_option("b", dist.b, "Second image")->required();
  add_metric_flags(s_dist, dist.metric, false);

  Build2afcArgs b2;
  auto* s_b2 = app.add_subcommand("build-2afc", "Build a 2AFC triplet dataset from a corpus");
  s_b2->add_option("--corpus", b2.corpus, "Directory of source images")->required();
  s_b2->add_option("--out", b2.out, "Dataset directory to write")->required();
  s_b2->add_option("--triplets", b2.opt.n_triplets, "Number of triplets")->required();
  s_b2->add_option("--val-fraction", b2.opt.val_fraction, "Fraction assigned to val")->default_val(0.2)->check(CLI::Range(0.0, 1.0));
  s_b2->add_option("--sentinels", b2.opt.n_sentinels, "Sentinel triplets")->default_val(kSentinelsPerSession);
  s_b2->add_option("--patch-size", b2.opt.patch_size, "Patch side in pixels")->default_val(kDefaultPatchSize);
  s_b2->add_option("--bank-base", b2.bank_base, "Single distortions in the bank")->default_val(20);
  s_b2->add_option("--bank-composed", b2.bank_composed, "Composed distortions in the bank")->default_val(308);
  add_seed(s_b2, b2.opt.seed);

  BuildJndArgs bj;
  auto* s_bj = app.add_subcommand("build-jnd", "Build JND pairs with sentinel and priming pools");
  s_bj->add_option("--corpus", bj.corpus, "Directory of source images")->required();
  s_bj->add_option("--out", bj.out, "Dataset directory to write")->required();
  s_bj->add_option("--pairs", bj.opt.n_pairs, "Test pairs")->default_val(160);
  s_bj->add_option("--patch-size", bj.opt.patch_size, "Patch side in pixels")->default_val(kDefaultPatchSize);
  s_bj->add_option("--max-severity", bj.opt.max_severity, "Upper severity of test distortions")->default_val(0.5);
  add_seed(s_bj, bj.opt.seed);

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Fit channel weights and G on 2AFC judgments");
  s_tr->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  s_tr->add_option("--out", tr.out, "Checkpoint directory")->required();
  s_tr->add_option("--mode", tr.mode, "lin, scratch or tune")->check(CLI::IsMember({"lin", "scratch", "tune"}))->default_val("lin");
  s_tr->add_option("--backbone", tr.backbone, "Backbone spec JSON (default TinyConv)");
  s_tr->add_option("--weights", tr.weights, "Backbone weights (.lpw); not used by scratch");
  s_tr->add_option("--epochs-const", tr.cfg.epochs_const, "Epochs at the initial rate")->default_val(5);
  s_tr->add_option("--epochs-decay", tr.cfg.epochs_decay, "Epochs of linear decay")->default_val(5);
  s_tr->add_option("--lr", tr.cfg.lr0, "Initial learning rate")->default_val(1e-4);
  s_tr->add_option("--batch", tr.cfg.batch, "Batch size")->default_val(50);
  s_tr->add_option("--loss", tr.loss, "bce or margin_ranking")->check(CLI::IsMember({"bce", "margin_ranking"}))->default_val("bce");
  s_tr->add_option("--margin", tr.cfg.margin, "Margin for margin_ranking")->default_val(0.1);
  s_tr->add_option("--optimizer", tr.optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}))->default_val("sgd");
  s_tr->add_flag("--keep-failed", tr.keep_failed, "Use votes from sessions that failed sentinel QA");
  add_seed(s_tr, tr.cfg.seed);

  EvalArgs e2;
  auto* s_e2 = app.add_subcommand("eval-2afc", "2AFC agreement of metrics with human judgments");
  s_e2->add_option("--dataset", e2.dataset, "Dataset directory")->required();
  add_metric_flags(s_e2, e2.metric, true);
  s_e2->add_option("--split", e2.split, "train, val or all")->check(CLI::IsMember({"train", "val", "all"}))->default_val("val");
  s_e2->add_option("--jobs", e2.jobs, "Worker threads")->default_val(1);
  s_e2->add_option("--out", e2.out, "Directory for report.json and report.csv");
  s_e2->add_flag("--keep-failed", e2.keep_failed, "Use votes from sessions that failed sentinel QA");

  EvalArgs ej;
  auto* s_ej = app.add_subcommand("eval-jnd", "JND mAP of metrics");
  s_ej->add_option("--dataset", ej.dataset, "Dataset directory")->required();
  add_metric_flags(s_ej, ej.metric, true);
  s_ej->add_option("--jobs", ej.jobs, "Worker threads")->default_val(1);
  s_ej->add_option("--out", ej.out, "Directory for report.json and report.csv");
  s_ej->add_flag("--keep-failed", ej.keep_failed, "Use votes from sessions that failed sentinel QA");

  CorrArgs co;
  auto* s_co = app.add_subcommand("corr", "Task-by-task correlation of a method score table");
  s_co->add_option("--table", co.table, "CSV: method,<task>,...")->required();
  s_co->add_option("--kind", co.kind, "pearson or spearman")->check(CLI::IsMember({"pearson", "spearman"}))->default_val("pearson");

  MosArgs mo;
  auto* s_mo = app.add_subcommand("spearman-mos", "Spearman correlation of metric similarity with MOS");
  s_mo->add_option("--mos", mo.mos, "CSV: ref,distorted,mos (paths relative to the file)")->required();
  add_metric_flags(s_mo, mo.metric, true);

  ServeArgs sv;
  auto* s_sv = app.add_subcommand("serve", "Run the judgment collection service");
  s_sv->add_option("--dataset", sv.dataset, "Dataset directory")->required();
  s_sv->add_option("--host", sv.host, "Bind address")->default_val("127.0.0.1");
  s_sv->add_option("--port", sv.port, "Port (0 picks a free one)")->default_val(8080)->check(CLI::Range(0, 65535));
  s_sv->add_option("--static", sv.static_dir, "UI bundle served at /");
  s_sv->add_option("--judgments", sv.judgments, "Non-sentinel triplets per 2AFC session")->default_val(60);
  add_seed(s_sv, sv.seed);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*s_dist) return cmd_dist(dist, out);
    if (*s_b2) return cmd_build_2afc(b2, out, err);
    if (*s_bj) return cmd_build_jnd(bj, out, err);
    if (*s_tr) return cmd_train(tr, out, err);
    if (*s_e2) return cmd_eval_2afc(e2, out, err);
    if (*s_ej) return cmd_eval_jnd(ej, out, err);
    if (*s_co) return cmd_corr(co, out);
    if (*s_mo) return cmd_spearman_mos(mo, out);
    if (*s_sv) return cmd_serve(sv, err);
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error[io]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace pmk::cli
