#include "selfore/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "selfore/autoencoder.hpp"
#include "selfore/clustering.hpp"
#include "selfore/config.hpp"
#include "selfore/corpus.hpp"
#include "selfore/encoder.hpp"
#include "selfore/errors.hpp"
#include "selfore/log.hpp"
#include "selfore/metrics.hpp"
#include "selfore/pipeline.hpp"
#include "selfore/surface.hpp"
#include "selfore/synth.hpp"
#include "selfore/tensor_io.hpp"

namespace selfore::cli {
namespace {

struct SettingFlags {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
};

void add_setting_flags(CLI::App* app, SettingFlags& flags, const std::set<std::string>& skip = {}) {
  app->add_option("--config", flags.config, "key=value settings file");
  app->add_option("--set", flags.sets, "override one setting as key=value (repeatable)");
  for (const auto& spec : setting_specs()) {
    if (skip.count(spec.key)) continue;
    std::string names = "--" + spec.key;
    std::string dashed = spec.key;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (dashed != spec.key) names += ",--" + dashed;
    std::string help = spec.help;
    if (!spec.default_value.empty()) help += " [" + spec.default_value + "]";
    app->add_option_function<std::string>(
           names, [&flags, key = spec.key](const std::string& v) { flags.values[key] = v; }, help)
        ->type_name("VALUE");
  }
}

Settings resolve(const SettingFlags& flags) {
  Settings s;
  s.apply_environment();
  if (!flags.config.empty()) s.load_file(flags.config);
  for (const auto& kv : flags.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    s.set(kv.substr(0, eq), kv.substr(eq + 1), SettingSource::command_line);
  }
  for (const auto& [k, v] : flags.values) s.set(k, v, SettingSource::command_line);
  return s;
}

Corpus load_corpus(const std::string& path, const IngestOptions& options, std::ostream& err) {
  if (path.empty()) throw UsageError("no corpus given (set corpus=PATH)");
  IngestResult r = ingest(path, options);
  for (const auto& d : r.diagnostics) err << "skipped line " << d.line << ": " << d.message << '\n';
  return std::move(r.corpus);
}

EncoderBackend make_backend(const Settings& s, const Corpus& corpus, std::ostream& err) {
  const std::string& kind = s.get("encoder");
  if (kind == "builtin") return BuiltinEncoder(s.encoder_config());
  if (kind == "precomputed") {
    if (s.get("features").empty()) throw UsageError("encoder=precomputed needs features=PATH");
    err << "NOTICE: precomputed features in use. The classification step trains the head only;"
           " encoder refinement is disabled.\n";
    return load_features(s.get("features"), corpus);
  }
  throw UsageError("encoder must be builtin or precomputed, got '" + kind + "'");
}

Dense2D encode_all(const EncoderBackend& backend, std::span<const MarkedSentence> sentences,
                   std::size_t threads) {
  if (const auto* enc = std::get_if<BuiltinEncoder>(&backend)) return enc->encode(sentences, threads);
  return std::get<FeatureStore>(backend).gather(sentences);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// id<TAB>label lines; duplicates are an error.
std::vector<std::pair<std::string, std::string>> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels file " + path.string());
  std::vector<std::pair<std::string, std::string>> rows;
  std::set<std::string> seen;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": expected id<TAB>label");
    }
    std::string id = line.substr(0, tab);
    if (!seen.insert(id).second) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": duplicate id '" + id + "'");
    }
    rows.emplace_back(std::move(id), line.substr(tab + 1));
  }
  if (rows.empty()) throw DataError(path.string() + ": no labels");
  return rows;
}

// Sentences of the corpus in labels-file order, plus integer cluster ids.
struct Aligned {
  std::vector<MarkedSentence> sentences;
  std::vector<int> labels;
};

Aligned align(const Corpus& corpus, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) index.emplace(corpus[i].origin_id, i);
  std::vector<std::string> missing;
  std::vector<std::string> names;
  for (const auto& [id, _] : rows) {
    if (!index.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " labelled id(s) not in the corpus:";
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 5); ++i) msg += " " + missing[i];
    if (missing.size() > 5) msg += " ...";
    throw DataError(msg);
  }
  Aligned a;
  std::vector<std::string> raw;
  for (const auto& [id, label] : rows) {
    a.sentences.push_back(corpus[index.at(id)]);
    raw.push_back(label);
  }
  a.labels = encode_labels(raw);
  return a;
}

int cmd_ingest(const Settings& s, std::ostream& out, std::ostream& err) {
  const Corpus corpus = load_corpus(s.get("corpus"), s.ingest_options(), err);
  out << "sentences=" << corpus.size() << '\n'
      << "train=" << corpus.train_indices().size() << '\n'
      << "validation=" << corpus.validation_indices().size() << '\n'
      << "relations=" << corpus.label_vocabulary().size() << '\n';
  return 0;
}

int cmd_pretrain(const Settings& s, std::ostream& out, std::ostream& err) {
  const LoopConfig loop = s.loop_config();
  const Corpus corpus = load_corpus(s.get("corpus"), s.ingest_options(), err);
  const EncoderBackend backend = make_backend(s, corpus, err);
  const std::filesystem::path dir = s.get("out");
  std::filesystem::create_directories(dir);
  open_out(dir / "config.resolved") << s.render();
  const auto train = corpus.train();
  PretrainConfig pc = loop.autoencoder;
  pc.seed = derive_seed(loop.seed, 0xae);
  const PretrainResult r = pretrain(encode_all(backend, train, loop.threads), pc);
  save_autoencoder(dir / "autoencoder.saec", r.params);
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
    out << "epoch " << e + 1 << " loss=" << r.epoch_losses[e] << '\n';
  }
  out << "wrote " << (dir / "autoencoder.saec").string() << '\n';
  return 0;
}

int cmd_run(const Settings& s, const std::string& resume, int stop_after, std::ostream& out,
            std::ostream& err) {
  const LoopConfig loop = s.loop_config();
  const std::filesystem::path dir = s.get("out");
  std::filesystem::create_directories(dir);
  open_out(dir / "config.resolved") << s.render();
  const Corpus corpus = load_corpus(s.get("corpus"), s.ingest_options(), err);
  Pipeline pipeline(loop, corpus.train(), corpus.validation(), make_backend(s, corpus, err));
  RunOptions options;
  options.run_dir = dir;
  if (!resume.empty()) options.resume_from = resume;
  options.stop_after = stop_after;
  const RunResult r = pipeline.run(options);
  out << "rounds=" << r.state.iteration << " converged=" << (r.state.converged ? 1 : 0) << '\n';
  if (!r.state.snapshots.empty()) {
    const auto& last = r.state.snapshots.back();
    if (last.report) write_report(out, *last.report);
    if (last.merged) write_report(out, *last.merged, "merged.");
  }
  out << "wrote " << (dir / "report.final").string() << '\n';
  return 0;
}

int cmd_eval(const std::string& labels_path, const Settings& s, const std::string& report_path,
             std::ostream& out, std::ostream& err) {
  const Corpus corpus = load_corpus(s.get("corpus"), s.ingest_options(), err);
  const Aligned a = align(corpus, read_labels(labels_path));
  std::vector<std::string> gold;
  for (const auto& m : a.sentences) {
    if (!m.gold_relation) throw DataError("sentence '" + m.origin_id + "' has no gold relation");
    gold.push_back(*m.gold_relation);
  }
  const LoopConfig loop = s.loop_config();
  const EvalReport report = evaluate(a.labels, gold, loop.orientation);
  std::ostringstream text;
  write_report(text, report);
  if (report_path.empty()) {
    out << text.str();
  } else {
    open_out(report_path) << text.str();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", report.majority.accuracy);
    out << "majority_accuracy=" << buf << '\n';
  }
  return 0;
}

int cmd_names(const std::string& labels_path, const Settings& s, const std::string& names_path,
              std::ostream& out, std::ostream& err) {
  const Corpus corpus = load_corpus(s.get("corpus"), s.ingest_options(), err);
  const auto rows = read_labels(labels_path);
  const Aligned a = align(corpus, rows);
  // Keep integer cluster ids from the file when every label is one.
  std::vector<int> labels;
  try {
    for (const auto& [_, l] : rows) {
      std::size_t used = 0;
      labels.push_back(std::stoi(l, &used));
      if (used != l.size()) throw std::invalid_argument(l);
    }
  } catch (const std::exception&) {
    labels = a.labels;
  }
  const LoopConfig loop = s.loop_config();
  const auto names = extract_names(a.sentences, labels, loop.names_n_min, loop.names_n_max);
  if (names_path.empty()) {
    write_names(out, names);
  } else {
    std::ostringstream text;
    write_names(text, names);
    open_out(names_path) << text.str();
  }
  return 0;
}

int cmd_dump(const std::string& checkpoint, const Settings& s, const std::string& out_path,
             std::ostream& out, std::ostream& err) {
  if (checkpoint.empty() || out_path.empty()) throw UsageError("dump-embeddings needs --checkpoint and --out");
  const LoopConfig loop = s.loop_config();
  const Corpus corpus = load_corpus(s.get("corpus"), s.ingest_options(), err);
  const Magic magic = peek_magic(checkpoint);
  ClusterModel latent;  // phi plus its input scaler
  EncoderBackend backend = make_backend(s, corpus, err);
  if (magic == kAutoencoderMagic) {
    const AutoencoderParams ae = load_autoencoder(std::filesystem::path(checkpoint));
    latent.phi = ae.encoder;
    latent.input = ae.input;
  } else if (magic == kRunStateMagic) {
    const TensorBundle b = read_tensor_file(checkpoint, kRunStateMagic);
    latent = load_cluster_model(b, "cluster.");
    if (b.scalar("meta.builtin") != 0.0) {
      if (!std::holds_alternative<BuiltinEncoder>(backend)) {
        throw DataError("checkpoint mismatch: run used the built-in encoder, settings say precomputed");
      }
      backend = BuiltinEncoder::load(b, "encoder.");
    }
  } else {
    throw DataError(checkpoint + ": not an autoencoder or run checkpoint");
  }
  const std::size_t dim = std::visit([](const auto& x) { return x.dim(); }, backend);
  const std::size_t expected = latent.phi.empty() ? 0 : latent.phi.front().in_dim();
  if (expected != dim) {
    throw DataError("checkpoint mismatch: latent map expects " + std::to_string(expected) +
                    " inputs, features have " + std::to_string(dim));
  }
  const auto sentences = corpus.sentences();
  const Dense2D z = latent.embed(encode_all(backend, sentences, loop.threads));
  std::vector<std::string> ids;
  for (const auto& m : sentences) ids.push_back(m.origin_id);
  save_features(out_path, FeatureStore(z, std::move(ids)));
  out << "wrote " << z.rows() << " x " << z.cols() << " to " << out_path << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Self-supervised open relation extraction", "selfore");
  app.require_subcommand(1);
  app.footer("Settings (key=default), for --config files, --set or --key VALUE:\n" + settings_help() +
             "SELFORE_SEED supplies the seed when none is given.");

  SettingFlags flags;

  auto* ingest_cmd = app.add_subcommand("ingest", "validate a corpus and report the split");
  add_setting_flags(ingest_cmd, flags);

  SynthConfig synth_cfg;
  std::string synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth_cmd = app.add_subcommand("synth", "write a templated corpus with gold relations");
  synth_cmd->add_option("--relations", synth_cfg.relations, "number of relations")->capture_default_str();
  synth_cmd->add_option("--per-relation,--per_relation", synth_cfg.per_relation, "sentences per relation")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "generator seed (fallback: SELFORE_SEED, then 0)");
  synth_cmd->add_option("--out", synth_out, "output JSONL path")->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain-ae", "pretrain the autoencoder into OUT/autoencoder.saec");
  add_setting_flags(pretrain_cmd, flags);

  std::string resume;
  int stop_after = -1;
  auto* run_cmd = app.add_subcommand("run", "run the self-supervision loop into the run directory");
  add_setting_flags(run_cmd, flags);
  run_cmd->add_option("--resume", resume, "continue from an iter_NNN/state.ckpt checkpoint");
  run_cmd->add_option("--stop-after", stop_after, "stop after this many rounds")->group("");

  std::string labels_path;
  std::string file_out;
  auto* eval_cmd = app.add_subcommand("eval", "score an id<TAB>label file against corpus gold");
  add_setting_flags(eval_cmd, flags, {"out"});
  eval_cmd->add_option("--labels", labels_path, "labels file")->required();
  eval_cmd->add_option("--out", file_out, "report path (default: stdout)");

  auto* names_cmd = app.add_subcommand("names", "name each cluster by its most frequent between-entity n-gram");
  add_setting_flags(names_cmd, flags, {"out"});
  names_cmd->add_option("--labels", labels_path, "labels file")->required();
  names_cmd->add_option("--out", file_out, "names path (default: stdout)");

  std::string checkpoint;
  auto* dump_cmd = app.add_subcommand("dump-embeddings", "write latent vectors z for every corpus sentence");
  add_setting_flags(dump_cmd, flags, {"out"});
  dump_cmd->add_option("--checkpoint", checkpoint, "autoencoder.saec or state.ckpt")->required();
  dump_cmd->add_option("--out", file_out, "SORE output path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) {
      if (synth_seed) {
        synth_cfg.seed = *synth_seed;
      } else {
        Settings s;
        s.apply_environment();
        synth_cfg.seed = s.seed();
      }
      const auto sentences = synthesize(synth_cfg);
      write_corpus(synth_out, sentences);
      out << "wrote " << sentences.size() << " sentences to " << synth_out << '\n';
      return 0;
    }
    const Settings s = resolve(flags);
    if (ingest_cmd->parsed()) return cmd_ingest(s, out, err);
    if (pretrain_cmd->parsed()) return cmd_pretrain(s, out, err);
    if (run_cmd->parsed()) return cmd_run(s, resume, stop_after, out, err);
    if (eval_cmd->parsed()) return cmd_eval(labels_path, s, file_out, out, err);
    if (names_cmd->parsed()) return cmd_names(labels_path, s, file_out, out, err);
    if (dump_cmd->parsed()) return cmd_dump(checkpoint, s, file_out, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace selfore::cli
