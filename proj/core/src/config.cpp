#include "selfore/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "selfore/errors.hpp"

namespace selfore {

const std::vector<SettingSpec>& setting_specs() {
  static const std::vector<SettingSpec> specs = {
      {"seed", "0", "base seed for every random stage (fallback: SELFORE_SEED)"},
      {"threads", "1", "encoder worker threads"},
      {"mode", "full", "full | no_classification | no_adaptive_clustering"},
      {"encoder", "builtin", "builtin | precomputed"},
      {"corpus", "", "JSONL corpus path"},
      {"features", "", "SORE feature file (precomputed encoder)"},
      {"out", "run", "run directory"},
      {"max_length", "128", "maximum tokens per sentence, markers included"},
      {"train_fraction", "0.8", "share of sentences clustered; the rest is held out"},
      {"strict", "false", "fail on the first invalid corpus record"},
      {"k", "10", "number of relation clusters"},
      {"k_hat", "0", "over-cluster into this many, then merge to k (0: off)"},
      {"max_loops", "20", "maximum classify-then-cluster rounds"},
      {"stop_threshold", "0.1", "stop once the label change drops below this"},
      {"label_delta", "raw", "raw | partition"},
      {"vmeasure", "standard", "standard | swapped"},
      {"enc_hidden", "64", "built-in encoder width"},
      {"enc_buckets", "50021", "built-in encoder hashed vocabulary size"},
      {"enc_embedding_std", "1.0", "built-in encoder embedding init scale"},
      {"ae_hidden", "500,500", "autoencoder hidden widths"},
      {"ae_latent", "200", "autoencoder latent width"},
      {"ae_epochs", "20", "autoencoder pretraining epochs"},
      {"ae_lr", "0.001", "autoencoder learning rate"},
      {"ae_weight_decay", "0.00001", "autoencoder weight decay"},
      {"ae_init_std", "0.01", "autoencoder init standard deviation"},
      {"ae_batch", "256", "autoencoder batch size"},
      {"ae_dropout", "0.2", "autoencoder input and latent dropout"},
      {"ae_standardize", "true", "standardize feature columns before the autoencoder"},
      {"ac_epochs", "50", "adaptive clustering epochs per pass"},
      {"ac_lr", "0.001", "adaptive clustering learning rate"},
      {"ac_batch", "256", "adaptive clustering batch size"},
      {"ac_alpha", "1", "Student-t degrees of freedom"},
      {"ac_max_reselections", "5", "centroid re-selection attempts"},
      {"kmeans_restarts", "10", "k-means++ restarts"},
      {"kmeans_max_iters", "100", "k-means iteration cap"},
      {"clf_lr", "0.00001", "classifier learning rate"},
      {"clf_warmup", "0.1", "classifier warm-up fraction"},
      {"clf_weight_decay", "0.01", "classifier weight decay"},
      {"clf_freeze_epochs", "3", "epochs with the encoder frozen"},
      {"clf_epochs", "5", "classifier epochs per round"},
      {"clf_batch", "32", "classifier batch size"},
      {"clf_dropout", "0.1", "classifier input dropout"},
      {"names_n_min", "1", "shortest n-gram for relation names"},
      {"names_n_max", "4", "longest n-gram for relation names"},
  };
  return specs;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last || value.empty()) {
    throw UsageError("setting " + key + ": '" + value + "' is not a valid number");
  }
  return out;
}

std::vector<std::size_t> parse_dims(const std::string& key, const std::string& value) {
  std::vector<std::size_t> dims;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto d = parse_number<std::size_t>(key, trim(part));
    if (d == 0) throw UsageError("setting " + key + ": widths must be positive");
    dims.push_back(d);
  }
  if (dims.empty()) throw UsageError("setting " + key + ": expected comma-separated widths");
  return dims;
}

}  // namespace

Settings::Settings() {
  for (const auto& s : setting_specs()) values_[s.key] = {s.default_value, SettingSource::default_value};
}

void Settings::set(const std::string& key, const std::string& value, SettingSource source) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown setting '" + key + "'");
  if (source >= it->second.source) it->second = {value, source};
}

void Settings::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!values_.count(key)) {
      throw UsageError(path.string() + ":" + std::to_string(number) + ": unknown setting '" + key + "'");
    }
    set(key, trim(line.substr(eq + 1)), SettingSource::file);
  }
}

void Settings::apply_environment() {
  if (const char* env = std::getenv("SELFORE_SEED"); env && *env) {
    set("seed", env, SettingSource::environment);
  }
}

const std::string& Settings::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown setting '" + key + "'");
  return it->second.value;
}

long long Settings::integer(const std::string& key) const { return parse_number<long long>(key, get(key)); }

std::size_t Settings::count(const std::string& key) const {
  const long long v = integer(key);
  if (v < 0) throw UsageError("setting " + key + " must not be negative");
  return static_cast<std::size_t>(v);
}

double Settings::real(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool Settings::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError("setting " + key + ": '" + v + "' is not a boolean");
}

std::uint64_t Settings::seed() const { return parse_number<std::uint64_t>("seed", get("seed")); }

SettingSource Settings::source(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown setting '" + key + "'");
  return it->second.source;
}

LoopConfig Settings::loop_config() const {
  LoopConfig c;
  c.k = static_cast<int>(integer("k"));
  c.k_hat = static_cast<int>(integer("k_hat"));
  c.max_loops = static_cast<int>(integer("max_loops"));
  c.stop_threshold = real("stop_threshold");
  c.seed = seed();
  c.mode = parse_loop_mode(get("mode"));
  c.delta = parse_delta_kind(get("label_delta"));
  const std::string& orient = get("vmeasure");
  if (orient == "standard") {
    c.orientation = VMeasureOrientation::standard;
  } else if (orient == "swapped") {
    c.orientation = VMeasureOrientation::swapped;
  } else {
    throw UsageError("vmeasure must be standard or swapped, got '" + orient + "'");
  }
  c.threads = std::max<std::size_t>(1, count("threads"));

  c.autoencoder.hidden = parse_dims("ae_hidden", get("ae_hidden"));
  c.autoencoder.latent = count("ae_latent");
  c.autoencoder.epochs = static_cast<int>(integer("ae_epochs"));
  c.autoencoder.learning_rate = real("ae_lr");
  c.autoencoder.weight_decay = real("ae_weight_decay");
  c.autoencoder.init_std = real("ae_init_std");
  c.autoencoder.batch_size = count("ae_batch");
  c.autoencoder.dropout = real("ae_dropout");
  c.autoencoder.standardize = flag("ae_standardize");

  c.clustering.epochs = static_cast<int>(integer("ac_epochs"));
  c.clustering.learning_rate = real("ac_lr");
  c.clustering.batch_size = count("ac_batch");
  c.clustering.alpha = real("ac_alpha");
  c.clustering.max_reselections = static_cast<int>(integer("ac_max_reselections"));
  c.clustering.kmeans_restarts = static_cast<int>(integer("kmeans_restarts"));
  c.clustering.kmeans_max_iters = static_cast<int>(integer("kmeans_max_iters"));

  c.classifier.learning_rate = real("clf_lr");
  c.classifier.warmup_fraction = real("clf_warmup");
  c.classifier.weight_decay = real("clf_weight_decay");
  c.classifier.encoder_freeze_epochs = static_cast<int>(integer("clf_freeze_epochs"));
  c.classifier.epochs = static_cast<int>(integer("clf_epochs"));
  c.classifier.batch_size = count("clf_batch");
  c.classifier_dropout = real("clf_dropout");

  c.names_n_min = count("names_n_min");
  c.names_n_max = count("names_n_max");
  c.validate();
  return c;
}

BuiltinEncoderConfig Settings::encoder_config() const {
  BuiltinEncoderConfig c;
  c.hidden = count("enc_hidden");
  c.buckets = count("enc_buckets");
  c.max_length = count("max_length");
  c.embedding_std = real("enc_embedding_std");
  c.seed = derive_seed(seed(), 0xe1c);
  if (c.hidden == 0 || c.buckets == 0) throw UsageError("enc_hidden and enc_buckets must be positive");
  return c;
}

IngestOptions Settings::ingest_options() const {
  IngestOptions o;
  o.max_length = count("max_length");
  o.strict = flag("strict");
  o.train_fraction = real("train_fraction");
  o.seed = seed();
  if (!(o.train_fraction > 0.0 && o.train_fraction < 1.0)) {
    throw UsageError("train_fraction must lie in (0, 1)");
  }
  return o;
}

std::string Settings::render() const {
  std::string out;
  for (const auto& s : setting_specs()) out += s.key + "=" + get(s.key) + "\n";
  return out;
}

std::string settings_help() {
  std::size_t width = 0;
  for (const auto& s : setting_specs()) width = std::max(width, s.key.size() + s.default_value.size() + 1);
  std::string out;
  for (const auto& s : setting_specs()) {
    std::string left = s.key + "=" + s.default_value;
    left.resize(width + 2, ' ');
    out += "  " + left + s.help + "\n";
  }
  return out;
}

}  // namespace selfore
