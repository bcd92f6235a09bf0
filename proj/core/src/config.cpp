#include "crcfp/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace crcfp {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw Error("invalid value '" + value + "' for " + key + ": expected " + expected);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    bad_value(key, text, std::is_integral_v<T> ? "an integer" : "a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  if (v == "true" || v == "True" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "False" || v == "no" || v == "0" || v == "off") return false;
  bad_value(key, text, "true or false");
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& text) {
  std::string v = trim(text);
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::uint64_t>(key, item));
  if (out.empty()) bad_value(key, text, "a list of seeds such as [0, 1, 2]");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Member>
Field int_field(std::string key, std::string help, Member member) {
  return {key, std::move(help),
          [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
          [member, key](ExperimentConfig& c, const std::string& v) {
            member(c) = parse_number<std::remove_reference_t<decltype(member(c))>>(key, v);
          }};
}

template <typename Member>
Field real_field(std::string key, std::string help, Member member) {
  return {key, std::move(help),
          [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); },
          [member, key](ExperimentConfig& c, const std::string& v) {
            member(c) = parse_number<double>(key, v);
          }};
}

template <typename Member>
Field bool_field(std::string key, std::string help, Member member) {
  return {key, std::move(help),
          [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); },
          [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

template <typename Member>
Field string_field(std::string key, std::string help, Member member) {
  return {key, std::move(help),
          [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = trim(v); }};
}

#define MEMBER(expr) [](ExperimentConfig & c) -> decltype(auto) { return (expr); }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(string_field("run.dir", "run directory", MEMBER(c.run_dir)));

    f.push_back(string_field("data.manifest", "training corpus manifest", MEMBER(c.data.manifest)));
    f.push_back(string_field("data.test_manifest", "held-out test manifest", MEMBER(c.data.test_manifest)));
    f.push_back(string_field("data.val_manifest", "optional best-checkpoint selection manifest",
                             MEMBER(c.data.val_manifest)));
    f.push_back({"data.split", "by_center or by_image",
                 [](const ExperimentConfig& c) {
                   return std::string(c.data.split == SplitMode::kByCenter ? "by_center" : "by_image");
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   const std::string t = trim(v);
                   if (t == "by_center") c.data.split = SplitMode::kByCenter;
                   else if (t == "by_image") c.data.split = SplitMode::kByImage;
                   else bad_value("data.split", v, "by_center or by_image");
                 }});
    f.push_back({"data.fraction", "labelled fraction, 1 or 1/N",
                 [](const ExperimentConfig& c) { return c.data.fraction.str(); },
                 [](ExperimentConfig& c, const std::string& v) { c.data.fraction = Fraction::parse(trim(v)); }});
    f.push_back(int_field("data.input_size", "network input side", MEMBER(c.train.input_size)));
    f.push_back(real_field("data.overlap_lo", "minimum crop overlap fraction", MEMBER(c.train.overlap.lo)));
    f.push_back(real_field("data.overlap_hi", "maximum crop overlap fraction", MEMBER(c.train.overlap.hi)));
    f.push_back(real_field("data.crop_scale_lo", "minimum crop side / shorter image side",
                           MEMBER(c.train.crop.scale_lo)));
    f.push_back(real_field("data.crop_scale_hi", "maximum crop side / shorter image side",
                           MEMBER(c.train.crop.scale_hi)));
    f.push_back(bool_field("data.augment", "random flips, blur and colour jitter", MEMBER(c.train.augment)));
    f.push_back(int_field("data.eval_tile", "evaluation tile side, 0 for whole images", MEMBER(c.data.eval_tile)));
    f.push_back(int_field("data.ignore_index", "mask label excluded from losses and metrics",
                          MEMBER(c.train.ignore_index)));

    f.push_back(int_field("model.classes", "number of classes", MEMBER(c.model.classes)));
    f.push_back(int_field("model.stride", "backbone output stride", MEMBER(c.model.backbone.stride)));
    f.push_back(int_field("model.channels", "feature width D", MEMBER(c.model.backbone.channels)));
    f.push_back(int_field("model.base_width", "first encoder stage width", MEMBER(c.model.backbone.base_width)));
    f.push_back(int_field("model.decoder_blocks", "decoder convolutions", MEMBER(c.model.backbone.decoder_blocks)));
    f.push_back(int_field("model.projection_dim", "projector output width", MEMBER(c.model.projection_dim)));
    f.push_back(int_field("model.projector_hidden", "projector hidden width", MEMBER(c.model.projector_hidden)));
    f.push_back(real_field("model.input_mean", "subtracted from input pixels", MEMBER(c.model.input_mean)));
    f.push_back(real_field("model.input_std", "input pixels are divided by this", MEMBER(c.model.input_std)));
    f.push_back(string_field("model.pretrained", "checkpoint to initialise from", MEMBER(c.model.pretrained)));

    f.push_back(int_field("train.epochs", "training epochs", MEMBER(c.train.epochs)));
    f.push_back(int_field("train.warmup_epochs", "supervised-only epochs", MEMBER(c.train.warmup_epochs)));
    f.push_back(int_field("train.batch_labeled", "labelled batch size", MEMBER(c.train.batch_labeled)));
    f.push_back(int_field("train.batch_unlabeled", "unlabelled batch size", MEMBER(c.train.batch_unlabeled)));
    f.push_back(real_field("train.base_lr", "initial learning rate", MEMBER(c.train.base_lr)));
    f.push_back(real_field("train.lr_power", "poly decay power", MEMBER(c.train.lr_power)));
    f.push_back(real_field("train.momentum", "SGD momentum", MEMBER(c.train.sgd.momentum)));
    f.push_back(real_field("train.weight_decay", "SGD weight decay", MEMBER(c.train.sgd.weight_decay)));
    f.push_back({"train.seeds", "one run per seed",
                 [](const ExperimentConfig& c) {
                   std::string s = "[";
                   for (std::size_t i = 0; i < c.train.seeds.size(); ++i) {
                     s += (i ? ", " : "") + std::to_string(c.train.seeds[i]);
                   }
                   return s + "]";
                 },
                 [](ExperimentConfig& c, const std::string& v) { c.train.seeds = parse_seeds("train.seeds", v); }});
    f.push_back(int_field("train.checkpoint_every", "epochs between checkpoints, 0 for final only",
                          MEMBER(c.train.checkpoint_every)));
    f.push_back(int_field("train.step_limit", "stop after this many steps, 0 for the full schedule",
                          MEMBER(c.train.step_limit)));

    f.push_back(real_field("loss.w_sup", "supervised loss weight", MEMBER(c.train.weights.sup)));
    f.push_back(real_field("loss.w_cont", "contrastive loss weight", MEMBER(c.train.weights.cont)));
    f.push_back(real_field("loss.w_cross", "cross-consistency loss weight", MEMBER(c.train.weights.cross)));
    f.push_back(real_field("loss.w_ent", "entropy loss weight", MEMBER(c.train.weights.ent)));
    f.push_back(real_field("loss.threshold", "confidence gate of the contrastive loss", MEMBER(c.train.threshold)));
    f.push_back(real_field("loss.temperature", "contrastive temperature", MEMBER(c.train.temperature)));
    f.push_back({"loss.contrastive_divisor", "gated or overlap",
                 [](const ExperimentConfig& c) {
                   return std::string(c.train.contrastive.divisor == ContrastiveDivisor::kGatedPixels ? "gated"
                                                                                                    : "overlap");
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   const std::string t = trim(v);
                   if (t == "gated") c.train.contrastive.divisor = ContrastiveDivisor::kGatedPixels;
                   else if (t == "overlap") c.train.contrastive.divisor = ContrastiveDivisor::kOverlapPixels;
                   else bad_value("loss.contrastive_divisor", v, "gated or overlap");
                 }});
    f.push_back(bool_field("loss.detach_target", "no contrastive gradient into the confident view",
                           MEMBER(c.train.contrastive.detach_target)));
    f.push_back(bool_field("loss.cross_through_main", "cross-consistency gradient into the main classifier",
                           MEMBER(c.train.cross_through_main)));

    f.push_back({"perturb.k", "auxiliary classifiers per perturbation type",
                 [](const ExperimentConfig& c) { return std::to_string(c.train.perturb.k); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.perturb.k = parse_number<int>("perturb.k", v);
                   c.model.aux_per_type = c.train.perturb.k;
                 }});
    f.push_back(real_field("perturb.noise_lo", "feature noise lower bound", MEMBER(c.train.perturb.noise_lo)));
    f.push_back(real_field("perturb.noise_hi", "feature noise upper bound", MEMBER(c.train.perturb.noise_hi)));
    f.push_back(real_field("perturb.fdrop_lo", "feature dropout threshold lower bound", MEMBER(c.train.perturb.fdrop_lo)));
    f.push_back(real_field("perturb.fdrop_hi", "feature dropout threshold upper bound", MEMBER(c.train.perturb.fdrop_hi)));
    f.push_back(real_field("perturb.dropout_keep", "spatial dropout keep probability",
                           MEMBER(c.train.perturb.dropout_keep)));
    f.push_back(bool_field("perturb.fdrop_literal", "mask the normalised map instead of the features",
                           MEMBER(c.train.perturb.fdrop_literal)));
    f.push_back(bool_field("perturb.fdrop_drop_low", "drop weak instead of strong activations",
                           MEMBER(c.train.perturb.fdrop_drop_low)));

    f.push_back({"bank.capacity", "memory bank capacity",
                 [](const ExperimentConfig& c) { return std::to_string(c.train.bank_capacity); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.bank_capacity = parse_number<std::size_t>("bank.capacity", v);
                 }});
    f.push_back({"bank.negatives", "bank negatives drawn per direction and step",
                 [](const ExperimentConfig& c) { return std::to_string(c.train.negatives); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.negatives = parse_number<std::size_t>("bank.negatives", v);
                 }});
    f.push_back({"bank.push_cap", "pixels pushed per step",
                 [](const ExperimentConfig& c) { return std::to_string(c.train.bank_push_cap); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.bank_push_cap = parse_number<std::size_t>("bank.push_cap", v);
                 }});

    f.push_back(int_field("analysis.patch", "density map patch side", MEMBER(c.analysis.density.patch)));
    f.push_back(int_field("analysis.neighbor_offset", "density neighbour offset, 0 for the patch side",
                          MEMBER(c.analysis.density.neighbor_offset)));
    f.push_back({"analysis.embed_pixels", "pixels exported per image",
                 [](const ExperimentConfig& c) { return std::to_string(c.analysis.embed.pixels_per_image); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.analysis.embed.pixels_per_image = parse_number<std::size_t>("analysis.embed_pixels", v);
                 }});
    return f;
  }();
  return all;
}

#undef MEMBER

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  std::string valid;
  for (const Field& f : fields()) valid += "\n  " + f.key;
  throw Error("unknown config key '" + key + "'; valid keys:" + valid);
}

void flatten(const YAML::Node& node, const std::string& prefix, ExperimentConfig& config) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string name = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? name : prefix + "." + name, config);
    }
    return;
  }
  if (prefix.empty()) throw Error("config must be a mapping of keys to values");
  if (node.IsSequence()) {
    std::string joined;
    for (std::size_t i = 0; i < node.size(); ++i) {
      joined += (i ? "," : "") + node[i].as<std::string>();
    }
    set_value(config, prefix, joined);
  } else if (node.IsNull()) {
    set_value(config, prefix, "");
  } else {
    set_value(config, prefix, node.as<std::string>());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (model.classes < 2) throw Error("model.classes must be at least 2");
  if (model.aux_per_type != train.perturb.k) throw Error("model and perturb.k disagree");
  const int s = model.backbone.stride;
  if (s < 1 || (s & (s - 1)) != 0) throw Error("model.stride must be a power of two");
  if (model.backbone.channels < 1 || model.backbone.base_width < 1 || model.projection_dim < 1 ||
      model.projector_hidden < 1) {
    throw Error("model widths must be positive");
  }
  if (!(model.input_std > 0.0)) throw Error("model.input_std must be positive");
  if (analysis.density.patch < 1 || analysis.density.patch % 2 == 0) {
    throw Error("analysis.patch must be odd");
  }
}

Scheme parse_scheme(const std::string& name) {
  std::string key;
  for (char ch : name) {
    if (ch != '.' && ch != '_' && ch != '-') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (key == "suponly" || key == "sup") return Scheme::kSupOnly;
  if (key == "scheme1" || key == "1") return Scheme::kScheme1;
  if (key == "scheme2" || key == "2") return Scheme::kScheme2;
  if (key == "scheme3" || key == "3" || key == "full") return Scheme::kScheme3;
  throw Error("unknown scheme '" + name + "'; expected suponly, scheme1, scheme2 or scheme3");
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::kSupOnly:
      return "SupOnly";
    case Scheme::kScheme1:
      return "Scheme.1";
    case Scheme::kScheme2:
      return "Scheme.2";
    case Scheme::kScheme3:
      return "Scheme.3";
  }
  return "?";
}

void apply_scheme(ExperimentConfig& config, Scheme scheme, const LossWeights& reference) {
  LossWeights& w = config.train.weights;
  w.sup = reference.sup;
  w.cont = scheme == Scheme::kSupOnly ? 0.0 : reference.cont;
  w.ent = scheme == Scheme::kScheme2 || scheme == Scheme::kScheme3 ? reference.ent : 0.0;
  w.cross = scheme == Scheme::kScheme3 ? reference.cross : 0.0;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const Field& f : fields()) out.push_back({f.key, f.help});
    return out;
  }();
  return keys;
}

void set_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  find_field(key).set(config, value);
}

std::string get_value(const ExperimentConfig& config, const std::string& key) {
  return find_field(key).get(config);
}

void apply_overrides(ExperimentConfig& config, std::span<const std::string> overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error("override '" + o + "' is not of the form key=value");
    set_value(config, trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

ExperimentConfig parse_config(const std::string& yaml) {
  ExperimentConfig config;
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw Error(std::string("malformed config: ") + e.what());
  }
  if (!root.IsNull()) flatten(root, "", config);
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const Error& e) {
    throw Error(file.string() + ": " + e.what());
  }
}

std::string to_yaml(const ExperimentConfig& config) {
  YAML::Node root;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string section = f.key.substr(0, dot);
    const std::string name = f.key.substr(dot + 1);
    const std::string value = f.get(config);
    root[section][name] = value.empty() ? YAML::Node(YAML::NodeType::Null) : YAML::Load(value);
  }
  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

}  // namespace crcfp
