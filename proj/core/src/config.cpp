#include "smoa/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace smoa {

namespace {

std::string trim(const std::string& s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-')
      throw ConfigError("config key '" + key + "': expected non-negative integer, got '" + v + "'");
    std::uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected real number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

PeftMode parse_peft_mode(const std::string& v) {
  if (v == "full") return PeftMode::Full;
  if (v == "linear-probe") return PeftMode::LinearProbe;
  if (v == "adapter-serial") return PeftMode::AdapterSerial;
  if (v == "adapter-parallel") return PeftMode::AdapterParallel;
  if (v == "moa-per-block") return PeftMode::MoaPerBlock;
  if (v == "smoa") return PeftMode::Smoa;
  if (v == "smoa+block-specific") return PeftMode::SmoaBlockSpecific;
  throw ConfigError("config key 'peft_mode': unknown mode '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const char* peft_mode_name(PeftMode m) {
  switch (m) {
    case PeftMode::Full: return "full";
    case PeftMode::LinearProbe: return "linear-probe";
    case PeftMode::AdapterSerial: return "adapter-serial";
    case PeftMode::AdapterParallel: return "adapter-parallel";
    case PeftMode::MoaPerBlock: return "moa-per-block";
    case PeftMode::Smoa: return "smoa";
    case PeftMode::SmoaBlockSpecific: return "smoa+block-specific";
  }
  return "?";
}

const char* insertion_name(Insertion i) {
  return i == Insertion::SerialAfterFfn ? "serial-after-ffn" : "parallel-to-ffn";
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section = "model";
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "task")
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" +
                          section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                        line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));

    if (section == "model") {
      ModelConfig& m = cfg.model;
      if (key == "d_model") m.d_model = parse_u64(key, value);
      else if (key == "depth") m.depth = parse_u64(key, value);
      else if (key == "attn_heads") m.attn_heads = parse_u64(key, value);
      else if (key == "patch_grid") m.patch_grid = parse_u64(key, value);
      else if (key == "patch_dim") m.patch_dim = parse_u64(key, value);
      else if (key == "n_classes") m.n_classes = parse_u64(key, value);
      else if (key == "peft_mode") m.peft_mode = parse_peft_mode(value);
      else if (key == "rank") m.rank = parse_u64(key, value);
      else if (key == "n_experts") m.n_experts = parse_u64(key, value);
      else if (key == "moa_heads") m.moa_heads = parse_u64(key, value);
      else if (key == "d_e") m.d_e = parse_u64(key, value);
      else if (key == "alpha") m.alpha = parse_f64(key, value);
      else if (key == "insertion") {
        if (value == "serial-after-ffn") m.insertion = Insertion::SerialAfterFfn;
        else if (value == "parallel-to-ffn") m.insertion = Insertion::ParallelToFfn;
        else throw ConfigError("config key 'insertion': unknown value '" + value + "'");
      } else if (key == "parallel_scale") m.parallel_scale = parse_f64(key, value);
      else if (key == "seed") m.seed = parse_u64(key, value);
      else if (key == "sigma") {
        if (value == "gelu") m.sigma = Sigma::Gelu;
        else if (value == "relu") m.sigma = Sigma::Relu;
        else throw ConfigError("config key 'sigma': unknown value '" + value + "'");
      } else if (key == "detach_embedding_norm") m.detach_embedding_norm = parse_bool(key, value);
      else if (key == "accumulate_prompts") m.accumulate_prompts = parse_bool(key, value);
      else if (key == "balance_soft_count") m.balance_soft_count = parse_bool(key, value);
      else if (key == "top1_routing") m.top1_routing = parse_bool(key, value);
      else throw ConfigError("config: unknown key '" + key + "' in section [model]");
    } else if (section == "train") {
      TrainConfig& t = cfg.train;
      if (key == "epochs") t.epochs = parse_u64(key, value);
      else if (key == "batch_size") t.batch_size = parse_u64(key, value);
      else if (key == "lr") t.lr = parse_f64(key, value);
      else if (key == "weight_decay") t.weight_decay = parse_f64(key, value);
      else if (key == "schedule") {
        if (value == "cosine") t.schedule = Schedule::Cosine;
        else if (value == "constant") t.schedule = Schedule::Constant;
        else throw ConfigError("config key 'schedule': unknown value '" + value + "'");
      } else if (key == "eval_threads") t.eval_threads = parse_u64(key, value);
      else throw ConfigError("config: unknown key '" + key + "' in section [train]");
    } else {
      TaskConfig& t = cfg.task;
      if (key == "seed") t.seed = parse_u64(key, value);
      else if (key == "train_size") t.train_size = parse_u64(key, value);
      else if (key == "val_size") t.val_size = parse_u64(key, value);
      else if (key == "test_size") t.test_size = parse_u64(key, value);
      else if (key == "noise") t.noise = parse_f64(key, value);
      else throw ConfigError("config: unknown key '" + key + "' in section [task]");
    }
  }
  validate_config(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  RunConfig cfg = parse_config(buf.str());
  if (const char* env = std::getenv("SMOA_SEED")) {
    cfg.model.seed = parse_u64("SMOA_SEED", env);
  }
  return cfg;
}

void validate_config(RunConfig& cfg) {
  ModelConfig& m = cfg.model;
  auto positive = [](const char* key, std::size_t v) {
    if (v == 0) throw ConfigError(std::string("config key '") + key + "': must be positive");
  };
  positive("d_model", m.d_model);
  positive("attn_heads", m.attn_heads);
  positive("patch_grid", m.patch_grid);
  positive("patch_dim", m.patch_dim);
  positive("rank", m.rank);
  positive("n_experts", m.n_experts);
  positive("moa_heads", m.moa_heads);
  if (m.n_classes < 2) throw ConfigError("config key 'n_classes': must be at least 2");
  if (m.d_model % m.attn_heads != 0)
    throw ConfigError("config key 'attn_heads': " + std::to_string(m.attn_heads) +
                      " does not divide d_model=" + std::to_string(m.d_model));
  if (m.d_model % m.moa_heads != 0)
    throw ConfigError("config key 'moa_heads': " + std::to_string(m.moa_heads) +
                      " does not divide d_model=" + std::to_string(m.d_model));
  if (m.rank >= m.d_model)
    throw ConfigError("config key 'rank': bottleneck " + std::to_string(m.rank) +
                      " must be smaller than d_model=" + std::to_string(m.d_model));
  if (m.alpha < 0.0) throw ConfigError("config key 'alpha': must be non-negative");
  if (m.d_e == 0) m.d_e = m.rank;

  positive("epochs", cfg.train.epochs);
  positive("batch_size", cfg.train.batch_size);
  positive("eval_threads", cfg.train.eval_threads);
  if (cfg.train.lr <= 0.0) throw ConfigError("config key 'lr': must be positive");
  if (cfg.train.weight_decay < 0.0)
    throw ConfigError("config key 'weight_decay': must be non-negative");
  if (cfg.task.noise < 0.0) throw ConfigError("config key 'noise': must be non-negative");
}

std::string canonical_config(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  std::ostringstream os;
  os << "model.d_model=" << m.d_model << "\n"
     << "model.depth=" << m.depth << "\n"
     << "model.attn_heads=" << m.attn_heads << "\n"
     << "model.patch_grid=" << m.patch_grid << "\n"
     << "model.patch_dim=" << m.patch_dim << "\n"
     << "model.n_classes=" << m.n_classes << "\n"
     << "model.peft_mode=" << peft_mode_name(m.peft_mode) << "\n"
     << "model.rank=" << m.rank << "\n"
     << "model.n_experts=" << m.n_experts << "\n"
     << "model.moa_heads=" << m.moa_heads << "\n"
     << "model.d_e=" << m.d_e << "\n"
     << "model.alpha=" << fmt_double(m.alpha) << "\n"
     << "model.insertion=" << insertion_name(m.insertion) << "\n"
     << "model.parallel_scale=" << fmt_double(m.parallel_scale) << "\n"
     << "model.seed=" << m.seed << "\n"
     << "model.sigma=" << (m.sigma == Sigma::Gelu ? "gelu" : "relu") << "\n"
     << "model.detach_embedding_norm=" << (m.detach_embedding_norm ? 1 : 0) << "\n"
     << "model.accumulate_prompts=" << (m.accumulate_prompts ? 1 : 0) << "\n"
     << "model.balance_soft_count=" << (m.balance_soft_count ? 1 : 0) << "\n"
     << "model.top1_routing=" << (m.top1_routing ? 1 : 0) << "\n"
     << "train.epochs=" << cfg.train.epochs << "\n"
     << "train.batch_size=" << cfg.train.batch_size << "\n"
     << "train.lr=" << fmt_double(cfg.train.lr) << "\n"
     << "train.weight_decay=" << fmt_double(cfg.train.weight_decay) << "\n"
     << "train.schedule=" << (cfg.train.schedule == Schedule::Cosine ? "cosine" : "constant") << "\n"
     << "train.eval_threads=" << cfg.train.eval_threads << "\n"
     << "task.seed=" << cfg.task.seed << "\n"
     << "task.train_size=" << cfg.task.train_size << "\n"
     << "task.val_size=" << cfg.task.val_size << "\n"
     << "task.test_size=" << cfg.task.test_size << "\n"
     << "task.noise=" << fmt_double(cfg.task.noise) << "\n";
  return os.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = canonical_config(cfg);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string config_hash_hex(const RunConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

}  // namespace smoa
