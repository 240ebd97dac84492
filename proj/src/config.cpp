#include "mesen/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mesen {

std::vector<double> TrainConfig::resolve_gamma(int n_e) const {
    std::vector<double> g(static_cast<size_t>(n_e));
    switch (gamma_schedule) {
        case GammaSchedule::Ones:
            for (auto& x : g) x = 1.0;
            break;
        case GammaSchedule::Linear:
            // stronger freedom for layers nearer the head
            for (int i = 0; i < n_e; ++i) g[i] = static_cast<double>(i + 1) / n_e;
            break;
        case GammaSchedule::Explicit:
            if (static_cast<int>(gamma.size()) != n_e)
                throw std::invalid_argument("gamma length " + std::to_string(gamma.size()) +
                                            " does not match encoder layer count " + std::to_string(n_e));
            g = gamma;
            break;
    }
    return g;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (!(tau > 0.0)) fail("tau must be > 0");
    if (!(tau_hat > 0.0)) fail("tau_hat must be > 0");
    if (alpha < 0.0 || beta < 0.0) fail("alpha and beta must be nonnegative");
    if (std::fabs(alpha + beta - 1.0) > 1e-12) fail("alpha + beta must equal 1");
    if (!(lambda_pr < 0.0)) fail("lambda_pr must be negative");
    if (lambda_fr < 0.0) fail("lambda_fr must be nonnegative");
    for (double g : gamma)
        if (g < 0.0) fail("gamma entries must be nonnegative");
    if (gamma_schedule == GammaSchedule::Explicit && gamma.empty()) fail("explicit gamma schedule needs a gamma list");
    if (pretrain_batch < 1) fail("pretrain_batch must be positive");
    if (finetune_batch < 1) fail("finetune_batch must be positive");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (class_count < 2) fail("class_count must be at least 2");
    if (feature_dim < 2) fail("feature_dim must be at least 2");
    if (epochs_pretrain < 1) fail("epochs_pretrain must be positive");
    if (epochs_finetune < 1) fail("epochs_finetune must be positive");
    if (repetitions < 1) fail("repetitions must be positive");
    if (encoder_conv_channels.empty()) fail("encoder_conv_channels must not be empty");
    for (int c : encoder_conv_channels)
        if (c < 1) fail("encoder_conv_channels entries must be positive");
    if (encoder_kernel < 1) fail("encoder_kernel must be positive");
    if (encoder_stride < 1) fail("encoder_stride must be positive");
    if (encoder_ffn_hidden < 1) fail("encoder_ffn_hidden must be positive");
}

TrainConfig default_config(int class_count, int feature_dim) {
    if (class_count < 2) throw std::invalid_argument("default_config: class_count must be at least 2");
    if (feature_dim < 2) throw std::invalid_argument("default_config: feature_dim must be at least 2");
    TrainConfig cfg;
    cfg.class_count = class_count;
    cfg.feature_dim = feature_dim;
    cfg.validate();
    return cfg;
}

namespace {

std::string gamma_schedule_name(GammaSchedule s) {
    switch (s) {
        case GammaSchedule::Ones: return "ones";
        case GammaSchedule::Linear: return "linear";
        case GammaSchedule::Explicit: return "explicit";
    }
    return "ones";
}

template <typename T>
std::string join_list(const std::vector<T>& xs) {
    std::ostringstream out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out << ',';
        out << xs[i];
    }
    return out.str();
}

double parse_double(const std::string& key, const std::string& s) {
    size_t pos = 0;
    double x;
    try {
        x = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad numeric value for " + key + ": '" + s + "'");
    }
    if (pos != s.size()) throw std::invalid_argument("config: bad numeric value for " + key + ": '" + s + "'");
    return x;
}

int64_t parse_int(const std::string& key, const std::string& s) {
    size_t pos = 0;
    long long x;
    try {
        x = std::stoll(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer value for " + key + ": '" + s + "'");
    }
    if (pos != s.size()) throw std::invalid_argument("config: bad integer value for " + key + ": '" + s + "'");
    return x;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::string serialize_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "tau = " << cfg.tau << "\n";
    out << "tau_hat = " << cfg.tau_hat << "\n";
    out << "alpha = " << cfg.alpha << "\n";
    out << "beta = " << cfg.beta << "\n";
    out << "lambda_pr = " << cfg.lambda_pr << "\n";
    out << "lambda_fr = " << cfg.lambda_fr << "\n";
    out << "gamma_schedule = " << gamma_schedule_name(cfg.gamma_schedule) << "\n";
    if (!cfg.gamma.empty()) out << "gamma = " << join_list(cfg.gamma) << "\n";
    out << "pretrain_batch = " << cfg.pretrain_batch << "\n";
    out << "finetune_batch = " << cfg.finetune_batch << "\n";
    out << "learning_rate = " << cfg.learning_rate << "\n";
    out << "class_count = " << cfg.class_count << "\n";
    out << "feature_dim = " << cfg.feature_dim << "\n";
    out << "epochs_pretrain = " << cfg.epochs_pretrain << "\n";
    out << "epochs_finetune = " << cfg.epochs_finetune << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "repetitions = " << cfg.repetitions << "\n";
    out << "encoder_conv_channels = " << join_list(cfg.encoder_conv_channels) << "\n";
    out << "encoder_kernel = " << cfg.encoder_kernel << "\n";
    out << "encoder_stride = " << cfg.encoder_stride << "\n";
    out << "encoder_ffn_hidden = " << cfg.encoder_ffn_hidden << "\n";
    out << "m_norm = " << (cfg.m_norm_mode == MNormMode::RowL2 ? "l2" : "batch_std_l2") << "\n";
    out << "column_norm = " << (cfg.column_norm == ColumnNormMode::L2 ? "l2" : "raw") << "\n";
    out << "reg_target = " << (cfg.reg_target == RegTarget::Zero ? "zero" : "checkpoint") << "\n";
    return out.str();
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++lineno;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key = value");
        std::string key = trim(stripped.substr(0, eq));
        std::string val = trim(stripped.substr(eq + 1));
        if (++seen[key] > 1) throw std::invalid_argument("config: duplicate key '" + key + "'");

        if (key == "tau") cfg.tau = parse_double(key, val);
        else if (key == "tau_hat") cfg.tau_hat = parse_double(key, val);
        else if (key == "alpha") cfg.alpha = parse_double(key, val);
        else if (key == "beta") cfg.beta = parse_double(key, val);
        else if (key == "lambda_pr") cfg.lambda_pr = parse_double(key, val);
        else if (key == "lambda_fr") cfg.lambda_fr = parse_double(key, val);
        else if (key == "gamma_schedule") {
            if (val == "ones") cfg.gamma_schedule = GammaSchedule::Ones;
            else if (val == "linear") cfg.gamma_schedule = GammaSchedule::Linear;
            else if (val == "explicit") cfg.gamma_schedule = GammaSchedule::Explicit;
            else throw std::invalid_argument("config: unknown gamma_schedule '" + val + "'");
        } else if (key == "gamma") {
            cfg.gamma.clear();
            for (const auto& tok : split_commas(val)) cfg.gamma.push_back(parse_double(key, trim(tok)));
        } else if (key == "pretrain_batch") cfg.pretrain_batch = static_cast<int>(parse_int(key, val));
        else if (key == "finetune_batch") cfg.finetune_batch = static_cast<int>(parse_int(key, val));
        else if (key == "learning_rate") cfg.learning_rate = parse_double(key, val);
        else if (key == "class_count") cfg.class_count = static_cast<int>(parse_int(key, val));
        else if (key == "feature_dim") cfg.feature_dim = static_cast<int>(parse_int(key, val));
        else if (key == "epochs_pretrain") cfg.epochs_pretrain = static_cast<int>(parse_int(key, val));
        else if (key == "epochs_finetune") cfg.epochs_finetune = static_cast<int>(parse_int(key, val));
        else if (key == "seed") cfg.seed = parse_int(key, val);
        else if (key == "repetitions") cfg.repetitions = static_cast<int>(parse_int(key, val));
        else if (key == "encoder_conv_channels") {
            cfg.encoder_conv_channels.clear();
            for (const auto& tok : split_commas(val))
                cfg.encoder_conv_channels.push_back(static_cast<int>(parse_int(key, trim(tok))));
        } else if (key == "encoder_kernel") cfg.encoder_kernel = static_cast<int>(parse_int(key, val));
        else if (key == "encoder_stride") cfg.encoder_stride = static_cast<int>(parse_int(key, val));
        else if (key == "encoder_ffn_hidden") cfg.encoder_ffn_hidden = static_cast<int>(parse_int(key, val));
        else if (key == "m_norm") {
            if (val == "l2") cfg.m_norm_mode = MNormMode::RowL2;
            else if (val == "batch_std_l2") cfg.m_norm_mode = MNormMode::BatchStdL2;
            else throw std::invalid_argument("config: unknown m_norm '" + val + "'");
        } else if (key == "column_norm") {
            if (val == "l2") cfg.column_norm = ColumnNormMode::L2;
            else if (val == "raw") cfg.column_norm = ColumnNormMode::Raw;
            else throw std::invalid_argument("config: unknown column_norm '" + val + "'");
        } else if (key == "reg_target") {
            if (val == "zero") cfg.reg_target = RegTarget::Zero;
            else if (val == "checkpoint") cfg.reg_target = RegTarget::Checkpoint;
            else throw std::invalid_argument("config: unknown reg_target '" + val + "'");
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void save_config_file(const TrainConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << serialize_config(cfg);
}

}  // namespace mesen
