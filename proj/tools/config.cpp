#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>

#include "experiments.hpp"
#include "mfc/error.hpp"

namespace mfc::cli {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

template <class T>
T parse_number(const std::string& text, const std::string& where) {
    const std::string s = trim(text);
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && ptr == s.data() + s.size() && !s.empty(), ErrorCode::Config,
            fmt::format("{}: cannot parse '{}' as a number", where, text));
    return v;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const std::string& where) {
    std::vector<T> out;
    if (trim(text).empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(item, where));
    return out;
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_floating_point_v<T>) s += fmt_double(v[i]);
        else s += std::to_string(v[i]);
    }
    return s;
}

struct Key {
    const char* section;
    const char* name;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    // Returns nothing for absent optional keys.
    std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

template <class M>
Key num(const char* sec, const char* name, M ExperimentConfig::*field) {
    return {sec, name,
            [field](ExperimentConfig& c, const std::string& v, const std::string& w) {
                c.*field = parse_number<M>(v, w);
            },
            [field](const ExperimentConfig& c) -> std::optional<std::string> {
                if constexpr (std::is_floating_point_v<M>) return fmt_double(c.*field);
                else return std::to_string(c.*field);
            }};
}

template <class M>
Key opt_num(const char* sec, const char* name, std::optional<M> ExperimentConfig::*field) {
    return {sec, name,
            [field](ExperimentConfig& c, const std::string& v, const std::string& w) {
                c.*field = parse_number<M>(v, w);
            },
            [field](const ExperimentConfig& c) -> std::optional<std::string> {
                if (!(c.*field)) return std::nullopt;
                return fmt_double(*(c.*field));
            }};
}

Key str(const char* sec, const char* name, std::string ExperimentConfig::*field) {
    return {sec, name,
            [field](ExperimentConfig& c, const std::string& v, const std::string&) { c.*field = trim(v); },
            [field](const ExperimentConfig& c) -> std::optional<std::string> { return c.*field; }};
}

template <class M>
Key list(const char* sec, const char* name, std::vector<M> ExperimentConfig::*field) {
    return {sec, name,
            [field](ExperimentConfig& c, const std::string& v, const std::string& w) {
                c.*field = parse_list<M>(v, w);
            },
            [field](const ExperimentConfig& c) -> std::optional<std::string> {
                return fmt_list(c.*field);
            }};
}

const std::vector<Key>& keys() {
    using C = ExperimentConfig;
    static const std::vector<Key> k = {
        str("problem", "builtin", &C::builtin),
        num("problem", "dim", &C::dim),
        num("problem", "half_width", &C::half_width),
        num("problem", "horizon", &C::horizon),
        {"problem", "hamiltonian",
         [](C& c, const std::string& v, const std::string&) { c.hamiltonian = trim(v); },
         [](const C& c) { return c.hamiltonian; }},
        num("problem", "lambda", &C::lambda),
        str("problem", "drift", &C::drift),
        num("problem", "drift_amplitude", &C::drift_amplitude),
        opt_num("problem", "initial_mean", &C::initial_mean),
        opt_num("problem", "initial_sd", &C::initial_sd),
        num("grid", "nx", &C::nx),
        num("grid", "nt", &C::nt),
        num("solver", "damping", &C::damping),
        num("solver", "tolerance", &C::tolerance),
        num("solver", "max_iterations", &C::max_iterations),
        num("solver", "multistarts", &C::multistarts),
        num("solver", "merge_tolerance", &C::merge_tolerance),
        num("solver", "tie_tolerance", &C::tie_tolerance),
        num("solver", "start_amplitude", &C::start_amplitude),
        list("stability", "sigma_grid", &C::sigma_grid),
        num("stability", "threshold", &C::threshold),
        list("stability", "scan_means", &C::scan_means),
        list("stability", "scan_sds", &C::scan_sds),
        list("particles", "n_values", &C::n_values),
        num("particles", "replicas", &C::replicas),
        num("particles", "seed", &C::seed),
        num("particles", "delta_track", &C::delta_track),
        list("particles", "vn_n", &C::vn_n),
        num("particles", "vn_samples", &C::vn_samples),
        num("particles", "vn_nx", &C::vn_nx),
        num("particles", "soc_samples", &C::soc_samples),
        num("verify", "tolerance_factor", &C::tolerance_factor),
        str("output", "dir", &C::dir),
    };
    return k;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        fail(ErrorCode::Config, fmt::format("line {}: {}", e.line(), e.message()));
    }
    ExperimentConfig c;
    for (const auto& [section, body] : tree) {
        require(body.data().empty(), ErrorCode::Config,
                fmt::format("key '{}' appears outside any section", section));
        for (const auto& [name, value] : body) {
            const std::string where = fmt::format("[{}] {}", section, name);
            const Key* key = nullptr;
            for (const Key& k : keys())
                if (section == k.section && name == k.name) key = &k;
            require(key != nullptr, ErrorCode::Config, fmt::format("unknown key {}", where));
            key->set(c, value.data(), where);
        }
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Config,
            fmt::format("cannot open config file '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
    std::string out;
    std::string current;
    for (const Key& k : keys()) {
        const auto v = k.get(c);
        if (!v) continue;
        if (current != k.section) {
            if (!current.empty()) out += "\n";
            out += fmt::format("[{}]\n", k.section);
            current = k.section;
        }
        out += fmt::format("{} = {}\n", k.name, *v);
    }
    return out;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    require(EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) == 1,
            ErrorCode::InvalidArgument, "SHA-256 failed");
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(serialize_config(c)); }

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : stage) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return seed + h;
}

ProblemSpec build_spec(const ExperimentConfig& c) {
    require(c.dim == 1 || c.dim == 2, ErrorCode::Config, "[problem] dim must be 1 or 2");
    BuiltinOptions o;
    o.dim = c.dim;
    o.half_width = c.half_width;
    o.nx = c.nx;
    o.nt = c.nt;
    o.horizon = c.horizon;
    try {
        ProblemSpec s = builtin(c.builtin, o);
        if (c.hamiltonian)
            s.hamiltonian =
                Hamiltonian::from_descriptor(*c.hamiltonian, c.lambda, c.drift, c.drift_amplitude);
        if (c.initial_mean) s.initial.mean[0] = *c.initial_mean;
        if (c.initial_sd) s.initial.sd = *c.initial_sd;
        validate_spec(s);
        return s;
    } catch (const Error& e) {
        // Invalid grid or model parameters come from the config file.
        if (e.code() == ErrorCode::InvalidArgument) fail(ErrorCode::Config, e.what());
        throw;
    }
}

SolverConfig solver_config(const ExperimentConfig& c, int threads) {
    SolverConfig s;
    s.damping = c.damping;
    s.tolerance = c.tolerance;
    s.max_iterations = c.max_iterations;
    s.multistarts = c.multistarts;
    s.merge_tolerance = c.merge_tolerance;
    s.tie_tolerance = c.tie_tolerance;
    s.start_amplitude = c.start_amplitude;
    s.seed = stage_seed(c.seed, "multistart");
    s.threads = threads;
    require(s.damping > 0.0 && s.damping <= 1.0, ErrorCode::Config, "[solver] damping must lie in (0, 1]");
    require(s.tolerance > 0.0 && s.max_iterations > 0 && s.multistarts >= 1, ErrorCode::Config,
            "[solver] tolerance, max_iterations and multistarts must be positive");
    return s;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

}  // namespace mfc::cli
