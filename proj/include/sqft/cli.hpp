#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "density.hpp"
#include "errors.hpp"
#include "freefield.hpp"
#include "grid.hpp"
#include "json.hpp"
#include "mcstats.hpp"
#include "noise.hpp"
#include "oscillator.hpp"
#include "phi4.hpp"
#include "renorm.hpp"

#ifndef SQFT_VERSION
#define SQFT_VERSION "0.0.0"
#endif

namespace sqft::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitPass = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCheck = 3;

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

/// Shortest text that round-trips through strtod; locale-independent.
inline std::string fmt(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline std::string fmt(long long v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string& s) { return s; }
inline std::string fmt(const char* s) { return s; }

inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    template <class... Ts>
    void add(const Ts&... vals)
    {
        rows.push_back({fmt(vals)...});
    }

    std::string str() const
    {
        std::string out;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (i) out += ',';
                out += csv_field(r[i]);
            }
            out += "\r\n";
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
};

inline std::string sha256_hex(std::string_view data)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

inline std::string read_file(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    if (!is) throw ConfigError("config", "cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, const std::string& data)
{
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + p.string());
    os << data;
}

inline std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Standalone matplotlib script that plots every column of `csv` against the first.
inline std::string plot_script(const std::string& csv, const std::string& title)
{
    std::ostringstream s;
    s << "import csv\nimport sys\n\nimport matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n"
      << "path = sys.argv[1] if len(sys.argv) > 1 else \"" << csv << "\"\n"
      << "with open(path, newline=\"\") as f:\n    rows = list(csv.reader(f))\n"
      << "header, data = rows[0], rows[1:]\n\n"
      << "def num(v):\n    try:\n        return float(v)\n    except ValueError:\n        return float(\"nan\")\n\n"
      << "x = [num(r[0]) for r in data]\nfig, ax = plt.subplots()\n"
      << "for j in range(1, len(header)):\n    ys = [num(r[j]) for r in data]\n"
      << "    if all(y == y for y in ys):\n        ax.plot(x, ys, marker=\".\", label=header[j])\n"
      << "ax.set_xlabel(header[0])\nax.set_title(\"" << title << "\")\nax.legend(fontsize=\"small\")\n"
      << "fig.savefig(path.rsplit(\".\", 1)[0] + \".png\", dpi=120)\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

struct ParamSpec {
    std::string name;
    std::string type;  ///< number, integer, boolean, int3-list, number-list
    bool required = false;
    json default_value;
    std::string description;
    bool positive = false;
};

struct ExperimentInfo {
    std::string id;
    std::string summary;
    std::string reference;
    std::vector<ParamSpec> params;

    json schema() const
    {
        json p = json::array();
        for (const auto& s : params) {
            json e{{"name", s.name}, {"type", s.type}, {"required", s.required}, {"description", s.description}};
            if (!s.default_value.is_null()) e["default"] = s.default_value;
            if (s.positive) e["constraint"] = "> 0";
            p.push_back(e);
        }
        return {{"id", id}, {"summary", summary}, {"reference", reference}, {"parameters", p}};
    }
};

namespace detail {
inline ParamSpec num(std::string n, json d, std::string desc, bool pos = true)
{
    return {std::move(n), "number", d.is_null(), std::move(d), std::move(desc), pos};
}
inline ParamSpec optional_num(std::string n, std::string desc)
{
    return {std::move(n), "number", false, nullptr, std::move(desc), false};
}
inline ParamSpec integer(std::string n, json d, std::string desc)
{
    return {std::move(n), "integer", d.is_null(), std::move(d), std::move(desc), true};
}
inline ParamSpec boolean(std::string n, bool d, std::string desc)
{
    return {std::move(n), "boolean", false, json(d), std::move(desc), false};
}
inline std::vector<ParamSpec> truncation_params(int N, int n, double bound)
{
    return {integer("N_max", N, "total particle-number cap"), integer("n_max", n, "per-mode occupation cap"),
            num("mass_bound", bound, "largest probability the truncation may drop")};
}
inline std::vector<ParamSpec> join(std::vector<ParamSpec> a, const std::vector<ParamSpec>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}
inline ParamSpec modes_param()
{
    return {"modes", "int3-list", false, json::array({{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}}),
            "grid modes as integer triples n, p = 2 pi n / L", false};
}
}  // namespace detail

inline const std::vector<ExperimentInfo>& catalog()
{
    using namespace detail;
    static const std::vector<ExperimentInfo> c = {
        {"oscillator",
         "Driven oscillator: stochastic Schroedinger trajectories, packet width and center statistics, decoherence.",
         "packet law sigma(t) = sigma0 sqrt(1 + t^2/(m^2 sigma0^4)), Var q = lambda^2 t^3/(3 m^2), "
         "decoherence exp(-lambda^2 (x-y)^2 t/2)",
         {num("m", nullptr, "oscillator mass"), num("omega", 0.0, "oscillator frequency", false),
          num("lambda", 1.0, "noise coupling", false), num("sigma0", 1.0, "initial packet width"),
          num("q0", 0.0, "initial center", false), num("p0", 0.0, "initial momentum", false),
          integer("grid_n", 512, "position grid points"), num("box", 0.0, "box length (0 picks 12 sigma plus drift)", false),
          num("dt", 1e-3, "time step"), num("t_final", 1.0, "final time"), integer("n_paths", 200, "noise paths"),
          integer("record_every", 100, "steps between recorded rows"),
          boolean("hamiltonian", true, "keep the kinetic and potential terms")}},
        {"freefield.vacuum",
         "Random S-matrix acting on the vacuum: coherent final states, occupation histograms, vacuum persistence.",
         "per-mode occupation geometric with ratio 1/(1+Etilde_p); E|S00|^2 = 1/Z",
         join({num("m", nullptr, "field mass"), num("lambda", 1.0, "bare noise coupling (ignored if lambda_p set)", false),
               optional_num("lambda_p", "physical coupling; bare = lambda_p m / cutoff"),
               num("T", 1.0, "half time window"), num("L", kTwoPi, "box side"),
               num("cutoff", 1.5, "momentum cutoff for grid and scheme"), integer("n_samples", 100000, "noise draws"),
               integer("hist_modes", 2, "modes given a histogram test")},
              {})},
        {"freefield.single",
         "One incoming particle: occupation law of its mode after the random S-matrix.",
         "occupied-mode law (1-q) q^n (1 + Etilde^2 n)/(1 + Etilde)",
         join({num("m", nullptr, "field mass"), num("lambda", 0.3, "bare noise coupling", false),
               num("T", 1.0, "half time window"), num("L", kTwoPi, "box side"), modes_param(),
               integer("initial", 0, "index of the initially occupied mode"), integer("n_samples", 20000, "noise draws")},
              truncation_params(16, 16, 1e-6))},
        {"freefield.offdiag",
         "Off-diagonal particle density matrix |p><q| built from shared noise draws vs its closed form.",
         "equal-momentum block structure and coefficients Etilde_p Etilde_q/((1+Etilde_p)(1+Etilde_q))",
         join({num("m", nullptr, "field mass"), num("lambda", 0.35, "bare noise coupling", false),
               num("T", 1.0, "half time window"), num("L", kTwoPi, "box side"), modes_param(),
               integer("p", 1, "ket mode index"), integer("q", 2, "bra mode index"),
               integer("n_samples", 20000, "noise draws"), integer("report_N", 2, "largest particle number compared")},
              truncation_params(16, 16, 1e-6))},
        {"freefield.renorm",
         "Cutoff ladder of ln Z and of the vacuum number law under lambda = lambda_p m / Lambda.",
         "ln Z -> T V m^2 lambda_p^2 / (4 pi^2); vacuum number law -> Poisson",
         {num("m", nullptr, "field mass"), num("lambda_p", 1.0, "physical coupling", false),
          num("T", 1.0, "half time window"), num("V", 79.0, "spatial volume"),
          {"ladder", "number-list", false, json(default_cutoff_ladder()), "cutoff ratios Lambda/m", false},
          integer("n_law", 5, "largest n compared with the Poisson law"),
          num("check_ratio", 100.0, "ladder rung read by the ln Z check")}},
        {"freefield.rates",
         "Particle generation rates: lattice Riemann sum against the renormalized total.",
         "sum_p dn_p/dt d3p -> lambda_p^2 m^2 V / (8 pi^2)",
         {num("m", nullptr, "field mass"), num("lambda_p", 1.0, "physical coupling", false),
          num("T", 1.0, "half time window"), num("cutoff", 100.0, "momentum cutoff Lambda"),
          integer("n_max", 30, "grid modes per axis inside the cutoff, L = 2 pi n_max / Lambda"),
          integer("radial_bins", 20, "bins of the radial rate table")}},
        {"phi4.collide",
         "Order-g collision density matrix: 1/Z factorization, dot-factor ladders, Wick pairing vs sampling.",
         "rho^g = (1/Z) S^g S^g* at lambda = 0 with vanishing renormalized dot factors",
         join({num("m", nullptr, "field mass"), num("g", 0.1, "quartic coupling", false),
               num("lambda_p", 1.0, "physical coupling", false), num("T", 1.0, "half time window"),
               num("L", kTwoPi, "box side"), num("cutoff", 100.0, "cutoff Lambda used for Z and the dressed lines"),
               {"ladder", "number-list", false, json(default_cutoff_ladder()), "cutoff ratios Lambda/m", false},
               modes_param(), integer("lattice_n", 4, "sites per axis of the Wick lattice"),
               num("lattice_L", 2.0, "box side of the Wick lattice"),
               num("lattice_lambda", 1.0, "bare coupling of the Wick lattice", false),
               integer("n_draws", 20000, "noise draws for the Wick comparison"),
               num("ladder_ratio", 1e-3, "final/first bound for the dot-factor ladders")},
              {})},
        {"noise.selftest",
         "Noise-sampling self test: lattice mode variance, Parseval, coarse graining, window symmetry.",
         "Var Re W(p) = T V; coarse-grained noise equal in distribution; time-shifted actions equal in distribution",
         {integer("lattice_n", 4, "sites per axis"), num("T", 1.0, "half time window"), num("L", 1.0, "box side"),
          integer("n_draws", 4000, "noise draws"), integer("n_paths", 2000, "Wiener paths for the window test"),
          num("dt", 0.01, "Wiener time step"), num("window", 1.0, "window length t' - t0"),
          num("shift", 0.5, "time shift tau"), num("lambda", 1.0, "noise coupling in the action", false),
          num("m", 1.0, "mass in the action")}},
    };
    return c;
}

inline const ExperimentInfo& find_experiment(const std::string& id)
{
    for (const auto& e : catalog())
        if (e.id == id) return e;
    throw ConfigError("experiment", "unknown experiment '" + id + "'");
}

inline json list_experiments()
{
    json out = json::array();
    for (const auto& e : catalog()) out.push_back({{"id", e.id}, {"summary", e.summary}});
    return out;
}

inline json describe(const std::string& id) { return find_experiment(id).schema(); }

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

/// Top-level keys that are not physics parameters.
inline const std::vector<std::string>& reserved_keys()
{
    static const std::vector<std::string> k{"experiment", "seed", "output_dir", "threads", "checks", "description"};
    return k;
}

struct ExperimentConfig {
    std::string experiment;
    std::uint64_t seed = 1;
    std::optional<fs::path> output_dir;
    std::map<std::string, bool> checks;  ///< per-check enable switch, default on
    json params;
    std::vector<std::string> warnings;

    bool check_enabled(const std::string& name) const
    {
        auto it = checks.find(name);
        return it == checks.end() || it->second;
    }

    double number(const std::string& k) const { return params.at(k).get<double>(); }
    long long integer(const std::string& k) const { return params.at(k).get<long long>(); }
    std::size_t count(const std::string& k) const { return static_cast<std::size_t>(integer(k)); }
    bool flag(const std::string& k) const { return params.at(k).get<bool>(); }
    bool has(const std::string& k) const { return params.contains(k) && !params.at(k).is_null(); }
    std::vector<double> numbers(const std::string& k) const { return params.at(k).get<std::vector<double>>(); }
    std::vector<IntVec3> int3s(const std::string& k) const
    {
        std::vector<IntVec3> out;
        for (const auto& e : params.at(k)) out.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
        return out;
    }
};

inline int line_of_offset(const std::string& text, std::size_t byte)
{
    const std::size_t end = std::min(byte, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(end), '\n'));
}

/// Validates `text` against the experiment schema; numeric errors name the field.
inline ExperimentConfig parse_config(const std::string& text, bool strict = false)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<json>", "line " + std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("<json>", "config must be a JSON object");
    if (!j.contains("experiment") || !j["experiment"].is_string())
        throw ConfigError("experiment", "missing required field 'experiment'");
    ExperimentConfig cfg;
    cfg.experiment = j["experiment"].get<std::string>();
    const auto& info = find_experiment(cfg.experiment);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw ConfigError("seed", "field 'seed' must be a non-negative integer");
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("output_dir")) {
        if (!j["output_dir"].is_string()) throw ConfigError("output_dir", "field 'output_dir' must be a string");
        cfg.output_dir = j["output_dir"].get<std::string>();
    }
    if (j.contains("checks")) {
        if (!j["checks"].is_object()) throw ConfigError("checks", "field 'checks' must map check names to booleans");
        for (const auto& [k, v] : j["checks"].items()) {
            if (!v.is_boolean()) throw ConfigError("checks." + k, "check switch '" + k + "' must be boolean");
            cfg.checks[k] = v.get<bool>();
        }
    }
    cfg.params = json::object();
    for (const auto& s : info.params) {
        if (!j.contains(s.name)) {
            if (s.required) throw ConfigError(s.name, "missing required field '" + s.name + "'");
            cfg.params[s.name] = s.default_value;
            continue;
        }
        const json& v = j[s.name];
        auto bad = [&](const std::string& why) { throw ConfigError(s.name, "field '" + s.name + "' " + why); };
        if (s.type == "number") {
            if (!v.is_number()) bad("must be a number");
            if (!std::isfinite(v.get<double>())) bad("must be finite");
            if (s.positive && !(v.get<double>() > 0)) bad("must be positive");
            if (!s.positive && v.get<double>() < 0 && s.name != "q0" && s.name != "p0") bad("must be non-negative");
        } else if (s.type == "integer") {
            if (!v.is_number_integer() || v.get<long long>() < 0) bad("must be a non-negative integer");
            if (s.positive && v.get<long long>() == 0 && s.name != "initial") bad("must be positive");
        } else if (s.type == "boolean") {
            if (!v.is_boolean()) bad("must be true or false");
        } else if (s.type == "number-list") {
            if (!v.is_array() || v.empty()) bad("must be a non-empty list of numbers");
            for (const auto& e : v)
                if (!e.is_number() || !(e.get<double>() > 0)) bad("entries must be positive numbers");
        } else if (s.type == "int3-list") {
            if (!v.is_array() || v.empty()) bad("must be a non-empty list of integer triples");
            for (const auto& e : v)
                if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() || !e[1].is_number_integer() ||
                    !e[2].is_number_integer())
                    bad("entries must be integer triples");
        }
        cfg.params[s.name] = v;
    }
    for (const auto& [k, v] : j.items()) {
        (void)v;
        const bool known = std::find(reserved_keys().begin(), reserved_keys().end(), k) != reserved_keys().end() ||
                           std::any_of(info.params.begin(), info.params.end(),
                                       [&](const ParamSpec& s) { return s.name == k; });
        if (!known) {
            if (strict) throw ConfigError(k, "unknown field '" + k + "'");
            cfg.warnings.push_back("unknown field '" + k + "' ignored");
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct ExperimentOutput {
    std::vector<std::pair<std::string, CsvTable>> tables;
    std::vector<TestReport> checks;
    json derived = json::object();
    json summary = json::object();
};

struct RunContext {
    const ExperimentConfig& cfg;
    std::uint64_t seed;
    unsigned threads;

    void check(ExperimentOutput& out, TestReport r) const
    {
        if (cfg.check_enabled(r.name)) out.checks.push_back(std::move(r));
    }
};

namespace detail {

inline Truncation truncation(const ExperimentConfig& c)
{
    Truncation t;
    t.N_max = static_cast<int>(c.integer("N_max"));
    t.n_max = static_cast<int>(c.integer("n_max"));
    t.mass_bound = c.number("mass_bound");
    t.validate();
    return t;
}

inline MomentumGrid explicit_grid(const ExperimentConfig& c)
{
    return MomentumGrid::from_modes(c.number("L"), c.number("m"), c.number("T"), c.int3s("modes"));
}

inline std::size_t mode_index(const ExperimentConfig& c, const std::string& key, const MomentumGrid& grid)
{
    const auto i = c.count(key);
    if (i >= grid.size()) throw ConfigError(key, "field '" + key + "' is not a mode index of the grid");
    return i;
}

inline json grid_constants(const MomentumGrid& grid, double lambda, double T)
{
    return {{"d3p", grid.d3p()},
            {"dp0", grid.dp0()},
            {"modes", grid.size()},
            {"lambda_bare", lambda},
            {"Z", partition_function(grid, lambda, T)}};
}

/// Basis indices with total particle number <= N.
inline std::size_t block_limit(const FockBasis& b, int N) { return b.block_end(std::min(N, b.max_particles())); }

}  // namespace detail

inline ExperimentOutput run_oscillator(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const OscillatorParams par{c.number("m"), c.number("omega"), c.number("lambda")};
    par.validate();
    const GaussianPacket pk{c.number("q0"), c.number("p0"), c.number("sigma0")};
    const double dt = c.number("dt"), tf = c.number("t_final");
    const auto steps = static_cast<std::size_t>(std::llround(tf / dt));
    if (steps == 0) throw ConfigError("t_final", "field 't_final' must exceed dt");
    const std::size_t every = std::max<std::size_t>(1, c.count("record_every"));
    const std::size_t n_paths = c.count("n_paths");
    if (n_paths < 2) throw ConfigError("n_paths", "field 'n_paths' must be at least 2");

    const double s2 = pk.sigma0 * pk.sigma0;
    const double sig_f = pk.sigma0 * std::sqrt(1 + tf * tf / (par.m * par.m * s2 * s2));
    const double sd_q = par.lambda * std::sqrt(tf * tf * tf / 3) / par.m;
    double box = c.number("box");
    if (box == 0.0) box = 12 * sig_f + 2 * std::abs(pk.p0) * tf / par.m + 16 * sd_q;
    const XGrid grid = XGrid::centered(c.count("grid_n"), box);
    const auto psi0 = pk.sample(grid);
    SdeOptions opt;
    opt.hamiltonian = c.flag("hamiltonian");
    opt.record_every = every;

    struct PathResult {
        std::vector<double> width, center, wt;
        double norm_err, edge;
    };
    auto paths = parallel_map(
        n_paths,
        [&](std::size_t r) {
            const auto W = sample_wiener(steps, dt, replica_stream(ctx.seed, r));
            const auto tr = evolve_sde(psi0, par, W, opt);
            PathResult pr{{}, {}, {}, tr.max_norm_error, tr.edge_mass};
            double wsum = 0.0;
            std::size_t j = 0;
            for (std::size_t k = 0; k < tr.times.size(); ++k) {
                const auto target = static_cast<std::size_t>(std::llround((tr.times[k] - W.t0) / dt));
                for (; j < target; ++j) wsum += W[j];
                pr.width.push_back(tr.states[k].width());
                pr.center.push_back(tr.states[k].mean_x());
                pr.wt.push_back(wsum);
            }
            return pr;
        },
        ctx.threads);

    std::vector<double> times;
    for (std::size_t s = 0; s <= steps; s += every) times.push_back(static_cast<double>(s) * dt);
    if (times.back() + 0.5 * dt < tf) times.push_back(static_cast<double>(steps) * dt);
    const std::size_t nrec = paths.front().width.size();
    require(nrec == times.size(), "oscillator: recorded row count mismatch");

    const double d = pk.sigma0;
    CsvTable tab;
    tab.header = {"t", "sigma_mean", "sigma_exact", "q_mean", "q_var", "q_var_se", "q_var_exact", "decoherence_mc",
                  "decoherence_se", "decoherence_exact"};
    Estimate var_final, dec_final;
    double spread_final = 0.0;
    for (std::size_t k = 0; k < nrec; ++k) {
        std::vector<double> w(n_paths), q(n_paths), dec(n_paths);
        for (std::size_t r = 0; r < n_paths; ++r) {
            w[r] = paths[r].width[k];
            q[r] = paths[r].center[k];
            dec[r] = std::cos(par.lambda * d * paths[r].wt[k]);
        }
        const double t = times[k];
        const auto W = estimate_from_samples(w), Q = estimate_from_samples(q), D = estimate_from_samples(dec);
        const double qmean = pk.q0 + pk.p0 * t / par.m;
        std::vector<double> dev(n_paths);
        for (std::size_t r = 0; r < n_paths; ++r) dev[r] = (q[r] - qmean) * (q[r] - qmean);
        const auto V = estimate_from_samples(dev);
        const double sig_exact = pk.sigma0 * std::sqrt(1 + t * t / (par.m * par.m * s2 * s2));
        const double var_exact = par.lambda * par.lambda * t * t * t / (3 * par.m * par.m);
        tab.add(t, W.mean, sig_exact, Q.mean, V.mean, V.se(), var_exact, D.mean, D.se(),
                decoherence_factor(d, 0.0, t, par.lambda));
        if (k + 1 == nrec) {
            var_final = V;
            dec_final = D;
            const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
            spread_final = (*hi - *lo) / W.mean;
        }
    }
    out.tables.emplace_back("trajectory", std::move(tab));

    double norm_err = 0.0, edge = 0.0;
    for (const auto& p : paths) {
        norm_err = std::max(norm_err, p.norm_err);
        edge = std::max(edge, p.edge);
    }
    ctx.check(out, tolerance_test("norm_conservation", norm_err, 1e-9));
    ctx.check(out, tolerance_test("boundary_leakage", edge, 1e-8));
    ctx.check(out, sigma_test("decoherence_law", dec_final, decoherence_factor(d, 0.0, tf, par.lambda)));
    if (par.omega == 0.0 && opt.hamiltonian) {
        ctx.check(out, sigma_test("center_variance", var_final, par.lambda * par.lambda * tf * tf * tf / (3 * par.m * par.m)));
        ctx.check(out, tolerance_test("width_spread", spread_final, 1e-3));
    }
    out.derived = {{"box", box}, {"dx", grid.dx}, {"steps", steps}, {"sigma_final_exact", sig_f}};
    return out;
}

namespace detail {

struct FieldSetup {
    MomentumGrid grid;
    double lambda;
    std::optional<RenormalizationScheme> scheme;
};

inline FieldSetup vacuum_setup(const ExperimentConfig& c)
{
    const double m = c.number("m"), T = c.number("T"), L = c.number("L"), cut = c.number("cutoff");
    auto grid = MomentumGrid::enumerate(L, cut, m, T);
    if (c.has("lambda_p")) {
        const RenormalizationScheme s{c.number("lambda_p"), cut, m};
        return {std::move(grid), s.bare(), s};
    }
    return {std::move(grid), c.number("lambda"), std::nullopt};
}

}  // namespace detail

inline ExperimentOutput run_freefield_vacuum(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const auto setup = detail::vacuum_setup(c);
    const auto& grid = setup.grid;
    const double T = c.number("T"), lam = setup.lambda;
    const std::size_t n = c.count("n_samples");
    if (n < 30) throw ConfigError("n_samples", "field 'n_samples' must be at least 30");
    const std::size_t K = grid.size();
    const std::size_t hist_modes = std::min<std::size_t>(c.count("hist_modes"), K);
    constexpr int kMaxN = 40;

    // Row layout: |S00|^2, norm error, occupation of every mode.
    auto rows = parallel_map(
        n,
        [&](std::size_t r) {
            const Stream st = replica_stream(ctx.seed, r);
            const auto modes = sample_onshell_modes(grid, T, st);
            const auto cpl = coupling_from_modes(modes, lam, grid);
            const double s2 = s00_modulus_sq(cpl);
            const auto cs = final_state_vacuum(cpl, std::sqrt(s2));
            std::vector<double> row{s2, std::abs(cs.norm() - 1.0)};
            const Stream occ = st.child("occupation");
            for (std::size_t k = 0; k < K; ++k)
                row.push_back(static_cast<double>(occ.poisson(cs.mean_occupation(k), k)));
            return row;
        },
        ctx.threads);

    std::vector<double> col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = rows[r][0];
    const auto s00 = estimate_from_samples(col);
    const double logZ = log_partition_function(grid, lam, T);
    ctx.check(out, sigma_test("vacuum_persistence", s00, std::exp(-logZ)));
    double norm_err = 0.0;
    for (const auto& r : rows) norm_err = std::max(norm_err, r[1]);
    ctx.check(out, tolerance_test("state_norm", norm_err, 1e-10));

    CsvTable modes;
    modes.header = {"mode", "n1", "n2", "n3", "E", "Etilde", "ratio", "occupation_mc", "occupation_se",
                    "occupation_exact"};
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t r = 0; r < n; ++r) col[r] = rows[r][2 + k];
        const auto e = estimate_from_samples(col);
        const double Et = dimensionless_energy(grid[k].E, lam, T), q = geometric_ratio(Et);
        modes.add(k, grid[k].n[0], grid[k].n[1], grid[k].n[2], grid[k].E, Et, q, e.mean, e.se(), q / (1 - q));
    }
    out.tables.emplace_back("modes", std::move(modes));

    CsvTable hist;
    hist.header = {"mode", "n", "observed", "expected"};
    for (std::size_t k = 0; k < hist_modes; ++k) {
        const double q = geometric_ratio(dimensionless_energy(grid[k].E, lam, T));
        std::vector<double> obs(kMaxN + 1, 0.0), prob(kMaxN + 1);
        for (const auto& r : rows) obs[static_cast<std::size_t>(std::min<double>(r[2 + k], kMaxN))] += 1;
        for (int j = 0; j <= kMaxN; ++j) prob[static_cast<std::size_t>(j)] = (1 - q) * std::pow(q, j);
        prob[kMaxN] = std::pow(q, kMaxN);
        for (int j = 0; j <= kMaxN; ++j)
            hist.add(k, j, obs[static_cast<std::size_t>(j)], static_cast<double>(n) * prob[static_cast<std::size_t>(j)]);
        pool_bins(obs, prob, static_cast<double>(n));
        ctx.check(out, chi_square_fit(obs, prob, "occupation_law_mode_" + std::to_string(k)));
    }
    out.tables.emplace_back("histogram", std::move(hist));

    out.derived = detail::grid_constants(grid, lam, T);
    if (setup.scheme) out.derived["mu"] = poisson_mean(*setup.scheme, T, grid.V());
    return out;
}

inline ExperimentOutput run_freefield_single(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const auto grid = detail::explicit_grid(c);
    const double T = c.number("T"), lam = c.number("lambda");
    const auto tr = detail::truncation(c);
    const std::size_t p = detail::mode_index(c, "initial", grid);
    const std::size_t n = c.count("n_samples");
    if (n < 2) throw ConfigError("n_samples", "field 'n_samples' must be at least 2");
    Occupation init(grid.size(), 0);
    init[p] = 1;

    auto rows = parallel_map(
        n,
        [&](std::size_t r) {
            const auto modes = sample_onshell_modes(grid, T, replica_stream(ctx.seed, r));
            const auto cpl = coupling_from_modes(modes, lam, grid);
            const auto v = final_state_particles(init, cpl, std::sqrt(s00_modulus_sq(cpl)), tr);
            std::vector<double> marg(static_cast<std::size_t>(tr.n_max) + 1, 0.0);
            for (std::size_t i = 0; i < v.basis->dim(); ++i)
                marg[static_cast<std::size_t>(v.basis->state(i)[p])] += std::norm(v.amp[i]);
            return marg;
        },
        ctx.threads);

    const auto rho = density_single(p, grid, lam, T, tr);
    std::vector<double> exact(static_cast<std::size_t>(tr.n_max) + 1, 0.0);
    for (std::size_t i = 0; i < rho.basis->dim(); ++i)
        exact[static_cast<std::size_t>(rho.basis->state(i)[p])] += rho.entry(i, i).real();

    CsvTable tab;
    tab.header = {"n", "probability_mc", "probability_se", "probability_exact"};
    std::vector<double> col(n);
    for (std::size_t j = 0; j < exact.size(); ++j) {
        for (std::size_t r = 0; r < n; ++r) col[r] = rows[r][j];
        const auto e = estimate_from_samples(col);
        tab.add(j, e.mean, e.se(), exact[j]);
        if (j <= 4) ctx.check(out, sigma_test("occupied_mode_law_n" + std::to_string(j), e, exact[j]));
    }
    out.tables.emplace_back("occupied_mode", std::move(tab));
    out.derived = detail::grid_constants(grid, lam, T);
    out.derived["truncated_mass"] = rho.truncated_mass;
    return out;
}

inline ExperimentOutput run_freefield_offdiag(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const auto grid = detail::explicit_grid(c);
    const double T = c.number("T"), lam = c.number("lambda");
    const auto tr = detail::truncation(c);
    const std::size_t p = detail::mode_index(c, "p", grid), q = detail::mode_index(c, "q", grid);
    const std::size_t n = c.count("n_samples");
    if (n < 2) throw ConfigError("n_samples", "field 'n_samples' must be at least 2");
    const auto rho = density_offdiagonal(p, q, grid, lam, T, tr);
    const auto& B = *rho.basis;
    const std::size_t lim = detail::block_limit(B, static_cast<int>(c.integer("report_N")));

    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t a = 0; a < lim; ++a)
        for (std::size_t b = 0; b < lim; ++b)
            if (FockBasis::total(B.state(a)) == FockBasis::total(B.state(b))) entries.emplace_back(a, b);

    Occupation op(grid.size(), 0), oq(grid.size(), 0);
    op[p] = 1;
    oq[q] = 1;
    auto rows = parallel_map(
        n,
        [&](std::size_t r) {
            const auto modes = sample_onshell_modes(grid, T, replica_stream(ctx.seed, r));
            const auto cpl = coupling_from_modes(modes, lam, grid);
            const cplx s00 = std::sqrt(s00_modulus_sq(cpl));
            const auto vp = final_state_particles(op, cpl, s00, tr);
            const auto vq = final_state_particles(oq, cpl, s00, tr);
            std::vector<double> row;
            for (const auto& [a, b] : entries) {
                const cplx v = vp.amp[a] * std::conj(vq.amp[b]);
                row.push_back(v.real());
                row.push_back(v.imag());
            }
            return row;
        },
        ctx.threads);

    CsvTable tab;
    tab.header = {"ket", "bra", "re_mc", "re_se", "im_mc", "im_se", "re_exact", "im_exact"};
    auto label = [&](std::size_t i) {
        std::string s;
        for (int v : B.state(i)) s += std::to_string(v);
        return s;
    };
    double worst = 0.0;
    std::string worst_name;
    std::vector<double> col(n);
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const auto [a, b] = entries[e];
        for (std::size_t r = 0; r < n; ++r) col[r] = rows[r][2 * e];
        const auto re = estimate_from_samples(col);
        for (std::size_t r = 0; r < n; ++r) col[r] = rows[r][2 * e + 1];
        const auto im = estimate_from_samples(col);
        const cplx ex = rho.entry(a, b);
        tab.add(label(a), label(b), re.mean, re.se(), im.mean, im.se(), ex.real(), ex.imag());
        for (const auto& t : {sigma_test("re", re, ex.real()), sigma_test("im", im, ex.imag())})
            if (t.statistic > worst) {
                worst = t.statistic;
                worst_name = label(a) + "|" + label(b);
            }
    }
    out.tables.emplace_back("offdiagonal", std::move(tab));
    TestReport rep;
    rep.name = "offdiagonal_entries";
    rep.kind = "sigma";
    rep.statistic = worst;
    rep.threshold = kSigmaThreshold;
    rep.pass = worst <= rep.threshold;
    ctx.check(out, rep);
    ctx.check(out, tolerance_test("equal_momentum_blocks", satisfies_equal_momentum(rho, static_cast<long>(p),
                                                                                     static_cast<long>(q))
                                                               ? 0.0
                                                               : 1.0,
                                  0.0));
    out.derived = detail::grid_constants(grid, lam, T);
    out.derived["worst_entry"] = worst_name;
    return out;
}

inline ExperimentOutput run_freefield_renorm(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const double m = c.number("m"), lp = c.number("lambda_p"), T = c.number("T"), V = c.number("V");
    const auto ladder = c.numbers("ladder");
    const int n_law = static_cast<int>(c.integer("n_law"));
    const RenormalizationScheme base{lp, m, m};
    const double mu = poisson_mean(base, T, V);
    const auto rungs = log_partition_ladder(lp, m, T, V, ladder);

    CsvTable lz;
    lz.header = {"cutoff_ratio", "lambda_bare", "lnZ", "lnZ_leading", "lnZ_limit", "ratio"};
    for (const auto& r : rungs) {
        const auto s = base.at_cutoff(r.cutoff_ratio * m);
        lz.add(r.cutoff_ratio, s.bare(), r.value, log_partition_leading(s, T, V), mu, r.ratio_to_limit);
    }
    out.tables.emplace_back("lnZ_ladder", std::move(lz));

    CsvTable law;
    law.header = {"cutoff_ratio", "n", "probability_cutoff", "probability_poisson", "relative_error"};
    const PoissonLaw P{mu};
    for (double r : ladder) {
        const auto s = base.at_cutoff(r * m);
        for (int k = 0; k <= n_law; ++k) {
            const double pc = vacuum_number_probability_cutoff(k, s, T, V), pp = P.pmf(k);
            law.add(r, k, pc, pp, std::abs(pc / pp - 1));
        }
    }
    out.tables.emplace_back("vacuum_law", std::move(law));

    const double check_r = c.number("check_ratio");
    const auto it = std::find_if(rungs.begin(), rungs.end(),
                                 [&](const LadderRung& r) { return std::abs(r.cutoff_ratio - check_r) < 1e-9 * check_r; });
    if (it == rungs.end()) throw ConfigError("check_ratio", "field 'check_ratio' is not a rung of the ladder");
    ctx.check(out, tolerance_test("lnZ_limit", std::abs(it->ratio_to_limit - 1), 0.01));
    const auto s_last = base.at_cutoff(ladder.back() * m);
    double worst = 0.0;
    for (int k = 0; k <= n_law; ++k)
        worst = std::max(worst, std::abs(vacuum_number_probability_cutoff(k, s_last, T, V) / P.pmf(k) - 1));
    ctx.check(out, tolerance_test("vacuum_law_poisson", worst, 0.01));
    out.derived = {{"mu", mu}, {"Z", std::exp(mu)}, {"V", V}};
    return out;
}

inline ExperimentOutput run_freefield_rates(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const double m = c.number("m"), lp = c.number("lambda_p"), T = c.number("T"), cut = c.number("cutoff");
    const auto nmax = static_cast<double>(c.integer("n_max"));
    const double L = kTwoPi * nmax / cut;
    const RenormalizationScheme s{lp, cut, m};
    const auto grid = MomentumGrid::enumerate(L, cut, m, T);
    const auto rates = generation_rates(s, grid);

    const std::size_t nb = std::max<std::size_t>(1, c.count("radial_bins"));
    std::vector<double> sum(nb, 0.0);
    std::vector<std::size_t> cnt(nb, 0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double pn = grid.momentum_norm(grid[i].n);
        const auto b = std::min(nb - 1, static_cast<std::size_t>(pn / cut * static_cast<double>(nb)));
        sum[b] += rates.per_mode[i] * grid.d3p();
        ++cnt[b];
    }
    const double pre = lp * lp * m * m * grid.V() / (2 * std::pow(kTwoPi, 3) * cut * cut);
    CsvTable tab;
    tab.header = {"p_center", "modes", "rate_riemann", "rate_integral"};
    for (std::size_t b = 0; b < nb; ++b) {
        const double lo = cut * static_cast<double>(b) / static_cast<double>(nb);
        const double hi = cut * static_cast<double>(b + 1) / static_cast<double>(nb);
        const double shell =
            pre * 4 * kPi * sqft::detail::integrate([&](double k) { return k * k / std::hypot(k, m); }, lo, hi);
        tab.add(0.5 * (lo + hi), cnt[b], sum[b], shell);
    }
    out.tables.emplace_back("rates_radial", std::move(tab));
    ctx.check(out, tolerance_test("rate_total", std::abs(rates.riemann_total / rates.limit_total - 1), 0.01));
    out.derived = {{"d3p", grid.d3p()},     {"dp0", grid.dp0()},
                   {"modes", grid.size()},  {"L", L},
                   {"V", grid.V()},         {"riemann_total", rates.riemann_total},
                   {"cutoff_total", rates.cutoff_total}, {"limit_total", rates.limit_total},
                   {"mu", poisson_mean(s, T, grid.V())}};
    return out;
}

namespace detail {

/// Momentum lists for the Wick comparison: every multiset of length 2 and 4 over a
/// small symmetric set containing off-shell and on-shell points.
inline std::vector<std::vector<LatticeMomentum>> wick_lists(const SpacetimeLattice& lat, double m)
{
    const PairingKernel probe(lat, 1.0, m);
    LatticeMomentum on{0, 1, 0, 0};
    on[0] = onshell_frequency_bin(lat, probe.energy(on));
    const LatticeMomentum off{0, 0, 1, 0};
    std::vector<LatticeMomentum> base{on, {-on[0], -on[1], -on[2], -on[3]}, off, {0, 0, -1, 0}};
    std::vector<std::vector<LatticeMomentum>> out;
    const int nb = static_cast<int>(base.size());
    for (int a = 0; a < nb; ++a)
        for (int b = a; b < nb; ++b) {
            out.push_back({base[static_cast<std::size_t>(a)], base[static_cast<std::size_t>(b)]});
            for (int cc = b; cc < nb; ++cc)
                for (int d = cc; d < nb; ++d)
                    out.push_back({base[static_cast<std::size_t>(a)], base[static_cast<std::size_t>(b)],
                                   base[static_cast<std::size_t>(cc)], base[static_cast<std::size_t>(d)]});
        }
    return out;
}

inline std::string momentum_label(const std::vector<LatticeMomentum>& ps)
{
    std::string s;
    for (const auto& p : ps) {
        if (!s.empty()) s += ' ';
        s += "(" + std::to_string(p[0]) + ";" + std::to_string(p[1]) + ";" + std::to_string(p[2]) + ";" +
             std::to_string(p[3]) + ")";
    }
    return s;
}

}  // namespace detail

struct WickComparison {
    std::vector<std::vector<LatticeMomentum>> lists;
    std::vector<double> exact;
    std::vector<Estimate> re, im;
};

/// E[|S00|^2 W(p1)...W(pn)] by sampling against the pairing sum, on a full 4D lattice.
inline WickComparison wick_vs_sampling(const SpacetimeLattice& lat, double lambda, double m, std::size_t n_draws,
                                       std::uint64_t seed, unsigned threads,
                                       std::vector<std::vector<LatticeMomentum>> lists = {})
{
    if (lists.empty()) lists = detail::wick_lists(lat, m);
    const PairingKernel e(lat, lambda, m);
    const auto grid = grid_from_lattice(lat, m);
    WickComparison w;
    w.lists = lists;
    for (const auto& l : lists) w.exact.push_back(wick_expectation(l, e));
    auto rows = parallel_map(
        n_draws,
        [&](std::size_t r) {
            const auto noise = sample_spacetime_noise(lat, replica_stream(seed, r));
            const auto modes = fourier_modes(noise);
            const double weight = s00_modulus_sq(coupling_from_modes(onshell_restriction(modes, grid), lambda, grid));
            std::vector<double> row;
            for (const auto& l : lists) {
                cplx prod = weight;
                for (const auto& p : l) prod *= modes.W[lat.momentum_index(p)];
                row.push_back(prod.real());
                row.push_back(prod.imag());
            }
            return row;
        },
        threads);
    std::vector<double> col(n_draws);
    for (std::size_t k = 0; k < lists.size(); ++k) {
        for (std::size_t r = 0; r < n_draws; ++r) col[r] = rows[r][2 * k];
        w.re.push_back(estimate_from_samples(col));
        for (std::size_t r = 0; r < n_draws; ++r) col[r] = rows[r][2 * k + 1];
        w.im.push_back(estimate_from_samples(col));
    }
    return w;
}

inline ExperimentOutput run_phi4_collide(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const double m = c.number("m"), g = c.number("g"), lp = c.number("lambda_p"), T = c.number("T");
    const auto grid = detail::explicit_grid(c);
    Phi4Config cfg;
    cfg.g = g;
    cfg.scheme = {lp, c.number("cutoff"), m};
    cfg.T = T;
    cfg.V = grid.V();
    cfg.validate();
    const double invZ = 1.0 / renormalized_partition(cfg.scheme, T, cfg.V);
    const auto S = tree_level_provider(grid, g);

    CsvTable blk;
    blk.header = {"p1", "p2", "pp1", "pp2", "qq1", "qq2", "re", "im", "re_lambda0", "im_lambda0", "inv_Z"};
    double worst = 0.0;
    const std::size_t K = grid.size();
    for (std::size_t p1 = 0; p1 < K; ++p1)
        for (std::size_t p2 = p1; p2 < K; ++p2)
            for (std::size_t a = 0; a < K; ++a)
                for (std::size_t b = a; b < K; ++b)
                    for (std::size_t cc = 0; cc < K; ++cc)
                        for (std::size_t d = cc; d < K; ++d) {
                            if (!equal_momentum_check_g({a, b}, {cc, d}, grid)) continue;
                            const cplx v = rho_two_particle_block(p1, p2, {a, b}, {cc, d}, cfg, S);
                            const cplx v0 = S(p1, p2, a, b) * std::conj(S(p1, p2, cc, d));
                            worst = std::max(worst, std::abs(v - invZ * v0) / std::max(1e-300, std::abs(invZ * v0)));
                            blk.add(p1, p2, a, b, cc, d, v.real(), v.imag(), v0.real(), v0.imag(), invZ);
                        }
    out.tables.emplace_back("two_particle_block", std::move(blk));
    ctx.check(out, tolerance_test("block_factorization", worst, 1e-12));

    const double E0 = grid[0].E;
    const auto rows = dot_factor_ladder(lp, m, T, E0, c.numbers("ladder"));
    CsvTable lad;
    lad.header = {"cutoff_ratio", "internal", "mixed", "dressed"};
    for (const auto& r : rows) lad.add(r.cutoff_ratio, r.internal, r.mixed, r.dressed);
    out.tables.emplace_back("dot_ladder", std::move(lad));
    const double bound = c.number("ladder_ratio");
    ctx.check(out, tolerance_test("dot_internal_ladder", rows.back().internal / rows.front().internal, bound));
    ctx.check(out, tolerance_test("dot_mixed_ladder", rows.back().mixed / rows.front().mixed, bound));
    ctx.check(out, tolerance_test("dot_dressed_ladder", rows.back().dressed / rows.front().dressed, bound));

    const auto ln = c.count("lattice_n");
    const auto lat = SpacetimeLattice::cube(ln, T, c.number("lattice_L"));
    const auto wc = wick_vs_sampling(lat, c.number("lattice_lambda"), m, c.count("n_draws"), ctx.seed, ctx.threads);
    CsvTable wt;
    wt.header = {"momenta", "wick", "re_mc", "re_se", "im_mc", "im_se", "sigma"};
    double wworst = 0.0;
    for (std::size_t k = 0; k < wc.lists.size(); ++k) {
        const double s = std::max(sigma_test("re", wc.re[k], wc.exact[k]).statistic,
                                  sigma_test("im", wc.im[k], 0.0).statistic);
        wworst = std::max(wworst, s);
        wt.add(detail::momentum_label(wc.lists[k]), wc.exact[k], wc.re[k].mean, wc.re[k].se(), wc.im[k].mean,
               wc.im[k].se(), s);
    }
    out.tables.emplace_back("wick_vs_mc", std::move(wt));
    TestReport wr;
    wr.name = "wick_sampling";
    wr.kind = "sigma";
    wr.statistic = wworst;
    wr.threshold = kSigmaThreshold;
    wr.pass = wworst <= kSigmaThreshold;
    ctx.check(out, wr);

    out.derived = {{"d3p", grid.d3p()},
                   {"dp0", grid.dp0()},
                   {"mu", poisson_mean(cfg.scheme, T, cfg.V)},
                   {"Z", 1.0 / invZ},
                   {"lambda_bare", cfg.lambda()},
                   {"lattice_Z", std::exp(PairingKernel(lat, c.number("lattice_lambda"), m).log_partition())}};
    return out;
}

inline ExperimentOutput run_noise_selftest(const RunContext& ctx)
{
    const auto& c = ctx.cfg;
    ExperimentOutput out;
    const auto ln = c.count("lattice_n");
    const auto lat = SpacetimeLattice::cube(ln, c.number("T"), c.number("L"));
    const std::size_t n = c.count("n_draws");
    if (n < 30) throw ConfigError("n_draws", "field 'n_draws' must be at least 30");
    if (ln % 2) throw ConfigError("lattice_n", "field 'lattice_n' must be even for the coarse-grain test");
    const LatticeMomentum probe{1, 1, 0, 0};
    const std::size_t pi = lat.momentum_index(probe);
    const auto fine = SpacetimeLattice{2 * lat.Nt, 2 * lat.Nx, 2 * lat.Ny, 2 * lat.Nz, lat.T, lat.L};

    struct Row {
        double reW, parseval, coarse, direct;
    };
    auto rows = parallel_map(
        n,
        [&](std::size_t r) {
            const Stream st = replica_stream(ctx.seed, r);
            const auto f = sample_spacetime_noise(lat, st.child("field"));
            const auto modes = fourier_modes(f);
            const auto cg = coarse_grain(sample_spacetime_noise(fine, st.child("fine")), 2);
            return Row{modes.W[pi].real(), parseval_residual(f, modes), cg.values[0], f.values[0]};
        },
        ctx.threads);

    std::vector<double> re(n), sq(n), coarse(n), direct(n);
    double pars = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        re[r] = rows[r].reW;
        sq[r] = rows[r].reW * rows[r].reW;
        coarse[r] = rows[r].coarse;
        direct[r] = rows[r].direct;
        pars = std::max(pars, rows[r].parseval);
    }
    const double TV = lat.T * lat.V();
    const auto var = estimate_from_samples(sq);
    ctx.check(out, sigma_test("mode_variance", var, TV));
    ctx.check(out, tolerance_test("parseval", pars, 1e-10));
    ctx.check(out, ks_two_sample(coarse, direct, "coarse_grain_ks"));

    const double dt = c.number("dt"), win = c.number("window"), shift = c.number("shift");
    const auto ws = static_cast<std::size_t>(std::llround(win / dt));
    const auto sh = static_cast<std::size_t>(std::llround(shift / dt));
    const std::size_t np = c.count("n_paths");
    if (np < 30) throw ConfigError("n_paths", "field 'n_paths' must be at least 30");
    const double lam = c.number("lambda"), mm = c.number("m");
    auto acts = parallel_map(
        np,
        [&](std::size_t r) {
            const Stream st = replica_stream(ctx.seed, r).child("window");
            const auto Wa = sample_wiener(ws + sh, dt, st.child("a"));
            const auto Wb = sample_wiener(ws + sh, dt, st.child("b"));
            const auto wa = Wa.window(0, ws), wb = Wb.window(sh, ws);
            return std::pair{classical_action_free(0.0, 1.0, wa.t0, wa.t_end(), wa, mm, lam),
                             classical_action_free(0.0, 1.0, wb.t0, wb.t_end(), wb, mm, lam)};
        },
        ctx.threads);
    std::vector<double> a(np), b(np);
    for (std::size_t r = 0; r < np; ++r) std::tie(a[r], b[r]) = acts[r];
    ctx.check(out, ks_two_sample(a, b, "window_shift_ks"));

    CsvTable tab;
    tab.header = {"quantity", "value", "reference"};
    tab.add(std::string("var_re_W"), var.mean, TV);
    tab.add(std::string("var_re_W_se"), var.se(), 0.0);
    tab.add(std::string("parseval_max_residual"), pars, 0.0);
    tab.add(std::string("coarse_site_var"), estimate_from_samples([&] {
                std::vector<double> v(n);
                for (std::size_t r = 0; r < n; ++r) v[r] = coarse[r] * coarse[r];
                return v;
            }()).mean,
            lat.d4x());
    out.tables.emplace_back("noise_stats", std::move(tab));
    out.derived = {{"TV", TV}, {"d4x", lat.d4x()}, {"d4p", lat.d4p()}, {"dp0", lat.dp0()}, {"d3p", lat.d3p()}};
    return out;
}

using Runner = std::function<ExperimentOutput(const RunContext&)>;

inline const std::map<std::string, Runner>& runners()
{
    static const std::map<std::string, Runner> r{
        {"oscillator", run_oscillator},         {"freefield.vacuum", run_freefield_vacuum},
        {"freefield.single", run_freefield_single}, {"freefield.offdiag", run_freefield_offdiag},
        {"freefield.renorm", run_freefield_renorm}, {"freefield.rates", run_freefield_rates},
        {"phi4.collide", run_phi4_collide},     {"noise.selftest", run_noise_selftest}};
    return r;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunOptions {
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    bool strict = false;
    std::optional<fs::path> output_dir;  ///< overrides config and environment
};

struct RunResult {
    int exit_code = kExitPass;
    fs::path output_dir;
    std::vector<TestReport> failures;
    std::string message;
    json manifest;
};

/// Exclusive lock file, removed on destruction.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / ".sqft.lock")
    {
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) throw ConfigError("output_dir", "output directory " + dir.string() + " is locked by another run");
        std::fprintf(f, "%s\n", utc_timestamp().c_str());
        std::fclose(f);
    }
    ~OutputLock()
    {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
};

inline fs::path resolve_output_dir(const ExperimentConfig& cfg, const RunOptions& opt, const fs::path& config_path)
{
    if (opt.output_dir) return *opt.output_dir;
    if (cfg.output_dir) {
        if (cfg.output_dir->is_absolute()) return *cfg.output_dir;
        return config_path.parent_path() / *cfg.output_dir;
    }
    const char* root = std::getenv("SQFT_OUTPUT_ROOT");
    const fs::path base = root && *root ? fs::path(root) : fs::path("sqft-out");
    return base / cfg.experiment;
}

inline RunResult run(const fs::path& config_path, const RunOptions& opt = {})
{
    RunResult res;
    std::string text;
    ExperimentConfig cfg;
    try {
        text = read_file(config_path);
        cfg = parse_config(text, opt.strict);
    } catch (const ConfigError& e) {
        res.exit_code = kExitConfig;
        res.message = std::string("config error [") + e.field() + "]: " + e.what();
        return res;
    }
    if (opt.seed) cfg.seed = *opt.seed;
    res.output_dir = resolve_output_dir(cfg, opt, config_path);
    std::error_code ec;
    fs::create_directories(res.output_dir, ec);
    if (ec) {
        res.exit_code = kExitConfig;
        res.message = "config error [output_dir]: cannot create " + res.output_dir.string();
        return res;
    }
    std::optional<OutputLock> lock;
    try {
        lock.emplace(res.output_dir);
    } catch (const ConfigError& e) {
        res.exit_code = kExitConfig;
        res.message = std::string("config error [") + e.field() + "]: " + e.what();
        return res;
    }

    const fs::path manifest_path = res.output_dir / "manifest.json";
    json man{{"experiment", cfg.experiment},
             {"config_path", config_path.string()},
             {"config_hash", sha256_hex(text)},
             {"code_version", SQFT_VERSION},
             {"seed", cfg.seed},
             {"threads", opt.threads},
             {"strict", opt.strict},
             {"parameters", cfg.params},
             {"warnings", cfg.warnings},
             {"started_at", utc_timestamp()},
             {"status", "running"}};
    write_file(manifest_path, man.dump(2) + "\n");

    ExperimentOutput out;
    try {
        const RunContext ctx{cfg, cfg.seed, opt.threads};
        out = runners().at(cfg.experiment)(ctx);
    } catch (const ConfigError& e) {
        res.exit_code = kExitConfig;
        res.message = std::string("config error [") + e.field() + "]: " + e.what();
    } catch (const InvalidParameter& e) {
        res.exit_code = kExitConfig;
        res.message = std::string("invalid parameter: ") + e.what();
    } catch (const Error& e) {
        res.exit_code = kExitCheck;
        res.message = std::string("numerical failure: ") + e.what();
        TestReport r;
        r.name = "run";
        r.kind = "error";
        r.pass = false;
        out.checks.push_back(r);
    }

    json files = json::array();
    auto emit = [&](const std::string& name, const std::string& data) {
        write_file(res.output_dir / name, data);
        files.push_back({{"path", name}, {"sha256", sha256_hex(data)}, {"bytes", data.size()}});
    };
    for (const auto& [name, table] : out.tables) {
        emit(name + ".csv", table.str());
        emit("plot_" + name + ".py", plot_script(name + ".csv", cfg.experiment + ": " + name));
    }
    json checks = json::array();
    for (const auto& r : out.checks) {
        checks.push_back(r.to_json());
        if (!r.pass) res.failures.push_back(r);
    }
    if (res.exit_code == kExitPass && !res.failures.empty()) res.exit_code = kExitCheck;
    const std::string status = res.exit_code == kExitPass ? "pass" : res.exit_code == kExitCheck ? "fail" : "error";
    emit("summary.json", json{{"experiment", cfg.experiment}, {"seed", cfg.seed}, {"status", status},
                              {"checks", checks}, {"derived", out.derived}}
                             .dump(2) +
                             "\n");
    man["derived"] = out.derived;
    man["checks"] = checks;
    man["files"] = files;
    man["finished_at"] = utc_timestamp();
    man["status"] = status;
    if (!res.message.empty()) man["message"] = res.message;
    write_file(manifest_path, man.dump(2) + "\n");
    res.manifest = std::move(man);
    return res;
}

struct SelftestResult {
    bool pass = true;
    std::vector<TestReport> reports;
};

/// Fast internal consistency checks that need no config.
inline SelftestResult selftest(std::uint64_t seed = 20261015)
{
    SelftestResult s;
    auto add = [&](TestReport r) {
        s.pass = s.pass && r.pass;
        s.reports.push_back(std::move(r));
    };
    add(tolerance_test("tridiagonal_det", static_cast<double>(std::abs(tridiagonal_det(1000) - 1000)), 0.0));
    const auto lat = SpacetimeLattice::cube(4, 1.0, 1.0);
    const auto f = sample_spacetime_noise(lat, seed);
    add(tolerance_test("parseval", parseval_residual(f, fourier_modes(f)), 1e-10));
    const auto c = contraction_counts(4);
    add(tolerance_test("contraction_counts", std::abs(c[0] - 1.0) + std::abs(c[1] - 6.0) + std::abs(c[2] - 3.0), 0.0));
    const auto grid = MomentumGrid::enumerate(kTwoPi, 1.0, 1.0, 1.0);
    const Truncation tr{6, 6, 1e-6};
    const auto rho = density_vacuum(grid, 0.2, 1.0, tr);
    add(tolerance_test("vacuum_trace", std::abs(rho.trace().real() + rho.truncated_mass - 1.0), 1e-9));
    const RenormalizationScheme sc{1.0, 100.0, 1.0};
    add(tolerance_test("lnZ_limit", std::abs(cutoff_log_partition(sc, 1.0, 79.0) / poisson_mean(sc, 1.0, 79.0) - 1),
                       0.01));
    return s;
}

}  // namespace sqft::cli
