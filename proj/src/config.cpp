#include "chiplet/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "chiplet/errors.hpp"
#include "json.hpp"

namespace chiplet {

namespace {

using json = nlohmann::ordered_json;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be reported as unknown.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "must be a JSON object");
    }

    // Rejects keys that no accessor asked for.
    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(join(path_, key), "unknown key");
        }
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string field(const std::string& key) const { return join(path_, key); }

    void number(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(field(key), "must be a number");
            out = v->get<double>();
            if (!std::isfinite(out)) throw ConfigError(field(key), "must be finite");
        }
    }

    template <typename Int>
    void integer(const std::string& key, Int& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) throw ConfigError(field(key), "must be an integer");
            if constexpr (std::is_unsigned_v<Int>) {
                if (!v->is_number_unsigned()) throw ConfigError(field(key), "must be a nonnegative integer");
                out = v->get<Int>();
            } else {
                const auto wide = v->get<long long>();
                if (wide < std::numeric_limits<Int>::min() || wide > std::numeric_limits<Int>::max()) {
                    throw ConfigError(field(key), "is out of range");
                }
                out = static_cast<Int>(wide);
            }
        }
    }

    void string(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(field(key), "must be a string");
            out = v->get<std::string>();
        }
    }

    void numbers(const std::string& key, std::vector<double>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw ConfigError(field(key), "must be an array of numbers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number()) throw ConfigError(field(key), "must be an array of numbers");
                out.push_back(e.get<double>());
            }
        }
    }

    void integers(const std::string& key, std::vector<int>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw ConfigError(field(key), "must be an array of integers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number_integer()) throw ConfigError(field(key), "must be an array of integers");
                out.push_back(e.get<int>());
            }
        }
    }

    // Sub-object (empty when absent).
    const json& object(const std::string& key) {
        static const json empty = json::object();
        const json* v = find(key);
        return v ? *v : empty;
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_capacitance(const json& j, const std::string& path, CapacitanceConfig& c) {
    Reader r(j, path);
    r.integer("terms", c.terms);
    r.integer("seed", c.seed);
    r.numbers("amplitudes", c.amplitudes);
    r.numbers("length_scales", c.length_scales);
    r.finish();
}

RunConfig from_json(const json& root) {
    RunConfig cfg;
    Reader r(root, "");
    {
        Reader d(r.object("domain"), "domain");
        d.number("x_min", cfg.x_min);
        d.number("x_max", cfg.x_max);
        d.number("y_min", cfg.y_min);
        d.number("y_max", cfg.y_max);
        d.finish();
    }
    {
        Reader g(r.object("grid"), "grid");
        g.integer("nx", cfg.nx);
        g.integer("ny", cfg.ny);
        g.finish();
    }
    if (const json* b = r.find("beta")) {
        if (b->is_string() && b->get<std::string>() == "inf") {
            cfg.beta = std::numeric_limits<double>::infinity();
        } else if (b->is_number()) {
            cfg.beta = b->get<double>();
        } else {
            throw ConfigError("beta", "must be a positive number or \"inf\"");
        }
    }
    if (const json* s = r.find("scheme")) {
        if (!s->is_string()) throw ConfigError("scheme", "must be a string");
        cfg.scheme = parse_scheme(s->get<std::string>());
    }
    {
        Reader f(r.object("flow"), "flow");
        f.number("tau", cfg.tau);
        f.number("dt", cfg.dt);
        f.integer("steps", cfg.steps);
        f.number("eps", cfg.jko_eps);
        f.number("tol", cfg.jko_tol);
        f.integer("max_iter", cfg.jko_max_iter);
        f.integer("snapshot_every", cfg.snapshot_every);
        f.finish();
    }
    {
        Reader c(r.object("control"), "control");
        c.number("kx", cfg.control.kx);
        c.number("ky", cfg.control.ky);
        c.number("u_min", cfg.control.u_min);
        c.number("u_max", cfg.control.u_max);
        c.number("offset", cfg.control.offset);
        c.finish();
    }
    {
        Reader c(r.object("capacitance"), "capacitance");
        c.number("delta", cfg.delta);
        read_capacitance(c.object("chiplet_chiplet"), "capacitance.chiplet_chiplet", cfg.cc);
        read_capacitance(c.object("chiplet_electrode"), "capacitance.chiplet_electrode", cfg.ce);
        c.finish();
    }
    {
        Reader i(r.object("initial"), "initial");
        std::vector<double> mean{cfg.initial.mean.x, cfg.initial.mean.y};
        i.numbers("mean", mean);
        if (mean.size() != 2) throw ConfigError("initial.mean", "must have two entries");
        cfg.initial.mean = {mean[0], mean[1]};
        if (const json* cov = i.find("cov")) {
            const bool ok = cov->is_array() && cov->size() == 2 && (*cov)[0].is_array() && (*cov)[1].is_array() &&
                            (*cov)[0].size() == 2 && (*cov)[1].size() == 2 && (*cov)[0][0].is_number() &&
                            (*cov)[0][1].is_number() && (*cov)[1][0].is_number() && (*cov)[1][1].is_number();
            if (!ok) throw ConfigError("initial.cov", "must be a 2x2 array of numbers");
            const double c01 = (*cov)[0][1].get<double>();
            const double c10 = (*cov)[1][0].get<double>();
            if (c01 != c10) throw ConfigError("initial.cov", "must be symmetric");
            cfg.initial.cxx = (*cov)[0][0].get<double>();
            cfg.initial.cxy = c01;
            cfg.initial.cyy = (*cov)[1][1].get<double>();
        }
        i.finish();
    }
    {
        Reader p(r.object("particles"), "particles");
        p.integer("n", cfg.particles_n);
        p.number("dt", cfg.particles_dt);
        p.integer("steps", cfg.particles_steps);
        std::string mode = cfg.drift_mode == DriftMode::MeanField ? "meanfield" : "empirical";
        p.string("drift_mode", mode);
        if (mode == "meanfield") {
            cfg.drift_mode = DriftMode::MeanField;
        } else if (mode == "empirical") {
            cfg.drift_mode = DriftMode::Empirical;
        } else {
            throw ConfigError("particles.drift_mode", "must be \"meanfield\" or \"empirical\"");
        }
        p.number("fd_step", cfg.fd_step);
        p.integers("n_sweep", cfg.n_sweep);
        p.integer("seeds", cfg.seeds);
        p.integer("record_every", cfg.record_every);
        p.number("metric_eps", cfg.metric_eps);
        p.finish();
    }
    r.integer("seed", cfg.seed);
    r.string("output", cfg.output);
    r.finish();
    cfg.validate();
    return cfg;
}

void check_capacitance(const CapacitanceConfig& c, const std::string& path) {
    if (c.terms < 1) throw ConfigError(path + ".terms", "must be at least 1");
    const bool explicit_terms = !c.amplitudes.empty() || !c.length_scales.empty();
    if (!explicit_terms) return;
    if (c.amplitudes.size() != static_cast<std::size_t>(c.terms)) {
        throw ConfigError(path + ".amplitudes", "must list exactly `terms` values");
    }
    if (c.length_scales.size() != static_cast<std::size_t>(c.terms)) {
        throw ConfigError(path + ".length_scales", "must list exactly `terms` values");
    }
    bool any_positive = false;
    for (double a : c.amplitudes) {
        if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError(path + ".amplitudes", "must be nonnegative");
        any_positive = any_positive || a > 0.0;
    }
    if (!any_positive) throw ConfigError(path + ".amplitudes", "needs at least one positive value");
    for (double s : c.length_scales) {
        if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError(path + ".length_scales", "must be positive");
    }
}

CapacitanceModel build_capacitance(const CapacitanceConfig& c, double delta, CouplingRole role) {
    if (c.amplitudes.empty()) return CapacitanceModel::sample(c.terms, delta, role, c.seed);
    std::vector<CapacitanceTerm> terms;
    for (std::size_t i = 0; i < c.amplitudes.size(); ++i) terms.push_back({c.amplitudes[i], c.length_scales[i]});
    return CapacitanceModel(std::move(terms), delta, role);
}

json capacitance_json(const CapacitanceConfig& c) {
    json j;
    j["terms"] = c.terms;
    j["seed"] = c.seed;
    j["amplitudes"] = c.amplitudes;
    j["length_scales"] = c.length_scales;
    return j;
}

}  // namespace

Grid2D RunConfig::grid() const { return Grid2D(x_min, x_max, y_min, y_max, nx, ny); }

CapacitanceModel RunConfig::ccap() const { return build_capacitance(cc, delta, CouplingRole::ChipletChiplet); }

CapacitanceModel RunConfig::ecap() const { return build_capacitance(ce, delta, CouplingRole::ChipletElectrode); }

std::shared_ptr<const InteractionKernels> RunConfig::kernels() const {
    return std::make_shared<const InteractionKernels>(grid(), ccap(), ecap());
}

void RunConfig::validate() const {
    if (!(x_min < x_max)) throw ConfigError("domain.x_max", "must exceed domain.x_min");
    if (!(y_min < y_max)) throw ConfigError("domain.y_max", "must exceed domain.y_min");
    if (nx < 3) throw ConfigError("grid.nx", "must be at least 3");
    if (ny < 3) throw ConfigError("grid.ny", "must be at least 3");
    if (!(beta > 0.0)) throw ConfigError("beta", "must be positive");
    if (!(tau > 0.0)) throw ConfigError("flow.tau", "must be positive");
    if (!(dt >= 0.0)) throw ConfigError("flow.dt", "must be nonnegative (0 selects a stable step)");
    if (steps < 0) throw ConfigError("flow.steps", "must be nonnegative");
    if (!(jko_eps >= 0.0)) throw ConfigError("flow.eps", "must be nonnegative (0 selects the default)");
    if (!(jko_tol > 0.0)) throw ConfigError("flow.tol", "must be positive");
    if (jko_max_iter < 1) throw ConfigError("flow.max_iter", "must be at least 1");
    if (snapshot_every < 1) throw ConfigError("flow.snapshot_every", "must be at least 1");
    if (!(control.u_min < control.u_max)) throw ConfigError("control.u_max", "must exceed control.u_min");
    if (!(delta > 0.0)) throw ConfigError("capacitance.delta", "must be positive");
    check_capacitance(cc, "capacitance.chiplet_chiplet");
    check_capacitance(ce, "capacitance.chiplet_electrode");
    try {
        initial.validate();
    } catch (const ValidationError& e) {
        throw ConfigError("initial.cov", e.what());
    }
    if (particles_n < 1) throw ConfigError("particles.n", "must be at least 1");
    if (!(particles_dt > 0.0)) throw ConfigError("particles.dt", "must be positive");
    if (particles_steps < 0) throw ConfigError("particles.steps", "must be nonnegative");
    if (!(fd_step > 0.0)) throw ConfigError("particles.fd_step", "must be positive");
    for (int n : n_sweep)
        if (n < 1) throw ConfigError("particles.n_sweep", "entries must be at least 1");
    if (seeds < 1) throw ConfigError("particles.seeds", "must be at least 1");
    if (record_every < 1) throw ConfigError("particles.record_every", "must be at least 1");
    if (!(metric_eps >= 0.0)) throw ConfigError("particles.metric_eps", "must be nonnegative (0 selects h^2/4)");
    if (output.empty()) throw ConfigError("output", "must not be empty");
}

RunConfig parse_config_text(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    if (root.is_object() && root.contains("resolved_config")) return from_json(root["resolved_config"]);
    return from_json(root);
}

RunConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_json(const RunConfig& cfg, int indent) {
    json j;
    j["domain"] = {{"x_min", cfg.x_min}, {"x_max", cfg.x_max}, {"y_min", cfg.y_min}, {"y_max", cfg.y_max}};
    j["grid"] = {{"nx", cfg.nx}, {"ny", cfg.ny}};
    if (std::isinf(cfg.beta)) {
        j["beta"] = "inf";
    } else {
        j["beta"] = cfg.beta;
    }
    j["scheme"] = to_string(cfg.scheme);
    j["flow"] = {{"tau", cfg.tau},           {"dt", cfg.dt},       {"steps", cfg.steps},
                 {"eps", cfg.jko_eps},       {"tol", cfg.jko_tol}, {"max_iter", cfg.jko_max_iter},
                 {"snapshot_every", cfg.snapshot_every}};
    j["control"] = {{"kx", cfg.control.kx},
                    {"ky", cfg.control.ky},
                    {"u_min", cfg.control.u_min},
                    {"u_max", cfg.control.u_max},
                    {"offset", cfg.control.offset}};
    j["capacitance"] = {{"delta", cfg.delta},
                        {"chiplet_chiplet", capacitance_json(cfg.cc)},
                        {"chiplet_electrode", capacitance_json(cfg.ce)}};
    j["initial"] = {{"mean", {cfg.initial.mean.x, cfg.initial.mean.y}},
                    {"cov", {{cfg.initial.cxx, cfg.initial.cxy}, {cfg.initial.cxy, cfg.initial.cyy}}}};
    j["particles"] = {{"n", cfg.particles_n},
                      {"dt", cfg.particles_dt},
                      {"steps", cfg.particles_steps},
                      {"drift_mode", cfg.drift_mode == DriftMode::MeanField ? "meanfield" : "empirical"},
                      {"fd_step", cfg.fd_step},
                      {"n_sweep", cfg.n_sweep},
                      {"seeds", cfg.seeds},
                      {"record_every", cfg.record_every},
                      {"metric_eps", cfg.metric_eps}};
    j["seed"] = cfg.seed;
    j["output"] = cfg.output;
    return j.dump(indent);
}

}  // namespace chiplet
