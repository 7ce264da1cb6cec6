#include "chiplet/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "chiplet/errors.hpp"
#include "chiplet/io.hpp"
#include "chiplet/meanfield.hpp"
#include "chiplet/parallel.hpp"
#include "chiplet/validate.hpp"
#include "json.hpp"

#ifndef CHIPLET_VERSION
#define CHIPLET_VERSION "0.0.0"
#endif

namespace chiplet {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-256 unavailable");
    }
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return hex.str();
}

namespace {

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Output directory bookkeeping: registers every artifact so the manifest can
// list it with its checksum.
class RunOutput {
public:
    RunOutput(fs::path dir, std::string command, std::optional<RunConfig> cfg)
        : dir_(std::move(dir)), command_(std::move(command)), cfg_(std::move(cfg)), started_(utc_now()) {
        fs::create_directories(dir_);
    }

    std::ofstream open(const std::string& name) {
        files_.push_back(name);
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
        return out;
    }

    json& derived() { return derived_; }

    void error(const std::string& kind, const std::string& message, json extra = json::object()) {
        std::cerr << "meanfield " << command_ << ": " << message << '\n';
        json j{{"kind", kind}, {"message", message}};
        for (auto& [k, v] : extra.items()) j[k] = v;
        auto out = open("error.json");
        out << j.dump(2) << '\n';
    }

    void write_manifest(int exit_code) {
        json m;
        m["tool"] = "meanfield";
        m["version"] = CHIPLET_VERSION;
        m["command"] = command_;
        m["started_utc"] = started_;
        m["finished_utc"] = utc_now();
        m["exit_code"] = exit_code;
        m["threads"] = configure_threads();
        if (cfg_) {
            m["seeds"] = {{"master", cfg_->seed},
                          {"chiplet_chiplet_capacitance", cfg_->cc.seed},
                          {"chiplet_electrode_capacitance", cfg_->ce.seed}};
            m["resolved_config"] = json::parse(config_to_json(*cfg_));
        }
        if (cfg_) {
            auto terms = [](const CapacitanceModel& model) {
                json arr = json::array();
                for (const auto& t : model.terms())
                    arr.push_back({{"amplitude", t.amplitude}, {"length_scale", t.length_scale}});
                return arr;
            };
            derived_["capacitance_terms"] = {{"chiplet_chiplet", terms(cfg_->ccap())},
                                             {"chiplet_electrode", terms(cfg_->ecap())}};
        }
        m["derived"] = derived_;
        json files = json::array();
        for (const auto& name : files_) {
            const fs::path p = dir_ / name;
            if (!fs::exists(p)) continue;
            files.push_back({{"path", name}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}});
        }
        m["files"] = std::move(files);
        std::ofstream out(dir_ / "manifest.json", std::ios::binary);
        out << m.dump(2) << '\n';
    }

private:
    fs::path dir_;
    std::string command_;
    std::optional<RunConfig> cfg_;
    std::string started_;
    json derived_ = json::object();
    std::vector<std::string> files_;
};

template <typename Body>
int guarded(RunOutput& out, Body&& body) {
    int code = kExitFailure;
    try {
        code = body();
    } catch (const ConfigError& e) {
        out.error("config", e.what(), {{"field", e.field()}});
        code = kExitConfig;
    } catch (const ValidationError& e) {
        out.error("validation", e.what());
        code = kExitConfig;
    } catch (const ConvergenceError& e) {
        out.error("convergence", e.what(), {{"residual", e.residual()}, {"iterations", e.iterations()}});
        code = kExitNonConvergence;
    } catch (const NumericalBlowup& e) {
        out.error("numerical_blowup", e.what(), {{"particle", e.particle()}});
        code = kExitNonConvergence;
    } catch (const CapacityError& e) {
        out.error("capacity", e.what());
        code = kExitNonConvergence;
    } catch (const std::exception& e) {
        out.error("internal", e.what());
        code = kExitFailure;
    }
    out.write_manifest(code);
    return code;
}

std::string step_name(const std::string& prefix, std::size_t k, const std::string& ext) {
    std::ostringstream s;
    s << prefix << std::setw(6) << std::setfill('0') << k << ext;
    return s.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int cmd_flow(const RunConfig& cfg) {
    RunOutput out(cfg.output, "flow", cfg);
    return guarded(out, [&] {
        cfg.validate();
        const Grid2D grid = cfg.grid();
        const auto kernels = cfg.kernels();
        const DensityField rho0 = project_on_nodes(grid, cfg.initial);
        double step = cfg.tau;
        if (cfg.scheme == Scheme::ExplicitFd) {
            const InteractionContext ctx0(kernels, rho0, cfg.control, 0.0);
            step = cfg.dt > 0.0 ? cfg.dt : 0.5 * explicit_stable_dt(ctx0, cfg.beta);
            out.derived()["dt"] = step;
            out.derived()["stable_dt_at_start"] = explicit_stable_dt(ctx0, cfg.beta);
        } else {
            const double eps = cfg.jko_eps > 0.0 ? cfg.jko_eps : default_jko_eps(grid, cfg.beta, cfg.tau);
            out.derived()["tau"] = step;
            out.derived()["jko_eps"] = eps;
            out.derived()["jko_inner_diffusion"] = jko_inner_diffusion(grid, cfg.beta, cfg.tau, eps, true);
        }
        FlowOptions opts;
        opts.jko.eps = cfg.jko_eps;
        opts.jko.tol = cfg.jko_tol;
        opts.jko.max_iter = cfg.jko_max_iter;
        const auto steps = static_cast<std::size_t>(cfg.steps);
        const FlowState state =
            run_flow(rho0, kernels, cfg.control, cfg.beta, cfg.scheme, step, steps, opts,
                     [&](std::size_t k, const FlowState& s) {
                         if (k % static_cast<std::size_t>(cfg.snapshot_every) != 0 && k != steps) return;
                         auto f = out.open(step_name("density_", k, ".csv"));
                         write_csv(f, s.density.field());
                     });
        {
            auto f = out.open("energy.csv");
            write_energy_csv(f, state);
        }
        double clipped = 0.0;
        {
            auto f = out.open("diagnostics.csv");
            f << "step,t,iterations,marginal_error,eps,diffusion,clipped_mass\n";
            for (std::size_t k = 0; k < state.steps.size(); ++k) {
                const StepDiagnostics& d = state.steps[k];
                clipped += d.clipped_mass;
                f << k + 1 << ',' << format_double(d.t) << ',' << d.iterations << ','
                  << format_double(d.marginal_error) << ',' << format_double(d.eps) << ','
                  << format_double(d.diffusion) << ',' << format_double(d.clipped_mass) << '\n';
            }
        }
        if (clipped > 0.0) std::cerr << "meanfield flow: clipped " << format_double(clipped) << " negative mass\n";
        if (state.energy_history.size() < 2) return int(kExitOk);
        const LyapunovReport rep = lyapunov_check(state);
        {
            auto f = out.open("lyapunov.json");
            f << json{{"pass", rep.pass}, {"violations", rep.violations}, {"max_increase", rep.max_increase}}.dump(2)
              << '\n';
        }
        if (!rep.pass) {
            std::cerr << "meanfield flow: total energy increased at " << rep.violations.size() << " step(s), first at "
                      << rep.violations.front() << '\n';
            return int(kExitInvariant);
        }
        return int(kExitOk);
    });
}

int cmd_particles(const RunConfig& cfg) {
    RunOutput out(cfg.output, "particles", cfg);
    return guarded(out, [&] {
        cfg.validate();
        const Grid2D grid = cfg.grid();
        const auto kernels = cfg.kernels();
        const DensityField rho0 = project_on_nodes(grid, cfg.initial);
        const auto ctx0 = std::make_shared<const InteractionContext>(kernels, rho0, cfg.control, 0.0);
        const auto steps = static_cast<std::size_t>(cfg.particles_steps);

        // Reference PDE run on a step that divides the particle step.
        const double stable = explicit_stable_dt(*ctx0, cfg.beta);
        const auto sub = static_cast<std::size_t>(std::max(1.0, std::ceil(cfg.particles_dt / (0.5 * stable))));
        const double pde_dt = cfg.particles_dt / static_cast<double>(sub);
        std::vector<VectorField> drifts;
        const FlowState pde = run_flow(rho0, kernels, cfg.control, cfg.beta, Scheme::ExplicitFd, pde_dt, steps * sub,
                                       {}, [&](std::size_t k, const FlowState& s) {
                                           if (k % sub != 0 || k == steps * sub) return;
                                           if (cfg.drift_mode == DriftMode::MeanField) {
                                               drifts.push_back(drift_field(
                                                   InteractionContext(kernels, s.density, cfg.control, s.t)));
                                           }
                                       });
        const double h = std::max(grid.hx(), grid.hy());
        const double metric_eps = cfg.metric_eps > 0.0 ? cfg.metric_eps : 0.25 * h * h;
        out.derived()["pde_dt"] = pde_dt;
        out.derived()["metric_eps"] = metric_eps;
        {
            auto f = out.open("pde_reference.csv");
            write_csv(f, pde.density.field());
        }

        const std::vector<int> sizes = cfg.n_sweep.empty() ? std::vector<int>{cfg.particles_n} : cfg.n_sweep;
        auto metric_csv = out.open("metric.csv");
        metric_csv << "n,seed,t,metric\n";
        auto summary_csv = out.open("metric_summary.csv");
        summary_csv << "n,median,min,max\n";
        for (int n : sizes) {
            std::vector<double> values;
            for (int s = 0; s < cfg.seeds; ++s) {
                const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);
                SdeConfig sde;
                sde.dt = cfg.particles_dt;
                sde.beta = cfg.beta;
                sde.seed = seed;
                sde.drift_mode = cfg.drift_mode;
                sde.fd_step = cfg.fd_step;
                ParticleEnsemble ens = reflect_into(init_ensemble(cfg.initial, static_cast<std::size_t>(n), seed), grid);
                std::optional<std::ofstream> traj;
                if (s == 0) {
                    traj.emplace(out.open("particles_n" + std::to_string(n) + ".csv"));
                    write_particles_header(*traj);
                    write_particles_rows(*traj, ens);
                }
                for (std::size_t k = 0; k < steps; ++k) {
                    ens = cfg.drift_mode == DriftMode::MeanField ? euler_maruyama_step(ens, sde, grid, drifts[k])
                                                                 : euler_maruyama_step(ens, sde, grid, ctx0.get());
                    const bool record = (k + 1) % static_cast<std::size_t>(cfg.record_every) == 0 || k + 1 == steps;
                    if (traj && record) write_particles_rows(*traj, ens);
                }
                const double m = particle_consistency_metric(ens, pde.density, grid, metric_eps);
                values.push_back(m);
                metric_csv << n << ',' << seed << ',' << format_double(ens.t) << ',' << format_double(m) << '\n';
            }
            const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
            summary_csv << n << ',' << format_double(median(values)) << ',' << format_double(*lo) << ','
                        << format_double(*hi) << '\n';
        }
        return int(kExitOk);
    });
}

int cmd_validate(const fs::path& dir, bool flip_flux_sign) {
    RunOutput out(dir, "validate", std::nullopt);
    return guarded(out, [&] {
        ValidationOptions opts;
        opts.flip_flux_sign = flip_flux_sign;
        out.derived()["flip_flux_sign"] = flip_flux_sign;
        const auto results = run_validation_suite(opts);
        const std::string report = validation_report_json(results);
        {
            auto f = out.open("validate_report.json");
            f << report << '\n';
        }
        std::cout << report << '\n';
        const bool all = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.pass; });
        return int(all ? kExitOk : kExitInvariant);
    });
}

int cmd_capacitance_dump(const RunConfig& cfg, double r_max, int samples) {
    RunOutput out(cfg.output, "capacitance-dump", cfg);
    return guarded(out, [&] {
        cfg.validate();
        out.derived()["r_max"] = r_max;
        out.derived()["samples"] = samples;
        {
            auto f = out.open("capacitance_cc.csv");
            write_capacitance_csv(f, cfg.ccap(), r_max, samples);
        }
        {
            auto f = out.open("capacitance_ce.csv");
            write_capacitance_csv(f, cfg.ecap(), r_max, samples);
        }
        return int(kExitOk);
    });
}

int run_cli(int argc, char** argv) {
    configure_threads();
    CLI::App app{"Controlled mean-field chiplet dynamics: PDE flows, particle ensembles, validation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string scheme;
    double r_max = 8.0;
    int samples = 801;
    bool flip = false;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration (defaults when omitted)");
        sub->add_option("--out", out_dir, "output directory (overrides the config)");
        sub->add_option("--seed", seed, "master seed (overrides the config)");
    };
    CLI::App* flow = app.add_subcommand("flow", "evolve the density (JKO or explicit scheme)");
    common(flow);
    flow->add_option("--scheme", scheme, "jko or explicit_fd (overrides the config)");
    CLI::App* particles = app.add_subcommand("particles", "simulate particle ensembles against a PDE reference");
    common(particles);
    CLI::App* validate = app.add_subcommand("validate", "run the invariant suite");
    validate->add_option("--out", out_dir, "output directory");
    validate->add_flag("--inject-flux-sign-flip", flip, "test hook: reverse explicit fluxes (must fail)");
    CLI::App* dump = app.add_subcommand("capacitance-dump", "export the capacitance kernels as CSV");
    common(dump);
    dump->add_option("--r-max", r_max, "largest distance (mm)");
    dump->add_option("--samples", samples, "number of sample points");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (validate->parsed()) return cmd_validate(out_dir.empty() ? fs::path("out") : fs::path(out_dir), flip);

    RunConfig cfg;
    try {
        cfg = config_path.empty() ? parse_config_text("{}") : parse_config(config_path);
        if (!out_dir.empty()) cfg.output = out_dir;
        if (seed) cfg.seed = *seed;
        if (!scheme.empty()) cfg.scheme = parse_scheme(scheme);
        cfg.validate();
    } catch (const ConfigError& e) {
        std::cerr << "meanfield: configuration error: " << e.what() << '\n';
        return kExitConfig;
    }
    if (flow->parsed()) return cmd_flow(cfg);
    if (particles->parsed()) return cmd_particles(cfg);
    return cmd_capacitance_dump(cfg, r_max, samples);
}

}  // namespace chiplet
