#include "opelab/cli.hpp"

#include "opelab/config.hpp"
#include "opelab/errors.hpp"
#include "opelab/harness.hpp"
#include "opelab/parallel.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <ostream>
#include <string>

namespace opelab {

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void print_row(std::ostream& out, const SweepRow& row) {
    const TrialResult& r = row.result;
    out << row.estimator.name();
    if (row.sweep_param != "none") out << "  " << row.sweep_param << '=' << num(row.sweep_value);
    if (r.tau) {
        out << "  tau=(" << (r.tau->target ? num(*r.tau->target) : "none") << ", "
            << (r.tau->logging ? num(*r.tau->logging) : "none") << ')';
    }
    if (r.failed) {
        out << "  FAILED (" << r.failures << '/' << r.n_seeds << " seeds)\n";
        return;
    }
    out << "  mse=" << num(r.mse) << "  bias_sq=" << num(r.bias_sq) << "  variance=" << num(r.variance)
        << "  true=" << num(r.true_value) << "  failures=" << r.failures << '\n';
}

void write_synth_csv(const SweepSpec& spec, const std::filesystem::path& path, unsigned jobs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open output file " + path.string());
    spec.synth.validate();
    if (!(spec.deficient_fraction >= 0.0 && spec.deficient_fraction < 1.0)) {
        throw ArgumentError("deficient_fraction must be in [0, 1)");
    }
    SynthConfig config = spec.synth;
    config.seed = derive_seed(spec.seed, "world");
    config.n_test = 1;
    const SynthEnvironment env(config, spec.deficient_fraction, jobs);
    const BanditDataset ds = generate_dataset(*env.world(), env.logging(), spec.n_logged, derive_seed(spec.seed, "data"));
    for (std::size_t j = 0; j < config.d_context; ++j) out << 'x' << j << ',';
    out << "action,reward,propensity\n";
    const auto propensities = ds.propensities();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& it = ds[i];
        for (Eigen::Index j = 0; j < it.context.features.size(); ++j) out << num(it.context.features[j]) << ',';
        out << it.action << ',' << num(it.reward) << ',' << num(propensities[i]) << '\n';
    }
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Off-policy estimator benchmark harness", "opelab"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
    app.add_option("--seed", seed, "Master seed (overrides the configuration)");
    app.add_option("--jobs", jobs, "Worker threads (default: OPELAB_JOBS or 1)");

    auto* toy = app.add_subcommand("toy", "Tree pooling on the four-action toy world, tau in {1, 2, 3}");
    std::size_t toy_seeds = 50000;
    std::size_t toy_n = 10;
    std::string toy_out;
    toy->add_option("--seeds", toy_seeds, "Replications")->capture_default_str();
    toy->add_option("--n-logged", toy_n, "Logged samples per replication")->capture_default_str();
    toy->add_option("--out", toy_out, "CSV output file");

    auto* sweep = app.add_subcommand("sweep", "Run a configured sweep");
    std::string sweep_config;
    std::string sweep_out;
    sweep->add_option("--config", sweep_config, "Configuration file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", sweep_out, "Output directory")->required();

    auto* gen = app.add_subcommand("gen-synth", "Write one synthetic logged dataset as CSV");
    std::string gen_config;
    std::string gen_out;
    gen->add_option("--config", gen_config, "Configuration file")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "CSV output file")->required();

    auto* ml = app.add_subcommand("movielens", "Ingest Movielens-100k ratings and optionally run a sweep");
    std::string ml_data;
    std::string ml_config;
    std::string ml_out;
    ml->add_option("--data", ml_data, "Path to u.data")->required()->check(CLI::ExistingFile);
    ml->add_option("--config", ml_config, "Sweep configuration file")->check(CLI::ExistingFile);
    ml->add_option("--out", ml_out, "Output directory for the sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        const unsigned n_jobs = resolve_jobs(jobs);
        const auto on_row = [&out](const SweepRow& row) { print_row(out, row); };

        if (toy->parsed()) {
            SweepSpec spec = toy_spec(toy_seeds, toy_n);
            spec.jobs = n_jobs;
            if (seed) spec.seed = *seed;
            out << "toy world: tree pooling with tau1 = tau2, |D| = " << toy_n << ", " << toy_seeds
                << " replications\n";
            if (toy_out.empty()) {
                std::ostringstream sink;
                run_sweep(spec, sink, on_row);
            } else {
                run_sweep(spec, std::filesystem::path(toy_out), on_row);
                out << "wrote " << toy_out << '\n';
            }
            return 0;
        }

        const auto run_configured = [&](SweepSpec spec, const std::string& dir) {
            spec.jobs = n_jobs;
            if (seed) spec.seed = *seed;
            spec.validate();
            std::filesystem::create_directories(dir);
            const auto path = std::filesystem::path(dir) / (spec.experiment + ".csv");
            run_sweep(spec, path, on_row);
            out << "wrote " << path.string() << '\n';
        };

        if (sweep->parsed()) {
            run_configured(load_sweep_config(sweep_config), sweep_out);
            return 0;
        }

        if (gen->parsed()) {
            SweepSpec spec = load_sweep_config(gen_config);
            if (seed) spec.seed = *seed;
            write_synth_csv(spec, gen_out, n_jobs);
            out << "wrote " << gen_out << '\n';
            return 0;
        }

        if (ml->parsed()) {
            if (!ml_config.empty()) {
                if (ml_out.empty()) throw ArgumentError("--out is required with --config");
                SweepSpec spec = load_sweep_config(ml_config);
                spec.environment = EnvironmentKind::movielens;
                spec.movielens_data = ml_data;
                run_configured(std::move(spec), ml_out);
                return 0;
            }
            const RatingsMatrix ratings = load_movielens(ml_data);
            MovielensConfig config;
            config.seed = derive_seed(seed.value_or(0), "world");
            const auto world = std::make_shared<const MovielensWorld>(build_movielens_world(ratings, config));
            const MovielensEnvironment env(world, 0.0);
            out << "entries " << ratings.entries.size() << "\nusers " << ratings.n_users << "\nitems "
                << ratings.n_items << "\npositive " << world->n_ones << "\nrank " << world->factors->rank()
                << "\ntarget value " << num(env.true_value()) << "\nlogging value "
                << num(movielens_true_value(*world, *world->logging)) << '\n';
            return 0;
        }
    } catch (const ArgumentError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace opelab
