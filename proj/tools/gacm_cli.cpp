#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <gacm/gacm.hpp>

namespace fs = std::filesystem;
using namespace gacm;

namespace {

// Everything that can change an output. The thread count is left out: it
// never changes results, and outputs must match across thread counts.
struct RunConfig {
    std::string command;
    std::string data;
    std::string selection;
    std::string out = ".";
    std::string family = "logit";
    int q = 4;
    double c = 2.0;
    double nu = 0.5;
    int lambda_grid = 50;
    double lambda_floor = 1e-3;
    int grid = 20;
    double alpha = 0.05;
    int boot = 200;
    std::uint64_t seed = 1;
    int threads = 0;
    Index n = 300;
    Index p = 200;
    double maf = 0.3;
    double block_rho = 0.3;
    int block_size = 10;
    int reps = 100;
    bool coverage = false;
    bool truth_set = false;
    bool screening = false;

    Json to_json() const {
        Json j;
        j["command"] = command;
        if (command == "simulate" || command == "bench") {
            j["n"] = n;
            j["p"] = p;
            j["maf"] = maf;
            j["block_rho"] = block_rho;
            j["block_size"] = block_size;
        } else {
            j["data"] = fs::path(data).filename().string();
            j["family"] = family;
        }
        if (command == "scb") j["selection"] = fs::path(selection).filename().string();
        if (command != "simulate") {
            j["q"] = q;
            j["c"] = c;
            j["nu"] = nu;
            j["lambda_grid"] = lambda_grid;
            j["lambda_floor"] = lambda_floor;
        }
        if (command == "scb" || command == "bench") {
            j["grid"] = grid;
            j["alpha"] = alpha;
            j["boot"] = boot;
        }
        if (command == "bench") {
            j["reps"] = reps;
            j["coverage"] = coverage;
            j["truth_set"] = truth_set;
            j["screening"] = screening;
        }
        j["seed"] = seed;
        return j;
    }

    SelectConfig select_config() const {
        SelectConfig s;
        s.q = q;
        s.c = c;
        s.nu = nu;
        s.grid_size = lambda_grid;
        s.grid_floor_ratio = lambda_floor;
        s.threads = threads;
        return s;
    }

    void validate() const {
        if (q < 2) throw ArgumentError("--q must be >= 2");
        if (!(c > 0.0)) throw ArgumentError("--c must be positive");
        if (!(nu >= 0.0 && nu <= 1.0)) throw ArgumentError("--nu must lie in [0,1]");
        if (lambda_grid < 1) throw ArgumentError("--lambda-grid must be >= 1");
        if (!(lambda_floor > 0.0 && lambda_floor <= 1.0)) throw ArgumentError("--lambda-floor must lie in (0,1]");
        if (grid < 1) throw ArgumentError("--grid must be >= 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("--alpha must lie in (0,1)");
        if (boot < 2) throw ArgumentError("--boot must be >= 2");
        if (reps < 1) throw ArgumentError("--reps must be >= 1");
        Family::from_name(family);
    }
};

std::ofstream open_out(const fs::path& path) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    return out;
}

void write_json(const fs::path& path, const Json& j) {
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

void cmd_simulate(const RunConfig& cfg) {
    Example1Options opt;
    opt.snp = {cfg.maf, cfg.block_rho, cfg.block_size};
    auto [ds, truth] = gen_example1(cfg.n, cfg.p, cfg.seed, opt);
    const fs::path dir(cfg.out);
    auto out = open_out(dir / "data.csv");
    write_dataset(out, ds, cfg.to_json());
    Json t = truth_to_json(truth);
    t["config"] = cfg.to_json();
    write_json(dir / "truth.json", t);
}

void cmd_select(const RunConfig& cfg) {
    const Dataset ds = read_dataset(cfg.data);
    const SelectionResult res = select_model(ds, Family::from_name(cfg.family), cfg.select_config());
    write_json(fs::path(cfg.out) / "selection.json", selection_to_json(res, ds, cfg.to_json()));
    std::cout << "selected:";
    for (int l : res.selected) std::cout << ' ' << ds.t_names[static_cast<std::size_t>(l)];
    if (res.empty) std::cout << " (none)";
    std::cout << "\n";
}

void cmd_scb(const RunConfig& cfg) {
    const Dataset ds = read_dataset(cfg.data);
    const Family fam = Family::from_name(cfg.family);
    const fs::path sel_path = cfg.selection.empty() ? fs::path(cfg.out) / "selection.json" : fs::path(cfg.selection);
    std::ifstream sin(sel_path);
    if (!sin) throw Error("cannot open '" + sel_path.string() + "'");
    const Json sel_json = Json::parse(sin, nullptr, false);
    if (sel_json.is_discarded()) throw SchemaError("selection", "selection file is not valid JSON");
    const std::vector<int> selected = selected_from_json(sel_json, ds);
    if (selected.empty()) throw NothingSelected("selection is empty; no bands to build");

    const InitialFit init = fit_initial(ds, selected, fam, cfg.q, cfg.c);
    const Components comp = components_from_initial(init, ds);
    std::vector<int> knots;
    std::vector<StepTwoFit> fits;
    Json summary;
    summary["config"] = cfg.to_json();
    summary["initial_knots"] = init.num_interior;
    summary["step2_knots"] = Json::array();
    for (Index k = 0; k < ds.d(); ++k) {
        const KnotChoice kc = choose_knots_bic(ds, selected, comp, k, fam, cfg.q);
        knots.push_back(kc.num_interior);
        fits.push_back(kc.chosen());
        summary["step2_knots"].push_back(
            {{"covariate", ds.x_names[static_cast<std::size_t>(k)]}, {"knots", kc.num_interior}, {"bic", kc.bic}});
    }
    const std::vector<double> grid = band_grid(cfg.grid);
    BootstrapConfig bc;
    bc.B = cfg.boot;
    bc.seed = cfg.seed;
    bc.q = cfg.q;
    bc.c = cfg.c;
    bc.threads = cfg.threads;
    const BootstrapRun run = bootstrap_curves(ds, selected, fam, knots, grid, bc);
    const double thr = scb_threshold(cfg.grid, cfg.alpha);
    summary["threshold"] = thr;
    summary["replicates_kept"] = run.kept.size();
    summary["replicates_dropped"] = run.dropped;

    const fs::path dir(cfg.out);
    for (std::size_t j = 0; j < selected.size(); ++j)
        for (Index k = 0; k < ds.d(); ++k) {
            const auto jj = static_cast<Index>(j);
            const std::string name = "band_" + ds.t_names[static_cast<std::size_t>(selected[j])] + "_" +
                                     ds.x_names[static_cast<std::size_t>(k)] + ".csv";
            const MatrixXd& a = run.curve(jj, k);
            const Band bu = build_band(grid, fits[static_cast<std::size_t>(k)].curve_on(jj, grid), sd_unsmoothed(a), thr);
            const SmoothedSd ss = sd_smoothed(a, run.counts);
            const Band bs = build_band(grid, ss.center, ss.sd, thr);
            Json hdr = cfg.to_json();
            hdr["variant"] = "unsmoothed";
            auto ou = open_out(dir / "unsmoothed" / name);
            write_band(ou, bu, hdr);
            hdr["variant"] = "smoothed";
            auto os = open_out(dir / "smoothed" / name);
            write_band(os, bs, hdr);
        }
    write_json(dir / "scb.json", summary);
}

void cmd_bench(const RunConfig& cfg) {
    BenchConfig bc;
    bc.reps = cfg.reps;
    bc.n = cfg.n;
    bc.p = cfg.p;
    bc.seed = cfg.seed;
    bc.threads = cfg.threads;
    bc.data.snp = {cfg.maf, cfg.block_rho, cfg.block_size};
    bc.select = cfg.select_config();
    bc.screening = cfg.screening;
    bc.coverage = cfg.coverage;
    bc.coverage_on_truth_set = cfg.truth_set;
    bc.B = cfg.boot;
    bc.grid = cfg.grid;
    bc.alpha = cfg.alpha;
    const BenchResult res = run_benchmark(bc);
    const fs::path dir(cfg.out);
    const Json hdr = cfg.to_json();
    auto t1 = open_out(dir / "table1.csv");
    write_table1(t1, res.table1, hdr);
    auto t2 = open_out(dir / "table2.csv");
    write_table2(t2, res.table2, hdr);
    Json tj = tables_to_json(res);
    tj = Json{{"config", hdr}, {"completed", tj["completed"]}, {"table1", tj["table1"]}, {"table2", tj["table2"]}};
    write_json(dir / "tables.json", tj);
    auto reps = open_out(dir / "reps.csv");
    auto curves = open_out(dir / "curves.csv");
    write_rep_log(reps, curves, res);
    std::cout << "completed " << res.completed << " of " << cfg.reps << " replications\n";
    for (const auto& r : res.reps)
        if (!r.ok) std::cerr << "replication " << r.rep << " failed: " << r.error << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized additive coefficient models: selection and confidence bands"};
    app.set_config("--config", "", "TOML/INI file with option values");
    app.require_subcommand(1);
    RunConfig cfg;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--out", cfg.out, "Output directory");
        sub->add_option("--seed", cfg.seed, "Random seed");
        sub->add_option("--threads", cfg.threads, "Worker threads (default: GACM_THREADS or 1)");
    };
    auto data_opts = [&](CLI::App* sub) {
        sub->add_option("--data", cfg.data, "Input CSV (y, x1..xd, t1..tp)")->required();
        sub->add_option("--family", cfg.family, "logit or gaussian");
    };
    auto fit_opts = [&](CLI::App* sub) {
        sub->add_option("--q", cfg.q, "Spline order");
        sub->add_option("--c", cfg.c, "Knot-count constant");
        sub->add_option("--nu", cfg.nu, "EBIC model-space weight");
        sub->add_option("--lambda-grid", cfg.lambda_grid, "Number of lambda values per path");
        sub->add_option("--lambda-floor", cfg.lambda_floor, "Smallest lambda as a fraction of lambda_max");
    };
    auto band_opts = [&](CLI::App* sub) {
        sub->add_option("--alpha", cfg.alpha, "Band level 1 - alpha");
        sub->add_option("--boot", cfg.boot, "Bootstrap replications B");
        sub->add_option("--grid", cfg.grid, "Band grid size L (L+1 points)");
    };
    auto sim_opts = [&](CLI::App* sub) {
        sub->add_option("--n", cfg.n, "Sample size");
        sub->add_option("--p", cfg.p, "Number of SNP columns");
        sub->add_option("--maf", cfg.maf, "Minor allele frequency");
        sub->add_option("--block-rho", cfg.block_rho, "Latent within-block correlation");
        sub->add_option("--block-size", cfg.block_size, "SNP block size");
    };

    auto* sim = app.add_subcommand("simulate", "Write a simulated data set and its truth");
    common(sim);
    sim_opts(sim);
    auto* sel = app.add_subcommand("select", "Group lasso and adaptive group lasso selection");
    common(sel);
    data_opts(sel);
    fit_opts(sel);
    auto* scb = app.add_subcommand("scb", "Two-step fits and bootstrap confidence bands");
    common(scb);
    data_opts(scb);
    fit_opts(scb);
    band_opts(scb);
    scb->add_option("--selection", cfg.selection, "selection.json (default: <out>/selection.json)");
    auto* bench = app.add_subcommand("bench", "Simulation benchmark tables");
    common(bench);
    sim_opts(bench);
    fit_opts(bench);
    band_opts(bench);
    bench->add_option("--reps", cfg.reps, "Replications");
    bench->add_flag("--coverage", cfg.coverage, "Also build bands and record coverage");
    bench->add_flag("--truth-set", cfg.truth_set, "Build bands on the true groups instead of the selected ones");
    bench->add_flag("--screening", cfg.screening, "Also run the per-SNP likelihood ratio screening");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        cfg.command = app.get_subcommands().front()->get_name();
        cfg.validate();
        if (cfg.command == "simulate") cmd_simulate(cfg);
        else if (cfg.command == "select") cmd_select(cfg);
        else if (cfg.command == "scb") cmd_scb(cfg);
        else cmd_bench(cfg);
    } catch (const SchemaError& e) {
        std::cerr << "schema error in '" << e.field() << "': " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
