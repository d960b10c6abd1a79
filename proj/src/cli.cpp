#include "gmq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>
#include <unordered_map>

#include "CLI11.hpp"
#include "json.hpp"

#include "gmq/dataset.hpp"
#include "gmq/error.hpp"
#include "gmq/evaluation.hpp"
#include "gmq/forecaster.hpp"
#include "gmq/io.hpp"
#include "gmq/synthetic.hpp"

namespace gmq::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kCommands{"gen-data", "train", "forecast", "simulate", "evaluate", "anomaly"};
const std::vector<std::string> kSuites{"linear-gaussian", "regime-copula", "seasonal-counts"};

std::string join(const std::vector<std::string>& v, const std::string& sep) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : sep) + x;
    return s;
}

template <class T>
T value_from_json(const json& j, const std::string& key) {
    auto bad = [&](const char* want) { return FormatError("config: key '" + key + "' must be " + want); };
    if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) throw bad("a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!j.is_number_unsigned()) throw bad("a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) throw bad("an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!j.is_number()) throw bad("a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) throw bad("a string");
    } else {
        if (!j.is_array()) throw bad("an array");
    }
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw bad("an array of the right element type");
    }
}

/// CLI options that double as JSON config keys (flag name without dashes,
/// '-' replaced by '_'). Flags given on the command line win over the file.
class Options {
public:
    Options(CLI::App* app, std::string command) : app_(app), command_(std::move(command)) {}

    template <class T>
    CLI::Option* add(const std::string& flag, T& var, const std::string& desc) {
        CLI::Option* opt = app_->add_option(flag, var, desc);
        if constexpr (!std::is_same_v<T, std::string> && !std::is_arithmetic_v<T>) opt->delimiter(',');
        opt->capture_default_str();
        remember(flag, opt, [&var, this, flag](const json& j) { var = value_from_json<T>(j, key_of(flag)); });
        return opt;
    }

    CLI::Option* flag(const std::string& flag, bool& var, const std::string& desc) {
        CLI::Option* opt = app_->add_flag(flag, var, desc);
        remember(flag, opt, [&var, this, flag](const json& j) { var = value_from_json<bool>(j, key_of(flag)); });
        return opt;
    }

    /// Applies a JSON config: top-level keys, then the object under this
    /// command's name. Sections for other commands are ignored so one file
    /// can drive a whole pipeline; any other unknown key is an error.
    void apply_config(const std::string& path) const {
        if (path.empty()) return;
        json cfg;
        try {
            cfg = json::parse(io::read_file(path));
        } catch (const json::parse_error& e) {
            throw FormatError("config " + path + ": " + e.what());
        }
        if (!cfg.is_object()) throw FormatError("config " + path + ": top level must be an object");
        auto apply = [&](const json& obj, const std::string& where) {
            for (const auto& [key, value] : obj.items()) {
                if (where.empty() && std::find(kCommands.begin(), kCommands.end(), key) != kCommands.end()) {
                    if (!value.is_object()) throw FormatError("config: section '" + key + "' must be an object");
                    continue;
                }
                auto it = entries_.find(key);
                if (it == entries_.end() || key == "config")
                    throw FormatError("config: unknown key '" + where + key + "' for command " + command_);
                if (it->second.opt->count() == 0) it->second.set(value);
            }
        };
        apply(cfg, "");
        if (cfg.contains(command_)) apply(cfg[command_], command_ + ".");
    }

private:
    struct Entry {
        CLI::Option* opt;
        std::function<void(const json&)> set;
    };

    static std::string key_of(const std::string& flag) {
        std::string k = flag.substr(flag.find_first_not_of('-'));
        std::replace(k.begin(), k.end(), '-', '_');
        return k;
    }

    void remember(const std::string& flag, CLI::Option* opt, std::function<void(const json&)> set) {
        entries_[key_of(flag)] = Entry{opt, std::move(set)};
    }

    CLI::App* app_;
    std::string command_;
    std::map<std::string, Entry> entries_;
};

struct Shared {
    std::string config;
    std::uint64_t seed = 1;
    std::string out;
    bool verbose = false;
};

void add_shared(Options& o, Shared& s) {
    o.add("--config", s.config, "JSON config file; flags override its keys");
    o.add("--seed", s.seed, "random seed");
    o.add("--out", s.out, "output directory");
    o.flag("--verbose", s.verbose, "progress on stderr");
}

fs::path data_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("GMQ_DATA_DIR"); env != nullptr && *env != '\0') return env;
    return "data";
}

fs::path out_dir(const Shared& s) { return s.out.empty() ? fs::path(".") : fs::path(s.out); }

void require(bool ok, const std::string& msg) {
    if (!ok) throw DomainError(msg);
}

void check_u(const std::vector<double>& u) {
    require(!u.empty(), "--u needs at least one quantile level");
    for (double v : u) require(v > 0.0 && v < 1.0, "quantile level " + io::format_double(v) + " is outside (0,1)");
}

std::string u_column(double u) { return "q_" + io::format_double(u); }

std::vector<double> parse_u_columns(const std::vector<std::string>& header, std::size_t first, const std::string& file) {
    std::vector<double> u;
    for (std::size_t c = first; c < header.size(); ++c) {
        if (header[c].rfind("q_", 0) != 0) throw FormatError(file + ": column '" + header[c] + "' is not q_<u>");
        u.push_back(io::parse_double(header[c].substr(2), file));
    }
    check_u(u);
    return u;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& file, std::vector<std::string>& header) {
    std::istringstream in(io::read_file(file));
    std::string line;
    if (!std::getline(in, line)) throw FormatError(file.string() + " is empty");
    header = io::split_csv(line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(io::split_csv(line));
        if (rows.back().size() != header.size())
            throw FormatError(file.filename().string() + " line " + std::to_string(rows.size() + 1) + ": expected " +
                              std::to_string(header.size()) + " fields");
    }
    return rows;
}

std::size_t to_index(const std::string& s, const std::string& what) {
    const double v = io::parse_double(s, what);
    if (!(v >= 0.0) || v != std::floor(v)) throw FormatError(what + ": '" + s + "' is not a non-negative integer");
    return static_cast<std::size_t>(v);
}

// ---- gen-data -------------------------------------------------------------

struct GenOptions {
    std::string suite = "linear-gaussian";
    std::size_t series = 0;
    std::size_t d = 8;
    double rho = 0.6;
    double rho_on = 0.8;
    double rho_off = 0.0;
    double slope = 2.0;
    std::size_t blocks = 10;
    std::size_t length = 156;
    std::size_t history = 52;
    std::size_t period = 52;
    double promo_lift = 0.7;
    double promo_rate = 0.1;
    double cold_start = 0.1;
    double intensity_scale = 1.0;
};

int cmd_gen_data(const Shared& sh, const GenOptions& g, std::ostream& out) {
    if (std::find(kSuites.begin(), kSuites.end(), g.suite) == kSuites.end())
        throw DomainError("unknown suite '" + g.suite + "' (valid suites: " + join(kSuites, ", ") + ")");
    require(g.d >= 1, "--d must be at least 1");
    require(std::fabs(g.rho) < 1.0 && std::fabs(g.rho_on) < 1.0 && std::fabs(g.rho_off) < 1.0,
            "correlations must lie in (-1, 1)");
    SyntheticOutput o;
    if (g.suite == "linear-gaussian") {
        LinearGaussianParams p;
        if (g.series) p.n_series = g.series;
        p.horizon = g.d;
        p.seed = sh.seed;
        p.rho = g.rho;
        p.slope = g.slope;
        p.blocks = g.blocks;
        o = gen_linear_gaussian(p);
    } else if (g.suite == "regime-copula") {
        RegimeCopulaParams p;
        if (g.series) p.n_series = g.series;
        p.horizon = g.d;
        p.seed = sh.seed;
        p.rho_on = g.rho_on;
        p.rho_off = g.rho_off;
        p.slope = g.slope;
        p.blocks = g.blocks;
        o = gen_regime_copula(p);
    } else {
        SeasonalCountsParams p;
        if (g.series) p.n_series = g.series;
        p.horizon = g.d;
        p.seed = sh.seed;
        p.length = g.length;
        p.history = g.history;
        p.period = g.period;
        p.promo_lift = g.promo_lift;
        p.promo_rate = g.promo_rate;
        p.cold_start_fraction = g.cold_start;
        p.intensity_scale = g.intensity_scale;
        o = gen_seasonal_counts(p);
    }
    const fs::path dir = sh.out.empty() ? data_dir("") : fs::path(sh.out);
    io::save_dataset(o.dataset, dir);
    io::save_oracle(o.suite, dir / "oracle.json");
    out << "gen-data: suite " << g.suite << ", " << o.dataset.series.size() << " series, horizon d=" << o.dataset.horizon
        << " -> " << dir.string() << "\n";
    return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainOptions {
    std::string data;
    std::string checkpoint = "model.gmq";
    std::string losses = "loss_history.csv";
    int epochs = 40;
    double lr = 0.02;
    std::size_t batch = 64;
    double momentum = 0.9;
    double inverse_weight = 1.0;
    double clip_norm = 10.0;
    int phase2_epochs = 30;
    double phase2_lr = 0.01;
    std::size_t phase2_batch = 128;
    bool no_copula = false;
    bool freeze_phase1 = true;
    std::size_t stride = 0;
    std::size_t encoder_hidden = 32;
    std::size_t embedding = 16;
    std::size_t horizon_embedding = 4;
    std::vector<std::size_t> qnet_hidden{64, 64};
    std::size_t copula_hidden = 64;
};

json train_config_json(const TrainConfig& t) {
    return json{{"learning_rate", t.learning_rate}, {"momentum", t.momentum},   {"epochs", t.epochs},
                {"batch_size", t.batch_size},       {"inverse_weight", t.inverse_weight},
                {"clip_norm", t.clip_norm},         {"seed", t.seed}};
}

int cmd_train(const Shared& sh, const TrainOptions& t, std::ostream& out, std::ostream& err) {
    require(t.epochs >= 1, "--epochs must be at least 1");
    require(t.lr > 0.0 && t.phase2_lr > 0.0, "learning rates must be positive");
    require(t.batch >= 1 && t.phase2_batch >= 1, "batch sizes must be at least 1");
    require(t.momentum >= 0.0 && t.momentum < 1.0, "--momentum must lie in [0, 1)");
    require(t.inverse_weight >= 0.0, "--inverse-weight must be non-negative");
    require(t.clip_norm >= 0.0, "--clip-norm must be non-negative");
    require(t.no_copula || t.phase2_epochs >= 1, "--phase2-epochs must be at least 1");
    require(t.encoder_hidden >= 1 && t.embedding >= 1 && t.copula_hidden >= 1, "layer widths must be at least 1");
    for (std::size_t w : t.qnet_hidden) require(w >= 1, "--qnet-hidden widths must be at least 1");

    SeriesDataset ds = io::load_dataset(data_dir(t.data));
    if (t.stride) ds.cut_stride = t.stride;
    ModelConfig mc = ModelConfig::for_dataset(ds);
    mc.encoder_hidden = t.encoder_hidden;
    mc.embedding = t.embedding;
    mc.horizon_embedding = t.horizon_embedding;
    mc.qnet_hidden = t.qnet_hidden;
    mc.copula_hidden = t.copula_hidden;
    mc.validate();

    GmqTrainConfig tc;
    tc.phase1 = TrainConfig{.learning_rate = t.lr,
                            .momentum = t.momentum,
                            .epochs = t.epochs,
                            .batch_size = t.batch,
                            .inverse_weight = t.inverse_weight,
                            .clip_norm = t.clip_norm,
                            .seed = sh.seed};
    tc.phase2 = TrainConfig{.learning_rate = t.phase2_lr,
                            .momentum = t.momentum,
                            .epochs = t.phase2_epochs,
                            .batch_size = t.phase2_batch,
                            .inverse_weight = t.inverse_weight,
                            .clip_norm = t.clip_norm,
                            .seed = sh.seed + 1};
    tc.copula = !t.no_copula;
    tc.freeze_phase1 = t.freeze_phase1;

    const std::size_t n_cuts = training_cuts(ds).size();
    if (n_cuts == 0) throw InsufficientDataError("dataset has no training cuts");
    if (sh.verbose) err << "train: " << ds.series.size() << " series, " << n_cuts << " training cuts\n";

    GmqModel model(mc, sh.seed);
    const GmqHistory hist = train_gmq(model, ds, tc);

    io::CheckpointMeta meta;
    meta.training = json{{"dataset", ds.name},
                         {"series", ds.series.size()},
                         {"cut_stride", ds.cut_stride},
                         {"training_cuts", n_cuts},
                         {"phase1", train_config_json(tc.phase1)},
                         {"phase2", train_config_json(tc.phase2)},
                         {"copula", tc.copula},
                         {"freeze_phase1", tc.freeze_phase1}};
    const fs::path dir = out_dir(sh);
    io::save_checkpoint(model, meta, dir / t.checkpoint);

    std::string csv = "phase,epoch,l1,l2,l3\n";
    for (std::size_t e = 0; e < hist.losses.l1.size(); ++e)
        csv += "1," + std::to_string(e + 1) + "," + io::format_double(hist.losses.l1[e]) + "," +
               io::format_double(hist.losses.l2[e]) + ",\n";
    for (std::size_t e = 0; e < hist.losses.l3.size(); ++e)
        csv += "2," + std::to_string(e + 1) + ",,," + io::format_double(hist.losses.l3[e]) + "\n";
    io::write_file(dir / t.losses, csv);

    if (sh.verbose) {
        for (std::size_t e = 0; e < hist.losses.l1.size(); ++e)
            err << "phase 1 epoch " << e + 1 << ": l1 " << hist.losses.l1[e] << " l2 " << hist.losses.l2[e] << "\n";
        for (std::size_t e = 0; e < hist.losses.l3.size(); ++e)
            err << "phase 2 epoch " << e + 1 << ": l3 " << hist.losses.l3[e] << "\n";
    }
    out << "train: " << hist.losses.l1.size() << " phase-1 epochs (final l1 "
        << io::format_double(hist.losses.l1.back()) << ")";
    if (hist.losses.l3.empty()) out << ", no copula";
    else out << ", " << hist.losses.l3.size() << " phase-2 epochs (final l3 " << io::format_double(hist.losses.l3.back()) << ")";
    out << " -> " << (dir / t.checkpoint).string() << "\n";
    return kExitOk;
}

// ---- forecast -------------------------------------------------------------

struct ForecastOptions {
    std::string data;
    std::string checkpoint;
    std::vector<double> u{0.1, 0.5, 0.9};
    bool sort_quantiles = false;
    bool oracle = false;
    bool all_intervals = false;
    std::string file = "forecasts.csv";
};

int cmd_forecast(const Shared& sh, const ForecastOptions& f, std::ostream& out) {
    check_u(f.u);
    require(!f.all_intervals || f.oracle, "--all-intervals needs --oracle (direct forecasts are per horizon)");
    const fs::path ddir = data_dir(f.data);
    const SeriesDataset ds = io::load_dataset(ddir);
    const std::vector<Cut> cuts = origin_cuts(ds);
    const std::size_t d = ds.horizon;
    const std::size_t nu = f.u.size();

    std::string csv = "series_id,origin,l,s";
    for (double u : f.u) csv += "," + u_column(u);
    csv += "\n";
    auto emit = [&](const Cut& c, Interval iv, std::vector<double> q) {
        if (f.sort_quantiles) std::sort(q.begin(), q.end());
        csv += ds.series[c.series].id + "," + std::to_string(c.origin) + "," + std::to_string(iv.l) + "," +
               std::to_string(iv.s);
        for (double v : q) csv += "," + io::format_double(v);
        csv += "\n";
    };

    if (f.oracle) {
        const SyntheticSuite suite = io::load_oracle(ddir / "oracle.json");
        std::unordered_map<std::string, std::size_t> idx;
        for (std::size_t i = 0; i < suite.ids.size(); ++i) idx[suite.ids[i]] = i;
        std::vector<Interval> cells;
        if (f.all_intervals) {
            cells = all_intervals(d);
        } else {
            for (std::size_t l = 1; l <= d; ++l) cells.push_back({l, 1});
        }
        for (const Cut& c : cuts) {
            auto it = idx.find(ds.series[c.series].id);
            if (it == idx.end()) throw AlignmentError("oracle has no series " + ds.series[c.series].id);
            for (Interval iv : cells) {
                std::vector<double> q(nu);
                for (std::size_t k = 0; k < nu; ++k) q[k] = suite.interval_quantile(it->second, c.origin, iv.l, iv.s, f.u[k]);
                emit(c, iv, q);
            }
        }
    } else {
        require(!f.checkpoint.empty(), "--checkpoint is required (or use --oracle)");
        const GmqModel model = io::load_checkpoint(f.checkpoint);
        const Tensor q = direct_quantiles(model, ds, cuts, f.u);
        for (std::size_t n = 0; n < cuts.size(); ++n) {
            for (std::size_t i = 0; i < d; ++i) {
                std::vector<double> row(nu);
                for (std::size_t k = 0; k < nu; ++k) row[k] = q(n, i * nu + k);
                emit(cuts[n], {i + 1, 1}, row);
            }
        }
    }
    const fs::path file = out_dir(sh) / f.file;
    io::write_file(file, csv);
    out << "forecast: " << cuts.size() << " series, " << nu << " quantile levels -> " << file.string() << "\n";
    return kExitOk;
}

// ---- simulate -------------------------------------------------------------

struct SimulateOptions {
    std::string data;
    std::string checkpoint;
    std::size_t paths = 100;
    std::size_t workers = 1;
    std::string override_future;
    bool cross_series = false;
    double shrinkage = 0.1;
    double threshold = 0.0;
    std::size_t cross_cuts = 4;
    std::vector<double> u = kEvaluationQuantiles;
};

void apply_future_override(SeriesDataset& ds, const fs::path& file) {
    std::vector<std::string> header;
    const auto rows = read_rows(file, header);
    if (header.size() < 3 || header[0] != "series_id" || header[1] != "t")
        throw AlignmentError("override file must start with series_id,t and name at least one future covariate");
    std::vector<std::size_t> cols;
    for (std::size_t c = 2; c < header.size(); ++c) {
        auto it = std::find(ds.future_names.begin(), ds.future_names.end(), header[c]);
        if (it == ds.future_names.end())
            throw AlignmentError("override column '" + header[c] + "' is not a future covariate (have: " +
                                 join(ds.future_names, ", ") + ")");
        cols.push_back(static_cast<std::size_t>(it - ds.future_names.begin()));
    }
    for (const auto& r : rows) {
        Series& s = ds.series[ds.find(r[0])];
        const std::size_t t = to_index(r[1], "override file");
        if (t >= s.future_cov.rows())
            throw AlignmentError("override t=" + r[1] + " is beyond the future covariates of " + s.id);
        for (std::size_t c = 0; c < cols.size(); ++c)
            s.future_cov(t, cols[c]) = io::parse_double(r[2 + c], "override file");
    }
    ds.validate();
}

double pearson(const Tensor& x, std::size_t a, std::size_t b) {
    const std::size_t k = x.rows();
    double ma = 0.0, mb = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
        ma += x(r, a);
        mb += x(r, b);
    }
    ma /= static_cast<double>(k);
    mb /= static_cast<double>(k);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
        const double da = x(r, a) - ma, db = x(r, b) - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::nan("");
    return sab / std::sqrt(saa * sbb);
}

int cmd_simulate(const Shared& sh, const SimulateOptions& o, std::ostream& out, std::ostream& err) {
    require(o.paths >= 1, "--paths must be at least 1");
    require(o.workers >= 1, "--workers must be at least 1");
    require(o.shrinkage >= 0.0 && o.shrinkage <= 1.0, "--shrinkage must lie in [0, 1]");
    require(o.threshold >= 0.0, "--threshold must be non-negative");
    require(o.cross_cuts >= 1, "--cross-cuts must be at least 1");
    check_u(o.u);
    require(!o.checkpoint.empty(), "--checkpoint is required");

    SeriesDataset ds = io::load_dataset(data_dir(o.data));
    const GmqModel model = io::load_checkpoint(o.checkpoint);
    const SeriesDataset training_view = ds;
    if (!o.override_future.empty()) apply_future_override(ds, o.override_future);
    const std::vector<Cut> cuts = origin_cuts(ds);

    std::vector<ForecastPaths> paths;
    if (o.cross_series) {
        // Late-starting series may have fewer cuts; use what every series has.
        std::vector<std::size_t> per(training_view.series.size(), 0);
        for (const Cut& c : training_cuts(training_view)) ++per[c.series];
        const std::size_t available = *std::min_element(per.begin(), per.end());
        if (available == 0) throw InsufficientDataError("--cross-series: some series have no training cuts");
        const std::size_t k = std::min(o.cross_cuts, available);
        if (k < o.cross_cuts) err << "simulate: using " << k << " training cuts per series for the cross-series matrix\n";
        const Tensor w = training_whitened_matrix(model, training_view, k);
        const CrossSeriesCovariance s_hat = fit_cross_series(w, o.shrinkage, o.threshold);
        if (sh.verbose) err << "simulate: cross-series matrix over " << w.rows() << " series\n";
        paths = simulate_cross_series(model, ds, cuts, s_hat, o.paths, sh.seed);
    } else {
        paths = simulate_paths(model, ds, cuts, o.paths, sh.seed, o.workers);
    }

    const std::size_t d = ds.horizon;
    std::string pcsv = "series_id,origin,path";
    for (std::size_t i = 1; i <= d; ++i) pcsv += ",y_" + std::to_string(i);
    pcsv += "\n";
    std::string qcsv = "series_id,origin,h";
    for (double u : o.u) qcsv += "," + u_column(u);
    qcsv += "\n";
    std::string ccsv = "series_id,origin,h";
    for (std::size_t i = 1; i <= d; ++i) ccsv += ",c_" + std::to_string(i);
    ccsv += "\n";

    for (const ForecastPaths& fp : paths) {
        const std::string key = fp.series_id + "," + std::to_string(fp.origin);
        for (std::size_t k = 0; k < fp.paths(); ++k) {
            pcsv += key + "," + std::to_string(k);
            for (std::size_t i = 0; i < d; ++i) pcsv += "," + io::format_double(fp.samples(k, i));
            pcsv += "\n";
        }
        std::vector<double> col(fp.paths());
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t k = 0; k < fp.paths(); ++k) col[k] = fp.samples(k, i);
            std::sort(col.begin(), col.end());
            qcsv += key + "," + std::to_string(i + 1);
            for (double u : o.u) qcsv += "," + io::format_double(empirical_quantile(col, u));
            qcsv += "\n";
        }
        for (std::size_t i = 0; i < d; ++i) {
            ccsv += key + "," + std::to_string(i + 1);
            for (std::size_t j = 0; j < d; ++j)
                ccsv += "," + io::format_double(i == j ? 1.0 : pearson(fp.samples, i, j));
            ccsv += "\n";
        }
    }
    const fs::path dir = out_dir(sh);
    io::write_file(dir / "paths.csv", pcsv);
    io::write_file(dir / "quantiles.csv", qcsv);
    io::write_file(dir / "correlation.csv", ccsv);
    out << "simulate: " << paths.size() << " series x " << o.paths << " paths" << (o.cross_series ? " (cross-series)" : "")
        << " -> " << dir.string() << "\n";
    return kExitOk;
}

// ---- evaluate -------------------------------------------------------------

/// Paths grouped by (series, origin) in file order.
std::vector<ForecastPaths> read_paths(const fs::path& file, std::size_t horizon) {
    std::vector<std::string> header;
    const auto rows = read_rows(file, header);
    if (header.size() < 4 || header[0] != "series_id" || header[1] != "origin" || header[2] != "path")
        throw FormatError(file.string() + ": expected columns series_id,origin,path,y_1..y_d");
    const std::size_t d = header.size() - 3;
    if (d != horizon)
        throw AlignmentError(file.filename().string() + " has " + std::to_string(d) + " horizons, dataset has " +
                             std::to_string(horizon));
    std::vector<ForecastPaths> out;
    std::vector<std::vector<double>> buf;
    auto flush = [&] {
        if (out.empty()) return;
        Tensor t({buf.size(), d});
        for (std::size_t k = 0; k < buf.size(); ++k) std::copy(buf[k].begin(), buf[k].end(), t.row(k).begin());
        out.back().samples = std::move(t);
        buf.clear();
    };
    for (const auto& r : rows) {
        const std::size_t origin = to_index(r[1], "paths");
        if (out.empty() || out.back().series_id != r[0] || out.back().origin != origin) {
            flush();
            ForecastPaths fp;
            fp.series_id = r[0];
            fp.origin = origin;
            out.push_back(std::move(fp));
        }
        if (to_index(r[2], "paths") != buf.size()) throw FormatError("paths: path indices must run 0..K-1 per series");
        std::vector<double> y(d);
        for (std::size_t i = 0; i < d; ++i) y[i] = io::parse_double(r[3 + i], "paths");
        buf.push_back(std::move(y));
    }
    flush();
    return out;
}

std::vector<double> realized(const SeriesDataset& ds, const std::string& id, std::size_t origin) {
    const Series& s = ds.series[ds.find(id)];
    if (origin + ds.horizon > s.length())
        throw AlignmentError("no realized targets for " + id + " at origin " + std::to_string(origin));
    std::vector<double> y(s.y.begin() + static_cast<std::ptrdiff_t>(origin),
                          s.y.begin() + static_cast<std::ptrdiff_t>(origin + ds.horizon));
    for (double v : y)
        if (std::isnan(v)) throw AlignmentError("unobserved target for " + id + " in the evaluation window");
    return y;
}

std::vector<ReportRow> read_report(const fs::path& file, std::string model) {
    std::vector<std::string> header;
    const auto rows = read_rows(file, header);
    if (header.size() < 4 || header[0] != "model" || header[1] != "group" || header[2] != "u" || header[3] != "mean_QL")
        throw FormatError(file.string() + ": not an evaluation report");
    if (model.empty() && !rows.empty()) model = rows.front()[0];
    std::vector<ReportRow> out;
    for (const auto& r : rows) {
        if (r[0] != model) continue;
        ReportRow row;
        row.model = r[0];
        row.group = r[1];
        row.u = io::parse_double(r[2], "report");
        row.mean_ql = io::parse_double(r[3], "report");
        out.push_back(row);
    }
    if (out.empty()) throw AlignmentError("baseline report has no rows for model '" + model + "'");
    return out;
}

struct EvaluateOptions {
    std::string data;
    std::string paths;
    std::string forecasts;
    std::string model = "gmq";
    std::string baseline;
    std::string baseline_model;
    std::vector<double> u = kEvaluationQuantiles;
    std::size_t min_paths = 20;
    std::size_t mesh_gamma = 0;
    std::string report = "report.csv";
};

int cmd_evaluate(const Shared& sh, const EvaluateOptions& e, std::ostream& out) {
    require(e.paths.empty() != e.forecasts.empty(), "give exactly one of --paths and --forecasts");
    require(e.mesh_gamma == 0 || !e.paths.empty(), "--mesh-gamma needs --paths");
    check_u(e.u);
    const SeriesDataset ds = io::load_dataset(data_dir(e.data));
    const std::size_t d = ds.horizon;
    std::vector<ReportRow> baseline;
    if (!e.baseline.empty()) baseline = read_report(e.baseline, e.baseline_model);

    ModelTables mt;
    mt.model = e.model;
    mt.nonnegative = ds.nonnegative;
    if (!e.paths.empty()) {
        const std::vector<Interval> cells = all_intervals(d);
        MeshSpec mesh;
        if (e.mesh_gamma) {
            require(e.mesh_gamma >= d, "--mesh-gamma budget must cover the d single-step cells");
            mesh = mesh_enumerate(d, e.mesh_gamma);
        }
        const std::vector<double> p50_p90{0.5, 0.9};
        for (const ForecastPaths& fp : read_paths(e.paths, d)) {
            mt.truths.push_back(realized(ds, fp.series_id, fp.origin));
            if (e.mesh_gamma) {
                const QuantileForecastTable pq = interval_sum_quantiles(fp, mesh, p50_p90, e.min_paths);
                const QuantileForecastTable gm = mesh_gamma_table(mesh, pq.values, e.u);
                mt.tables.push_back(interpolate_table(gm, cells));
            } else {
                mt.tables.push_back(interval_sum_quantiles(fp, cells, e.u, e.min_paths));
            }
        }
    } else {
        std::vector<std::string> header;
        const auto rows = read_rows(e.forecasts, header);
        if (header.size() < 5 || header[0] != "series_id" || header[1] != "origin" || header[2] != "l" || header[3] != "s")
            throw FormatError(e.forecasts + ": expected columns series_id,origin,l,s,q_<u>...");
        const std::vector<double> u = parse_u_columns(header, 4, e.forecasts);
        std::string cur_id;
        std::size_t cur_origin = 0;
        std::vector<Interval> cells;
        std::vector<double> vals;
        auto flush = [&] {
            if (cells.empty()) return;
            QuantileForecastTable t;
            t.cells = cells;
            t.u_set = u;
            t.values = Tensor({cells.size(), u.size()}, vals);
            mt.tables.push_back(std::move(t));
            mt.truths.push_back(realized(ds, cur_id, cur_origin));
            cells.clear();
            vals.clear();
        };
        for (const auto& r : rows) {
            const std::size_t origin = to_index(r[1], "forecasts");
            if (r[0] != cur_id || origin != cur_origin) {
                flush();
                cur_id = r[0];
                cur_origin = origin;
            }
            const Interval iv{to_index(r[2], "forecasts"), to_index(r[3], "forecasts")};
            if (iv.l < 1 || iv.s < 1 || iv.l + iv.s - 1 > d)
                throw AlignmentError("forecast interval (" + r[2] + "," + r[3] + ") is outside horizon d=" +
                                     std::to_string(d));
            cells.push_back(iv);
            for (std::size_t k = 0; k < u.size(); ++k) vals.push_back(io::parse_double(r[4 + k], "forecasts"));
        }
        flush();
    }
    if (mt.tables.empty()) throw InsufficientDataError("nothing to evaluate");

    const std::vector<ReportRow> rows = interval_ql_report(mt, baseline.empty() ? nullptr : &baseline);
    const std::string csv = report_csv(rows);
    const fs::path file = out_dir(sh) / e.report;
    io::write_file(file, csv);
    out << csv;
    return kExitOk;
}

// ---- anomaly --------------------------------------------------------------

struct AnomalyOptions {
    std::string data;
    std::string checkpoint;
    std::string paths;
};

int cmd_anomaly(const Shared& sh, const AnomalyOptions& a, std::ostream& out) {
    require(!a.checkpoint.empty(), "--checkpoint is required");
    const SeriesDataset ds = io::load_dataset(data_dir(a.data));
    const GmqModel model = io::load_checkpoint(a.checkpoint);
    const std::size_t d = ds.horizon;

    std::vector<Cut> cuts;
    std::vector<std::string> labels;
    std::vector<double> ys;
    if (a.paths.empty()) {
        for (const Cut& c : origin_cuts(ds)) {
            const auto y = realized(ds, ds.series[c.series].id, c.origin);
            cuts.push_back(c);
            labels.push_back("obs");
            ys.insert(ys.end(), y.begin(), y.end());
        }
    } else {
        for (const ForecastPaths& fp : read_paths(a.paths, d)) {
            const Cut c{ds.find(fp.series_id), fp.origin};
            for (std::size_t k = 0; k < fp.paths(); ++k) {
                cuts.push_back(c);
                labels.push_back(std::to_string(k));
                ys.insert(ys.end(), fp.samples.row(k).begin(), fp.samples.row(k).end());
            }
        }
    }
    const Tensor y({cuts.size(), d}, ys);
    const std::vector<AnomalyScore> scores = anomaly_scores(model, ds, cuts, y);

    std::string pcsv = "series_id,origin,path,h,y,u_tilde,z_tilde\n";
    std::string scsv = "series_id,origin,path,joint_nll\n";
    for (std::size_t n = 0; n < cuts.size(); ++n) {
        const std::string key =
            ds.series[cuts[n].series].id + "," + std::to_string(cuts[n].origin) + "," + labels[n];
        for (std::size_t i = 0; i < d; ++i)
            pcsv += key + "," + std::to_string(i + 1) + "," + io::format_double(y(n, i)) + "," +
                    io::format_double(scores[n].u_tilde[i]) + "," + io::format_double(scores[n].z_star_tilde[i]) + "\n";
        scsv += key + "," + io::format_double(scores[n].joint) + "\n";
    }
    const fs::path dir = out_dir(sh);
    io::write_file(dir / "anomaly_points.csv", pcsv);
    io::write_file(dir / "anomaly_series.csv", scsv);
    out << "anomaly: scored " << cuts.size() << " windows -> " << dir.string() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Quantile-copula probabilistic forecasting", "gmq"};
    app.require_subcommand(1);
    app.fallthrough(false);

    Shared sh;
    GenOptions gen;
    TrainOptions tr;
    ForecastOptions fc;
    SimulateOptions sim;
    EvaluateOptions ev;
    AnomalyOptions an;

    CLI::App* c_gen = app.add_subcommand("gen-data", "generate a synthetic dataset with oracle metadata");
    Options o_gen(c_gen, "gen-data");
    add_shared(o_gen, sh);
    o_gen.add("--suite", gen.suite, "linear-gaussian, regime-copula or seasonal-counts");
    o_gen.add("--series", gen.series, "number of series (0: suite default)");
    o_gen.add("--d", gen.d, "forecast horizon");
    o_gen.add("--rho", gen.rho, "noise correlation (linear-gaussian)");
    o_gen.add("--rho-on", gen.rho_on, "correlation when r = 1 (regime-copula)");
    o_gen.add("--rho-off", gen.rho_off, "correlation when r = 0 (regime-copula)");
    o_gen.add("--slope", gen.slope, "covariate slope (gaussian suites)");
    o_gen.add("--blocks", gen.blocks, "observed blocks per series (gaussian suites)");
    o_gen.add("--length", gen.length, "series length (seasonal-counts)");
    o_gen.add("--history", gen.history, "encoder window (seasonal-counts)");
    o_gen.add("--period", gen.period, "season length (seasonal-counts)");
    o_gen.add("--promo-lift", gen.promo_lift, "log-intensity lift of a promotion");
    o_gen.add("--promo-rate", gen.promo_rate, "promotion probability per step");
    o_gen.add("--cold-start", gen.cold_start, "share of late-starting series");
    o_gen.add("--intensity-scale", gen.intensity_scale, "multiplies every intensity");

    CLI::App* c_train = app.add_subcommand("train", "two-phase training; writes a checkpoint and loss history");
    Options o_train(c_train, "train");
    add_shared(o_train, sh);
    o_train.add("--data", tr.data, "dataset directory (default $GMQ_DATA_DIR or ./data)");
    o_train.add("--checkpoint", tr.checkpoint, "checkpoint file name inside --out");
    o_train.add("--losses", tr.losses, "loss-history file name inside --out");
    o_train.add("--epochs", tr.epochs, "phase-1 epochs");
    o_train.add("--lr", tr.lr, "phase-1 learning rate");
    o_train.add("--batch", tr.batch, "phase-1 examples per minibatch");
    o_train.add("--momentum", tr.momentum, "SGD momentum");
    o_train.add("--inverse-weight", tr.inverse_weight, "weight of the inverse reconstruction loss");
    o_train.add("--clip-norm", tr.clip_norm, "global gradient-norm cap (0 disables)");
    o_train.add("--phase2-epochs", tr.phase2_epochs, "phase-2 epochs");
    o_train.add("--phase2-lr", tr.phase2_lr, "phase-2 learning rate");
    o_train.add("--phase2-batch", tr.phase2_batch, "phase-2 examples per minibatch");
    o_train.flag("--no-copula", tr.no_copula, "skip phase 2 (independence copula)");
    o_train.add("--freeze-phase1", tr.freeze_phase1, "phase 2 trains only the copula head");
    o_train.add("--stride", tr.stride, "training cut stride (0: dataset value)");
    o_train.add("--encoder-hidden", tr.encoder_hidden, "encoder hidden width");
    o_train.add("--embedding", tr.embedding, "encoder embedding width");
    o_train.add("--horizon-embedding", tr.horizon_embedding, "horizon embedding width");
    o_train.add("--qnet-hidden", tr.qnet_hidden, "quantile-net hidden widths");
    o_train.add("--copula-hidden", tr.copula_hidden, "copula head hidden width");

    CLI::App* c_fc = app.add_subcommand("forecast", "direct marginal quantile forecasts");
    Options o_fc(c_fc, "forecast");
    add_shared(o_fc, sh);
    o_fc.add("--data", fc.data, "dataset directory");
    o_fc.add("--checkpoint", fc.checkpoint, "trained model");
    o_fc.add("--u", fc.u, "quantile levels in (0,1)");
    o_fc.flag("--sort-quantiles", fc.sort_quantiles, "sort each row's quantiles");
    o_fc.flag("--oracle", fc.oracle, "true quantiles from oracle.json instead of a model");
    o_fc.flag("--all-intervals", fc.all_intervals, "with --oracle: every (l,s) interval");
    o_fc.add("--file", fc.file, "output file name inside --out");

    CLI::App* c_sim = app.add_subcommand("simulate", "sample paths, per-horizon quantiles and correlations");
    Options o_sim(c_sim, "simulate");
    add_shared(o_sim, sh);
    o_sim.add("--data", sim.data, "dataset directory");
    o_sim.add("--checkpoint", sim.checkpoint, "trained model");
    o_sim.add("--paths", sim.paths, "paths per series (K)");
    o_sim.add("--workers", sim.workers, "sampling threads");
    o_sim.add("--override-future", sim.override_future, "CSV series_id,t,<future columns> for what-if runs");
    o_sim.flag("--cross-series", sim.cross_series, "couple series through the cross-series matrix");
    o_sim.add("--shrinkage", sim.shrinkage, "cross-series shrinkage toward identity");
    o_sim.add("--threshold", sim.threshold, "cross-series correlation threshold");
    o_sim.add("--cross-cuts", sim.cross_cuts, "recent training cuts per series for the cross-series matrix");
    o_sim.add("--u", sim.u, "levels for quantiles.csv");

    CLI::App* c_ev = app.add_subcommand("evaluate", "interval QL and crossing report");
    Options o_ev(c_ev, "evaluate");
    add_shared(o_ev, sh);
    o_ev.add("--data", ev.data, "dataset directory (truth)");
    o_ev.add("--paths", ev.paths, "paths.csv from simulate");
    o_ev.add("--forecasts", ev.forecasts, "forecasts.csv from forecast");
    o_ev.add("--model", ev.model, "model name in the report");
    o_ev.add("--baseline", ev.baseline, "report CSV used to scale QL");
    o_ev.add("--baseline-model", ev.baseline_model, "model in the baseline report (default: first)");
    o_ev.add("--u", ev.u, "quantile levels for path-based tables");
    o_ev.add("--min-paths", ev.min_paths, "minimum paths per series");
    o_ev.add("--mesh-gamma", ev.mesh_gamma, "mesh budget for the shifted-Gamma mesh baseline (0: off)");
    o_ev.add("--report", ev.report, "report file name inside --out");

    CLI::App* c_an = app.add_subcommand("anomaly", "per-point and joint anomaly scores");
    Options o_an(c_an, "anomaly");
    add_shared(o_an, sh);
    o_an.add("--data", an.data, "dataset directory");
    o_an.add("--checkpoint", an.checkpoint, "trained model");
    o_an.add("--paths", an.paths, "score these paths instead of the observed targets");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (c_gen->parsed()) {
            o_gen.apply_config(sh.config);
            return cmd_gen_data(sh, gen, out);
        }
        if (c_train->parsed()) {
            o_train.apply_config(sh.config);
            return cmd_train(sh, tr, out, err);
        }
        if (c_fc->parsed()) {
            o_fc.apply_config(sh.config);
            return cmd_forecast(sh, fc, out);
        }
        if (c_sim->parsed()) {
            o_sim.apply_config(sh.config);
            return cmd_simulate(sh, sim, out, err);
        }
        if (c_ev->parsed()) {
            o_ev.apply_config(sh.config);
            return cmd_evaluate(sh, ev, out);
        }
        if (c_an->parsed()) {
            o_an.apply_config(sh.config);
            return cmd_anomaly(sh, an, out);
        }
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const AlignmentError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InsufficientDataError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TrainingDivergedError& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace gmq::cli
