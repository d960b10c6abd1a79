#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gmq/cli.hpp"
#include "gmq/io.hpp"

using namespace gmq;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run gmq_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t col(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        REQUIRE(it != header.end());
        return static_cast<std::size_t>(it - header.begin());
    }
    [[nodiscard]] double num(std::size_t r, const std::string& name) const {
        return io::parse_double(rows[r][col(name)], name);
    }
};

Table read_table(const fs::path& file) {
    std::istringstream in(io::read_file(file));
    Table t;
    std::string line;
    std::getline(in, line);
    t.header = io::split_csv(line);
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(io::split_csv(line));
    return t;
}

/// Seasonal dataset and a quickly trained model shared by several cases.
const fs::path& seasonal_dir() {
    static const fs::path dir = [] {
        const fs::path d = fixtures::temp_dir("cli_seasonal");
        REQUIRE(gmq_run({"gen-data", "--suite", "seasonal-counts", "--series", "100", "--out", p(d / "data")}).code == 0);
        const Run r = gmq_run({"train", "--data", p(d / "data"), "--out", p(d), "--epochs", "10", "--phase2-epochs", "3",
                               "--qnet-hidden", "32,32"});
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help and usage errors") {
    CHECK(gmq_run({"--help"}).code == cli::kExitOk);
    CHECK(gmq_run({}).code == cli::kExitUsage);
    CHECK(gmq_run({"frobnicate"}).code == cli::kExitUsage);
    CHECK(gmq_run({"train", "--epochs", "many"}).code == cli::kExitUsage);
}

TEST_CASE("gen-data writes a deterministic dataset") {
    const fs::path d = fixtures::temp_dir("cli_gen");
    const Run a = gmq_run({"gen-data", "--suite", "linear-gaussian", "--series", "500", "--d", "8", "--seed", "1",
                           "--out", p(d / "a")});
    REQUIRE(a.code == 0);
    CHECK(a.out.find("500 series") != std::string::npos);
    CHECK(a.out.find("d=8") != std::string::npos);
    REQUIRE(gmq_run({"gen-data", "--suite", "linear-gaussian", "--series", "500", "--d", "8", "--seed", "1", "--out",
                     p(d / "b")})
                .code == 0);
    for (const char* f : {"dataset.json", "series.csv", "observations.csv", "future.csv", "oracle.json"}) {
        CAPTURE(f);
        REQUIRE(fs::exists(d / "a" / f));
        CHECK(io::read_file(d / "a" / f) == io::read_file(d / "b" / f));
    }
    REQUIRE(gmq_run({"gen-data", "--suite", "linear-gaussian", "--series", "500", "--seed", "2", "--out", p(d / "c")})
                .code == 0);
    CHECK(io::read_file(d / "a" / "observations.csv") != io::read_file(d / "c" / "observations.csv"));

    const Run bad = gmq_run({"gen-data", "--suite", "random-walk", "--out", p(d / "x")});
    CHECK(bad.code == cli::kExitUsage);
    CHECK(bad.err.find("linear-gaussian") != std::string::npos);
    CHECK(bad.err.find("seasonal-counts") != std::string::npos);
    CHECK_FALSE(fs::exists(d / "x"));
}

TEST_CASE("train is deterministic and honours --no-copula") {
    const fs::path d = fixtures::temp_dir("cli_train");
    REQUIRE(gmq_run({"gen-data", "--suite", "seasonal-counts", "--series", "20", "--out", p(d / "data")}).code == 0);
    const std::vector<std::string> base{"train", "--data", p(d / "data"), "--epochs", "3", "--phase2-epochs", "2",
                                        "--qnet-hidden", "16"};
    auto with_out = [&](const std::string& sub, std::vector<std::string> extra = {}) {
        std::vector<std::string> a = base;
        a.push_back("--out");
        a.push_back(p(d / sub));
        a.insert(a.end(), extra.begin(), extra.end());
        return gmq_run(a);
    };
    REQUIRE(with_out("r1").code == 0);
    REQUIRE(with_out("r2").code == 0);
    CHECK(io::read_file(d / "r1" / "loss_history.csv") == io::read_file(d / "r2" / "loss_history.csv"));
    CHECK(io::read_file(d / "r1" / "model.gmq") == io::read_file(d / "r2" / "model.gmq"));

    const Table losses = read_table(d / "r1" / "loss_history.csv");
    CHECK(losses.header == std::vector<std::string>{"phase", "epoch", "l1", "l2", "l3"});
    CHECK(losses.rows.size() == 5);
    CHECK(io::load_checkpoint(d / "r1" / "model.gmq").has_copula());

    REQUIRE(with_out("ind", {"--no-copula"}).code == 0);
    const GmqModel ind = io::load_checkpoint(d / "ind" / "model.gmq");
    CHECK_FALSE(ind.has_copula());
    CHECK(read_table(d / "ind" / "loss_history.csv").rows.size() == 3);

    CHECK(with_out("bad", {"--epochs", "0"}).code == cli::kExitUsage);
    CHECK(gmq_run({"train", "--data", p(d / "nowhere"), "--out", p(d / "x")}).code == cli::kExitUsage);
}

TEST_CASE("constant series train to near-zero loss and forecast their level") {
    const fs::path d = fixtures::temp_dir("cli_const");
    SeriesDataset ds = fixtures::toy_dataset(6, 48, 4, 8);
    for (auto& s : ds.series) {
        std::fill(s.y.begin(), s.y.end(), 50.0);
        for (std::size_t t = 0; t < s.length(); ++t) s.hist_cov(t, 0) = t > 0 ? 50.0 : 0.0;
    }
    io::save_dataset(ds, d / "data");
    REQUIRE(gmq_run({"train", "--data", p(d / "data"), "--out", p(d), "--epochs", "20", "--batch", "16",
                     "--qnet-hidden", "16,16", "--no-copula"})
                .code == 0);
    const Table losses = read_table(d / "loss_history.csv");
    CHECK(io::parse_double(losses.rows.back()[2], "l1") < 0.05);

    REQUIRE(gmq_run({"forecast", "--data", p(d / "data"), "--checkpoint", p(d / "model.gmq"), "--u", "0.5", "--out",
                     p(d)})
                .code == 0);
    const Table f = read_table(d / "forecasts.csv");
    REQUIRE(f.rows.size() == 6 * 4);
    for (std::size_t r = 0; r < f.rows.size(); ++r) CHECK(std::fabs(f.num(r, "q_0.5") / 50.0 - 1.0) < 0.02);

    REQUIRE(gmq_run({"anomaly", "--data", p(d / "data"), "--checkpoint", p(d / "model.gmq"), "--out", p(d)}).code == 0);
    const Table a = read_table(d / "anomaly_points.csv");
    for (std::size_t r = 0; r < a.rows.size(); ++r) CHECK(std::fabs(a.num(r, "u_tilde") - 0.5) < 0.15);
}

TEST_CASE("forecast validates quantile levels and sorts on request") {
    const fs::path& s = seasonal_dir();
    const fs::path d = fixtures::temp_dir("cli_forecast");
    const Run bad = gmq_run({"forecast", "--data", p(s / "data"), "--checkpoint", p(s / "model.gmq"), "--u", "0.5,1.2",
                             "--out", p(d)});
    CHECK(bad.code == cli::kExitUsage);
    CHECK(bad.err.find("1.2") != std::string::npos);
    CHECK(gmq_run({"forecast", "--data", p(s / "data"), "--checkpoint", p(d / "none.gmq"), "--out", p(d)}).code ==
          cli::kExitUsage);

    REQUIRE(gmq_run({"forecast", "--data", p(s / "data"), "--checkpoint", p(s / "model.gmq"), "--u", "0.1,0.5,0.9",
                     "--sort-quantiles", "--out", p(d)})
                .code == 0);
    const Table f = read_table(d / "forecasts.csv");
    CHECK(f.header == std::vector<std::string>{"series_id", "origin", "l", "s", "q_0.1", "q_0.5", "q_0.9"});
    CHECK(f.rows.size() == 100 * 8);
    for (std::size_t r = 0; r < f.rows.size(); ++r) {
        CHECK(f.num(r, "q_0.1") <= f.num(r, "q_0.5"));
        CHECK(f.num(r, "q_0.5") <= f.num(r, "q_0.9"));
    }
}

TEST_CASE("simulate is deterministic and supports what-if overrides") {
    const fs::path& s = seasonal_dir();
    const fs::path d = fixtures::temp_dir("cli_simulate");
    const std::vector<std::string> base{"simulate", "--data", p(s / "data"), "--checkpoint", p(s / "model.gmq"),
                                        "--paths", "100", "--seed", "3"};
    auto sim = [&](const std::string& sub, std::vector<std::string> extra = {}) {
        std::vector<std::string> a = base;
        a.push_back("--out");
        a.push_back(p(d / sub));
        a.insert(a.end(), extra.begin(), extra.end());
        return gmq_run(a);
    };
    REQUIRE(sim("a").code == 0);
    REQUIRE(sim("b", {"--workers", "3"}).code == 0);
    for (const char* f : {"paths.csv", "quantiles.csv", "correlation.csv"}) {
        CAPTURE(f);
        CHECK(io::read_file(d / "a" / f) == io::read_file(d / "b" / f));
    }
    CHECK(read_table(d / "a" / "paths.csv").rows.size() == 100 * 100);
    const Table corr = read_table(d / "a" / "correlation.csv");
    CHECK(corr.rows.size() == 100 * 8);
    CHECK(corr.num(0, "c_1") == doctest::Approx(1.0));

    // switch the promotion on over every forecast step of the first ten series
    const SeriesDataset ds = io::load_dataset(s / "data");
    std::ostringstream ov;
    ov << "series_id,t,promo\n";
    std::map<std::pair<std::string, std::size_t>, bool> lifted;
    std::set<std::string> touched;
    for (std::size_t k = 0; k < 10; ++k) {
        const Series& ser = ds.series[k];
        const std::size_t origin = ds.default_origin(k);
        for (std::size_t i = 0; i < ds.horizon; ++i) {
            if (ser.future_cov(origin + i, 2) != 0.0) continue;
            ov << ser.id << ',' << origin + i << ",1\n";
            lifted[{ser.id, i + 1}] = true;
            touched.insert(ser.id);
        }
    }
    REQUIRE(lifted.size() > 20);
    io::write_file(d / "promo.csv", ov.str());
    REQUIRE(sim("whatif", {"--override-future", p(d / "promo.csv")}).code == 0);
    const Table q0 = read_table(d / "a" / "quantiles.csv");
    const Table q1 = read_table(d / "whatif" / "quantiles.csv");
    REQUIRE(q0.rows.size() == q1.rows.size());
    std::size_t checked = 0;
    for (std::size_t r = 0; r < q0.rows.size(); ++r) {
        const auto key = std::make_pair(q0.rows[r][0], static_cast<std::size_t>(q0.num(r, "h")));
        if (lifted.count(key)) {
            CHECK(q1.num(r, "q_0.5") > q0.num(r, "q_0.5"));
            ++checked;
        } else if (!touched.count(q0.rows[r][0])) {
            CHECK(q1.rows[r] == q0.rows[r]);
        }
    }
    CHECK(checked == lifted.size());

    io::write_file(d / "bad.csv", "series_id,t,discount\n" + ds.series[0].id + ",150,1\n");
    CHECK(sim("bad", {"--override-future", p(d / "bad.csv")}).code == cli::kExitUsage);
    CHECK(sim("zero", {"--paths", "0"}).code == cli::kExitUsage);

    REQUIRE(sim("cross", {"--cross-series"}).code == 0);
    REQUIRE(sim("cross2", {"--cross-series"}).code == 0);
    CHECK(io::read_file(d / "cross" / "paths.csv") == io::read_file(d / "cross2" / "paths.csv"));
}

TEST_CASE("evaluate reports interval QL and crossings") {
    const fs::path& s = seasonal_dir();
    const fs::path d = fixtures::temp_dir("cli_evaluate");
    REQUIRE(gmq_run({"simulate", "--data", p(s / "data"), "--checkpoint", p(s / "model.gmq"), "--paths", "50", "--out",
                     p(d / "sim")})
                .code == 0);
    const Run ev = gmq_run({"evaluate", "--data", p(s / "data"), "--paths", p(d / "sim" / "paths.csv"), "--out",
                            p(d / "gmq")});
    REQUIRE(ev.code == 0);
    CHECK(ev.out == io::read_file(d / "gmq" / "report.csv"));
    const Table gmq = read_table(d / "gmq" / "report.csv");
    CHECK(gmq.rows.size() == 3 * 6);
    for (std::size_t r = 0; r < gmq.rows.size(); ++r) {
        CHECK(gmq.num(r, "q_x") == 0.0);
        CHECK(gmq.num(r, "i_x") == 0.0);
    }

    REQUIRE(gmq_run({"evaluate", "--data", p(s / "data"), "--paths", p(d / "sim" / "paths.csv"), "--model",
                     "mesh_gm", "--mesh-gamma", "20", "--out", p(d / "mesh")})
                .code == 0);
    const Table mesh = read_table(d / "mesh" / "report.csv");
    CHECK(mesh.num(0, "i_x") > 0.0);

    // oracle forecasts scaled by themselves
    REQUIRE(gmq_run({"forecast", "--data", p(s / "data"), "--oracle", "--all-intervals", "--u",
                     "0.1,0.3,0.5,0.7,0.9,0.95", "--out", p(d / "oracle")})
                .code == 0);
    const Run o = gmq_run({"evaluate", "--data", p(s / "data"), "--forecasts", p(d / "oracle" / "forecasts.csv"),
                           "--model", "oracle", "--out", p(d / "oracle")});
    REQUIRE(o.code == 0);
    REQUIRE(gmq_run({"evaluate", "--data", p(s / "data"), "--paths", p(d / "sim" / "paths.csv"), "--baseline",
                     p(d / "oracle" / "report.csv"), "--report", "scaled.csv", "--out", p(d / "gmq")})
                .code == 0);
    const Table scaled = read_table(d / "gmq" / "scaled.csv");
    for (std::size_t r = 0; r < scaled.rows.size(); ++r) CHECK(scaled.num(r, "scaled_QL") > 0.9);
    REQUIRE(gmq_run({"evaluate", "--data", p(s / "data"), "--forecasts", p(d / "oracle" / "forecasts.csv"), "--model",
                     "oracle", "--baseline", p(d / "oracle" / "report.csv"), "--report", "self.csv", "--out",
                     p(d / "oracle")})
                .code == 0);
    const Table self = read_table(d / "oracle" / "self.csv");
    for (std::size_t r = 0; r < self.rows.size(); ++r) CHECK(self.num(r, "scaled_QL") == doctest::Approx(1.0));

    // paths with a different horizon
    REQUIRE(gmq_run({"gen-data", "--suite", "seasonal-counts", "--series", "100", "--d", "4", "--out", p(d / "d4")})
                .code == 0);
    const Run mismatch = gmq_run({"evaluate", "--data", p(d / "d4"), "--paths", p(d / "sim" / "paths.csv"), "--out",
                                  p(d / "mm")});
    CHECK(mismatch.code == cli::kExitUsage);
    CHECK(gmq_run({"evaluate", "--data", p(s / "data"), "--out", p(d / "none")}).code == cli::kExitUsage);
}

TEST_CASE("anomaly flags an injected spike") {
    const fs::path& s = seasonal_dir();
    const fs::path d = fixtures::temp_dir("cli_anomaly");
    SeriesDataset ds = io::load_dataset(s / "data");
    const std::size_t t_spike = ds.default_origin(4) + 2;
    ds.series[4].y[t_spike] += 1000.0;
    io::save_dataset(ds, d / "data");
    REQUIRE(gmq_run({"anomaly", "--data", p(d / "data"), "--checkpoint", p(s / "model.gmq"), "--out", p(d)}).code == 0);
    const Table pts = read_table(d / "anomaly_points.csv");
    CHECK(pts.header ==
          std::vector<std::string>{"series_id", "origin", "path", "h", "y", "u_tilde", "z_tilde"});
    CHECK(pts.rows.size() == 100 * 8);
    bool found = false;
    for (std::size_t r = 0; r < pts.rows.size(); ++r) {
        CHECK(pts.num(r, "u_tilde") > 0.0);
        CHECK(pts.num(r, "u_tilde") < 1.0);
        if (pts.rows[r][0] == ds.series[4].id && pts.num(r, "h") == 3.0) {
            found = true;
            CHECK(pts.num(r, "u_tilde") > 0.99);
        }
    }
    CHECK(found);

    REQUIRE(gmq_run({"anomaly", "--data", p(s / "data"), "--checkpoint", p(s / "model.gmq"), "--out", p(d / "clean")})
                .code == 0);
    const Table spiked = read_table(d / "anomaly_series.csv");
    const Table clean = read_table(d / "clean" / "anomaly_series.csv");
    REQUIRE(spiked.rows.size() == 100);
    for (std::size_t r = 0; r < spiked.rows.size(); ++r) {
        if (spiked.rows[r][0] == ds.series[4].id) {
            CHECK(spiked.num(r, "joint_nll") > clean.num(r, "joint_nll") + 5.0);
        } else {
            CHECK(spiked.rows[r] == clean.rows[r]);
        }
    }
}

TEST_CASE("config files") {
    const fs::path d = fixtures::temp_dir("cli_config");
    io::write_file(d / "bad.json", R"({"suite": "linear-gaussian", "colour": "blue"})");
    const Run bad = gmq_run({"gen-data", "--config", p(d / "bad.json"), "--out", p(d / "x")});
    CHECK(bad.code == cli::kExitUsage);
    CHECK(bad.err.find("colour") != std::string::npos);

    io::write_file(d / "typed.json", R"({"series": "many"})");
    CHECK(gmq_run({"gen-data", "--config", p(d / "typed.json"), "--out", p(d / "x")}).code == cli::kExitUsage);

    io::write_file(d / "ok.json",
                   R"({"suite": "seasonal-counts", "series": 7, "train": {"epochs": 99}, "gen-data": {"d": 4}})");
    REQUIRE(gmq_run({"gen-data", "--config", p(d / "ok.json"), "--series", "5", "--out", p(d / "ok")}).code == 0);
    const SeriesDataset ds = io::load_dataset(d / "ok");
    CHECK(ds.series.size() == 5);
    CHECK(ds.horizon == 4);
    CHECK(ds.nonnegative);

    CHECK(gmq_run({"gen-data", "--config", p(d / "missing.json")}).code == cli::kExitUsage);
}

}  // TEST_SUITE cli
