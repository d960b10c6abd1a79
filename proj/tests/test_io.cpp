#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gmq/error.hpp"
#include "gmq/forecaster.hpp"
#include "gmq/io.hpp"
#include "gmq/synthetic.hpp"

using namespace gmq;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(const SeriesDataset& ds) {
    ModelConfig mc = ModelConfig::for_dataset(ds);
    mc.encoder_hidden = 8;
    mc.embedding = 4;
    mc.qnet_hidden = {8};
    mc.copula_hidden = 8;
    return mc;
}

GmqModel trained_toy(const SeriesDataset& ds) {
    GmqModel m(small_config(ds), 4);
    GmqTrainConfig cfg;
    cfg.phase1.epochs = 2;
    cfg.phase2.epochs = 2;
    train_gmq(m, ds, cfg);
    return m;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("number formatting round-trips") {
    for (double v : {0.0, -1.5, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.2250738585072014e-308}) {
        CHECK(io::parse_double(io::format_double(v), "v") == v);
    }
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(std::nan("")) == "nan");
    CHECK(std::isnan(io::parse_double("", "v")));
    CHECK_THROWS_AS(io::parse_double("1.5x", "v"), FormatError);
    CHECK(io::split_csv("a,\"b,c\",d\r") == std::vector<std::string>{"a", "b,c", "d"});
}

TEST_CASE("dataset files round-trip byte for byte") {
    const fs::path dir = fixtures::temp_dir("io_dataset");
    SeriesDataset ds = fixtures::toy_dataset(3, 25, 4, 6);
    ds.series[2].y[5] = 0.1 + 0.2;
    io::save_dataset(ds, dir / "a");
    const SeriesDataset back = io::load_dataset(dir / "a");
    REQUIRE(back.series.size() == 3);
    CHECK(back.series[2].y == ds.series[2].y);
    CHECK(back.series[1].future_cov == ds.series[1].future_cov);
    CHECK(back.series[0].hist_cov == ds.series[0].hist_cov);
    CHECK(back.future_names == ds.future_names);
    CHECK(back.holdout == ds.holdout);
    io::save_dataset(back, dir / "b");
    for (const char* f : {"dataset.json", "series.csv", "observations.csv", "future.csv"}) {
        CAPTURE(f);
        CHECK(io::read_file(dir / "a" / f) == io::read_file(dir / "b" / f));
    }

    // a truncated observations table is an alignment error
    std::string obs = io::read_file(dir / "a" / "observations.csv");
    obs.erase(obs.rfind('\n', obs.size() - 2) + 1);
    io::write_file(dir / "a" / "observations.csv", obs);
    CHECK_THROWS_AS(io::load_dataset(dir / "a"), AlignmentError);
    CHECK_THROWS_AS(io::load_dataset(dir / "missing"), FormatError);
}

TEST_CASE("oracle metadata round-trips") {
    const fs::path dir = fixtures::temp_dir("io_oracle");
    SeasonalCountsParams p;
    p.n_series = 4;
    const SyntheticOutput o = gen_seasonal_counts(p);
    io::save_oracle(o.suite, dir / "oracle.json");
    const SyntheticSuite back = io::load_oracle(dir / "oracle.json");
    CHECK(back.name == o.suite.name);
    CHECK(back.kind == NoiseKind::Poisson);
    CHECK(back.location == o.suite.location);
    CHECK(back.param("promo_lift") == o.suite.param("promo_lift"));
    CHECK(back.quantile(2, 30, 0.9) == o.suite.quantile(2, 30, 0.9));
}

TEST_CASE("checkpoint round-trip") {
    const fs::path dir = fixtures::temp_dir("io_ckpt");
    const SeriesDataset ds = fixtures::toy_dataset(3, 40, 4, 8);
    const GmqModel m = trained_toy(ds);
    io::CheckpointMeta meta;
    meta.training["epochs"] = 2;
    io::save_checkpoint(m, meta, dir / "m.gmq");
    io::CheckpointMeta meta_back;
    const GmqModel back = io::load_checkpoint(dir / "m.gmq", &meta_back);
    CHECK(meta_back.training["epochs"] == 2);
    CHECK(back.has_copula());
    CHECK(back.phase1_done());
    CHECK(back.known_ids() == m.known_ids());
    io::save_checkpoint(back, meta_back, dir / "m2.gmq");
    CHECK(io::read_file(dir / "m.gmq") == io::read_file(dir / "m2.gmq"));

    const std::vector<Cut> cuts = origin_cuts(ds);
    const auto a = simulate_paths(m, ds, cuts, 20, 3);
    const auto b = simulate_paths(back, ds, cuts, 20, 3);
    for (std::size_t n = 0; n < a.size(); ++n) CHECK(a[n].samples == b[n].samples);
    const std::vector<double> u{0.1, 0.5, 0.9};
    CHECK(direct_quantiles(m, ds, cuts, u) == direct_quantiles(back, ds, cuts, u));
}

TEST_CASE("corrupt checkpoints are rejected") {
    const SeriesDataset ds = fixtures::toy_dataset(2, 30, 4, 6);
    const GmqModel m(small_config(ds), 1);
    const std::string bytes = io::checkpoint_bytes(m, {});
    CHECK_NOTHROW(io::parse_checkpoint(bytes));

    std::string version = bytes;
    version[8] = 2;
    CHECK_THROWS_WITH_AS(io::parse_checkpoint(version), doctest::Contains("version"), FormatError);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(io::parse_checkpoint(magic), FormatError);
    CHECK_THROWS_AS(io::parse_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(io::parse_checkpoint(bytes + "x"), FormatError);
    CHECK_THROWS_AS(io::load_checkpoint("/nonexistent/model.gmq"), FormatError);
}

}  // TEST_SUITE io
