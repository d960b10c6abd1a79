#include "gmq/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "gmq/error.hpp"

namespace gmq::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            out.emplace_back();
        } else if (ch != '\r') {
            out.back() += ch;
        }
    }
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    if (s == "nan" || s == "NaN" || s.empty()) return std::nan("");
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError("cannot parse number '" + s + "' in " + what);
    return v;
}

static std::size_t parse_index(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError("cannot parse integer '" + s + "' in " + what);
    return v;
}

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& file, const std::string& content) {
    std::error_code ec;
    if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + file.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw FormatError("write failed for " + file.string());
}

// ---- dataset --------------------------------------------------------------

static std::string mode_name(StandardizeMode m) { return m == StandardizeMode::None ? "none" : "robust"; }

static StandardizeMode mode_from(const std::string& s) {
    if (s == "robust") return StandardizeMode::Robust;
    if (s == "none") return StandardizeMode::None;
    throw FormatError("unknown standardize mode '" + s + "' (expected robust or none)");
}

void save_dataset(const SeriesDataset& ds, const fs::path& dir) {
    ds.validate();
    json m;
    m["format"] = "gmq-dataset";
    m["version"] = kDatasetVersion;
    m["name"] = ds.name;
    m["horizon"] = ds.horizon;
    m["history"] = ds.history;
    m["cut_stride"] = ds.cut_stride;
    m["cut_offset"] = ds.cut_offset;
    m["min_history"] = ds.min_history;
    m["holdout"] = ds.holdout;
    m["nonnegative"] = ds.nonnegative;
    m["standardize"] = mode_name(ds.standardize);
    m["hist_names"] = ds.hist_names;
    m["future_names"] = ds.future_names;
    m["static_names"] = ds.static_names;
    m["tables"] = {{"series", "series.csv"}, {"observations", "observations.csv"}, {"future", "future.csv"}};

    std::string series = "series_id,length,future_length";
    for (const auto& n : ds.static_names) series += "," + n;
    series += "\n";
    std::string obs = "series_id,t,y";
    for (const auto& n : ds.hist_names) obs += "," + n;
    obs += "\n";
    std::string fut = "series_id,t";
    for (const auto& n : ds.future_names) fut += "," + n;
    fut += "\n";

    for (const Series& s : ds.series) {
        series += s.id + "," + std::to_string(s.length()) + "," + std::to_string(s.future_cov.rows());
        for (double v : s.static_cov) series += "," + format_double(v);
        series += "\n";
        for (std::size_t t = 0; t < s.length(); ++t) {
            obs += s.id + "," + std::to_string(t) + "," + format_double(s.y[t]);
            for (std::size_t j = 0; j < ds.n_hist(); ++j) obs += "," + format_double(s.hist_cov(t, j));
            obs += "\n";
        }
        for (std::size_t t = 0; t < s.future_cov.rows(); ++t) {
            fut += s.id + "," + std::to_string(t);
            for (std::size_t j = 0; j < ds.n_future(); ++j) fut += "," + format_double(s.future_cov(t, j));
            fut += "\n";
        }
    }
    write_file(dir / "dataset.json", m.dump(2) + "\n");
    write_file(dir / "series.csv", series);
    write_file(dir / "observations.csv", obs);
    write_file(dir / "future.csv", fut);
}

namespace {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError("cannot open " + file.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(file.string() + " is empty");
    t.header = split_csv(line);
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        t.rows.push_back(split_csv(line));
        if (t.rows.back().size() != t.header.size())
            throw FormatError(file.filename().string() + " line " + std::to_string(t.rows.size() + 1) + ": expected " +
                              std::to_string(t.header.size()) + " fields");
    }
    return t;
}

void expect_header(const CsvTable& t, const std::vector<std::string>& want, const std::string& file) {
    if (t.header != want) {
        std::string w;
        for (const auto& s : want) w += (w.empty() ? "" : ",") + s;
        throw FormatError(file + ": header does not match manifest (expected " + w + ")");
    }
}

template <class T>
T get_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError(where + ": key '" + std::string(key) + "' has the wrong type");
    }
}

}  // namespace

SeriesDataset load_dataset(const fs::path& dir) {
    const fs::path manifest = dir / "dataset.json";
    if (!fs::exists(manifest)) throw FormatError("no dataset.json in " + dir.string());
    json m;
    try {
        m = json::parse(read_file(manifest));
    } catch (const json::parse_error& e) {
        throw FormatError("dataset.json: " + std::string(e.what()));
    }
    const std::string where = "dataset.json";
    if (get_field<std::string>(m, "format", where) != "gmq-dataset") throw FormatError("dataset.json: wrong format tag");
    const int version = get_field<int>(m, "version", where);
    if (version != kDatasetVersion)
        throw FormatError("dataset.json: version " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));

    SeriesDataset ds;
    ds.name = get_field<std::string>(m, "name", where);
    ds.horizon = get_field<std::size_t>(m, "horizon", where);
    ds.history = get_field<std::size_t>(m, "history", where);
    ds.cut_stride = get_field<std::size_t>(m, "cut_stride", where);
    ds.cut_offset = get_field<std::size_t>(m, "cut_offset", where);
    ds.min_history = get_field<std::size_t>(m, "min_history", where);
    ds.holdout = get_field<std::size_t>(m, "holdout", where);
    ds.nonnegative = get_field<bool>(m, "nonnegative", where);
    ds.standardize = mode_from(get_field<std::string>(m, "standardize", where));
    ds.hist_names = get_field<std::vector<std::string>>(m, "hist_names", where);
    ds.future_names = get_field<std::vector<std::string>>(m, "future_names", where);
    ds.static_names = get_field<std::vector<std::string>>(m, "static_names", where);
    const json tables = m.contains("tables") ? m["tables"] : json::object();
    auto table_file = [&](const char* key, const char* dflt) {
        return dir / (tables.contains(key) ? tables[key].get<std::string>() : std::string(dflt));
    };

    const CsvTable series = read_csv(table_file("series", "series.csv"));
    std::vector<std::string> want{"series_id", "length", "future_length"};
    want.insert(want.end(), ds.static_names.begin(), ds.static_names.end());
    expect_header(series, want, "series.csv");

    std::unordered_map<std::string, std::size_t> index;
    for (const auto& row : series.rows) {
        Series s;
        s.id = row[0];
        if (!index.emplace(s.id, ds.series.size()).second) throw FormatError("series.csv: duplicate id " + s.id);
        const std::size_t len = parse_index(row[1], "series.csv");
        const std::size_t flen = parse_index(row[2], "series.csv");
        s.y.assign(len, std::nan(""));
        s.hist_cov = Tensor({len, ds.n_hist()}, std::nan(""));
        s.future_cov = Tensor({flen, ds.n_future()}, std::nan(""));
        for (std::size_t j = 0; j < ds.n_static(); ++j) s.static_cov.push_back(parse_double(row[3 + j], "series.csv"));
        ds.series.push_back(std::move(s));
    }

    auto locate = [&](const std::vector<std::string>& row, const std::string& file,
                      bool future) -> std::pair<Series*, std::size_t> {
        auto it = index.find(row[0]);
        if (it == index.end()) throw AlignmentError(file + ": unknown series id " + row[0]);
        Series& s = ds.series[it->second];
        const std::size_t t = parse_index(row[1], file);
        const std::size_t limit = future ? s.future_cov.rows() : s.length();
        if (t >= limit) throw AlignmentError(file + ": t=" + std::to_string(t) + " out of range for series " + s.id);
        return {&s, t};
    };

    const CsvTable obs = read_csv(table_file("observations", "observations.csv"));
    want = {"series_id", "t", "y"};
    want.insert(want.end(), ds.hist_names.begin(), ds.hist_names.end());
    expect_header(obs, want, "observations.csv");
    std::size_t seen = 0;
    for (const auto& row : obs.rows) {
        auto [s, t] = locate(row, "observations.csv", false);
        s->y[t] = parse_double(row[2], "observations.csv");
        for (std::size_t j = 0; j < ds.n_hist(); ++j) s->hist_cov(t, j) = parse_double(row[3 + j], "observations.csv");
        ++seen;
    }
    std::size_t expected = 0;
    for (const auto& s : ds.series) expected += s.length();
    if (seen != expected)
        throw AlignmentError("observations.csv: " + std::to_string(seen) + " rows, series.csv implies " +
                             std::to_string(expected));

    const CsvTable fut = read_csv(table_file("future", "future.csv"));
    want = {"series_id", "t"};
    want.insert(want.end(), ds.future_names.begin(), ds.future_names.end());
    expect_header(fut, want, "future.csv");
    seen = 0;
    for (const auto& row : fut.rows) {
        auto [s, t] = locate(row, "future.csv", true);
        for (std::size_t j = 0; j < ds.n_future(); ++j) s->future_cov(t, j) = parse_double(row[2 + j], "future.csv");
        ++seen;
    }
    expected = 0;
    for (const auto& s : ds.series) expected += s.future_cov.rows();
    if (seen != expected)
        throw AlignmentError("future.csv: " + std::to_string(seen) + " rows, series.csv implies " +
                             std::to_string(expected));

    ds.validate();
    return ds;
}

// ---- oracle ---------------------------------------------------------------

void save_oracle(const SyntheticSuite& suite, const fs::path& file) {
    json j;
    j["format"] = "gmq-oracle";
    j["version"] = kDatasetVersion;
    j["suite"] = suite.name;
    j["noise"] = suite.kind == NoiseKind::Gaussian ? "gaussian" : "poisson";
    j["horizon"] = suite.horizon;
    json params = json::object();
    for (const auto& [k, v] : suite.params) params[k] = v;
    j["params"] = params;
    j["ids"] = suite.ids;
    j["location"] = suite.location;
    j["rho"] = suite.rho;
    write_file(file, j.dump() + "\n");
}

SyntheticSuite load_oracle(const fs::path& file) {
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
        throw FormatError(file.filename().string() + ": " + e.what());
    }
    const std::string where = file.filename().string();
    if (get_field<std::string>(j, "format", where) != "gmq-oracle") throw FormatError(where + ": wrong format tag");
    SyntheticSuite s;
    s.name = get_field<std::string>(j, "suite", where);
    const std::string noise = get_field<std::string>(j, "noise", where);
    if (noise == "gaussian") s.kind = NoiseKind::Gaussian;
    else if (noise == "poisson") s.kind = NoiseKind::Poisson;
    else throw FormatError(where + ": unknown noise kind " + noise);
    s.horizon = get_field<std::size_t>(j, "horizon", where);
    const json params = get_field<json>(j, "params", where);
    for (const auto& [k, v] : params.items()) s.params.emplace_back(k, v.get<double>());
    s.ids = get_field<std::vector<std::string>>(j, "ids", where);
    s.location = get_field<std::vector<std::vector<double>>>(j, "location", where);
    s.rho = get_field<std::vector<std::vector<double>>>(j, "rho", where);
    if (s.location.size() != s.ids.size() || s.rho.size() != s.ids.size())
        throw FormatError(where + ": arrays do not match the id list");
    return s;
}

// ---- checkpoint -----------------------------------------------------------

json model_config_json(const ModelConfig& c) {
    return json{{"horizon", c.horizon},
                {"history", c.history},
                {"n_hist", c.n_hist},
                {"n_future", c.n_future},
                {"n_static", c.n_static},
                {"encoder_hidden", c.encoder_hidden},
                {"embedding", c.embedding},
                {"horizon_embedding", c.horizon_embedding},
                {"qnet_hidden", c.qnet_hidden},
                {"copula_hidden", c.copula_hidden},
                {"max_horizon", c.max_horizon},
                {"activation", nn::to_string(c.activation)},
                {"nonnegative", c.nonnegative}};
}

ModelConfig model_config_from_json(const json& j) {
    const std::string where = "checkpoint model config";
    ModelConfig c;
    c.horizon = get_field<std::size_t>(j, "horizon", where);
    c.history = get_field<std::size_t>(j, "history", where);
    c.n_hist = get_field<std::size_t>(j, "n_hist", where);
    c.n_future = get_field<std::size_t>(j, "n_future", where);
    c.n_static = get_field<std::size_t>(j, "n_static", where);
    c.encoder_hidden = get_field<std::size_t>(j, "encoder_hidden", where);
    c.embedding = get_field<std::size_t>(j, "embedding", where);
    c.horizon_embedding = get_field<std::size_t>(j, "horizon_embedding", where);
    c.qnet_hidden = get_field<std::vector<std::size_t>>(j, "qnet_hidden", where);
    c.copula_hidden = get_field<std::size_t>(j, "copula_hidden", where);
    c.max_horizon = get_field<std::size_t>(j, "max_horizon", where);
    c.activation = nn::activation_from_string(get_field<std::string>(j, "activation", where));
    c.nonnegative = get_field<bool>(j, "nonnegative", where);
    return c;
}

namespace {

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_tensor(std::string& out, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

class Reader {
public:
    explicit Reader(const std::string& b) : b_(b) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    Tensor tensor() {
        const auto rank = get<std::uint32_t>();
        if (rank > 4) throw FormatError("checkpoint: implausible tensor rank " + std::to_string(rank));
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(get<std::uint64_t>());
            n *= d;
        }
        if (n > (b_.size() - pos_) / sizeof(double)) throw FormatError("checkpoint: truncated tensor data");
        std::vector<double> data(n);
        std::memcpy(data.data(), b_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return Tensor(std::move(shape), std::move(data));
    }

    [[nodiscard]] bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw FormatError("checkpoint: truncated file");
    }
    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const GmqModel& model, const CheckpointMeta& meta) {
    const auto params = model.parameters();
    json header;
    header["format"] = "gmq-checkpoint";
    header["model"] = model_config_json(model.config());
    header["seed"] = model.seed();
    header["phase1_done"] = model.phase1_done();
    header["has_copula"] = model.has_copula();
    header["series_ids"] = model.known_ids();
    header["training"] = meta.training;
    json names = json::array();
    for (const auto* p : params) names.push_back(p->name);
    names.push_back("standardization");
    header["tensors"] = names;
    const std::string h = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, h.size());
    out += h;
    for (const auto* p : params) put_tensor(out, p->value);
    const auto& stats = model.known_stats();
    Tensor st({stats.size(), 2});
    for (std::size_t i = 0; i < stats.size(); ++i) {
        st(i, 0) = stats[i].center;
        st(i, 1) = stats[i].scale;
    }
    put_tensor(out, st);
    return out;
}

GmqModel parse_checkpoint(const std::string& bytes, CheckpointMeta* meta) {
    Reader r(bytes);
    if (r.bytes(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
        throw FormatError("not a gmq checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto hlen = r.get<std::uint64_t>();
    json header;
    try {
        header = json::parse(r.bytes(static_cast<std::size_t>(hlen)));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint header: " + std::string(e.what()));
    }
    const std::string where = "checkpoint header";
    if (get_field<std::string>(header, "format", where) != "gmq-checkpoint")
        throw FormatError("checkpoint header: wrong format tag");

    GmqModel model(model_config_from_json(get_field<json>(header, "model", where)),
                   get_field<std::uint64_t>(header, "seed", where));
    model.set_phase1_done(get_field<bool>(header, "phase1_done", where));
    model.set_has_copula(get_field<bool>(header, "has_copula", where));
    const auto names = get_field<std::vector<std::string>>(header, "tensors", where);
    auto params = model.parameters();
    if (names.size() != params.size() + 1) throw FormatError("checkpoint: tensor count does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (names[i] != params[i]->name)
            throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + names[i] + "', model expects '" +
                              params[i]->name + "'");
        Tensor t = r.tensor();
        if (t.shape() != params[i]->value.shape())
            throw FormatError("checkpoint: tensor '" + names[i] + "' has shape " + t.shape_string() + ", expected " +
                              params[i]->value.shape_string());
        params[i]->value = std::move(t);
    }
    const Tensor st = r.tensor();
    auto ids = get_field<std::vector<std::string>>(header, "series_ids", where);
    if (st.rank() != 2 || st.rows() != ids.size() || st.cols() != 2)
        throw FormatError("checkpoint: standardization table does not match the id list");
    std::vector<Standardization> stats(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) stats[i] = {st(i, 0), st(i, 1)};
    model.set_known(std::move(ids), std::move(stats));
    if (!r.done()) throw FormatError("checkpoint: trailing bytes");
    if (meta) meta->training = header.contains("training") ? header["training"] : json::object();
    return model;
}

void save_checkpoint(const GmqModel& model, const CheckpointMeta& meta, const fs::path& file) {
    write_file(file, checkpoint_bytes(model, meta));
}

GmqModel load_checkpoint(const fs::path& file, CheckpointMeta* meta) {
    if (!fs::exists(file)) throw FormatError("checkpoint not found: " + file.string());
    return parse_checkpoint(read_file(file), meta);
}

}  // namespace gmq::io
