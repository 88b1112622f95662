#pragma once

#include <cctype>
#include <charconv>
#include <cstdio>
#include <functional>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "metrics.hpp"
#include "models.hpp"
#include "operators.hpp"

namespace nestlab {

// --- binary PGM / PPM --------------------------------------------------------

/// 8-bit binary PGM (P5) / PPM (P6), maxval 255; values map linearly v/255.
inline ImageGrid read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_image: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P6")
        throw std::runtime_error("read_image: " + path + ": unsupported magic '" + magic + "'");
    auto next_int = [&](const char* what) {
        // skip whitespace and '#' comments
        for (;;) {
            int ch = in.peek();
            if (ch == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(ch)) {
                in.get();
            } else {
                break;
            }
        }
        int v;
        if (!(in >> v)) throw std::runtime_error(std::string("read_image: malformed header: ") + what);
        return v;
    };
    int w = next_int("width"), h = next_int("height"), maxval = next_int("maxval");
    if (maxval != 255) throw std::runtime_error("read_image: only maxval 255 supported");
    in.get();  // single whitespace after maxval
    ImageGrid img(h, w, magic == "P6" ? 3 : 1);
    std::vector<unsigned char> buf(img.v.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
        throw std::runtime_error("read_image: truncated payload at byte offset " +
                                 std::to_string(in.gcount()) + " of " + std::to_string(buf.size()));
    for (std::size_t i = 0; i < buf.size(); ++i) img.v[i] = buf[i] / 255.0;
    return img;
}

/// Quantizes round(v * 255), clamped to [0, 255].
inline void write_image(const ImageGrid& img, const std::string& path) {
    if (img.c != 1 && img.c != 3) throw std::invalid_argument("write_image: channels must be 1 or 3");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_image: cannot open " + path);
    out << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> buf(img.v.size());
    for (std::size_t i = 0; i < img.v.size(); ++i) {
        double q = std::lround(img.v[i] * 255.0);
        buf[i] = static_cast<unsigned char>(std::min(255.0, std::max(0.0, q)));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

// --- CSV ---------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// One-line header then row-major rows.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
        out << "\n";
    }
}

inline void write_sinogram_csv(const Sinogram& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_sinogram_csv: cannot open " + path);
    out << s.angles.size() << "," << s.bins << "\n";
    for (std::size_t a = 0; a < s.angles.size(); ++a) {
        for (int b = 0; b < s.bins; ++b)
            out << (b ? "," : "") << format_double(s.v[a * s.bins + b]);
        out << "\n";
    }
}

inline void write_voxels_csv(const VoxelGrid& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_voxels_csv: cannot open " + path);
    out << g.r << "," << g.r << "," << g.r << "\n";
    for (int z = 0; z < g.r; ++z)
        for (int y = 0; y < g.r; ++y) {
            for (int x = 0; x < g.r; ++x) out << (x ? "," : "") << g.at(z, y, x);
            out << "\n";
        }
}

// --- experiment configuration ------------------------------------------------

struct ExperimentConfig {
    std::string task = "image";  // image occupancy sisr misr denoise ct pinn
    std::string model = "nestnet";
    int width = 32;
    int depth = 2;
    std::string encoding = "auto";  // auto, identity, fourier
    int num_frequencies = 8;
    double omega0 = 30.0;
    double s0 = 30.0;
    double mfn_frequency_scale = 32.0;
    int subnets = 1;

    int epochs = 2000;
    double lr = 5e-3;
    std::string schedule = "exponential";  // constant, exponential
    double final_lr_fraction = 0.1;
    std::vector<long> seeds = {0, 1, 2, 3, 4};

    std::string signal = "bandlimited";
    int image_h = 64, image_w = 64, image_c = 1;
    std::uint64_t signal_seed = 7;
    int volume_res = 32;
    std::string shape = "sphere";
    int sr_factor = 4;
    int n_views = 4;
    double max_shift = 1.0;
    double max_rot_deg = 1.0;
    double noise_max_count = 30.0;
    int ct_angles = 60;
    double beta = 10.0;
    int n_ic = 256, n_bc = 100, n_col = 2000;
    double w_ic = 1.0, w_bc = 1.0, w_pde = 1.0;

    std::string out_dir = "out";
    int jobs = 1;

    bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

struct ConfigField {
    enum class Type { Str, Int, Double, U64, LongList } type;
    void* ptr(ExperimentConfig& c) const { return get(c); }
    std::function<void*(ExperimentConfig&)> get;
};

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
    using T = ConfigField::Type;
    auto f = [](ConfigField::Type t, auto member) {
        return ConfigField{t, [member](ExperimentConfig& c) -> void* { return &(c.*member); }};
    };
    static const std::vector<std::pair<std::string, ConfigField>> fields = {
        {"task", f(T::Str, &ExperimentConfig::task)},
        {"model", f(T::Str, &ExperimentConfig::model)},
        {"width", f(T::Int, &ExperimentConfig::width)},
        {"depth", f(T::Int, &ExperimentConfig::depth)},
        {"encoding", f(T::Str, &ExperimentConfig::encoding)},
        {"num_frequencies", f(T::Int, &ExperimentConfig::num_frequencies)},
        {"omega0", f(T::Double, &ExperimentConfig::omega0)},
        {"s0", f(T::Double, &ExperimentConfig::s0)},
        {"mfn_frequency_scale", f(T::Double, &ExperimentConfig::mfn_frequency_scale)},
        {"subnets", f(T::Int, &ExperimentConfig::subnets)},
        {"epochs", f(T::Int, &ExperimentConfig::epochs)},
        {"lr", f(T::Double, &ExperimentConfig::lr)},
        {"schedule", f(T::Str, &ExperimentConfig::schedule)},
        {"final_lr_fraction", f(T::Double, &ExperimentConfig::final_lr_fraction)},
        {"seeds", f(T::LongList, &ExperimentConfig::seeds)},
        {"signal", f(T::Str, &ExperimentConfig::signal)},
        {"image_h", f(T::Int, &ExperimentConfig::image_h)},
        {"image_w", f(T::Int, &ExperimentConfig::image_w)},
        {"image_c", f(T::Int, &ExperimentConfig::image_c)},
        {"signal_seed", f(T::U64, &ExperimentConfig::signal_seed)},
        {"volume_res", f(T::Int, &ExperimentConfig::volume_res)},
        {"shape", f(T::Str, &ExperimentConfig::shape)},
        {"sr_factor", f(T::Int, &ExperimentConfig::sr_factor)},
        {"n_views", f(T::Int, &ExperimentConfig::n_views)},
        {"max_shift", f(T::Double, &ExperimentConfig::max_shift)},
        {"max_rot_deg", f(T::Double, &ExperimentConfig::max_rot_deg)},
        {"noise_max_count", f(T::Double, &ExperimentConfig::noise_max_count)},
        {"ct_angles", f(T::Int, &ExperimentConfig::ct_angles)},
        {"beta", f(T::Double, &ExperimentConfig::beta)},
        {"n_ic", f(T::Int, &ExperimentConfig::n_ic)},
        {"n_bc", f(T::Int, &ExperimentConfig::n_bc)},
        {"n_col", f(T::Int, &ExperimentConfig::n_col)},
        {"w_ic", f(T::Double, &ExperimentConfig::w_ic)},
        {"w_bc", f(T::Double, &ExperimentConfig::w_bc)},
        {"w_pde", f(T::Double, &ExperimentConfig::w_pde)},
        {"out_dir", f(T::Str, &ExperimentConfig::out_dir)},
        {"jobs", f(T::Int, &ExperimentConfig::jobs)},
    };
    return fields;
}

inline void assign_config_value(ExperimentConfig& cfg, const std::string& key,
                                const std::string& raw, int line) {
    for (const auto& [name, field] : config_fields()) {
        if (name != key) continue;
        void* p = field.get(cfg);
        try {
            switch (field.type) {
                case ConfigField::Type::Str: *static_cast<std::string*>(p) = raw; return;
                case ConfigField::Type::Int: *static_cast<int*>(p) = std::stoi(raw); return;
                case ConfigField::Type::Double: *static_cast<double*>(p) = std::stod(raw); return;
                case ConfigField::Type::U64:
                    *static_cast<std::uint64_t*>(p) = std::stoull(raw);
                    return;
                case ConfigField::Type::LongList: {
                    auto* list = static_cast<std::vector<long>*>(p);
                    list->clear();
                    std::stringstream ss(raw);
                    std::string item;
                    while (std::getline(ss, item, ','))
                        if (!item.empty()) list->push_back(std::stol(item));
                    return;
                }
            }
        } catch (const std::exception&) {
            throw std::runtime_error("config line " + std::to_string(line) + ": key '" + key +
                                     "': cannot parse value '" + raw + "'");
        }
    }
    throw std::runtime_error("config line " + std::to_string(line) + ": unknown key '" + key + "'");
}

inline std::string config_value_to_string(const ExperimentConfig& cfg, const ConfigField& field) {
    void* p = field.get(const_cast<ExperimentConfig&>(cfg));
    switch (field.type) {
        case ConfigField::Type::Str: return *static_cast<std::string*>(p);
        case ConfigField::Type::Int: return std::to_string(*static_cast<int*>(p));
        case ConfigField::Type::Double: return format_double(*static_cast<double*>(p));
        case ConfigField::Type::U64: return std::to_string(*static_cast<std::uint64_t*>(p));
        case ConfigField::Type::LongList: {
            auto* list = static_cast<std::vector<long>*>(p);
            std::string s;
            for (std::size_t i = 0; i < list->size(); ++i)
                s += (i ? "," : "") + std::to_string((*list)[i]);
            return s;
        }
    }
    return "";
}

}  // namespace detail

/// Flat `key = value` document, '#' comments, lists comma-separated. Unknown
/// and duplicate keys are rejected with their line number; missing keys keep
/// documented defaults.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::map<std::string, int> seen;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (auto it = seen.find(key); it != seen.end())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": duplicate key '" +
                                     key + "' (first at line " + std::to_string(it->second) + ")");
        seen[key] = lineno;
        detail::assign_config_value(cfg, key, value, lineno);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical serialization: every key, fixed order, lossless doubles.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [name, field] : detail::config_fields())
        out += name + " = " + detail::config_value_to_string(cfg, field) + "\n";
    return out;
}

/// Apply a `key=value` override as used by the CLI's --set flag.
inline void apply_override(ExperimentConfig& cfg, const std::string& expr) {
    auto eq = expr.find('=');
    if (eq == std::string::npos) throw std::runtime_error("override must be key=value: " + expr);
    detail::assign_config_value(cfg, expr.substr(0, eq), expr.substr(eq + 1), 0);
}

/// FNV-1a over the canonical serialization; stable under input field order.
inline std::string config_hash(const ExperimentConfig& cfg) {
    std::string canon = serialize_config(cfg);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canon) h = (h ^ ch) * 1099511628211ULL;
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// --- model checkpoints -------------------------------------------------------

/// Text checkpoint: architecture descriptor then every parameter in flat
/// declaration order, one per line, 17 significant digits (lossless).
inline void save_model(const Model& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_model: cannot open " + path);
    out << "nestlab-checkpoint 1\n";
    out << "name " << m.name << "\n";
    out << "arch " << (m.arch == ArchKind::Mfn ? "mfn" : "mlp_stack") << "\n";
    out << "in_dim " << m.in_dim << " out_dim " << m.out_dim << "\n";
    out << "encoding " << (m.encoding.kind == EncodingSpec::Kind::Fourier ? "fourier" : "identity");
    out << " " << m.encoding.num_frequencies();
    for (int i = 0; i < m.encoding.num_frequencies(); ++i)
        out << " " << format_double(m.encoding.alpha[i]) << " " << format_double(m.encoding.beta[i]);
    out << "\n";
    out << "subnets " << m.subnets_per_layer << "\n";
    out << "affine " << m.affine.size();
    for (const auto& a : m.affine) out << " " << a.in << " " << a.out;
    out << "\n";
    out << "activations " << m.activations.size();
    for (const auto& a : m.activations) {
        switch (a.kind) {
            case ActivationSpec::Kind::Relu: out << " relu 0 0"; break;
            case ActivationSpec::Kind::Sine: out << " sine " << format_double(a.omega0) << " 0"; break;
            case ActivationSpec::Kind::Gaussian: out << " gaussian 0 " << format_double(a.s0); break;
            case ActivationSpec::Kind::GaborReal:
                out << " gabor " << format_double(a.omega0) << " " << format_double(a.s0);
                break;
            case ActivationSpec::Kind::Learned: out << " learned 0 0"; break;
            case ActivationSpec::Kind::None: out << " none 0 0"; break;
        }
    }
    out << "\n";
    out << "filters " << m.filters.size();
    for (const auto& f : m.filters) out << " " << f.in << " " << f.width;
    out << "\n";
    out << "params " << m.params.size() << "\n";
    for (double p : m.params) out << format_double(p) << "\n";
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_model: cannot open " + path);
    std::string tok;
    int version;
    in >> tok >> version;
    if (tok != "nestlab-checkpoint" || version != 1)
        throw std::runtime_error("load_model: " + path + " is not a checkpoint");
    Model m;
    auto expect = [&](const char* what) {
        in >> tok;
        if (tok != what) throw std::runtime_error(std::string("load_model: expected '") + what +
                                                  "', got '" + tok + "'");
    };
    expect("name");
    in >> m.name;
    expect("arch");
    in >> tok;
    m.arch = tok == "mfn" ? ArchKind::Mfn : ArchKind::MlpStack;
    expect("in_dim");
    in >> m.in_dim;
    expect("out_dim");
    in >> m.out_dim;
    expect("encoding");
    std::string enc;
    int nfreq;
    in >> enc >> nfreq;
    m.encoding.kind = enc == "fourier" ? EncodingSpec::Kind::Fourier : EncodingSpec::Kind::Identity;
    m.encoding.alpha.resize(nfreq);
    m.encoding.beta.resize(nfreq);
    for (int i = 0; i < nfreq; ++i) in >> m.encoding.alpha[i] >> m.encoding.beta[i];
    expect("subnets");
    in >> m.subnets_per_layer;
    expect("affine");
    std::size_t n_affine;
    in >> n_affine;
    std::vector<std::pair<int, int>> dims(n_affine);
    for (auto& d : dims) in >> d.first >> d.second;
    expect("activations");
    std::size_t n_act;
    in >> n_act;
    std::vector<ActivationSpec> acts(n_act);
    for (auto& a : acts) {
        std::string kind;
        double w0, s0;
        in >> kind >> w0 >> s0;
        if (kind == "relu") a = ActivationSpec::relu();
        else if (kind == "sine") a = ActivationSpec::sine(w0);
        else if (kind == "gaussian") a = ActivationSpec::gaussian(s0);
        else if (kind == "gabor") a = ActivationSpec::gabor_real(w0, s0);
        else if (kind == "learned") a = ActivationSpec::learned();
        else if (kind == "none") a = ActivationSpec::none();
        else throw std::runtime_error("load_model: unknown activation '" + kind + "'");
    }
    expect("filters");
    std::size_t n_filters;
    in >> n_filters;
    std::vector<std::pair<int, int>> fdims(n_filters);
    for (auto& d : fdims) in >> d.first >> d.second;

    // rebuild the flat layout in declaration order
    for (const auto& f : fdims) {
        Model::Filter flt;
        flt.in = f.first;
        flt.width = f.second;
        flt.omega_off = detail::reserve_params(m, flt.in * flt.width);
        flt.phase_off = detail::reserve_params(m, flt.width);
        m.filters.push_back(flt);
    }
    for (const auto& d : dims) detail::add_affine(m, d.first, d.second);
    m.activations = acts;
    for (const auto& a : acts) {
        if (a.kind == ActivationSpec::Kind::Learned)
            m.act_off.push_back(-2);  // placeholder, assigned below in declaration order
        else
            m.act_off.push_back(-1);
    }
    for (std::size_t l = 0; l < acts.size(); ++l)
        if (m.act_off[l] == -2)
            m.act_off[l] =
                detail::reserve_params(m, m.subnets_per_layer * LearnedActivation::kParamCount);

    expect("params");
    std::size_t n_params;
    in >> n_params;
    if (n_params != m.params.size())
        throw std::runtime_error("load_model: parameter count mismatch: file has " +
                                 std::to_string(n_params) + ", architecture needs " +
                                 std::to_string(m.params.size()));
    for (std::size_t i = 0; i < n_params; ++i)
        if (!(in >> m.params[i]))
            throw std::runtime_error("load_model: truncated at parameter " + std::to_string(i));
    return m;
}

// --- result records ----------------------------------------------------------

struct ResultRecord {
    std::string config_hash;
    long seed = 0;
    MetricReport metrics;
    std::string curve_csv;
    std::vector<std::string> artifacts;
    double wall_seconds = 0.0;
    std::size_t param_count = 0;
};

inline nlohmann::json to_json(const ResultRecord& r) {
    nlohmann::json j;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    nlohmann::json m;
    if (r.metrics.psnr_db) {
        if (std::isinf(*r.metrics.psnr_db)) m["psnr_db"] = "inf";
        else m["psnr_db"] = *r.metrics.psnr_db;
    }
    if (r.metrics.ssim) m["ssim"] = *r.metrics.ssim;
    if (r.metrics.iou) m["iou"] = *r.metrics.iou;
    if (r.metrics.abs_err) m["abs_err"] = *r.metrics.abs_err;
    if (r.metrics.rel_err) m["rel_err"] = *r.metrics.rel_err;
    if (r.metrics.explained_var) m["explained_var"] = *r.metrics.explained_var;
    j["metrics"] = m;
    j["curve_csv"] = r.curve_csv;
    j["artifacts"] = r.artifacts;
    j["wall_seconds"] = r.wall_seconds;
    j["param_count"] = r.param_count;
    return j;
}

inline ResultRecord result_from_json(const nlohmann::json& j) {
    ResultRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<long>();
    const auto& m = j.at("metrics");
    auto opt = [&](const char* k) -> std::optional<double> {
        if (!m.contains(k)) return std::nullopt;
        if (m[k].is_string()) return std::numeric_limits<double>::infinity();
        return m[k].get<double>();
    };
    r.metrics.psnr_db = opt("psnr_db");
    r.metrics.ssim = opt("ssim");
    r.metrics.iou = opt("iou");
    r.metrics.abs_err = opt("abs_err");
    r.metrics.rel_err = opt("rel_err");
    r.metrics.explained_var = opt("explained_var");
    r.curve_csv = j.at("curve_csv").get<std::string>();
    r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.param_count = j.at("param_count").get<std::size_t>();
    return r;
}

/// Append one record per line; nlohmann emits shortest-roundtrip doubles, so
/// floats survive write/read bit-exactly.
inline void write_result(const ResultRecord& r, std::ostream& sink) {
    sink << to_json(r).dump() << "\n";
}

inline void append_result(const ResultRecord& r, const std::string& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("append_result: cannot open " + path);
    write_result(r, out);
}

inline std::vector<ResultRecord> read_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_results: cannot open " + path);
    std::vector<ResultRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(result_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record: " +
                                     e.what());
        }
    }
    return records;
}

}  // namespace nestlab
