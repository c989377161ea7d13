#include "pfvi/model.hpp"

#include "pfvi/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pfvi {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Schema: return "schema";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Domain: return "domain";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Singular: return "singular";
        case ErrorKind::SampleSize: return "sample_size";
        case ErrorKind::Unsupported: return "unsupported_restriction";
        case ErrorKind::Precondition: return "precondition";
        case ErrorKind::InternalState: return "internal_state";
        case ErrorKind::DimensionGuard: return "dimension_guard";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

std::string to_string(LikelihoodKind lik) {
    return lik == LikelihoodKind::Gaussian ? "gaussian" : "binomial";
}

LikelihoodKind likelihood_from_string(const std::string& name) {
    if (name == "gaussian") return LikelihoodKind::Gaussian;
    if (name == "binomial") return LikelihoodKind::Binomial;
    fail(ErrorKind::Schema, "unknown likelihood '" + name + "' (expected gaussian or binomial)");
}

Index MixedModelData::num_params() const {
    Index p = X.cols();
    for (const auto& f : factors) p += f.levels * f.effect_dim;
    return p;
}

PriorSpec PriorSpec::defaults(const MixedModelData& data) {
    PriorSpec prior;
    for (const auto& f : data.factors) {
        prior.iw_df.push_back(static_cast<double>(f.effect_dim) + 1.0);
        prior.iw_scale.push_back(Matrix::Identity(f.effect_dim, f.effect_dim));
    }
    return prior;
}

// ---------------------------------------------------------------------------
// Schema

Schema Schema::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("schema is not valid JSON: ") + e.what());
    }
    Schema s;
    if (!j.contains("response") || !j["response"].is_string())
        fail(ErrorKind::Schema, "schema needs a string 'response'");
    s.response = j["response"].get<std::string>();
    if (j.contains("trials") && !j["trials"].is_null()) s.trials = j["trials"].get<std::string>();
    if (j.contains("fixed")) s.fixed = j["fixed"].get<std::vector<std::string>>();
    if (j.contains("intercept")) s.intercept = j["intercept"].get<bool>();
    if (j.contains("factors")) {
        for (const auto& jf : j["factors"]) {
            SchemaFactor f;
            if (!jf.contains("name")) fail(ErrorKind::Schema, "every factor needs a 'name'");
            f.name = jf["name"].get<std::string>();
            if (jf.contains("slopes")) f.slopes = jf["slopes"].get<std::vector<std::string>>();
            if (jf.contains("interaction"))
                f.interaction = jf["interaction"].get<std::vector<std::string>>();
            if (f.slopes.empty()) fail(ErrorKind::Schema, "factor '" + f.name + "' has no slopes");
            s.factors.push_back(std::move(f));
        }
    }
    return s;
}

Schema Schema::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open schema file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string Schema::to_json_text() const {
    nlohmann::json j;
    j["response"] = response;
    j["trials"] = trials ? nlohmann::json(*trials) : nlohmann::json(nullptr);
    j["fixed"] = fixed;
    j["intercept"] = intercept;
    j["factors"] = nlohmann::json::array();
    for (const auto& f : factors) {
        nlohmann::json jf{{"name", f.name}, {"slopes", f.slopes}};
        if (!f.interaction.empty()) jf["interaction"] = f.interaction;
        j["factors"].push_back(jf);
    }
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& raw, const std::string& column, std::size_t row) {
    std::string s = trim(raw);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        fail(ErrorKind::Parse, "column '" + column + "' row " + std::to_string(row + 1) +
                                   ": '" + raw + "' is not a finite number");
    }
    return v;
}

/// Sorts labels numerically when every label parses as a number, else lexically.
std::vector<std::string> sorted_levels(const std::set<std::string>& labels) {
    std::vector<std::string> out(labels.begin(), labels.end());
    bool numeric = std::all_of(out.begin(), out.end(), [](const std::string& s) {
        double v;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        return !s.empty() && ec == std::errc() && p == s.data() + s.size();
    });
    if (numeric) {
        std::stable_sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
            return std::stod(a) < std::stod(b);
        });
    }
    return out;
}

}  // namespace

MixedModelData parse_long_csv(std::istream& in, const Schema& schema, LikelihoodKind lik) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::Parse, "CSV is empty");
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = trim(h);
    std::map<std::string, std::size_t> col;
    for (std::size_t j = 0; j < header.size(); ++j) col[header[j]] = j;

    auto need = [&](const std::string& name) -> std::size_t {
        auto it = col.find(name);
        if (it == col.end()) fail(ErrorKind::Schema, "CSV has no column '" + name + "'");
        return it->second;
    };

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            fail(ErrorKind::Parse, "CSV row " + std::to_string(rows.size() + 1) + " has " +
                                       std::to_string(cells.size()) + " fields, header has " +
                                       std::to_string(header.size()));
        rows.push_back(std::move(cells));
    }
    const auto n = static_cast<Index>(rows.size());
    if (n == 0) fail(ErrorKind::Parse, "CSV has no data rows");

    MixedModelData data;
    const std::size_t ycol = need(schema.response);
    data.y.resize(n);
    for (Index i = 0; i < n; ++i)
        data.y(i) = parse_double(rows[static_cast<std::size_t>(i)][ycol], schema.response,
                                 static_cast<std::size_t>(i));

    if (lik == LikelihoodKind::Binomial) {
        data.trials = Eigen::VectorXi::Ones(n);
        std::optional<std::size_t> tcol;
        if (schema.trials) tcol = need(*schema.trials);
        for (Index i = 0; i < n; ++i) {
            const auto r = static_cast<std::size_t>(i);
            if (tcol) {
                double t = parse_double(rows[r][*tcol], *schema.trials, r);
                if (t < 1 || t != std::floor(t))
                    fail(ErrorKind::Domain, "trials must be a positive integer (row " +
                                                std::to_string(r + 1) + ")");
                data.trials(i) = static_cast<int>(t);
            }
            double yi = data.y(i);
            if (yi < 0 || yi != std::floor(yi) || yi > data.trials(i))
                fail(ErrorKind::Domain, "binomial response must be an integer in [0, trials] (row " +
                                            std::to_string(r + 1) + ")");
        }
    }

    std::vector<std::size_t> fixed_cols;
    for (const auto& f : schema.fixed) fixed_cols.push_back(need(f));
    const Index d0 = static_cast<Index>(fixed_cols.size()) + (schema.intercept ? 1 : 0);
    if (d0 == 0) fail(ErrorKind::Schema, "model has no fixed effects (intercept disabled, no 'fixed')");
    data.X.resize(n, d0);
    if (schema.intercept) data.fixed_names.push_back("(Intercept)");
    for (const auto& f : schema.fixed) data.fixed_names.push_back(f);
    for (Index i = 0; i < n; ++i) {
        Index c = 0;
        if (schema.intercept) data.X(i, c++) = 1.0;
        for (std::size_t j = 0; j < fixed_cols.size(); ++j)
            data.X(i, c++) = parse_double(rows[static_cast<std::size_t>(i)][fixed_cols[j]],
                                          schema.fixed[j], static_cast<std::size_t>(i));
    }

    for (const auto& sf : schema.factors) {
        std::vector<std::size_t> key_cols;
        if (sf.interaction.empty()) {
            key_cols.push_back(need(sf.name));
        } else {
            for (const auto& c : sf.interaction) key_cols.push_back(need(c));
        }
        std::vector<std::string> labels(static_cast<std::size_t>(n));
        std::set<std::string> distinct;
        for (Index i = 0; i < n; ++i) {
            std::string key;
            for (std::size_t j = 0; j < key_cols.size(); ++j) {
                if (j) key += ':';
                key += trim(rows[static_cast<std::size_t>(i)][key_cols[j]]);
            }
            distinct.insert(key);
            labels[static_cast<std::size_t>(i)] = std::move(key);
        }
        FactorSpec fs;
        fs.name = sf.name;
        fs.level_labels = sorted_levels(distinct);
        fs.levels = static_cast<Index>(fs.level_labels.size());
        fs.slope_columns = sf.slopes;
        fs.effect_dim = static_cast<Index>(sf.slopes.size());
        std::map<std::string, int> index_of;
        for (std::size_t g = 0; g < fs.level_labels.size(); ++g)
            index_of[fs.level_labels[g]] = static_cast<int>(g);
        Eigen::VectorXi member(n);
        for (Index i = 0; i < n; ++i) member(i) = index_of.at(labels[static_cast<std::size_t>(i)]);

        Matrix w(n, fs.effect_dim);
        for (Index d = 0; d < fs.effect_dim; ++d) {
            const std::string& sc = sf.slopes[static_cast<std::size_t>(d)];
            if (sc == "1") {
                w.col(d).setOnes();
            } else {
                std::size_t c = need(sc);
                for (Index i = 0; i < n; ++i)
                    w(i, d) = parse_double(rows[static_cast<std::size_t>(i)][c], sc,
                                           static_cast<std::size_t>(i));
            }
        }
        data.factors.push_back(std::move(fs));
        data.memberships.push_back(std::move(member));
        data.slope_values.push_back(std::move(w));
    }

    validate_model(data, PriorSpec::defaults(data), lik).throw_if_fatal();
    return data;
}

MixedModelData load_long_csv(const std::string& path, const Schema& schema, LikelihoodKind lik) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open CSV file " + path);
    return parse_long_csv(in, schema, lik);
}

// ---------------------------------------------------------------------------
// Designs

BlockLayout::BlockLayout(const MixedModelData& data) : n_(data.n()) {
    Block fixed;
    fixed.name = "(fixed)";
    fixed.levels = 1;
    fixed.dim = data.X.cols();
    fixed.penalized = false;
    fixed.covariates = &data.X;
    blocks_.push_back(fixed);
    for (std::size_t k = 0; k < data.factors.size(); ++k) {
        Block b;
        b.name = data.factors[k].name;
        b.levels = data.factors[k].levels;
        b.dim = data.factors[k].effect_dim;
        b.membership = &data.memberships[k];
        b.covariates = &data.slope_values[k];
        blocks_.push_back(b);
    }
    offsets_.push_back(0);
    for (const auto& b : blocks_) offsets_.push_back(offsets_.back() + b.size());
}

SparseRowMatrix BlockLayout::design(Index k) const {
    const Block& b = block(k);
    SparseRowMatrix z(n_, b.size());
    z.reserve(Eigen::VectorXi::Constant(n_, static_cast<int>(b.dim)));
    for (Index i = 0; i < n_; ++i) {
        const Index base = b.level_of(i) * b.dim;
        for (Index d = 0; d < b.dim; ++d) z.insert(i, base + d) = (*b.covariates)(i, d);
    }
    z.makeCompressed();
    return z;
}

std::vector<SparseRowMatrix> build_designs(const MixedModelData& data) {
    BlockLayout layout(data);
    std::vector<SparseRowMatrix> out;
    for (Index k = 1; k < layout.num_blocks(); ++k) out.push_back(layout.design(k));
    return out;
}

// ---------------------------------------------------------------------------
// Validation

void ValidationReport::throw_if_fatal() const {
    if (ok()) return;
    std::string msg = "model validation failed:";
    for (const auto& e : errors) msg += " [" + e.code + "] " + e.message + ";";
    fail(ErrorKind::Validation, msg);
}

ValidationReport validate_model(const MixedModelData& data, const PriorSpec& prior,
                                LikelihoodKind lik) {
    ValidationReport rep;
    auto error = [&](std::string code, std::string msg) {
        rep.errors.push_back({std::move(code), std::move(msg)});
    };
    const Index n = data.n();
    if (n == 0) error("empty", "no observations");
    if (data.X.rows() != n) error("shape", "X has " + std::to_string(data.X.rows()) + " rows, y has " +
                                               std::to_string(n));
    if (data.X.cols() == 0) error("shape", "X has no columns");
    if (data.memberships.size() != data.factors.size() ||
        data.slope_values.size() != data.factors.size())
        error("shape", "memberships/slope_values do not match the factor list");
    if (!rep.ok()) return rep;

    if (!data.y.allFinite()) error("response", "response contains non-finite values");
    if (lik == LikelihoodKind::Binomial) {
        if (data.trials.size() != n) {
            error("trials", "binomial likelihood needs a trials vector of length n");
        } else {
            for (Index i = 0; i < n; ++i) {
                if (data.trials(i) < 1) {
                    error("trials", "trials must be >= 1 (row " + std::to_string(i + 1) + ")");
                    break;
                }
                double yi = data.y(i);
                if (yi < 0 || yi > data.trials(i) || yi != std::floor(yi)) {
                    error("response", "binomial y must be an integer in [0, n_i] (row " +
                                          std::to_string(i + 1) + ")");
                    break;
                }
            }
        }
    }

    for (std::size_t k = 0; k < data.factors.size(); ++k) {
        const auto& f = data.factors[k];
        if (f.levels < 1) error("factor", "factor '" + f.name + "' has no levels");
        if (f.effect_dim < 1) error("factor", "factor '" + f.name + "' has effect_dim < 1");
        if (static_cast<Index>(f.slope_columns.size()) != f.effect_dim)
            error("factor", "factor '" + f.name + "' slope_columns length != effect_dim");
        const auto& m = data.memberships[k];
        if (m.size() != n) {
            error("membership", "factor '" + f.name + "' membership length != n");
            continue;
        }
        if (data.slope_values[k].rows() != n || data.slope_values[k].cols() != f.effect_dim)
            error("slopes", "factor '" + f.name + "' slope matrix has wrong shape");
        std::vector<Index> count(static_cast<std::size_t>(std::max<Index>(f.levels, 0)), 0);
        bool in_range = true;
        for (Index i = 0; i < n; ++i) {
            if (m(i) < 0 || m(i) >= f.levels) {
                in_range = false;
                break;
            }
            ++count[static_cast<std::size_t>(m(i))];
        }
        if (!in_range) {
            error("membership", "factor '" + f.name + "' has a membership index out of range");
            continue;
        }
        Index empty = std::count(count.begin(), count.end(), Index{0});
        if (empty > 0)
            rep.warnings.push_back({"empty_level", "factor '" + f.name + "' has " +
                                                       std::to_string(empty) +
                                                       " level(s) with no observations"});
    }

    if (prior.iw_df.size() != data.factors.size() || prior.iw_scale.size() != data.factors.size()) {
        error("prior", "prior must give iw_df and iw_scale for every factor");
    } else {
        for (std::size_t k = 0; k < data.factors.size(); ++k) {
            const double dk = static_cast<double>(data.factors[k].effect_dim);
            if (!(prior.iw_df[k] > dk - 1.0))
                error("prior", "iw_df for '" + data.factors[k].name + "' must exceed D_k - 1");
            const Matrix& s = prior.iw_scale[k];
            if (s.rows() != data.factors[k].effect_dim || s.cols() != data.factors[k].effect_dim) {
                error("prior", "iw_scale for '" + data.factors[k].name + "' has wrong shape");
                continue;
            }
            Eigen::LLT<Matrix> llt(s);
            if ((s - s.transpose()).norm() > 1e-12 * (1.0 + s.norm()) || llt.info() != Eigen::Success)
                error("prior", "iw_scale for '" + data.factors[k].name +
                                   "' is not symmetric positive definite");
        }
    }

    Eigen::ColPivHouseholderQR<Matrix> qr(data.X);
    if (qr.rank() < data.X.cols())
        error("rank", "fixed-effect design X is rank deficient (rank " + std::to_string(qr.rank()) +
                          " < " + std::to_string(data.X.cols()) + ")");
    return rep;
}

}  // namespace pfvi

namespace pfvi {

Problem Problem::make(MixedModelData data, LikelihoodKind lik, std::optional<PriorSpec> prior) {
    Problem p;
    p.lik = lik;
    auto shared = std::make_shared<const MixedModelData>(std::move(data));
    p.prior = prior ? *prior : PriorSpec::defaults(*shared);
    validate_model(*shared, p.prior, lik).throw_if_fatal();
    p.data = shared;
    p.layout = std::make_shared<const BlockLayout>(*shared);
    for (Index k = 0; k < p.layout->num_blocks(); ++k) p.Z.push_back(p.layout->design(k));
    return p;
}

}  // namespace pfvi
