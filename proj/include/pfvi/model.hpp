#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pfvi {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class LikelihoodKind { Gaussian, Binomial };

std::string to_string(LikelihoodKind lik);
LikelihoodKind likelihood_from_string(const std::string& name);

/// A categorical grouping factor with G levels and D coefficients per level.
struct FactorSpec {
    std::string name;
    Index levels = 1;
    Index effect_dim = 1;
    /// Covariate names, one per coefficient; "1" denotes the random intercept.
    std::vector<std::string> slope_columns{"1"};
    /// Original labels of the levels in index order (optional, for reports).
    std::vector<std::string> level_labels;
};

/// Long-format data for a GLMM. Factor memberships are stored 0-based.
struct MixedModelData {
    Vector y;
    Eigen::VectorXi trials;                 // binomial only; empty otherwise
    Matrix X;                               // n x D_0, includes the intercept column
    std::vector<std::string> fixed_names;   // column names of X
    std::vector<FactorSpec> factors;
    std::vector<Eigen::VectorXi> memberships;  // per factor, length n, values in [0, G_k)
    std::vector<Matrix> slope_values;          // per factor, n x D_k

    Index n() const { return y.size(); }
    Index num_factors() const { return static_cast<Index>(factors.size()); }
    Index num_fixed() const { return X.cols(); }
    /// Total number of fixed and random coefficients.
    Index num_params() const;
};

struct PriorSpec {
    std::vector<double> iw_df;      // a_k^0 per factor
    std::vector<Matrix> iw_scale;   // Phi_k^0 per factor

    /// IW(D_k + 1, I); for random intercepts this is InverseGamma(1, 0.5).
    static PriorSpec defaults(const MixedModelData& data);
};

/// Column roles for reading long-format CSV files.
struct SchemaFactor {
    std::string name;
    std::vector<std::string> slopes{"1"};
    /// When non-empty, the factor is built from the joint levels of these columns.
    std::vector<std::string> interaction;
};

struct Schema {
    std::string response;
    std::optional<std::string> trials;
    std::vector<std::string> fixed;
    std::vector<SchemaFactor> factors;
    bool intercept = true;

    static Schema from_json_text(const std::string& text);
    static Schema from_json_file(const std::string& path);
    std::string to_json_text() const;
};

MixedModelData load_long_csv(const std::string& path, const Schema& schema, LikelihoodKind lik);
MixedModelData parse_long_csv(std::istream& in, const Schema& schema, LikelihoodKind lik);

/// Sparse Z_k (n x G_k D_k) for every factor k = 1..K.
std::vector<SparseRowMatrix> build_designs(const MixedModelData& data);

struct ValidationIssue {
    std::string code;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> errors;
    std::vector<ValidationIssue> warnings;

    bool ok() const { return errors.empty(); }
    /// Throws a validation error summarising `errors` when not ok().
    void throw_if_fatal() const;
};

ValidationReport validate_model(const MixedModelData& data, const PriorSpec& prior,
                                LikelihoodKind lik);

/// One coefficient block theta_k. Block 0 holds the fixed effects as a single
/// unpenalised level; blocks 1..K are the factors.
struct Block {
    std::string name;
    Index levels = 1;
    Index dim = 1;
    bool penalized = true;
    const Eigen::VectorXi* membership = nullptr;  // null for block 0 (all level 0)
    const Matrix* covariates = nullptr;           // n x dim

    Index size() const { return levels * dim; }
    Index level_of(Index i) const { return membership ? (*membership)(i) : 0; }
};

/// Block view over MixedModelData; the data must outlive the layout.
class BlockLayout {
public:
    explicit BlockLayout(const MixedModelData& data);

    Index num_blocks() const { return static_cast<Index>(blocks_.size()); }
    const Block& block(Index k) const { return blocks_[static_cast<std::size_t>(k)]; }
    Index offset(Index k) const { return offsets_[static_cast<std::size_t>(k)]; }
    Index num_params() const { return offsets_.back(); }
    Index n() const { return n_; }
    /// Sparse design row block Z_k including k = 0 (X).
    SparseRowMatrix design(Index k) const;

private:
    Index n_ = 0;
    std::vector<Block> blocks_;
    std::vector<Index> offsets_;
};

/// Everything a fit needs that depends only on the data: the model, its prior
/// and the unweighted designs Z_k for k = 0..K (Z_0 = X).
struct Problem {
    std::shared_ptr<const MixedModelData> data;
    LikelihoodKind lik = LikelihoodKind::Gaussian;
    PriorSpec prior;
    std::shared_ptr<const BlockLayout> layout;
    std::vector<SparseRowMatrix> Z;

    /// Validates and builds designs; the prior defaults to PriorSpec::defaults.
    static Problem make(MixedModelData data, LikelihoodKind lik,
                        std::optional<PriorSpec> prior = std::nullopt);

    Index n() const { return data->n(); }
    Index num_blocks() const { return layout->num_blocks(); }
    Index num_params() const { return layout->num_params(); }
    /// Number of factors K; blocks are 0..K.
    Index num_factors() const { return data->num_factors(); }
};

}  // namespace pfvi
