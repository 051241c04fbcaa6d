#pragma once

#include <optional>
#include <string>
#include <vector>

#include "isgib/nn.hpp"
#include "isgib/relations.hpp"
#include "isgib/tensor.hpp"

namespace isgib {

// Sign convention for the contrastive compression terms. `paper` implements
// the bracketed expressions with their printed leading minus; `flipped`
// negates them. Both are exposed because the two readings of the objective
// pull in opposite directions.
enum class IbSign { paper, flipped };

inline std::string to_string(IbSign s) { return s == IbSign::paper ? "paper" : "flipped"; }
inline IbSign ib_sign_from_string(const std::string& s) {
    if (s == "paper") return IbSign::paper;
    if (s == "flipped") return IbSign::flipped;
    fail(errc::config, "unknown ib_sign '" + s + "' (expected paper|flipped)");
}

enum class RelationLoss { auto_select, bce, mse };

inline std::string to_string(RelationLoss r) {
    switch (r) {
        case RelationLoss::auto_select: return "auto";
        case RelationLoss::bce: return "bce";
        case RelationLoss::mse: return "mse";
    }
    return "auto";
}
inline RelationLoss relation_loss_from_string(const std::string& s) {
    if (s == "auto") return RelationLoss::auto_select;
    if (s == "bce") return RelationLoss::bce;
    if (s == "mse") return RelationLoss::mse;
    fail(errc::config, "unknown relation loss '" + s + "' (expected auto|bce|mse)");
}

struct Gammas {
    double g1 = 0.0;
    double g2 = 0.0;
    double g3 = 0.0;
};

// A sampled minibatch of instances (nodes or whole graphs) with virtual
// environment assignments — the unit the objective is evaluated on.
struct EnvironmentBatch {
    std::vector<std::pair<int, int>> instances; // (graph index, node index; -1 for whole graphs)
    Matrix inputs_pooled;                       // [N x d_in], constant w.r.t. parameters
    Tensor embeddings;                          // [N x H]
    Tensor logits;                              // [N x c]
    std::vector<int> labels;                    // class indices
    Matrix labels_onehot;                       // [N x c]
    std::vector<int> env_ids;                   // virtual environments
    std::vector<int> copy_ids;                  // source shift-copy of each instance
    std::vector<Matrix> input_sample_sets;      // per-instance raw rows; only for cmd/mmd input relations

    std::size_t size() const { return labels.size(); }

    void validate() const {
        const std::size_t n = size();
        require(n >= 2, errc::shape, "batch: needs at least 2 instances");
        require(inputs_pooled.rows == n && labels_onehot.rows == n && env_ids.size() == n &&
                    embeddings.rows() == n && logits.rows() == n,
                errc::shape, "batch: row counts disagree");
    }

    int distinct_envs() const {
        std::vector<int> seen;
        for (int e : env_ids)
            if (std::find(seen.begin(), seen.end(), e) == seen.end()) seen.push_back(e);
        return static_cast<int>(seen.size());
    }
};

struct LossBreakdown {
    double l_i1 = 0.0;
    double l_i2 = 0.0;
    double l_s1 = 0.0;
    double l_s2 = 0.0;
    double total = 0.0;
    Gammas gammas;
};

namespace detail {

inline std::vector<unsigned char> diagonal_mask(std::size_t n) {
    std::vector<unsigned char> mask(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 1;
    return mask;
}

// mask[i*n+k] set where instance k lives in a different virtual environment
// than instance i — the negative pairs of the contrastive bounds.
inline std::vector<unsigned char> cross_env_mask(const std::vector<int>& env_ids) {
    const std::size_t n = env_ids.size();
    std::vector<unsigned char> mask(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            if (env_ids[i] != env_ids[k]) mask[i * n + k] = 1;
    return mask;
}

// The shared contrastive form: mean positive score minus log-mean-exp of the
// cross-environment negatives, negated under the paper sign.
inline Tensor contrastive_term(const Tensor& scores, const std::vector<int>& env_ids, IbSign sign) {
    const std::size_t n = env_ids.size();
    require(scores.rank() == 2 && scores.rows() == n && scores.cols() == n, errc::shape,
            "contrastive_term: score matrix must be N x N");
    const auto neg_mask = cross_env_mask(env_ids);
    require(mask_count(neg_mask) > 0, errc::config,
            "contrastive bound needs at least 2 distinct virtual environments");
    const Tensor positives = masked_mean(scores, diagonal_mask(n));
    const Tensor negatives = masked_logmeanexp(scores, neg_mask);
    const Tensor bracket = sub(positives, negatives);
    return sign == IbSign::paper ? neg(bracket) : bracket;
}

} // namespace detail

// Mean classification cross-entropy over the batch.
inline Tensor loss_i1(const EnvironmentBatch& batch) { return cross_entropy(batch.logits, batch.labels); }

// Instance-level compression term: the critic aligns each instance's pooled
// input with its own embedding and contrasts it against pooled inputs from
// other environments.
inline Tensor loss_i2(const EnvironmentBatch& batch, const Critic& critic, IbSign sign = IbSign::paper) {
    batch.validate();
    const Tensor x = Tensor::from_matrix(batch.inputs_pooled);
    const Tensor scores = critic.score_matrix(x, batch.embeddings);
    return detail::contrastive_term(scores, batch.env_ids, sign);
}

inline RelationLoss resolve_relation_loss(RelationLoss choice, RelationMetric metric) {
    if (choice != RelationLoss::auto_select) return choice;
    return metric_bounded_01_on_probability_rows(metric) ? RelationLoss::bce : RelationLoss::mse;
}

// Structural fit term: match the prediction relation matrix to the label
// relation matrix, entrywise.
inline Tensor loss_s1(const EnvironmentBatch& batch, RelationMetric metric,
                      const RelationParams& params = {},
                      RelationLoss loss_kind = RelationLoss::auto_select) {
    batch.validate();
    const Matrix relation_labels = relation_matrix(batch.labels_onehot, metric, params);
    const Tensor probs = softmax_rows(batch.logits);
    const Tensor relation_preds = relation_tensor(probs, metric, params);
    const RelationLoss kind = resolve_relation_loss(loss_kind, metric);
    if (kind == RelationLoss::bce) {
        require(metric_bounded_01_on_probability_rows(metric), errc::config,
                "loss_s1: metric '" + to_string(metric) +
                    "' produces entries outside [0,1]; select the mse relation loss");
        Matrix target = relation_labels;
        for (double& v : target.data) v = std::min(1.0, std::max(0.0, v));
        return bce_matrix(relation_preds, target);
    }
    return mse_matrix(relation_preds, relation_labels);
}

// Structural compression term: the critic consumes rows of the input relation
// matrix and of the embedding relation matrix; positives align row i with row
// i, negatives draw cross-environment rows.
inline Tensor loss_s2(const EnvironmentBatch& batch, const Critic& critic, RelationMetric metric,
                      const RelationParams& params = {}, IbSign sign = IbSign::paper) {
    batch.validate();
    const Matrix relation_inputs =
        (metric == RelationMetric::cmd || metric == RelationMetric::mmd) && !batch.input_sample_sets.empty()
            ? relation_matrix(batch.input_sample_sets, metric, params)
            : relation_matrix(batch.inputs_pooled, metric, params);
    const Tensor relation_embeddings = relation_tensor(batch.embeddings, metric, params);
    const Tensor scores =
        critic.score_matrix(Tensor::from_matrix(relation_inputs), relation_embeddings);
    return detail::contrastive_term(scores, batch.env_ids, sign);
}

struct TotalLoss {
    Tensor total;
    LossBreakdown breakdown;
};

// Weighted sum of the four terms. Terms with a zero weight are skipped
// entirely, so gammas = (0,0,0) is bit-identical to the plain classification
// loss. Non-finite terms abort with the offending term named.
inline TotalLoss total_loss(const EnvironmentBatch& batch, const Critic* critic_individual,
                            const Critic* critic_structural, const Gammas& gammas,
                            RelationMetric metric, const RelationParams& params = {},
                            IbSign sign = IbSign::paper,
                            RelationLoss relation_loss = RelationLoss::auto_select) {
    LossBreakdown bd;
    bd.gammas = gammas;

    // evaluate one term, rewrapping numeric failures so the offending term is named
    auto term = [](const char* name, auto&& compute) {
        Tensor t;
        try {
            t = compute();
        } catch (const error& e) {
            if (e.code() != errc::numeric && e.code() != errc::domain) throw;
            fail(errc::numeric,
                 std::string("total_loss: term ") + name + " is non-finite (" + e.what() + ")");
        }
        require(std::isfinite(t.item()), errc::numeric,
                std::string("total_loss: term ") + name + " is non-finite");
        return t;
    };

    Tensor total = term("l_i1", [&] { return loss_i1(batch); });
    bd.l_i1 = total.item();

    if (gammas.g1 != 0.0) {
        require(critic_individual != nullptr, errc::config, "total_loss: gamma1 != 0 needs the individual critic");
        const Tensor t = term("l_i2", [&] { return loss_i2(batch, *critic_individual, sign); });
        bd.l_i2 = t.item();
        total = add(total, scale(t, gammas.g1));
    }
    if (gammas.g2 != 0.0) {
        const Tensor t = term("l_s1", [&] { return loss_s1(batch, metric, params, relation_loss); });
        bd.l_s1 = t.item();
        total = add(total, scale(t, gammas.g2));
    }
    if (gammas.g3 != 0.0) {
        require(critic_structural != nullptr, errc::config, "total_loss: gamma3 != 0 needs the structural critic");
        const Tensor t =
            term("l_s2", [&] { return loss_s2(batch, *critic_structural, metric, params, sign); });
        bd.l_s2 = t.item();
        total = add(total, scale(t, gammas.g3));
    }

    bd.total = term("total", [&] { return total; }).item();
    return {total, bd};
}

// ---- batch auxiliaries ---------------------------------------------------------

// Uniform virtual-environment assignment with every environment guaranteed
// non-empty; violating draws are redrawn from the same stream.
inline std::vector<int> assign_environments(std::size_t n, int num_envs, std::uint64_t seed) {
    require(num_envs >= 2, errc::config, "assign_environments: num_envs must be >= 2");
    require(n >= static_cast<std::size_t>(num_envs), errc::config,
            "assign_environments: batch smaller than num_envs");
    Rng rng(seed);
    std::vector<int> env(n);
    for (;;) {
        std::vector<char> present(static_cast<std::size_t>(num_envs), 0);
        for (std::size_t i = 0; i < n; ++i) {
            env[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_envs)));
            present[static_cast<std::size_t>(env[i])] = 1;
        }
        bool all = true;
        for (char p : present) all = all && p;
        if (all) return env;
    }
}

// b nodes per graph without replacement (everything when the graph is small),
// ascending order.
inline std::vector<std::size_t> sample_pair_batch(const Graph& g, std::size_t b, std::uint64_t seed) {
    require(b >= 2, errc::config, "sample_pair_batch: b must be >= 2");
    Rng rng(seed);
    return rng.sample_without_replacement(g.num_nodes, b);
}

} // namespace isgib
