#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "liftnet/dataset.hpp"
#include "liftnet/diagnostics.hpp"
#include "liftnet/network.hpp"

namespace liftnet {

/// Which operand of the output-preserving factorization the inserted layer
/// mirrors: match_next factors through W^[q+1] (inserted width from m_{q+1}),
/// match_prev factors through a scaled identity (width from m_q). auto_side
/// picks the narrower of the two, preferring match_next on ties.
enum class FactorSide { auto_side, match_next, match_prev };

enum class LiftCase { next_narrower, prev_narrower, degenerate_constant };

/// Request to insert one hidden layer after layer q (0 = after the input).
/// inserted_width 0 means "minimal legal width"; x_low == x_up means "use the
/// activation's default target interval".
struct LiftPlan {
    std::size_t insert_after = 0;
    std::size_t inserted_width = 0;
    double x_low = 0.0;
    double x_up = 0.0;
    bool residual = false;
    FactorSide factor_side = FactorSide::auto_side;
};

/// What a lift did: the resolved plan, the Lemma-style case taken, the
/// interval scaling xi and the per-neuron affine coefficients of the segment.
struct LiftRecord {
    LiftPlan plan;
    LiftCase case_taken = LiftCase::next_narrower;
    double xi = 1.0;
    Vector lambda;
    Vector mu;
    std::size_t core_width = 0; // inserted width before zero-neuron padding
};

struct LiftResult {
    NetworkParams params;
    LiftRecord record;
};

/// Lifting-operator membership check. linearization margins are distances of
/// the inserted layer's pre-activations to the nearest subdomain boundary
/// (per neuron, minimized over training inputs; must be strictly positive).
struct MembershipReport {
    bool local_in_layer_ok = false;
    bool linearization_ok = false;
    bool output_preserving_ok = false;
    bool overall = false;
    bool approx_segment = false;
    double min_margin = 0.0;
    std::vector<double> neuron_margins;
    std::optional<std::pair<std::size_t, std::size_t>> first_violation; // neuron, sample
    double weight_residual = 0.0; // relative Frobenius residuals of the two
    double bias_residual = 0.0;   // output-preserving equations
    double tol = 1e-8;
};

/// Insert one hidden layer after plan.insert_after such that the deeper
/// network computes the same function on the training set (exactly for
/// piecewise-linear activations). Throws ValidationError for impossible
/// plans.
LiftResult one_layer_lift(const NetworkParams& p, const Dataset& data, LiftPlan plan);

MembershipReport verify_membership(const NetworkParams& shallow,
                                   const NetworkParams& deep, const Dataset& data,
                                   const LiftPlan& plan);

struct MultiLiftResult {
    NetworkParams params;
    std::vector<LiftRecord> records;
};

/// Apply plans left to right; each plan addresses the architecture produced
/// by the previous step. An empty list returns the input unchanged.
MultiLiftResult multi_layer_lift(const NetworkParams& p, const Dataset& data,
                                 std::vector<LiftPlan> plans);

/// Merge layers whose minimal pre/post activation correlation exceeds the
/// threshold into their successor, using per-neuron least-squares affine
/// coefficients; repeats until no layer is flagged.
struct MergeEvent {
    std::size_t layer = 0; // 1-based index at the time of the merge
    double mpc_value = 0.0;
    Vector lambda_hat;
    Vector mu_hat;
};

struct MergeReport {
    std::vector<MergeEvent> events;
};

struct MergeResult {
    NetworkParams params;
    MergeReport report;
};

MergeResult merge_linear_layers(const NetworkParams& p, const Dataset& data,
                                double threshold = kMpcThreshold);

/// Conservative constant C with |grad R(deep)|_1 <= C * |grad R(shallow)|_1
/// for exact-segment lifts, computed from the factor matrix norms.
double gradient_amplification_bound(const NetworkParams& deep, const LiftRecord& rec);

} // namespace liftnet
