#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "liftnet/dataset.hpp"
#include "liftnet/lifting.hpp"
#include "liftnet/network.hpp"
#include "liftnet/rng.hpp"

namespace liftnet {

/// Fixed two-neuron tanh teacher f*(x) = tanh(4x - 2) - tanh(4x + 2); the
/// default target for the synthetic 1-d experiments.
NetworkParams default_bump_teacher();

/// n points equally spaced on [lo, hi], targets from the teacher network.
/// The default overload samples the bump teacher on [-1, 1]. Loss is mse.
Dataset gen_synthetic_1d(std::size_t n, double lo, double hi,
                         const NetworkParams& teacher);
Dataset gen_synthetic_1d(std::size_t n, double lo = -1.0, double hi = 1.0);

/// Iris CSV (4 features + class). Features are standardized per column to
/// zero mean / unit variance; targets are one-hot over 3 classes. Accepts an
/// optional header line, integer labels 0..2, or species names. Malformed
/// rows are reported as "path:line: ...".
Dataset load_iris_csv(const std::filesystem::path& path, LossKind loss = LossKind::mse);

/// First n samples of an IDX image/label file pair (big-endian magic
/// 0x00000803 / 0x00000801). Pixels are scaled to [0, 1]; targets are one-hot
/// over 10 classes. Errors on magic mismatch or truncated files.
Dataset load_idx_dataset(const std::filesystem::path& images,
                         const std::filesystem::path& labels, std::size_t n,
                         LossKind loss = LossKind::cross_entropy);

struct OptimizerConfig {
    double lr = 0.01;
    std::size_t epochs = 1000;
    std::size_t batch_size = 0; // 0 = full batch
};

/// Diagnostic/stop schedule for train_gd. *_every = 0 disables the hook;
/// floors of 0 disable early stopping.
struct TrainSchedule {
    std::size_t mpc_every = 0;
    std::size_t grad_every = 0;
    std::size_t snapshot_every = 0;
    std::vector<std::size_t> snapshot_epochs;
    double loss_floor = 0.0; // stop once full-data loss <= floor
    double grad_floor = 0.0; // stop once a sampled gradient L1 < floor
};

struct MpcSample {
    std::size_t epoch = 0;
    std::vector<double> values;  // per hidden layer; NaN when undefined
    std::vector<bool> defined;
};

struct GradSample {
    std::size_t epoch = 0;
    double l1 = 0.0;
};

struct PlateauEvent {
    std::size_t start = 0;
    std::size_t end = 0;   // inclusive epoch range
    double level = 0.0;    // mean loss over the interval
};

/// loss[e] is the full-data loss after e update epochs (entry 0 = initial).
/// accuracy runs parallel to loss for one-hot targets and is empty otherwise.
struct TrainLog {
    std::vector<double> loss;
    std::vector<double> accuracy;
    std::vector<MpcSample> mpc_samples;
    std::vector<GradSample> grad_samples;
    std::vector<PlateauEvent> plateaus; // filled by detect_plateau, not train_gd
    bool diverged = false;
    std::size_t epochs_run = 0;
};

struct TrainResult {
    NetworkParams params;
    TrainLog log;
    std::vector<std::pair<std::size_t, NetworkParams>> snapshots;
};

/// Plain gradient descent theta <- theta - lr * grad R_S. batch_size > 0
/// switches to seeded-shuffle mini-batches and requires rng. Non-finite loss
/// or parameters abort with the last finite state and diverged = true.
TrainResult train_gd(const NetworkParams& theta0, const Dataset& data,
                     const OptimizerConfig& opt, const TrainSchedule& sched = {},
                     Rng* rng = nullptr);

/// Flags epoch e when the relative loss decrease over the trailing window is
/// below rel_slope_tol; maximal flagged runs, extended back by the window and
/// clipped to keep events disjoint, become plateau events.
std::vector<PlateauEvent> detect_plateau(const std::vector<double>& loss,
                                         std::size_t window = 500,
                                         double rel_slope_tol = 1e-3);

struct DatasetConfig {
    std::string kind = "synthetic-1d"; // synthetic-1d | teacher | iris | csv | mnist-subset
    std::size_t n = 80;
    double lo = -1.0;
    double hi = 1.0;
    // For the escape experiment's size sweep: keep the grid step fixed so a
    // larger n extends the sampled window instead of densifying it.
    bool fixed_spacing = false;
    std::filesystem::path path;    // iris / csv
    std::filesystem::path teacher; // teacher weights json
    std::filesystem::path images, labels, test_images, test_labels;
    std::size_t n_test = 0;
    LossKind loss = LossKind::mse;
};

/// Parsed experiment description. `kind` selects the pipeline:
///   train             plain training run with scheduled diagnostics
///   saddle_transition train to small gradient, lift repeatedly, eigenspectra
///   plateau_merge     train deep, merge linear layers at the last plateau
///   bn_linearization  one run per gamma init; MPC and plateau comparison
///   data_escape       train to a plateau, restart on larger datasets
///   prune_agreement   train, merge, prediction agreement on train/test
struct ExperimentConfig {
    std::string kind = "train";
    std::uint64_t seed = 0;
    std::vector<std::size_t> widths;
    ActivationSpec activation = ActivationSpec::tanh_act();
    bool bn_enabled = false;
    double gamma_init = 1.0;
    double init_variance = 0.01;
    DatasetConfig dataset;
    OptimizerConfig optimizer;
    TrainSchedule schedule;
    std::size_t plateau_window = 500;
    double plateau_tol = 1e-3;

    // kind-specific knobs (ignored elsewhere)
    std::vector<LiftPlan> lifts;                     // saddle_transition
    double tau = 1e-12;                              // spectrum threshold
    double grad_tol = 1e-4;                          // criticality tolerance
    double mpc_threshold = 0.99;                     // merge/prune flag level
    std::vector<double> gamma_values = {0.1, 1.0, 1.5};
    std::vector<std::size_t> escape_sizes = {70, 80, 100};
    std::size_t phase2_epochs = 0;                   // data_escape (0 = epochs)

    nlohmann::json raw; // original document, echoed into the bundle
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Parses a {"kind": ...} dataset description (the "dataset" block of an
/// experiment config, also accepted standalone by the CLI's --data flag).
DatasetConfig parse_dataset_config(const nlohmann::json& j,
                                   LossKind default_loss = LossKind::mse);

/// Parses one lift plan object: {insert_after, width, interval: [lo, hi],
/// side: auto|next|prev, residual}.
LiftPlan parse_lift_plan(const nlohmann::json& j);

/// Builds the training set described by the config (not the test split).
Dataset load_dataset(const DatasetConfig& spec);

/// Runs the configured pipeline and writes the result bundle into out_dir:
/// config.json, weights.json, trainlog.csv (epoch,loss,accuracy,grad_l1),
/// reports/*.json and, for spectra, eigenvalues.csv. Returns the summary
/// report. Identical config + seed produce a bit-identical bundle.
nlohmann::json run_experiment(const ExperimentConfig& cfg,
                              const std::filesystem::path& out_dir);

} // namespace liftnet
