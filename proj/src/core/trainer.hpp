#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/losses.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/optim.hpp"

namespace vsod {

struct TrainConfig {
    int stage = 1;            // 1 = stills, no motion term; 2 = clips, full objective
    int epochs = 10;          // total epoch target (resume continues toward it)
    int batch = 4;
    int clip_len = 4;         // stage 1 always trains single frames
    double base_lr = 1e-4;
    int halve_every = 8;
    std::uint64_t seed = 1;
    int clips_per_video = 1;  // stage-2 clip samples per video per epoch
    bool augment = true;
    bool no_motion = false;
    double clip_grad = 0.0;   // global-norm clip, 0 = off
    double pretrained_lr_scale = 0.1;  // stage-2 scale for stage-1-trained weights
    bool verbose = true;
};

struct TrainResult {
    long steps = 0;
    int epochs_run = 0;
    LossBreakdown last;
};

// Model + optimizer checkpoint glue. `resume_from`, when set, must carry a
// matching config fingerprint: the same stage continues (moments, step and
// epoch restored); a stage-1 checkpoint loaded for stage 2 seeds the weights
// only, and the pretrained groups train at a reduced rate.
TrainResult train_model(Model& model, const std::filesystem::path& data_root, const TrainConfig& cfg,
                        const std::filesystem::path& checkpoint_path,
                        const std::filesystem::path& log_csv,
                        const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// Parameters only (inference checkpoints produced by training are compatible).
void save_model(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

struct InferConfig {
    int batch = 1;
    bool emit_motion = false;
};

// Writes one graymap per frame under <out>/<video_id>/%05d.pgm (plus
// motion_%05d.pgm for the leading frame of each pair when requested).
// Frames of other sizes are resized into the model and predictions are
// upscaled back to the original dimensions.
void infer_video(const Model& model, const std::filesystem::path& video_dir,
                 const std::filesystem::path& out_root, const InferConfig& cfg);
void infer_dataset(const Model& model, const std::filesystem::path& data_root,
                   const std::filesystem::path& out_root, const InferConfig& cfg);

struct EvalOutput {
    std::vector<FrameScore> per_frame;
    EvalSummary summary;
};

// pred layout: <pred>/<video>/%05d.pgm; gt layout: <gt>/<video>/masks/%05d.pgm
EvalOutput evaluate_directories(const std::filesystem::path& pred_root,
                                const std::filesystem::path& gt_root);
void write_eval_csv(std::ostream& out, const EvalOutput& eval);

// XOR labels for every consecutive mask pair of every video.
void write_motion_labels(const std::filesystem::path& masks_root, const std::filesystem::path& out_root);

} // namespace vsod
