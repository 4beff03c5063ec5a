#pragma once

#include <string>
#include <vector>

#include "core/image.hpp"

namespace vsod {

// Saliency evaluation. Predictions are real-valued maps in [0,1]; ground
// truth is binarized at 0.5 on the way in.

double mae(const Image& pred, const Image& gt);

// Max over 256 uniform binarization thresholds of the beta-weighted harmonic
// mean of dataset-mean precision and recall.
double max_f(const std::vector<Image>& preds, const std::vector<Image>& gts, double beta2 = 0.3);

// Structure measure: alpha-weighted object similarity plus region similarity
// over the four blocks split at the ground-truth centroid.
double s_measure(const Image& pred, const Image& gt, double alpha = 0.5);

struct FrameScore {
    std::string video;
    int frame = 0;
    double mae = 0.0;
};

struct EvalSummary {
    double mae = 0.0, max_f = 0.0, s_measure = 0.0;
    std::size_t frames = 0;
};

EvalSummary evaluate_set(const std::vector<Image>& preds, const std::vector<Image>& gts);

} // namespace vsod
