// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "voxelquant/tensor.hpp"

namespace vq {

/// Per-volume overlap scores. A class enters the mean only when it appears in
/// the prediction or the reference (or both); the background class 0 is always
/// excluded. per_class holds -1 for excluded classes.
struct DiceResult {
    std::vector<double> per_class;
    double mean = 0.0;
    int64_t included = 0;
};

/// 2 * |P inter G| / (|P| + |G|) per class. Raises ShapeMismatch when the two
/// volumes disagree and LabelOutOfRange when a voxel label is >= num_classes.
DiceResult dice_score(const LabelVolume& pred, const LabelVolume& ref, int num_classes);

/// Mean of the per-volume means (each volume weighted equally).
double dataset_mean_dice(const std::vector<DiceResult>& volumes);

}  // namespace vq
