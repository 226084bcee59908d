// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/dice.hpp"

#include <string>

#include "voxelquant/errors.hpp"

namespace vq {

DiceResult dice_score(const LabelVolume& pred, const LabelVolume& ref, int num_classes) {
    if (pred.shape != ref.shape)
        raise(ErrorCode::ShapeMismatch, "prediction shape " + pred.shape.str() +
                                            " does not match reference shape " + ref.shape.str());
    if (num_classes < 1)
        raise(ErrorCode::InvalidConfig, "dice needs at least one class");

    std::vector<int64_t> p_count(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> r_count(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> overlap(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const int p = pred.data[i];
        const int r = ref.data[i];
        if (p >= num_classes)
            raise(ErrorCode::LabelOutOfRange, "prediction label " + std::to_string(p) +
                                                  " with " + std::to_string(num_classes) +
                                                  " classes");
        if (r >= num_classes)
            raise(ErrorCode::LabelOutOfRange, "reference label " + std::to_string(r) + " with " +
                                                  std::to_string(num_classes) + " classes");
        p_count[p]++;
        r_count[r]++;
        if (p == r) overlap[p]++;
    }

    DiceResult res;
    res.per_class.assign(static_cast<size_t>(num_classes), -1.0);
    double sum = 0.0;
    for (int c = 1; c < num_classes; ++c) {
        const int64_t denom = p_count[c] + r_count[c];
        if (denom == 0) continue;  // absent on both sides: not scored
        res.per_class[static_cast<size_t>(c)] =
            2.0 * static_cast<double>(overlap[static_cast<size_t>(c)]) /
            static_cast<double>(denom);
        sum += res.per_class[static_cast<size_t>(c)];
        res.included++;
    }
    res.mean = res.included ? sum / static_cast<double>(res.included) : 0.0;
    return res;
}

double dataset_mean_dice(const std::vector<DiceResult>& volumes) {
    if (volumes.empty()) raise(ErrorCode::EmptyDataset, "no volumes to average");
    double sum = 0.0;
    for (const DiceResult& r : volumes) sum += r.mean;
    return sum / static_cast<double>(volumes.size());
}

}  // namespace vq
