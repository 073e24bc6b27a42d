#pragma once

#include <optional>

#include "imtfa/geometry.hpp"
#include "imtfa/mask.hpp"

namespace imtfa {

// A ground-truth object. The mask, when present, is stored at full
// image resolution. `ignore` marks instances excluded from loss
// computation (used by balanced fine-tune sets).
struct InstanceAnnotation {
    int class_id = -1;
    Box box;
    std::optional<BinaryMask> mask;
    bool ignore = false;
};

// A predicted object.
struct Detection {
    int class_id = -1;
    float score = 0.f;
    Box box;
    std::optional<BinaryMask> mask;
};

}  // namespace imtfa
