// Checkpoint (de)serialization: JSON header describing configuration and
// tensor directory, followed by raw little-endian float64 tensor data so
// weights round-trip bit-exactly.
#pragma once

#include <string>

#include "vtfusion/trainer.hpp"

namespace vtf {

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::string& path);  // throws LoadError

}  // namespace vtf
