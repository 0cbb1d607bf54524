#pragma once

namespace causerec {

// Keeps large freed buffers in the process heap between training steps.
// No-op outside glibc.
void tune_allocator();

}  // namespace causerec
