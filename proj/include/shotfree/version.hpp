#pragma once

namespace shotfree {

inline constexpr const char* kArtifactVersion = "1.0.0";

}  // namespace shotfree
