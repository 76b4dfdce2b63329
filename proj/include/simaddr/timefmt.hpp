#pragma once

#include <chrono>
#include <cstdint>
#include <string>

namespace simaddr {

/// "YYYY-MM-DDTHH:MM:SS.mmmZ" for milliseconds since the Unix epoch.
std::string rfc3339_utc_ms(std::int64_t epoch_ms);

std::string rfc3339_utc(std::chrono::system_clock::time_point t);

std::int64_t now_epoch_ms();

}  // namespace simaddr
