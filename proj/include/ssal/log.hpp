#pragma once

#include <functional>
#include <string>

namespace ssal {

using WarningSink = std::function<void(const std::string&)>;

// Routes warnings to `sink`; the default writes to stderr. Returns the
// previous sink so callers can restore it.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace ssal
