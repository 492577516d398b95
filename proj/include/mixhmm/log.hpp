#ifndef MIXHMM_LOG_HPP
#define MIXHMM_LOG_HPP

#include <functional>
#include <string>

namespace mixhmm {

using WarningSink = std::function<void(const std::string&)>;

/// Installs a handler for library warnings and returns the previous one.
/// The default handler prints to stderr.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace mixhmm

#endif  // MIXHMM_LOG_HPP
