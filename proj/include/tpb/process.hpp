#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <sys/types.h>

namespace tpb {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

/// Runs `command` through /bin/sh and captures stdout. Optional stdin text.
CommandResult run_command(const std::string& command,
                          const std::optional<std::string>& input = std::nullopt);

/// Replaces `{key}` placeholders. Unknown placeholders are left untouched.
std::string expand_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& values);

/// A shell command running in its own process group, killed on destruction.
class ChildProcess {
 public:
  /// Throws Error{WorkloadSpawnFailed}. `extra_env` is layered over the
  /// current environment.
  ChildProcess(const std::string& command,
               const std::map<std::string, std::string>& extra_env);
  ~ChildProcess();

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  /// Non-blocking; returns the exit status once the child has exited.
  std::optional<int> poll();
  int wait();
  /// SIGTERM, then SIGKILL after `grace`.
  void terminate(std::chrono::milliseconds grace = std::chrono::milliseconds(500));

  pid_t pid() const noexcept { return pid_; }

 private:
  pid_t pid_ = -1;
  std::optional<int> status_;
};

}  // namespace tpb
