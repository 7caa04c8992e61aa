#pragma once

#include <memory>
#include <string>

namespace tpb::detail {

/// Power readings from the NVIDIA management library, resolved with dlopen
/// so the harness builds and runs on hosts without the driver.
class NvmlDevice {
 public:
  virtual ~NvmlDevice() = default;
  /// Instantaneous board power in milliwatts; false on read failure.
  virtual bool power_milliwatts(unsigned int& mw) = 0;
};

/// nullptr plus a reason when the library or device is not available.
std::unique_ptr<NvmlDevice> open_nvml_device(unsigned int index, std::string& why);

}  // namespace tpb::detail
