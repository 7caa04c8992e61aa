#include "nvml_loader.hpp"

#include <dlfcn.h>

#include <mutex>

namespace tpb::detail {

namespace {

using nvmlReturn_t = int;
using nvmlDevice_t = void*;
constexpr nvmlReturn_t NVML_SUCCESS = 0;

struct NvmlLibrary {
  void* handle = nullptr;
  nvmlReturn_t (*init)() = nullptr;
  nvmlReturn_t (*shutdown)() = nullptr;
  nvmlReturn_t (*by_index)(unsigned int, nvmlDevice_t*) = nullptr;
  nvmlReturn_t (*power_usage)(nvmlDevice_t, unsigned int*) = nullptr;
  int users = 0;
};

std::mutex g_mu;
NvmlLibrary g_lib;

bool acquire(std::string& why) {
  std::lock_guard lock(g_mu);
  if (g_lib.users > 0) {
    ++g_lib.users;
    return true;
  }
  if (!g_lib.handle) {
    g_lib.handle = dlopen("libnvidia-ml.so.1", RTLD_NOW | RTLD_LOCAL);
    if (!g_lib.handle) {
      why = "libnvidia-ml.so.1 not loadable";
      return false;
    }
    g_lib.init = reinterpret_cast<decltype(g_lib.init)>(dlsym(g_lib.handle, "nvmlInit_v2"));
    g_lib.shutdown =
        reinterpret_cast<decltype(g_lib.shutdown)>(dlsym(g_lib.handle, "nvmlShutdown"));
    g_lib.by_index = reinterpret_cast<decltype(g_lib.by_index)>(
        dlsym(g_lib.handle, "nvmlDeviceGetHandleByIndex_v2"));
    g_lib.power_usage = reinterpret_cast<decltype(g_lib.power_usage)>(
        dlsym(g_lib.handle, "nvmlDeviceGetPowerUsage"));
    if (!g_lib.init || !g_lib.shutdown || !g_lib.by_index || !g_lib.power_usage) {
      why = "NVML symbols missing";
      return false;
    }
  }
  if (g_lib.init() != NVML_SUCCESS) {
    why = "nvmlInit failed";
    return false;
  }
  g_lib.users = 1;
  return true;
}

void release() {
  std::lock_guard lock(g_mu);
  if (--g_lib.users == 0) g_lib.shutdown();
}

class LoadedDevice : public NvmlDevice {
 public:
  explicit LoadedDevice(nvmlDevice_t dev) : dev_(dev) {}
  ~LoadedDevice() override { release(); }

  bool power_milliwatts(unsigned int& mw) override {
    return g_lib.power_usage(dev_, &mw) == NVML_SUCCESS;
  }

 private:
  nvmlDevice_t dev_;
};

}  // namespace

std::unique_ptr<NvmlDevice> open_nvml_device(unsigned int index, std::string& why) {
  if (!acquire(why)) return nullptr;
  nvmlDevice_t dev = nullptr;
  if (g_lib.by_index(index, &dev) != NVML_SUCCESS) {
    why = "no GPU at index " + std::to_string(index);
    release();
    return nullptr;
  }
  auto device = std::make_unique<LoadedDevice>(dev);
  unsigned int mw = 0;
  if (!device->power_milliwatts(mw)) {
    why = "power readout unsupported on GPU " + std::to_string(index);
    return nullptr;
  }
  return device;
}

}  // namespace tpb::detail
