#include "nai.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "nai/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

int code_of(const nai::Error& e) {
  switch (e.code()) {
    case nai::Errc::invalid_argument: return NAI_ERR_INVALID_ARGUMENT;
    case nai::Errc::io: return NAI_ERR_IO;
    case nai::Errc::format: return NAI_ERR_FORMAT;
    case nai::Errc::numeric: return NAI_ERR_NUMERIC;
    case nai::Errc::state: return NAI_ERR_STATE;
  }
  return NAI_ERR_UNKNOWN;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const nai::Error& e) {
    g_last_error = e.what();
    return code_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NAI_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown failure";
    return NAI_ERR_UNKNOWN;
  }
}

int require_arg(bool ok, const char* what) {
  if (ok) return NAI_OK;
  g_last_error = what;
  return NAI_ERR_INVALID_ARGUMENT;
}

}  // namespace

struct nai_config {
  nai::RunConfig cfg;
};

extern "C" {

nai_config* nai_config_create(void) { return new (std::nothrow) nai_config(); }

void nai_config_free(nai_config* cfg) { delete cfg; }

int nai_config_set(nai_config* cfg, const char* key, const char* value) {
  if (int rc = require_arg(cfg && key && value, "null argument")) return rc;
  return guarded([&] {
    cfg->cfg.set(key, value);
    return NAI_OK;
  });
}

int nai_config_load_file(nai_config* cfg, const char* path) {
  if (int rc = require_arg(cfg && path, "null argument")) return rc;
  return guarded([&] {
    cfg->cfg.load_file(path);
    return NAI_OK;
  });
}

long nai_config_get(const nai_config* cfg, const char* key, char* buf, size_t cap) {
  if (int rc = require_arg(cfg && key, "null argument")) return rc;
  std::string value;
  const int rc = guarded([&] {
    value = cfg->cfg.get(key);
    return NAI_OK;
  });
  if (rc != NAI_OK) return rc;
  if (buf && cap > 0) {
    const size_t n = value.size() < cap - 1 ? value.size() : cap - 1;
    std::memcpy(buf, value.data(), n);
    buf[n] = '\0';
  }
  return static_cast<long>(value.size());
}

int nai_run(const nai_config* cfg, const char* stage) {
  if (int rc = require_arg(cfg && stage, "null argument")) return rc;
  return guarded([&] { return nai::run_stage(cfg->cfg, stage) == 0 ? NAI_OK : NAI_STAGE_FAILED; });
}

const char* nai_last_error(void) { return g_last_error.c_str(); }

const char* nai_version(void) { return "1.0.0"; }

}  // extern "C"
