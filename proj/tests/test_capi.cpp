#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "nai.h"

namespace fs = std::filesystem;

namespace {

struct Config {
  nai_config* h = nai_config_create();
  ~Config() { nai_config_free(h); }
};

std::string get_str(const nai_config* cfg, const char* key) {
  char buf[128];
  const long n = nai_config_get(cfg, key, buf, sizeof buf);
  REQUIRE(n >= 0);
  REQUIRE(n < static_cast<long>(sizeof buf));
  return buf;
}

}  // namespace

TEST_CASE("config handle round trips values and reports bad input") {
  Config c;
  REQUIRE(c.h != nullptr);

  CHECK(nai_config_set(c.h, "k", "4") == NAI_OK);
  CHECK(nai_config_set(c.h, "mode", "sign") == NAI_OK);
  CHECK(get_str(c.h, "k") == "4");
  CHECK(get_str(c.h, "mode") == "sign");

  // Length contract: return value is the full length even when truncating.
  char tiny[2];
  CHECK(nai_config_get(c.h, "mode", tiny, sizeof tiny) == 4);
  CHECK(std::strcmp(tiny, "s") == 0);
  CHECK(nai_config_get(c.h, "mode", nullptr, 0) == 4);

  CHECK(nai_config_set(c.h, "wat", "1") == NAI_ERR_INVALID_ARGUMENT);
  CHECK(std::string(nai_last_error()).find("unknown key") != std::string::npos);
  CHECK(nai_config_set(c.h, "k", "four") == NAI_ERR_INVALID_ARGUMENT);
  CHECK(nai_config_get(c.h, "wat", nullptr, 0) == NAI_ERR_INVALID_ARGUMENT);

  CHECK(nai_config_set(nullptr, "k", "1") == NAI_ERR_INVALID_ARGUMENT);
  CHECK(nai_config_set(c.h, nullptr, "1") == NAI_ERR_INVALID_ARGUMENT);
  nai_config_free(nullptr);

  CHECK(std::string(nai_version()) == "1.0.0");
}

TEST_CASE("config files load through the boundary with mapped error codes") {
  Config c;
  const std::string path = "/tmp/nai-test-capi.cfg";
  {
    std::ofstream out(path);
    out << "# smoke\nk=6\nts = 0.5\n";
  }
  CHECK(nai_config_load_file(c.h, path.c_str()) == NAI_OK);
  CHECK(get_str(c.h, "k") == "6");
  CHECK(get_str(c.h, "ts") == "0.5");

  CHECK(nai_config_load_file(c.h, "/tmp/nai-test-capi-missing.cfg") == NAI_ERR_IO);
  {
    std::ofstream out(path);
    out << "no equals sign\n";
  }
  CHECK(nai_config_load_file(c.h, path.c_str()) == NAI_ERR_FORMAT);
  std::remove(path.c_str());
}

TEST_CASE("stages run through the boundary and surface state errors") {
  Config c;
  CHECK(nai_run(c.h, "precompute") == NAI_ERR_INVALID_ARGUMENT);
  CHECK(std::string(nai_last_error()).find("out") != std::string::npos);

  const std::string out = "/tmp/nai-test-capi-run";
  fs::remove_all(out);
  for (auto [k, v] : {std::pair<const char*, const char*>{"out", out.c_str()},
                      {"seed", "9"},
                      {"k", "2"},
                      {"epochs", "10"},
                      {"lr", "0.05"},
                      {"synth_blocks", "3"},
                      {"synth_block_size", "30"},
                      {"synth_p_in", "0.15"},
                      {"synth_f", "6"},
                      {"synth_signal", "1.2"}})
    REQUIRE(nai_config_set(c.h, k, v) == NAI_OK);

  CHECK(nai_run(c.h, "nosuch") == NAI_ERR_INVALID_ARGUMENT);
  CHECK(nai_run(c.h, "train-gates") == NAI_ERR_STATE);

  CHECK(nai_run(c.h, "precompute") == NAI_OK);
  CHECK(nai_last_error()[0] == '\0');
  CHECK(fs::exists(out + "/precompute/train-cache.bin"));
  CHECK(nai_run(c.h, "train-gates") == NAI_ERR_STATE);
  CHECK(std::string(nai_last_error()).find("distill") != std::string::npos);
  CHECK(nai_run(c.h, "train-teacher") == NAI_OK);
  CHECK(fs::exists(out + "/train-teacher/stack.bin"));
}
