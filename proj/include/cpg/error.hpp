#pragma once

#include <stdexcept>
#include <string>

namespace cpg {

// Error taxonomy shared across the toolkit. The CLI maps these onto exit
// codes (usage/data/runtime), so every throw site picks the closest kind.
enum class Errc {
  shape,     // dimension mismatch in a numeric op
  domain,    // argument outside the mathematical domain (log of <= 0)
  contract,  // precondition violated by the caller
  registry,  // unknown language / unregistered entity
  lookup,    // index out of range
  data,      // corpus / file content inconsistent
  io,        // missing or unwritable path
  config,    // invalid configuration field
  version,   // container version mismatch
  numeric,   // non-finite value where a finite one is required
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace cpg

#define CPG_CHECK(cond, code, msg)        \
  do {                                    \
    if (!(cond)) ::cpg::fail(code, msg);  \
  } while (0)
