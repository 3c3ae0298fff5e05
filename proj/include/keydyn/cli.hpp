#pragma once

#include <iosfwd>

namespace keydyn {

// Entry point behind the keydyn binary; also exercised directly by tests.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
int cli_main(int argc, const char* const* argv);

// Gradient checks plus compact oracle suites; prints one pass/fail line per
// check. Returns true when everything passed.
bool run_selftest(std::ostream& out);

}  // namespace keydyn
