#pragma once

#include <stdexcept>
#include <string>

namespace slicelab {

enum class Errc {
    range_error,            // address outside the function's physical bit range
    config_error,           // invalid or inconsistent configuration / empty inputs
    data_format_error,      // malformed data file
    not_linear,             // linear recovery ran against a non-linear function
    recovery_failure,       // no consistent XOR permutation at maximum length
    ambiguous_compare_set,  // pairwise pattern matched below the confidence floor
    classification_failure, // decision-tree retries exhausted
    pool_exhausted,         // candidate pool too small to continue
    cannot_reduce,          // candidate pool does not evict the target
    iteration_budget,       // pruning made no progress within the round budget
    missing_mapping,        // page has no classified slice mapping
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

} // namespace slicelab
