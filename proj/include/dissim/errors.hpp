#ifndef DISSIM_ERRORS_HPP_
#define DISSIM_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dissim {

/* Error taxonomy. The CLI maps these onto exit codes: input/schema/domain
 * problems -> 2, capacity limits -> 3; failed numeric checks are results,
 * not exceptions. */

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/* argument outside its declared domain (box membership, negative radius, ...) */
struct DomainError : Error {
  using Error::Error;
};

/* a comparison function or certificate violates its structural preconditions */
struct InvalidCertificate : Error {
  using Error::Error;
};

/* a run parameter is self-contradictory (psi not a valid split, bad weights, ...) */
struct ConfigError : Error {
  using Error::Error;
};

/* coupling maps internal outputs outside the declared internal input sets */
struct InterconnectionError : Error {
  using Error::Error;
};

/* quantization pitch incompatible with the target set */
struct QuantizationError : Error {
  using Error::Error;
};

/* enumeration would exceed a configured cap (advises coarser quantization) */
struct CapacityError : Error {
  using Error::Error;
};

/* subsystem dynamics outside the class a closed-form construction supports */
struct UnsupportedDynamics : Error {
  using Error::Error;
};

/* malformed network description file */
struct SchemaError : Error {
  using Error::Error;
};

/* structurally degenerate input (empty abstraction, no states, ...) */
struct StructuralError : Error {
  using Error::Error;
};

/* a (state, input, internal input) triple with no successor where the
 * construction guarantees one */
struct NonBlockingViolation : Error {
  using Error::Error;
};

}  // namespace dissim

#endif  // DISSIM_ERRORS_HPP_
