#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace impactlab {

class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input record. Text sources report a 1-based line, binary
/// sources a byte offset.
class parse_error : public error {
public:
  enum class unit { line, byte_offset };

  static parse_error at_line(std::size_t line, const std::string& what) {
    return parse_error(unit::line, line, "line " + std::to_string(line) + ": " + what);
  }
  static parse_error at_offset(std::size_t offset, const std::string& what) {
    return parse_error(unit::byte_offset, offset,
                       "offset " + std::to_string(offset) + ": " + what);
  }

  unit position_unit() const noexcept { return unit_; }
  std::size_t position() const noexcept { return position_; }
  std::size_t line() const noexcept { return unit_ == unit::line ? position_ : 0; }

  /// Same position, message prefixed with the source name.
  parse_error in(const std::string& source) const {
    return parse_error(unit_, position_, source + ": " + what());
  }

private:
  parse_error(unit u, std::size_t pos, const std::string& msg)
    : error(msg), unit_(u), position_(pos) {}
  unit unit_;
  std::size_t position_;
};

class ordering_error : public error { using error::error; };
class integrity_error : public error { using error::error; };
class degenerate_error : public error { using error::error; };
class domain_error : public error { using error::error; };
class alignment_error : public error { using error::error; };
class incompatible_error : public error { using error::error; };
class empty_result_error : public error { using error::error; };
class convergence_error : public error { using error::error; };
class calibration_error : public error { using error::error; };
class config_error : public error { using error::error; };
class io_error : public error { using error::error; };

}  // namespace impactlab
