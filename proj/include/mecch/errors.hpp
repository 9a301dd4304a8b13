#ifndef MECCH_ERRORS_HPP
#define MECCH_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mecch {

// Exit codes used by the CLI: 1 usage/config, 2 data integrity,
// 3 numeric failure, 4 resource guard.
class Error : public std::runtime_error {
public:
    Error(int exit_code, std::string category, const std::string& message)
        : std::runtime_error(message), exit_code_(exit_code), category_(std::move(category)) {}

    int exit_code() const { return exit_code_; }
    const std::string& category() const { return category_; }

private:
    int exit_code_;
    std::string category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg, const std::string& category = "config")
        : Error(1, category, msg) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error(2, "parse", msg) {}
};

class IntegrityError : public Error {
public:
    explicit IntegrityError(const std::string& msg, const std::string& category = "data_integrity")
        : Error(2, category, msg) {}
};

class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& msg) : Error(2, "schema", msg) {}
};

// Violated internal precondition; indicates a caller bug rather than bad data.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(2, "contract", msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(3, "non_finite", msg) {}
};

class ResourceError : public Error {
public:
    explicit ResourceError(const std::string& msg, const std::string& category = "resource_guard")
        : Error(4, category, msg) {}
};

} // namespace mecch

#endif // MECCH_ERRORS_HPP
