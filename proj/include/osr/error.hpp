#pragma once

#include <stdexcept>
#include <string>

namespace osr {

// Error taxonomy mapped onto process exit codes by the CLI:
//   Config -> 2, Data -> 3, Numeric/Contract -> 4.
enum class ErrorKind {
    Config,
    Data,
    Numeric,
    Contract,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    int exit_code() const {
        switch (kind_) {
            case ErrorKind::Config: return 2;
            case ErrorKind::Data: return 3;
            default: return 4;
        }
    }

private:
    ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return Error(ErrorKind::Config, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::Data, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::Numeric, msg); }
inline Error contract_error(const std::string& msg) { return Error(ErrorKind::Contract, msg); }

} // namespace osr
