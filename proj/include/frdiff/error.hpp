#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace frdiff {

/// Error categories; the CLI maps each to a process exit code.
enum class ErrorKind { usage, data, numeric, io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};
struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};
struct ShapeError : DataError {
    explicit ShapeError(const std::string& what) : DataError(what) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};
struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};
struct NotFoundError : IoError {
    explicit NotFoundError(const std::string& what) : IoError(what) {}
};
struct FormatError : DataError {
    explicit FormatError(const std::string& what) : DataError(what) {}
};
struct TruncatedError : DataError {
    explicit TruncatedError(const std::string& what) : DataError(what) {}
};

namespace detail {

inline void append(std::ostringstream&) {}

template <typename T, typename... Rest>
void append(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    append(os, rest...);
}

} // namespace detail

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    detail::append(os, args...);
    return os.str();
}

} // namespace frdiff
