#ifndef ZONOREACH_ERROR_HPP
#define ZONOREACH_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace zonoreach
{

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes or matrix dimensions do not agree.
class ShapeError : public Error
{
public:
    using Error::Error;
};

/// Malformed input file. `line` and `column` are 1-based; 0 means unknown.
class ParseError : public Error
{
public:
    ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
        : Error(format(what, line, column)), line_(line), column_(column)
    {
    }

    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }

private:
    static std::string format(const std::string& what, std::size_t line, std::size_t column)
    {
        if (line == 0)
            return what;
        std::string out = "line " + std::to_string(line);
        if (column != 0)
            out += ", column " + std::to_string(column);
        return out + ": " + what;
    }

    std::size_t line_;
    std::size_t column_;
};

/// A model uses an operator outside the supported subset.
class UnsupportedError : public Error
{
public:
    explicit UnsupportedError(const std::string& op) : Error("unsupported: " + op), op_(op) {}
    const std::string& op() const { return op_; }

private:
    std::string op_;
};

/// A resource limit (binary symbols, enumeration size) would be exceeded.
class CapacityError : public Error
{
public:
    using Error::Error;
};

} // namespace zonoreach

#endif
